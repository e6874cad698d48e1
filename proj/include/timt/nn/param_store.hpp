#pragma once

#include "timt/nn/graph.hpp"

#include <memory>
#include <string>
#include <vector>

namespace timt::nn {

// Owns every Param of a model. Registration order is fixed by construction,
// which pins both the init RNG stream and the checkpoint layout.
class ParamStore {
 public:
  // uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
  Param& create(const std::string& name, int rows, int cols, int fan_in, Rng& rng);
  Param& create_const(const std::string& name, int rows, int cols, double fill);

  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  std::vector<Param*> pointers();

  int64_t count() const;
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

}  // namespace timt::nn
