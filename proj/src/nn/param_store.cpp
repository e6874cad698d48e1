#include "timt/nn/param_store.hpp"

#include <cmath>

namespace timt::nn {

Param& ParamStore::create(const std::string& name, int rows, int cols, int fan_in,
                          Rng& rng) {
  require(find(name) == nullptr, "duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value.resize(rows, cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  // fill in row-major order so layout changes never silently reshuffle draws
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      p->value(r, c) = rng.uniform(-s, s);
    }
  }
  p->grad = Mat::Zero(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamStore::create_const(const std::string& name, int rows, int cols,
                                double fill) {
  require(find(name) == nullptr, "duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Mat::Constant(rows, cols, fill);
  p->grad = Mat::Zero(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::vector<Param*> ParamStore::pointers() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

int64_t ParamStore::count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->count();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

}  // namespace timt::nn
