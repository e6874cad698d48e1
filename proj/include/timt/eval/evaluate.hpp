#pragma once

#include "timt/model/models.hpp"
#include "timt/train/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace timt::eval {

struct EvalReport {
  std::string model_id;
  std::string split;
  double bleu = 0.0;
  int64_t n_params = 0;
  double latency_ms_mean = 0.0;
  double latency_ms_median = 0.0;
  int latency_n = 0;  // 0 when latency was not measured
};

struct LatencyOptions {
  bool measure = false;
  int warmup = 10;
  int min_sentences = 100;
};

// Greedy decode over the split; BLEU against references; optional per-sentence
// wall-clock latency (batch 1, single thread, decode region only).
EvalReport evaluate_student(const model::ImageToTextModel& m,
                            const std::vector<corpus::TripleSample>& samples,
                            const std::string& split, int max_len,
                            const LatencyOptions& lat = {});

// Recognition-then-translation chain: TIR greedy output text feeds the MT
// model. Parameter count is the sum of both models.
EvalReport evaluate_pipeline(const model::ImageToTextModel& tir,
                             const model::TextToTextModel& mt,
                             const std::vector<corpus::TripleSample>& samples,
                             const std::string& split, int max_len,
                             const LatencyOptions& lat = {});

// report.json + summary.txt (+ lambda_sweep.csv when a curve is present).
// Deterministic byte-for-byte given the same inputs.
void emit_report(const std::filesystem::path& dir,
                 const std::vector<EvalReport>& reports,
                 const std::vector<train::SweepPoint>& sweep,
                 const std::vector<train::AblationRow>& ablation);

}  // namespace timt::eval
