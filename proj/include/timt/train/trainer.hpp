#pragma once

#include "timt/corpus.hpp"
#include "timt/loss/losses.hpp"
#include "timt/model/models.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace timt::train {

struct TrainConfig {
  int epochs = 4;
  int teacher_epochs = 12;
  int batch_size = 64;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  uint64_t seed = 1;
  bool deterministic = true;  // disables dropout
  bool warm_start_image_encoder = false;
  loss::KDWeights kd;

  void validate() const;
};

struct RunRecord {
  int epoch = 0;
  loss::LossReport mean_losses;
  double val_metric = 0.0;  // token accuracy for teachers, BLEU for the student
  double seconds = 0.0;
  std::string checkpoint;  // set when this epoch produced a new best
};

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::vector<RunRecord> records;
  double best_metric = 0.0;
};

// Recognition teacher: image -> source characters.
TrainResult pretrain_tir(const corpus::Dataset& ds, model::ModelConfig model_cfg,
                         TrainConfig cfg, const std::filesystem::path& out_dir);

// Translation teacher: source characters -> target characters.
TrainResult pretrain_mt(const corpus::Dataset& ds, model::ModelConfig model_cfg,
                        TrainConfig cfg, const std::filesystem::path& out_dir);

// End-to-end student with the combined distillation objective. Checkpoint
// paths may be empty when the weights disable the corresponding teacher; with
// everything disabled this is exactly the no-teacher baseline.
TrainResult train_student(const corpus::Dataset& ds,
                          const std::optional<std::filesystem::path>& tir_ckpt,
                          const std::optional<std::filesystem::path>& mt_ckpt,
                          model::ModelConfig model_cfg, TrainConfig cfg,
                          const std::filesystem::path& out_dir);

struct AblationRow {
  int row_no = 0;
  bool use_decoder = false, use_sequential = false, use_image = false;
  double valid_bleu = 0.0;
  double test_bleu = 0.0;
};

// The seven non-empty teacher subsets, trained with a shared seed and budget.
std::vector<AblationRow> ablate_teachers(const corpus::Dataset& ds,
                                         const std::filesystem::path& tir_ckpt,
                                         const std::filesystem::path& mt_ckpt,
                                         const model::ModelConfig& model_cfg,
                                         const TrainConfig& cfg,
                                         const std::filesystem::path& out_dir);

struct SweepPoint {
  double lambda_kd = 0.0;
  double valid_bleu = 0.0;
  double test_bleu = 0.0;
};

std::vector<SweepPoint> sweep_lambda(const corpus::Dataset& ds,
                                     const std::filesystem::path& tir_ckpt,
                                     const std::filesystem::path& mt_ckpt,
                                     const model::ModelConfig& model_cfg,
                                     const TrainConfig& cfg,
                                     const std::vector<double>& grid,
                                     const std::filesystem::path& out_dir);

// Greedy hypotheses vs. references over a split, as token-id sequences with
// specials stripped.
double greedy_bleu(const model::ImageToTextModel& m,
                   const std::vector<corpus::TripleSample>& samples, int max_len);
double greedy_bleu(const model::TextToTextModel& m,
                   const std::vector<corpus::TripleSample>& samples, int max_len);

std::vector<int> shuffled_order(size_t n, uint64_t seed);

}  // namespace timt::train
