#include "timt/train/trainer.hpp"
#include "timt/util/sha256.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <cmath>
#include <fstream>

using namespace timt;
using namespace timt::train;

namespace fs = std::filesystem;

namespace {

corpus::Dataset toy_dataset(int n_train, uint64_t seed = 7, int min_len = 2,
                            int max_len = 4, const std::string& alphabet = "abcdef") {
  corpus::CorpusSpec spec;
  spec.alphabet = alphabet;
  spec.min_len = min_len;
  spec.max_len = max_len;
  spec.n_train = n_train;
  spec.n_valid = 40;
  spec.n_test = 40;
  spec.seed = seed;
  return corpus::generate_corpus(spec);
}

model::ModelConfig toy_model() {
  model::ModelConfig mc;
  mc.d_model = 32;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 64;
  mc.max_len = 16;
  mc.dropout = 0.0;
  mc.seed = 1;
  return mc;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("shuffled_order is a deterministic permutation") {
  std::vector<int> a = shuffled_order(100, 5);
  std::vector<int> b = shuffled_order(100, 5);
  CHECK(a == b);
  CHECK(shuffled_order(100, 6) != a);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
}

TEST_CASE("pretrain_tir learns and reproduces bit-identically") {
  corpus::Dataset ds = toy_dataset(200);
  TrainConfig tc;
  tc.teacher_epochs = 30;
  tc.batch_size = 50;
  tc.seed = 11;

  fs::path dir_a = fresh_dir("timt_tir_a");
  TrainResult a = pretrain_tir(ds, toy_model(), tc, dir_a);
  REQUIRE(a.records.size() == 30);

  // loss decreases over the smoke run and accuracy beats chance
  CHECK(a.records.back().mean_losses.total < a.records.front().mean_losses.total);
  CHECK(a.best_metric > 1.0 / ds.src_vocab.size());

  // monotone epoch indices
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].epoch == static_cast<int>(i) + 1);
  }

  // greedy recognition on a train subset beats chance per character
  model::ImageToTextModel best = model::load_image_model(a.best_checkpoint);
  int correct = 0, total = 0;
  for (int i = 0; i < 20; ++i) {
    std::vector<int> out = best.greedy_decode(ds.train[i].image, 8);
    const std::string text = ds.src_vocab.detokenize(out);
    const std::string& truth = ds.train[i].src_text;
    for (size_t k = 0; k < std::min(text.size(), truth.size()); ++k) {
      if (text[k] == truth[k]) correct += 1;
    }
    total += static_cast<int>(std::max(text.size(), truth.size()));
  }
  CHECK(static_cast<double>(correct) / std::max(total, 1) >
        1.0 / ds.src_vocab.size());

  fs::path dir_b = fresh_dir("timt_tir_b");
  TrainResult b = pretrain_tir(ds, toy_model(), tc, dir_b);
  CHECK(a.records.back().mean_losses.total == b.records.back().mean_losses.total);
  CHECK(util::sha256_file(a.last_checkpoint) == util::sha256_file(b.last_checkpoint));
  CHECK(util::sha256_file(dir_a / "train_log.jsonl") ==
        util::sha256_file(dir_b / "train_log.jsonl"));

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("pretrain_mt learns the toy translation rule") {
  corpus::Dataset ds = toy_dataset(400, 3, 1, 4);
  TrainConfig tc;
  tc.teacher_epochs = 60;
  tc.batch_size = 32;
  tc.learning_rate = 1e-3;
  tc.seed = 2;

  fs::path dir = fresh_dir("timt_mt_smoke");
  TrainResult res = pretrain_mt(ds, toy_model(), tc, dir);
  CHECK(res.records.back().mean_losses.total < res.records.front().mean_losses.total);
  CHECK(res.best_metric > 0.9);

  // greedy output reproduces the oracle on short training strings
  model::TextToTextModel best = model::load_text_model(res.best_checkpoint);
  int exact = 0;
  const int n_probe = 20;
  for (int i = 0; i < n_probe; ++i) {
    std::vector<int> src;
    for (char c : ds.train[i].src_text) src.push_back(ds.src_vocab.id_of_char(c));
    std::vector<int> out = best.greedy_decode(src, 8);
    if (ds.tgt_vocab.detokenize(out) == ds.train[i].tgt_text) exact += 1;
  }
  CHECK(exact >= n_probe * 3 / 4);

  fs::remove_all(dir);
}

TEST_CASE("train_student with KD disabled is bit-identical to a teacherless run") {
  corpus::Dataset ds = toy_dataset(120);
  model::ModelConfig mc = toy_model();

  TrainConfig teacher_cfg;
  teacher_cfg.teacher_epochs = 2;
  teacher_cfg.batch_size = 40;
  teacher_cfg.seed = 4;
  fs::path tir_dir = fresh_dir("timt_s0_tir");
  fs::path mt_dir = fresh_dir("timt_s0_mt");
  TrainResult tir = pretrain_tir(ds, mc, teacher_cfg, tir_dir);
  TrainResult mt = pretrain_mt(ds, mc, teacher_cfg, mt_dir);

  const std::string tir_hash_before = util::sha256_file(tir.best_checkpoint);
  const std::string mt_hash_before = util::sha256_file(mt.best_checkpoint);

  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 40;
  tc.seed = 9;
  tc.kd.lambda_kd = 0.0;

  fs::path dir_no = fresh_dir("timt_s0_no");
  TrainResult no_teachers =
      train_student(ds, std::nullopt, std::nullopt, mc, tc, dir_no);

  fs::path dir_with = fresh_dir("timt_s0_with");
  TrainResult with_teachers = train_student(ds, tir.best_checkpoint,
                                            mt.best_checkpoint, mc, tc, dir_with);

  CHECK(util::sha256_file(no_teachers.last_checkpoint) ==
        util::sha256_file(with_teachers.last_checkpoint));
  CHECK(util::sha256_file(no_teachers.best_checkpoint) ==
        util::sha256_file(with_teachers.best_checkpoint));
  CHECK(util::sha256_file(dir_no / "train_log.jsonl") ==
        util::sha256_file(dir_with / "train_log.jsonl"));

  // a KD run leaves the teacher checkpoints untouched
  TrainConfig kd_cfg = tc;
  kd_cfg.kd.lambda_kd = 0.8;
  fs::path dir_kd = fresh_dir("timt_s0_kd");
  train_student(ds, tir.best_checkpoint, mt.best_checkpoint, mc, kd_cfg, dir_kd);
  CHECK(util::sha256_file(tir.best_checkpoint) == tir_hash_before);
  CHECK(util::sha256_file(mt.best_checkpoint) == mt_hash_before);

  // KD training requires the checkpoints it was asked to distill from
  CHECK_THROWS_AS(
      train_student(ds, std::nullopt, std::nullopt, mc, kd_cfg, dir_kd),
      std::invalid_argument);

  // logged totals respect the combined-loss bookkeeping
  std::ifstream log(dir_kd / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    CHECK(line.find("\"total\":") != std::string::npos);
    CHECK(line.find("\"l_kd\":") != std::string::npos);
    ++lines;
  }
  CHECK(lines == 2 * 3);  // 2 epochs x ceil(120/40) steps

  fs::remove_all(tir_dir);
  fs::remove_all(mt_dir);
  fs::remove_all(dir_no);
  fs::remove_all(dir_with);
  fs::remove_all(dir_kd);
}

TEST_CASE("teacher dimension mismatch is rejected") {
  corpus::Dataset ds = toy_dataset(80);
  model::ModelConfig mc = toy_model();

  TrainConfig teacher_cfg;
  teacher_cfg.teacher_epochs = 1;
  teacher_cfg.batch_size = 40;
  fs::path tir_dir = fresh_dir("timt_dim_tir");
  TrainResult tir = pretrain_tir(ds, mc, teacher_cfg, tir_dir);
  fs::path mt_dir = fresh_dir("timt_dim_mt");
  TrainResult mt = pretrain_mt(ds, mc, teacher_cfg, mt_dir);

  model::ModelConfig wider = mc;
  wider.d_model = 64;
  wider.d_ff = 128;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 40;
  fs::path out = fresh_dir("timt_dim_out");
  CHECK_THROWS_AS(train_student(ds, tir.best_checkpoint, mt.best_checkpoint,
                                wider, tc, out),
                  std::invalid_argument);

  fs::remove_all(tir_dir);
  fs::remove_all(mt_dir);
  fs::remove_all(out);
}

TEST_CASE("ablate_teachers emits the seven subset rows") {
  corpus::Dataset ds = toy_dataset(60);
  model::ModelConfig mc = toy_model();
  TrainConfig tc;
  tc.teacher_epochs = 1;
  tc.epochs = 1;
  tc.batch_size = 30;

  fs::path tir_dir = fresh_dir("timt_ab_tir");
  fs::path mt_dir = fresh_dir("timt_ab_mt");
  TrainResult tir = pretrain_tir(ds, mc, tc, tir_dir);
  TrainResult mt = pretrain_mt(ds, mc, tc, mt_dir);

  fs::path out = fresh_dir("timt_ab_out");
  std::vector<AblationRow> rows =
      ablate_teachers(ds, tir.best_checkpoint, mt.best_checkpoint, mc, tc, out);

  REQUIRE(rows.size() == 7);
  // rows follow the D / S / SD / I / ID / IS / ISD layout
  const bool expect[7][3] = {{true, false, false}, {false, true, false},
                             {true, true, false},  {false, false, true},
                             {true, false, true},  {false, true, true},
                             {true, true, true}};
  for (int i = 0; i < 7; ++i) {
    CHECK(rows[i].row_no == i + 1);
    CHECK(rows[i].use_decoder == expect[i][0]);
    CHECK(rows[i].use_sequential == expect[i][1]);
    CHECK(rows[i].use_image == expect[i][2]);
    CHECK(rows[i].valid_bleu >= 0.0);
    CHECK(rows[i].test_bleu >= 0.0);
  }

  fs::remove_all(tir_dir);
  fs::remove_all(mt_dir);
  fs::remove_all(out);
}

TEST_CASE("sweep_lambda trains one run per grid point") {
  corpus::Dataset ds = toy_dataset(60);
  model::ModelConfig mc = toy_model();
  TrainConfig tc;
  tc.teacher_epochs = 1;
  tc.epochs = 1;
  tc.batch_size = 30;

  fs::path tir_dir = fresh_dir("timt_sw_tir");
  fs::path mt_dir = fresh_dir("timt_sw_mt");
  TrainResult tir = pretrain_tir(ds, mc, tc, tir_dir);
  TrainResult mt = pretrain_mt(ds, mc, tc, mt_dir);

  fs::path out = fresh_dir("timt_sw_out");
  std::vector<SweepPoint> points = sweep_lambda(
      ds, tir.best_checkpoint, mt.best_checkpoint, mc, tc, {0.0, 0.8, 1.0}, out);
  REQUIRE(points.size() == 3);
  CHECK(points[0].lambda_kd == 0.0);
  CHECK(points[1].lambda_kd == 0.8);
  CHECK(points[2].lambda_kd == 1.0);

  CHECK_THROWS_AS(sweep_lambda(ds, tir.best_checkpoint, mt.best_checkpoint, mc,
                               tc, {}, out),
                  std::invalid_argument);
  CHECK_THROWS_AS(sweep_lambda(ds, tir.best_checkpoint, mt.best_checkpoint, mc,
                               tc, {1.5}, out),
                  std::invalid_argument);

  fs::remove_all(tir_dir);
  fs::remove_all(mt_dir);
  fs::remove_all(out);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  corpus::Dataset ds = toy_dataset(60);
  ds.train[3].image.pixels(0, 0) = std::nan("");
  model::ModelConfig mc = toy_model();
  TrainConfig tc;
  tc.teacher_epochs = 1;
  tc.batch_size = 30;
  fs::path out = fresh_dir("timt_div_out");
  CHECK_THROWS_WITH_AS(pretrain_tir(ds, mc, tc, out),
                       doctest::Contains("diverged"), std::runtime_error);
  fs::remove_all(out);
}

TEST_CASE("warm start copies the teacher image encoder") {
  corpus::Dataset ds = toy_dataset(80);
  model::ModelConfig mc = toy_model();
  TrainConfig tc;
  tc.teacher_epochs = 2;
  tc.epochs = 1;
  tc.batch_size = 40;
  tc.kd.lambda_kd = 0.0;

  fs::path tir_dir = fresh_dir("timt_ws_tir");
  TrainResult tir = pretrain_tir(ds, mc, tc, tir_dir);

  fs::path cold_dir = fresh_dir("timt_ws_cold");
  TrainResult cold = train_student(ds, std::nullopt, std::nullopt, mc, tc, cold_dir);

  TrainConfig warm_cfg = tc;
  warm_cfg.warm_start_image_encoder = true;
  fs::path warm_dir = fresh_dir("timt_ws_warm");
  TrainResult warm = train_student(ds, tir.best_checkpoint, std::nullopt, mc,
                                   warm_cfg, warm_dir);

  CHECK(util::sha256_file(cold.last_checkpoint) !=
        util::sha256_file(warm.last_checkpoint));
  // warm start requires the checkpoint
  CHECK_THROWS_AS(
      train_student(ds, std::nullopt, std::nullopt, mc, warm_cfg, warm_dir),
      std::invalid_argument);

  fs::remove_all(tir_dir);
  fs::remove_all(cold_dir);
  fs::remove_all(warm_dir);
}
