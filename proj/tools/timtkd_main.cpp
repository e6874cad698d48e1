// timtkd: synthetic text-image translation workbench with multi-teacher
// knowledge distillation. Subcommands cover the full workflow: data
// generation, teacher pretraining, student training, ablation, lambda sweep,
// evaluation, and the gradient self-check.

#include "timt/eval/evaluate.hpp"
#include "timt/loss/gradcheck.hpp"
#include "timt/train/trainer.hpp"
#include "timt/util/config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace timt;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  int64_t seed_override = -1;
  int verbosity = 1;
};

int env_verbosity(int fallback) {
  const char* v = std::getenv("TIMTKD_LOG");
  if (!v) return fallback;
  std::string s(v);
  if (s == "quiet") return 0;
  if (s == "info") return 1;
  if (s == "debug") return 2;
  return fallback;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_out = true) {
  cmd->add_option("--config", opts.config_path, "INI config file");
  auto* out = cmd->add_option("--out", opts.out_dir, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", opts.seed_override, "override every config seed");
}

struct LoadedConfig {
  util::IniConfig ini;
  corpus::CorpusSpec corpus;
  model::ModelConfig model;
  train::TrainConfig train;
};

LoadedConfig load_config(const CommonOpts& opts) {
  LoadedConfig lc;
  if (!opts.config_path.empty()) {
    lc.ini = util::IniConfig::parse_file(opts.config_path);
  }
  const util::IniConfig& ini = lc.ini;

  corpus::CorpusSpec& cs = lc.corpus;
  cs.alphabet = ini.get("corpus", "alphabet", cs.alphabet);
  cs.min_len = ini.get_int("corpus", "min_len", cs.min_len);
  cs.max_len = ini.get_int("corpus", "max_len", cs.max_len);
  cs.n_train = ini.get_int("corpus", "n_train", cs.n_train);
  cs.n_valid = ini.get_int("corpus", "n_valid", cs.n_valid);
  cs.n_test = ini.get_int("corpus", "n_test", cs.n_test);
  cs.seed = ini.get_u64("corpus", "seed", cs.seed);
  cs.glyph_width = ini.get_int("corpus", "glyph_width", cs.glyph_width);

  model::ModelConfig& mc = lc.model;
  mc.d_model = ini.get_int("model", "d_model", mc.d_model);
  mc.n_layers = ini.get_int("model", "n_layers", mc.n_layers);
  mc.n_heads = ini.get_int("model", "n_heads", mc.n_heads);
  mc.d_ff = ini.get_int("model", "d_ff", mc.d_ff);
  mc.max_len = ini.get_int("model", "max_len", mc.max_len);
  mc.dropout = ini.get_double("model", "dropout", mc.dropout);
  mc.seed = ini.get_u64("model", "seed", mc.seed);

  train::TrainConfig& tc = lc.train;
  tc.epochs = ini.get_int("train", "epochs", tc.epochs);
  tc.teacher_epochs = ini.get_int("train", "teacher_epochs", tc.teacher_epochs);
  tc.batch_size = ini.get_int("train", "batch_size", tc.batch_size);
  tc.learning_rate = ini.get_double("train", "learning_rate", tc.learning_rate);
  tc.adam_beta1 = ini.get_double("train", "adam_beta1", tc.adam_beta1);
  tc.adam_beta2 = ini.get_double("train", "adam_beta2", tc.adam_beta2);
  tc.adam_eps = ini.get_double("train", "adam_eps", tc.adam_eps);
  tc.clip_norm = ini.get_double("train", "clip_norm", tc.clip_norm);
  tc.seed = ini.get_u64("train", "seed", tc.seed);
  tc.deterministic = ini.get_bool("train", "deterministic", tc.deterministic);
  tc.warm_start_image_encoder = ini.get_bool("train", "warm_start_image_encoder",
                                             tc.warm_start_image_encoder);

  loss::KDWeights& kd = tc.kd;
  kd.lambda_kd = ini.get_double("kd", "lambda_kd", kd.lambda_kd);
  kd.lambda_i = ini.get_double("kd", "lambda_i", kd.lambda_i);
  kd.lambda_s = ini.get_double("kd", "lambda_s", kd.lambda_s);
  kd.lambda_d = ini.get_double("kd", "lambda_d", kd.lambda_d);
  kd.token_i = ini.get_bool("kd", "token_i", kd.token_i);
  kd.sentence_i = ini.get_bool("kd", "sentence_i", kd.sentence_i);
  kd.token_s = ini.get_bool("kd", "token_s", kd.token_s);
  kd.sentence_s = ini.get_bool("kd", "sentence_s", kd.sentence_s);
  kd.token_d = ini.get_bool("kd", "token_d", kd.token_d);
  kd.sentence_d = ini.get_bool("kd", "sentence_d", kd.sentence_d);
  kd.l2_squared = ini.get_bool("kd", "l2_squared", kd.l2_squared);

  if (opts.seed_override >= 0) {
    cs.seed = static_cast<uint64_t>(opts.seed_override);
    mc.seed = static_cast<uint64_t>(opts.seed_override);
    tc.seed = static_cast<uint64_t>(opts.seed_override);
  }
  return lc;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(15);
  os << v;
  return os.str();
}

// the merged configuration actually used, dumped next to the outputs
void dump_effective(const LoadedConfig& lc, const fs::path& out_dir) {
  util::IniConfig ini;
  ini.set("corpus", "alphabet", lc.corpus.alphabet);
  ini.set("corpus", "min_len", std::to_string(lc.corpus.min_len));
  ini.set("corpus", "max_len", std::to_string(lc.corpus.max_len));
  ini.set("corpus", "n_train", std::to_string(lc.corpus.n_train));
  ini.set("corpus", "n_valid", std::to_string(lc.corpus.n_valid));
  ini.set("corpus", "n_test", std::to_string(lc.corpus.n_test));
  ini.set("corpus", "seed", std::to_string(lc.corpus.seed));
  ini.set("corpus", "glyph_width", std::to_string(lc.corpus.glyph_width));
  ini.set("model", "d_model", std::to_string(lc.model.d_model));
  ini.set("model", "n_layers", std::to_string(lc.model.n_layers));
  ini.set("model", "n_heads", std::to_string(lc.model.n_heads));
  ini.set("model", "d_ff", std::to_string(lc.model.d_ff));
  ini.set("model", "max_len", std::to_string(lc.model.max_len));
  ini.set("model", "dropout", fmt_double(lc.model.dropout));
  ini.set("model", "seed", std::to_string(lc.model.seed));
  ini.set("train", "epochs", std::to_string(lc.train.epochs));
  ini.set("train", "teacher_epochs", std::to_string(lc.train.teacher_epochs));
  ini.set("train", "batch_size", std::to_string(lc.train.batch_size));
  ini.set("train", "learning_rate", fmt_double(lc.train.learning_rate));
  ini.set("train", "adam_beta1", fmt_double(lc.train.adam_beta1));
  ini.set("train", "adam_beta2", fmt_double(lc.train.adam_beta2));
  ini.set("train", "adam_eps", fmt_double(lc.train.adam_eps));
  ini.set("train", "clip_norm", fmt_double(lc.train.clip_norm));
  ini.set("train", "seed", std::to_string(lc.train.seed));
  ini.set("train", "deterministic", lc.train.deterministic ? "true" : "false");
  ini.set("train", "warm_start_image_encoder",
          lc.train.warm_start_image_encoder ? "true" : "false");
  const loss::KDWeights& kd = lc.train.kd;
  ini.set("kd", "lambda_kd", fmt_double(kd.lambda_kd));
  ini.set("kd", "lambda_i", fmt_double(kd.lambda_i));
  ini.set("kd", "lambda_s", fmt_double(kd.lambda_s));
  ini.set("kd", "lambda_d", fmt_double(kd.lambda_d));
  ini.set("kd", "token_i", kd.token_i ? "true" : "false");
  ini.set("kd", "sentence_i", kd.sentence_i ? "true" : "false");
  ini.set("kd", "token_s", kd.token_s ? "true" : "false");
  ini.set("kd", "sentence_s", kd.sentence_s ? "true" : "false");
  ini.set("kd", "token_d", kd.token_d ? "true" : "false");
  ini.set("kd", "sentence_d", kd.sentence_d ? "true" : "false");
  ini.set("kd", "l2_squared", kd.l2_squared ? "true" : "false");
  fs::create_directories(out_dir);
  ini.write_file(out_dir / "config_effective.ini");
}

int decode_cap(const corpus::Dataset& ds, const model::ModelConfig& mc) {
  return std::min(mc.max_len - 1, ds.spec.max_len + 2);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic text-image translation with multi-teacher distillation"};
  app.require_subcommand(1);

  CommonOpts gen_opts, tir_opts, mt_opts, student_opts, ablate_opts, sweep_opts,
      eval_opts, grad_opts;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, gen_opts);

  auto* tir = app.add_subcommand("train-tir", "pretrain the recognition teacher");
  add_common(tir, tir_opts);
  std::string tir_data;
  tir->add_option("--data", tir_data, "dataset directory")->required();

  auto* mt = app.add_subcommand("train-mt", "pretrain the translation teacher");
  add_common(mt, mt_opts);
  std::string mt_data;
  mt->add_option("--data", mt_data, "dataset directory")->required();

  auto* student = app.add_subcommand("train-student",
                                     "train the end-to-end student with KD");
  add_common(student, student_opts);
  std::string student_data, student_tir, student_mt;
  student->add_option("--data", student_data, "dataset directory")->required();
  student->add_option("--tir", student_tir, "TIR teacher checkpoint");
  student->add_option("--mt", student_mt, "MT teacher checkpoint");
  double student_lambda = -1.0;
  student->add_option("--lambda-kd", student_lambda, "override kd.lambda_kd");

  auto* ablate = app.add_subcommand("ablate", "train all seven teacher subsets");
  add_common(ablate, ablate_opts);
  std::string ablate_data, ablate_tir, ablate_mt;
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--tir", ablate_tir, "TIR teacher checkpoint")->required();
  ablate->add_option("--mt", ablate_mt, "MT teacher checkpoint")->required();

  auto* sweep = app.add_subcommand("sweep-lambda", "train across a lambda_kd grid");
  add_common(sweep, sweep_opts);
  std::string sweep_data, sweep_tir, sweep_mt, sweep_grid = "0,0.4,0.8,1.0";
  sweep->add_option("--data", sweep_data, "dataset directory")->required();
  sweep->add_option("--tir", sweep_tir, "TIR teacher checkpoint")->required();
  sweep->add_option("--mt", sweep_mt, "MT teacher checkpoint")->required();
  sweep->add_option("--grid", sweep_grid, "comma-separated lambda values");

  auto* evaluate = app.add_subcommand("evaluate", "score a trained model");
  add_common(evaluate, eval_opts);
  std::string eval_data, eval_model = "student", eval_ckpt, eval_tir, eval_mt,
              eval_split = "test";
  bool eval_latency = false;
  evaluate->add_option("--data", eval_data, "dataset directory")->required();
  evaluate->add_option("--model", eval_model, "student | pipeline")
      ->check(CLI::IsMember({"student", "pipeline"}));
  evaluate->add_option("--ckpt", eval_ckpt, "student checkpoint");
  evaluate->add_option("--tir", eval_tir, "TIR checkpoint (pipeline)");
  evaluate->add_option("--mt", eval_mt, "MT checkpoint (pipeline)");
  evaluate->add_option("--split", eval_split, "train | valid | test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  evaluate->add_flag("--latency", eval_latency, "measure decode latency");

  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "finite-difference check of every loss");
  add_common(gradcheck, grad_opts, /*needs_out=*/false);
  double gc_epsilon = 1e-4, gc_tolerance = 1e-4;
  gradcheck->add_option("--epsilon", gc_epsilon, "finite-difference step");
  gradcheck->add_option("--tolerance", gc_tolerance, "max relative error allowed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const int verbosity = env_verbosity(1);
  try {
    if (*gen) {
      LoadedConfig lc = load_config(gen_opts);
      dump_effective(lc, gen_opts.out_dir);
      corpus::Dataset ds = corpus::generate_corpus(lc.corpus);
      corpus::save_dataset(ds, gen_opts.out_dir);
      if (verbosity > 0) {
        std::cout << "wrote " << ds.train.size() << "/" << ds.valid.size() << "/"
                  << ds.test.size() << " samples to " << gen_opts.out_dir << "\n";
      }
    } else if (*tir) {
      LoadedConfig lc = load_config(tir_opts);
      dump_effective(lc, tir_opts.out_dir);
      corpus::Dataset ds = corpus::load_dataset(tir_data);
      train::TrainResult res = train::pretrain_tir(ds, lc.model, lc.train, tir_opts.out_dir);
      if (verbosity > 0) {
        std::cout << "best validation token accuracy " << res.best_metric << " -> "
                  << res.best_checkpoint.string() << "\n";
      }
    } else if (*mt) {
      LoadedConfig lc = load_config(mt_opts);
      dump_effective(lc, mt_opts.out_dir);
      corpus::Dataset ds = corpus::load_dataset(mt_data);
      train::TrainResult res = train::pretrain_mt(ds, lc.model, lc.train, mt_opts.out_dir);
      if (verbosity > 0) {
        std::cout << "best validation token accuracy " << res.best_metric << " -> "
                  << res.best_checkpoint.string() << "\n";
      }
    } else if (*student) {
      LoadedConfig lc = load_config(student_opts);
      if (student_lambda >= 0.0) lc.train.kd.lambda_kd = student_lambda;
      dump_effective(lc, student_opts.out_dir);
      corpus::Dataset ds = corpus::load_dataset(student_data);
      std::optional<fs::path> tir_path, mt_path;
      if (!student_tir.empty()) tir_path = student_tir;
      if (!student_mt.empty()) mt_path = student_mt;
      train::TrainResult res = train::train_student(ds, tir_path, mt_path, lc.model,
                                                    lc.train, student_opts.out_dir);
      if (verbosity > 0) {
        std::cout << "best validation BLEU " << res.best_metric << " -> "
                  << res.best_checkpoint.string() << "\n";
      }
    } else if (*ablate) {
      LoadedConfig lc = load_config(ablate_opts);
      dump_effective(lc, ablate_opts.out_dir);
      corpus::Dataset ds = corpus::load_dataset(ablate_data);
      std::vector<train::AblationRow> rows = train::ablate_teachers(
          ds, ablate_tir, ablate_mt, lc.model, lc.train, ablate_opts.out_dir);
      eval::emit_report(ablate_opts.out_dir, {}, {}, rows);
      if (verbosity > 0) {
        for (const train::AblationRow& r : rows) {
          std::cout << "row " << r.row_no << " valid_bleu " << r.valid_bleu
                    << " test_bleu " << r.test_bleu << "\n";
        }
      }
    } else if (*sweep) {
      LoadedConfig lc = load_config(sweep_opts);
      dump_effective(lc, sweep_opts.out_dir);
      corpus::Dataset ds = corpus::load_dataset(sweep_data);
      std::vector<double> grid;
      std::stringstream ss(sweep_grid);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) grid.push_back(std::stod(item));
      }
      std::vector<train::SweepPoint> points = train::sweep_lambda(
          ds, sweep_tir, sweep_mt, lc.model, lc.train, grid, sweep_opts.out_dir);
      eval::emit_report(sweep_opts.out_dir, {}, points, {});
      if (verbosity > 0) {
        for (const train::SweepPoint& p : points) {
          std::cout << "lambda " << p.lambda_kd << " valid_bleu " << p.valid_bleu
                    << " test_bleu " << p.test_bleu << "\n";
        }
      }
    } else if (*evaluate) {
      LoadedConfig lc = load_config(eval_opts);
      dump_effective(lc, eval_opts.out_dir);
      corpus::Dataset ds = corpus::load_dataset(eval_data);
      const std::vector<corpus::TripleSample>& samples = ds.split(eval_split);
      eval::LatencyOptions lat;
      lat.measure = eval_latency;
      eval::EvalReport rep;
      if (eval_model == "student") {
        require(!eval_ckpt.empty(), "--ckpt is required for --model student");
        model::ImageToTextModel m = model::load_image_model(eval_ckpt);
        rep = eval::evaluate_student(m, samples, eval_split,
                                     decode_cap(ds, m.config()), lat);
      } else {
        require(!eval_tir.empty() && !eval_mt.empty(),
                "--tir and --mt are required for --model pipeline");
        model::ImageToTextModel tir_m = model::load_image_model(eval_tir);
        model::TextToTextModel mt_m = model::load_text_model(eval_mt);
        rep = eval::evaluate_pipeline(tir_m, mt_m, samples, eval_split,
                                      decode_cap(ds, tir_m.config()), lat);
      }
      eval::emit_report(eval_opts.out_dir, {rep}, {}, {});
      std::cout << rep.model_id << " " << rep.split << " bleu " << rep.bleu
                << " params " << rep.n_params;
      if (rep.latency_n > 0) {
        std::cout << " latency_ms_mean " << rep.latency_ms_mean;
      }
      std::cout << "\n";
    } else if (*gradcheck) {
      std::vector<loss::LossCheck> checks = loss::check_all_losses(gc_epsilon, 42);
      bool ok = true;
      for (const loss::LossCheck& c : checks) {
        const bool pass = c.result.max_rel_err < gc_tolerance;
        ok = ok && pass;
        std::printf("%-24s max_rel_err %.3e (%d probes) %s\n", c.name.c_str(),
                    c.result.max_rel_err, c.result.n_checked,
                    pass ? "ok" : "FAIL");
      }
      return ok ? 0 : 1;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
