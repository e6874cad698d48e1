// Acceptance suite: exercises the full workbench end to end and prints one
// PASS/FAIL line per criterion. The directional checks (5, 6) retrain the
// student across three seeds on the 5k-sample corpus and take the longest;
// expect roughly half to three quarters of an hour in total on two cores.

#include "timt/eval/bleu.hpp"
#include "timt/eval/evaluate.hpp"
#include "timt/loss/gradcheck.hpp"
#include "timt/loss/losses.hpp"
#include "timt/train/trainer.hpp"
#include "timt/util/sha256.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace timt;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", idx,
              name.c_str(), detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  if (!pass) g_failures += 1;
}

Mat random_mat(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-2.0, 2.0);
  }
  return m;
}

model::FeatureSeq wrap(nn::Graph& g, const Mat& data, int batch, int len,
                       const std::vector<uint8_t>& mask) {
  model::FeatureSeq f;
  f.data = g.input(data);
  f.batch = batch;
  f.len = len;
  f.mask = mask;
  return f;
}

model::FeatureSeqValue wrap_value(const Mat& data, int batch, int len,
                                  const std::vector<uint8_t>& mask) {
  model::FeatureSeqValue f;
  f.data = data;
  f.batch = batch;
  f.len = len;
  f.mask = mask;
  return f;
}

// ---------------------------------------------------------------- criterion 1
void criterion_loss_identities() {
  Rng rng(71);
  bool ok = true;
  std::ostringstream detail;

  for (int trial = 0; trial < 50 && ok; ++trial) {
    const int B = 1 + static_cast<int>(rng.below(3));
    const int L = 1 + static_cast<int>(rng.below(4));
    const int d = 1 + static_cast<int>(rng.below(6));
    Mat a = random_mat(B * L, d, rng);
    std::vector<uint8_t> mask(static_cast<size_t>(B) * L, 1);
    nn::Graph g;
    ok = ok && g.scalar(loss::token_kd_l2(g, wrap(g, a, B, L, mask),
                                          wrap_value(a, B, L, mask))) == 0.0;
    ok = ok && g.scalar(loss::sentence_kd_l2(g, wrap(g, a, B, L, mask),
                                             wrap_value(a, B, L, mask))) == 0.0;
  }
  if (!ok) detail << "identity at student==teacher violated";

  // decoder token KD equals teacher entropy at equal distributions
  double max_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int z = 1 + static_cast<int>(rng.below(4));
    const int v = 2 + static_cast<int>(rng.below(6));
    Mat p(z, v);
    for (int r = 0; r < z; ++r) {
      double sum = 0.0;
      for (int c = 0; c < v; ++c) {
        p(r, c) = -std::log(1.0 - rng.uniform());
        sum += p(r, c);
      }
      p.row(r) /= sum;
    }
    double entropy = 0.0;
    for (int r = 0; r < z; ++r) {
      for (int c = 0; c < v; ++c) entropy -= p(r, c) * std::log(p(r, c));
    }
    nn::Graph g;
    Mat logp = p.array().log().matrix();
    std::vector<uint8_t> mask(static_cast<size_t>(z), 1);
    const double ce = g.scalar(loss::decoder_token_kd(g, g.input(logp), p, mask, 1));
    max_gap = std::max(max_gap, std::abs(ce - entropy));
  }
  if (max_gap >= 1e-6) {
    ok = false;
    detail << "CE(p,p) vs H(p) gap " << max_gap;
  }

  // sentence-level <= token-level on 1000 random inputs
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int B = 1 + static_cast<int>(rng.below(3));
    const int L = 1 + static_cast<int>(rng.below(4));
    const int d = 1 + static_cast<int>(rng.below(6));
    Mat s = random_mat(B * L, d, rng);
    Mat t = random_mat(B * L, d, rng);
    std::vector<uint8_t> mask(static_cast<size_t>(B) * L, 1);
    nn::Graph g;
    const double tok = g.scalar(
        loss::token_kd_l2(g, wrap(g, s, B, L, mask), wrap_value(t, B, L, mask)));
    const double sent = g.scalar(loss::sentence_kd_l2(g, wrap(g, s, B, L, mask),
                                                      wrap_value(t, B, L, mask)));
    if (sent > tok + 1e-12) violations += 1;
  }
  if (violations > 0) {
    ok = false;
    detail << " sentence>token on " << violations << "/1000 inputs";
  }
  if (ok) detail << "identities exact, CE==H within 1e-6, 0/1000 bound violations";
  report(1, "loss identities", ok, detail.str());
}

// ---------------------------------------------------------------- criterion 2
void criterion_gradient_oracle() {
  std::vector<loss::LossCheck> checks = loss::check_all_losses(1e-4, 42);
  bool ok = checks.size() == 9;
  double worst = 0.0;
  std::string worst_name;
  for (const loss::LossCheck& c : checks) {
    if (c.result.max_rel_err > worst) {
      worst = c.result.max_rel_err;
      worst_name = c.name;
    }
    ok = ok && c.result.max_rel_err < 1e-4;
  }
  std::ostringstream detail;
  detail << "9 losses, worst " << worst_name << " rel err " << worst;
  report(2, "finite-difference gradient oracle", ok, detail.str());
}

// shared small-corpus fixtures for criteria 3, 4, 9
struct SmallWorld {
  corpus::Dataset ds;
  model::ModelConfig mc;
  train::TrainConfig tc;

  SmallWorld() {
    corpus::CorpusSpec spec;
    spec.alphabet = "abcdef";
    spec.min_len = 2;
    spec.max_len = 5;
    spec.n_train = 300;
    spec.n_valid = 40;
    spec.n_test = 40;
    spec.seed = 9;
    ds = corpus::generate_corpus(spec);
    mc.d_model = 32;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.d_ff = 64;
    mc.max_len = 16;
    mc.dropout = 0.0;
    mc.seed = 1;
    tc.teacher_epochs = 3;
    tc.epochs = 2;
    tc.batch_size = 50;
    tc.seed = 31;
  }
};

// ---------------------------------------------------------------- criterion 3
void criterion_combined_endpoints(const SmallWorld& w, const fs::path& out,
                                  const fs::path& tir_ckpt, const fs::path& mt_ckpt) {
  bool ok = true;
  std::ostringstream detail;

  // lambda_kd = 0: training with teacher checkpoints supplied is bit-identical
  // to a run that never loads them
  train::TrainConfig cfg = w.tc;
  cfg.kd.lambda_kd = 0.0;
  train::TrainResult without =
      train::train_student(w.ds, std::nullopt, std::nullopt, w.mc, cfg, out / "lam0_no");
  train::TrainResult with_ckpts =
      train::train_student(w.ds, tir_ckpt, mt_ckpt, w.mc, cfg, out / "lam0_with");
  const bool bits_equal =
      util::sha256_file(without.last_checkpoint) ==
          util::sha256_file(with_ckpts.last_checkpoint) &&
      util::sha256_file(without.best_checkpoint) ==
          util::sha256_file(with_ckpts.best_checkpoint) &&
      util::sha256_file(out / "lam0_no/train_log.jsonl") ==
          util::sha256_file(out / "lam0_with/train_log.jsonl");
  if (!bits_equal) {
    ok = false;
    detail << "lambda=0 run differs from teacherless run; ";
  }

  // lambda_kd = 1 with feature teachers only: parameters reached only through
  // the translation loss must receive exactly zero gradient
  model::ImageToTextModel student(w.mc);
  model::ImageToTextModel tir = model::load_image_model(tir_ckpt);
  corpus::Batch batch = corpus::collate(
      std::vector<corpus::TripleSample>(w.ds.train.begin(), w.ds.train.begin() + 8));

  nn::Graph g;
  model::FeatureSeq fi = student.encode_image(g, batch.images, batch.size,
                                              batch.img_w, batch.char_len, {});
  model::FeatureSeq fs = student.encode_sequence(g, fi, {});
  model::DecodeOut dec = student.decode_prefix(g, fs, batch.tgt_prefix,
                                               batch.tgt_mask, batch.size,
                                               batch.tgt_steps, {});
  nn::Var l_timt = loss::ce_loss(g, dec.log_probs, batch.tgt_gold, batch.tgt_mask,
                                 batch.size);
  nn::Graph tg(false);
  model::FeatureSeq tfi = tir.encode_image(tg, batch.images, batch.size,
                                           batch.img_w, batch.char_len, {});
  model::FeatureSeqValue teacher_fi = model::detach(tg, tfi);

  loss::KdTerms terms;
  terms.tkd_i = loss::token_kd_l2(g, fi, teacher_fi);
  terms.skd_i = loss::sentence_kd_l2(g, fi, teacher_fi);
  loss::KDWeights kw;
  kw.lambda_kd = 1.0;
  kw.lambda_i = 1.0;
  kw.lambda_s = 0.0;
  kw.lambda_d = 0.0;
  loss::CombinedLoss combined = loss::combined_loss(g, l_timt, terms, kw);
  student.params().zero_grads();
  g.backward(combined.total);

  bool timt_only_zero = true;
  bool kd_path_nonzero = false;
  for (nn::Param* p : student.params().pointers()) {
    const bool timt_only = p->name.rfind("decoder.", 0) == 0 ||
                           p->name.rfind("tgt_embed.", 0) == 0 ||
                           p->name.rfind("out_proj.", 0) == 0;
    if (timt_only && !p->grad.isZero()) timt_only_zero = false;
    if (p->name.rfind("img_enc.", 0) == 0 && !p->grad.isZero()) kd_path_nonzero = true;
  }
  if (!timt_only_zero) {
    ok = false;
    detail << "lambda=1 leaked gradient into translation-only parameters; ";
  }
  if (!kd_path_nonzero) {
    ok = false;
    detail << "lambda=1 produced no gradient on the distilled path; ";
  }
  if (ok) detail << "lambda=0 bit-identical, lambda=1 gradient isolation exact";
  report(3, "combined-loss endpoints", ok, detail.str());
}

// ---------------------------------------------------------------- criterion 4
void criterion_frozen_teachers(const SmallWorld& w, const fs::path& out,
                               const fs::path& tir_ckpt, const fs::path& mt_ckpt) {
  const std::string tir_before = util::sha256_file(tir_ckpt);
  const std::string mt_before = util::sha256_file(mt_ckpt);
  train::TrainConfig cfg = w.tc;
  cfg.kd.lambda_kd = 0.8;
  train::train_student(w.ds, tir_ckpt, mt_ckpt, w.mc, cfg, out / "frozen");
  const bool ok = util::sha256_file(tir_ckpt) == tir_before &&
                  util::sha256_file(mt_ckpt) == mt_before;
  report(4, "frozen-teacher checkpoints", ok,
         ok ? "sha256 unchanged across a full student run"
            : "teacher checkpoint bytes changed");
}

// shared heavy fixtures for criteria 5-7
struct Protocol {
  corpus::Dataset ds;
  model::ModelConfig mc;
  std::vector<uint64_t> seeds = {101, 102, 103};
  std::vector<fs::path> tir_ckpts, mt_ckpts, dsi_ckpts;
  double base = 0, d_only = 0, s_only = 0, i_only = 0, dsi = 0;
  double lam04 = 0, lam10 = 0;

  Protocol() {
    corpus::CorpusSpec spec;  // defaults: a..z, len 3..8, 5000/200/500, seed 7
    ds = corpus::generate_corpus(spec);
    mc.src_vocab = ds.src_vocab.size();
    mc.tgt_vocab = ds.tgt_vocab.size();
  }

  train::TrainConfig base_config(uint64_t seed) const {
    train::TrainConfig tc;
    tc.teacher_epochs = 8;
    tc.epochs = 4;
    tc.batch_size = 64;
    tc.seed = seed;
    return tc;
  }

  void run(const fs::path& out) {
    for (size_t si = 0; si < seeds.size(); ++si) {
      const train::TrainConfig tc = base_config(seeds[si]);
      const fs::path seed_dir = out / ("seed" + std::to_string(seeds[si]));
      train::TrainResult tir = train::pretrain_tir(ds, mc, tc, seed_dir / "tir");
      train::TrainResult mt = train::pretrain_mt(ds, mc, tc, seed_dir / "mt");
      tir_ckpts.push_back(tir.best_checkpoint);
      mt_ckpts.push_back(mt.best_checkpoint);
      std::printf("  seed %llu teachers ready (tir acc %.3f, mt acc %.3f)\n",
                  static_cast<unsigned long long>(seeds[si]), tir.best_metric,
                  mt.best_metric);
      std::fflush(stdout);

      auto student = [&](const std::string& name, double lkd, bool use_d,
                         bool use_s, bool use_i) {
        train::TrainConfig cfg = tc;
        cfg.kd.lambda_kd = lkd;
        if (!use_d) cfg.kd.lambda_d = 0.0;
        if (!use_s) cfg.kd.lambda_s = 0.0;
        if (!use_i) cfg.kd.lambda_i = 0.0;
        std::optional<fs::path> tp, mp;
        if (cfg.kd.any_teacher_needed()) {
          tp = tir.best_checkpoint;
          mp = mt.best_checkpoint;
        }
        train::TrainResult r =
            train::train_student(ds, tp, mp, mc, cfg, seed_dir / name);
        std::printf("  seed %llu %-11s valid BLEU %.2f\n",
                    static_cast<unsigned long long>(seeds[si]), name.c_str(),
                    r.best_metric);
        std::fflush(stdout);
        return r;
      };

      base += student("baseline", 0.0, false, false, false).best_metric;
      d_only += student("teacher_d", 0.8, true, false, false).best_metric;
      s_only += student("teacher_s", 0.8, false, true, false).best_metric;
      i_only += student("teacher_i", 0.8, false, false, true).best_metric;
      train::TrainResult full = student("teacher_dsi", 0.8, true, true, true);
      dsi += full.best_metric;
      dsi_ckpts.push_back(full.best_checkpoint);
      lam04 += student("lambda_04", 0.4, true, true, true).best_metric;
      lam10 += student("lambda_10", 1.0, true, true, true).best_metric;
    }
    const double n = static_cast<double>(seeds.size());
    base /= n;
    d_only /= n;
    s_only /= n;
    i_only /= n;
    dsi /= n;
    lam04 /= n;
    lam10 /= n;
  }
};

// ---------------------------------------------------------------- criterion 5
void criterion_teacher_ordering(const Protocol& p) {
  const bool ok = p.dsi >= p.d_only && p.dsi >= p.s_only && p.dsi >= p.i_only &&
                  p.dsi >= p.base;
  std::ostringstream detail;
  detail.precision(4);
  detail << "mean valid BLEU over 3 seeds: baseline=" << p.base
         << " D=" << p.d_only << " S=" << p.s_only << " I=" << p.i_only
         << " DSI=" << p.dsi;
  report(5, "triple-teacher distillation ordering", ok, detail.str());
}

// ---------------------------------------------------------------- criterion 6
void criterion_lambda_sweep(const Protocol& p) {
  const double curve[4] = {p.base, p.lam04, p.dsi, p.lam10};
  const double best = *std::max_element(curve, curve + 4);
  const bool ok = (curve[1] == best || curve[2] == best) && best > curve[0] &&
                  curve[3] <= best;
  std::ostringstream detail;
  detail.precision(4);
  detail << "mean valid BLEU: lambda 0=" << curve[0] << " 0.4=" << curve[1]
         << " 0.8=" << curve[2] << " 1.0=" << curve[3];
  report(6, "lambda sweep shape", ok, detail.str());
}

// ---------------------------------------------------------------- criterion 7
void criterion_pipeline_comparison(const Protocol& p) {
  model::ImageToTextModel student = model::load_image_model(p.dsi_ckpts[0]);
  model::ImageToTextModel tir = model::load_image_model(p.tir_ckpts[0]);
  model::TextToTextModel mt = model::load_text_model(p.mt_ckpts[0]);

  eval::LatencyOptions lat;
  lat.measure = true;
  const int cap = std::min(p.mc.max_len - 1, p.ds.spec.max_len + 2);
  eval::EvalReport s = eval::evaluate_student(student, p.ds.test, "test", cap, lat);
  eval::EvalReport pipe = eval::evaluate_pipeline(tir, mt, p.ds.test, "test", cap, lat);

  const bool params_ok = s.n_params < pipe.n_params &&
                         pipe.n_params == tir.count_params() + mt.count_params();
  const bool latency_ok = s.latency_n >= 100 && pipe.latency_n >= 100 &&
                          s.latency_ms_mean < pipe.latency_ms_mean;
  std::ostringstream detail;
  detail.precision(4);
  detail << "params " << s.n_params << " vs " << pipe.n_params << "; latency "
         << s.latency_ms_mean << "ms vs " << pipe.latency_ms_mean << "ms over "
         << s.latency_n << " sentences; bleu " << s.bleu << " vs " << pipe.bleu;
  report(7, "student beats pipeline on params and latency", params_ok && latency_ok,
         detail.str());
}

// ---------------------------------------------------------------- criterion 8
void criterion_bleu_oracle() {
  std::vector<std::vector<int>> hyp = {{10, 11, 12, 13}};
  std::vector<std::vector<int>> ref = {{10, 11, 12, 13, 14}};
  const double got = eval::corpus_bleu(hyp, ref);
  const double expected = 100.0 * std::exp(1.0 - 5.0 / 4.0);  // 77.8801
  bool ok = std::abs(got - expected) < 0.01;

  Rng rng(8);
  for (int trial = 0; trial < 20 && ok; ++trial) {
    std::vector<std::vector<int>> corpus_ids;
    const int n = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i) {
      std::vector<int> sent;
      const int len = 1 + static_cast<int>(rng.below(7));
      for (int k = 0; k < len; ++k) sent.push_back(static_cast<int>(rng.below(9)));
      corpus_ids.push_back(std::move(sent));
    }
    ok = ok && eval::corpus_bleu(corpus_ids, corpus_ids) == 100.0;
  }
  std::ostringstream detail;
  detail.precision(6);
  detail << "hand case " << got << " vs " << expected << "; self-BLEU == 100";
  report(8, "BLEU oracle", ok, detail.str());
}

// ---------------------------------------------------------------- criterion 9
std::string hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::string combined;
  for (const fs::path& f : files) {
    combined += fs::relative(f, dir).string();
    combined += util::sha256_file(f);
  }
  return util::sha256_hex(combined);
}

void criterion_determinism(const SmallWorld& w, const fs::path& out) {
  bool ok = true;
  std::ostringstream detail;

  // gen-data through the CLI, twice
  const std::string cli = TIMTKD_CLI_PATH;
  const fs::path d1 = out / "gen1";
  const fs::path d2 = out / "gen2";
  for (const fs::path& d : {d1, d2}) {
    const std::string cmd =
        cli + " gen-data --seed 7 --out " + d.string() + " >/dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) ok = false;
  }
  if (ok && hash_tree(d1) != hash_tree(d2)) {
    ok = false;
    detail << "gen-data not byte-identical; ";
  }

  // teacher and student training, twice each
  train::TrainResult t1 = train::pretrain_tir(w.ds, w.mc, w.tc, out / "tir1");
  train::TrainResult t2 = train::pretrain_tir(w.ds, w.mc, w.tc, out / "tir2");
  train::TrainResult m1 = train::pretrain_mt(w.ds, w.mc, w.tc, out / "mt1");
  train::TrainResult m2 = train::pretrain_mt(w.ds, w.mc, w.tc, out / "mt2");
  if (util::sha256_file(t1.last_checkpoint) != util::sha256_file(t2.last_checkpoint) ||
      util::sha256_file(m1.last_checkpoint) != util::sha256_file(m2.last_checkpoint)) {
    ok = false;
    detail << "teacher training not reproducible; ";
  }

  train::TrainConfig cfg = w.tc;
  cfg.kd.lambda_kd = 0.8;
  train::TrainResult s1 = train::train_student(w.ds, t1.best_checkpoint,
                                               m1.best_checkpoint, w.mc, cfg,
                                               out / "stu1");
  train::TrainResult s2 = train::train_student(w.ds, t1.best_checkpoint,
                                               m1.best_checkpoint, w.mc, cfg,
                                               out / "stu2");
  if (util::sha256_file(s1.last_checkpoint) != util::sha256_file(s2.last_checkpoint) ||
      util::sha256_file(out / "stu1/train_log.jsonl") !=
          util::sha256_file(out / "stu2/train_log.jsonl")) {
    ok = false;
    detail << "student training not reproducible; ";
  }
  if (ok) detail << "dataset, teacher and student artifacts bit-identical";
  report(9, "seeded determinism", ok, detail.str());
}

}  // namespace

int main() {
  const fs::path out = fs::current_path() / "acceptance_out";
  fs::remove_all(out);
  fs::create_directories(out);

  std::printf("acceptance suite: writing scratch runs under %s\n",
              out.string().c_str());
  std::fflush(stdout);

  criterion_loss_identities();
  criterion_gradient_oracle();

  SmallWorld small;
  train::TrainResult small_tir =
      train::pretrain_tir(small.ds, small.mc, small.tc, out / "small_tir");
  train::TrainResult small_mt =
      train::pretrain_mt(small.ds, small.mc, small.tc, out / "small_mt");
  criterion_combined_endpoints(small, out, small_tir.best_checkpoint,
                               small_mt.best_checkpoint);
  criterion_frozen_teachers(small, out, small_tir.best_checkpoint,
                            small_mt.best_checkpoint);

  std::printf("running the three-seed training protocol (this is the long part)\n");
  std::fflush(stdout);
  Protocol protocol;
  protocol.run(out / "protocol");
  criterion_teacher_ordering(protocol);
  criterion_lambda_sweep(protocol);
  criterion_pipeline_comparison(protocol);

  criterion_bleu_oracle();
  criterion_determinism(small, out);

  if (g_failures == 0) {
    std::printf("all 9 acceptance criteria passed\n");
  } else {
    std::printf("%d acceptance criteria FAILED\n", g_failures);
  }
  return g_failures == 0 ? 0 : 1;
}
