#include "timt/loss/gradcheck.hpp"

#include "timt/corpus.hpp"
#include "timt/loss/losses.hpp"
#include "timt/model/models.hpp"

#include <cmath>

namespace timt::loss {

GradCheckResult gradient_check(const std::function<double(bool)>& loss_fn,
                               const std::vector<nn::Param*>& params,
                               double epsilon, uint64_t seed,
                               int max_coords_per_param) {
  require(epsilon > 0.0, "epsilon must be positive");

  for (nn::Param* p : params) p->zero_grad();
  const double base = loss_fn(true);
  if (!std::isfinite(base)) throw std::runtime_error("gradient_check: non-finite loss");

  // copy of the analytic gradients before FD evaluations disturb anything
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (nn::Param* p : params) analytic.push_back(p->grad);

  Rng rng(seed);
  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    nn::Param* p = params[pi];
    const Eigen::Index n = p->value.size();
    if (n == 0) continue;

    std::vector<Eigen::Index> coords;
    if (max_coords_per_param > 0 && n > max_coords_per_param) {
      for (int k = 0; k < max_coords_per_param; ++k) {
        coords.push_back(static_cast<Eigen::Index>(rng.below(n)));
      }
    } else {
      coords.resize(static_cast<size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }

    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
    for (Eigen::Index flat : coords) {
      const Eigen::Index r = flat / p->value.cols();
      const Eigen::Index c = flat % p->value.cols();
      const double saved = p->value(r, c);
      p->value(r, c) = saved + epsilon;
      const double up = loss_fn(false);
      p->value(r, c) = saved - epsilon;
      const double down = loss_fn(false);
      p->value(r, c) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("gradient_check: non-finite loss");
      }
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[pi](r, c);
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
      res.n_checked += 1;
    }
    const double rel = std::sqrt(diff_sq) /
                       std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-8});
    res.max_rel_err = std::max(res.max_rel_err, rel);
  }
  return res;
}

namespace {

using corpus::Batch;
using model::FeatureSeq;
using model::FeatureSeqValue;
using model::ImageToTextModel;
using model::ModelConfig;
using model::TextToTextModel;
using nn::Graph;
using nn::TrainMode;
using nn::Var;

struct ToyWorld {
  corpus::Vocab vocab;
  corpus::GlyphSet glyphs;
  Batch batch;
  ImageToTextModel student;
  ImageToTextModel tir;
  TextToTextModel mt;

  static ModelConfig toy_config(uint64_t seed) {
    ModelConfig c;
    c.d_model = 4;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 8;
    c.src_vocab = 6;
    c.tgt_vocab = 6;
    c.max_len = 8;
    c.dropout = 0.0;
    c.seed = seed;
    return c;
  }

  explicit ToyWorld(uint64_t seed)
      : vocab(corpus::build_vocab("ab")),
        glyphs("ab", 8, seed),
        batch(make_batch()),
        student(toy_config(hash_combine(seed, 1))),
        tir(toy_config(hash_combine(seed, 2))),
        mt(toy_config(hash_combine(seed, 3))) {
    // nudge every parameter off the zero-init point: ReLU kinks at exactly
    // zero pre-activations would otherwise poison the finite differences
    Rng jitter(hash_combine(seed, 4));
    for (ImageToTextModel* m : {&student, &tir}) {
      for (nn::Param* p : m->params().pointers()) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
          p->value(i / p->value.cols(), i % p->value.cols()) +=
              jitter.uniform(-0.02, 0.02);
        }
      }
    }
    for (nn::Param* p : mt.params().pointers()) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        p->value(i / p->value.cols(), i % p->value.cols()) +=
            jitter.uniform(-0.02, 0.02);
      }
    }
  }

  Batch make_batch() const {
    corpus::CorpusSpec spec;
    spec.alphabet = "ab";
    spec.min_len = 3;
    spec.max_len = 3;
    std::vector<corpus::TripleSample> samples;
    for (const char* text : {"aba", "bab"}) {
      corpus::TripleSample s;
      s.src_text = text;
      s.tgt_text = corpus::translate_oracle(text, "ab");
      s.src_ids = vocab.tokenize_with_bos_eos(s.src_text);
      s.tgt_ids = vocab.tokenize_with_bos_eos(s.tgt_text);
      s.image = corpus::render_text_image(s.src_text, glyphs);
      samples.push_back(std::move(s));
    }
    return corpus::collate(samples);
  }

  FeatureSeq student_image_features(Graph& g) const {
    return student.encode_image(g, batch.images, batch.size, batch.img_w,
                                batch.char_len, TrainMode{});
  }

  FeatureSeq student_sequence_features(Graph& g) const {
    FeatureSeq fi = student_image_features(g);
    return student.encode_sequence(g, fi, TrainMode{});
  }

  Var student_log_probs(Graph& g) const {
    FeatureSeq fs = student_sequence_features(g);
    return student
        .decode_prefix(g, fs, batch.tgt_prefix, batch.tgt_mask, batch.size,
                       batch.tgt_steps, TrainMode{})
        .log_probs;
  }

  FeatureSeqValue tir_image_features() const {
    Graph g(/*grad_enabled=*/false);
    FeatureSeq f = tir.encode_image(g, batch.images, batch.size, batch.img_w,
                                    batch.char_len, TrainMode{});
    return model::detach(g, f);
  }

  FeatureSeqValue mt_sequence_features() const {
    Graph g(/*grad_enabled=*/false);
    FeatureSeq ft = mt.encode_text(g, batch.src_ids, batch.size, batch.src_len,
                                   batch.src_mask, TrainMode{});
    FeatureSeq fs = mt.encode_sequence(g, ft, TrainMode{});
    return model::detach(g, fs);
  }

  Mat mt_step_probs() const {
    Graph g(/*grad_enabled=*/false);
    FeatureSeq ft = mt.encode_text(g, batch.src_ids, batch.size, batch.src_len,
                                   batch.src_mask, TrainMode{});
    FeatureSeq fs = mt.encode_sequence(g, ft, TrainMode{});
    model::DecodeOut out =
        mt.decode_prefix(g, fs, batch.tgt_prefix, batch.tgt_mask, batch.size,
                         batch.tgt_steps, TrainMode{});
    return g.value(out.log_probs).array().exp().matrix();
  }
};

double run_loss(const std::function<Var(Graph&)>& build, bool grads) {
  Graph g(grads);
  Var loss = build(g);
  const double value = g.scalar(loss);
  if (grads) g.backward(loss);
  return value;
}

}  // namespace

std::vector<LossCheck> check_all_losses(double epsilon, uint64_t seed) {
  ToyWorld w(seed);

  const FeatureSeqValue tir_fi = w.tir_image_features();
  const FeatureSeqValue mt_fs = w.mt_sequence_features();
  const Mat mt_probs = w.mt_step_probs();
  // fixed pseudo-targets standing in for teacher-decoded sentences
  const std::vector<int> mt_sent_prefix = {1, 4, 5, 1, 5, 4};  // BOS a b / BOS b a
  const std::vector<int> mt_sent_gold = {4, 5, 2, 5, 4, 2};
  const std::vector<uint8_t> mt_sent_mask(6, 1);

  std::vector<nn::Param*> student_params = w.student.params().pointers();
  std::vector<nn::Param*> tir_params = w.tir.params().pointers();
  std::vector<nn::Param*> mt_params = w.mt.params().pointers();

  struct Case {
    std::string name;
    std::vector<nn::Param*> params;
    std::function<Var(Graph&)> build;
  };

  std::vector<Case> cases;
  cases.push_back({"ce_timt", student_params, [&w](Graph& g) {
                     Var lp = w.student_log_probs(g);
                     return ce_loss(g, lp, w.batch.tgt_gold, w.batch.tgt_mask,
                                    w.batch.size);
                   }});
  cases.push_back({"ce_tir", tir_params, [&w](Graph& g) {
                     FeatureSeq fi = w.tir.encode_image(
                         g, w.batch.images, w.batch.size, w.batch.img_w,
                         w.batch.char_len, TrainMode{});
                     FeatureSeq fs = w.tir.encode_sequence(g, fi, TrainMode{});
                     model::DecodeOut out = w.tir.decode_prefix(
                         g, fs, w.batch.tir_prefix, w.batch.tir_mask, w.batch.size,
                         w.batch.tir_steps, TrainMode{});
                     return ce_loss(g, out.log_probs, w.batch.tir_gold,
                                    w.batch.tir_mask, w.batch.size);
                   }});
  cases.push_back({"ce_mt", mt_params, [&w](Graph& g) {
                     FeatureSeq ft = w.mt.encode_text(
                         g, w.batch.src_ids, w.batch.size, w.batch.src_len,
                         w.batch.src_mask, TrainMode{});
                     FeatureSeq fs = w.mt.encode_sequence(g, ft, TrainMode{});
                     model::DecodeOut out = w.mt.decode_prefix(
                         g, fs, w.batch.tgt_prefix, w.batch.tgt_mask, w.batch.size,
                         w.batch.tgt_steps, TrainMode{});
                     return ce_loss(g, out.log_probs, w.batch.tgt_gold,
                                    w.batch.tgt_mask, w.batch.size);
                   }});
  cases.push_back({"token_kd_image", student_params, [&w, &tir_fi](Graph& g) {
                     FeatureSeq fi = w.student_image_features(g);
                     return token_kd_l2(g, fi, tir_fi);
                   }});
  cases.push_back({"sentence_kd_image", student_params, [&w, &tir_fi](Graph& g) {
                     FeatureSeq fi = w.student_image_features(g);
                     return sentence_kd_l2(g, fi, tir_fi);
                   }});
  cases.push_back({"token_kd_sequential", student_params, [&w, &mt_fs](Graph& g) {
                     FeatureSeq fs = w.student_sequence_features(g);
                     return token_kd_l2(g, fs, mt_fs);
                   }});
  cases.push_back({"sentence_kd_sequential", student_params,
                   [&w, &mt_fs](Graph& g) {
                     FeatureSeq fs = w.student_sequence_features(g);
                     return sentence_kd_l2(g, fs, mt_fs);
                   }});
  cases.push_back({"token_kd_decoder", student_params, [&w, &mt_probs](Graph& g) {
                     Var lp = w.student_log_probs(g);
                     return decoder_token_kd(g, lp, mt_probs, w.batch.tgt_mask,
                                             w.batch.size);
                   }});
  cases.push_back({"sentence_kd_decoder", student_params,
                   [&w, mt_sent_prefix, mt_sent_gold, mt_sent_mask](Graph& g) {
                     FeatureSeq fs = w.student_sequence_features(g);
                     model::DecodeOut out = w.student.decode_prefix(
                         g, fs, mt_sent_prefix, mt_sent_mask, w.batch.size, 3,
                         TrainMode{});
                     return ce_loss(g, out.log_probs, mt_sent_gold, mt_sent_mask,
                                    w.batch.size);
                   }});

  std::vector<LossCheck> out;
  uint64_t case_seed = hash_combine(seed, 0xC0DE);
  for (Case& c : cases) {
    auto build = c.build;
    auto fn = [build](bool grads) { return run_loss(build, grads); };
    out.push_back({c.name, gradient_check(fn, c.params, epsilon, ++case_seed)});
  }
  return out;
}

}  // namespace timt::loss
