#include "timt/train/trainer.hpp"

#include "timt/eval/bleu.hpp"
#include "timt/train/adam.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace timt::train {

using corpus::Batch;
using corpus::Dataset;
using loss::KdTerms;
using loss::LossReport;
using model::FeatureSeq;
using model::FeatureSeqValue;
using model::ImageToTextModel;
using model::ModelConfig;
using model::TextToTextModel;
using nn::Graph;
using nn::TrainMode;
using nn::Var;

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(teacher_epochs >= 1, "teacher_epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(std::isfinite(clip_norm), "clip_norm must be finite (<= 0 disables)");
  kd.validate();
}

std::vector<int> shuffled_order(size_t n, uint64_t seed) {
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) {
    const size_t j = rng.below(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

namespace {

constexpr const char* kBestName = "best.ckpt";
constexpr const char* kLastName = "last.ckpt";

std::vector<int> strip_specials(const std::vector<int>& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == corpus::kPadId || id == corpus::kBosId || id == corpus::kEosId) continue;
    out.push_back(id);
  }
  return out;
}

std::vector<int> char_ids_of(const corpus::TripleSample& s) {
  return strip_specials(s.src_ids);
}

int decode_cap(const Dataset& ds, const ModelConfig& cfg) {
  return std::min(cfg.max_len - 1, ds.spec.max_len + 2);
}

void check_non_finite(double v, int epoch, int step) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("training diverged: non-finite loss at epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step));
  }
}

struct EpochLog {
  std::ofstream step_log;
  std::ofstream runs_log;

  explicit EpochLog(const fs::path& out_dir)
      : step_log(out_dir / "train_log.jsonl"), runs_log(out_dir / "runs.jsonl") {
    if (!step_log || !runs_log) {
      throw std::runtime_error("cannot write logs under " + out_dir.string());
    }
  }

  void log_step(int epoch, int step, double lr, const LossReport& r) {
    step_log << "{\"epoch\":" << epoch << ",\"step\":" << step << ",\"lr\":" << lr
             << "," << r.to_json_fields() << "}\n";
  }

  void log_epoch(const RunRecord& rec) {
    runs_log << "{\"epoch\":" << rec.epoch << ",\"val_metric\":" << rec.val_metric
             << ",\"seconds\":" << rec.seconds << ",\"checkpoint\":\""
             << rec.checkpoint << "\"," << rec.mean_losses.to_json_fields() << "}\n";
    runs_log.flush();
  }
};

LossReport scale_report(const LossReport& sum, int n) {
  LossReport r = sum;
  const double inv = n > 0 ? 1.0 / n : 0.0;
  r.total *= inv;
  r.l_timt *= inv;
  r.l_kd *= inv;
  r.tkd_i *= inv;
  r.skd_i *= inv;
  r.tkd_s *= inv;
  r.skd_s *= inv;
  r.tkd_d *= inv;
  r.skd_d *= inv;
  return r;
}

void accumulate(LossReport& sum, const LossReport& r) {
  sum.total += r.total;
  sum.l_timt += r.l_timt;
  sum.l_kd += r.l_kd;
  sum.tkd_i += r.tkd_i;
  sum.skd_i += r.skd_i;
  sum.tkd_s += r.tkd_s;
  sum.skd_s += r.skd_s;
  sum.tkd_d += r.tkd_d;
  sum.skd_d += r.skd_d;
}

// teacher-forced next-token accuracy over a split
template <typename DecodeFn>
double token_accuracy(const std::vector<corpus::TripleSample>& samples,
                      int batch_size, bool tir_view, DecodeFn decode) {
  long correct = 0, total = 0;
  for (const Batch& b : corpus::make_batches(samples, batch_size)) {
    const std::vector<int>& gold = tir_view ? b.tir_gold : b.tgt_gold;
    const std::vector<uint8_t>& mask = tir_view ? b.tir_mask : b.tgt_mask;
    Mat logits = decode(b);  // (B*steps) x V
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (!mask[static_cast<size_t>(r)]) continue;
      total += 1;
      if (model::argmax_lowest(logits.row(r)) == gold[static_cast<size_t>(r)]) {
        correct += 1;
      }
    }
  }
  return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

template <typename Model, typename StepFn, typename ValidateFn, typename SaveFn>
TrainResult run_training_loop(Model& m, const Dataset& ds, const TrainConfig& cfg,
                              const fs::path& out_dir, StepFn run_step,
                              ValidateFn validate, SaveFn save) {
  fs::create_directories(out_dir);
  EpochLog log(out_dir);
  AdamOptimizer opt(m.params().pointers(), cfg.learning_rate, cfg.adam_beta1,
                    cfg.adam_beta2, cfg.adam_eps);
  Rng dropout_rng(hash_combine(cfg.seed, hash_str("dropout", 3)));

  TrainResult result;
  result.best_metric = -1.0;
  const int epochs = run_step.epochs;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order = shuffled_order(
        ds.train.size(), hash_combine(cfg.seed, hash_combine(0xEF0C, epoch)));
    std::vector<Batch> batches = corpus::make_batches(ds.train, cfg.batch_size, &order);

    LossReport sum;
    int step = 0;
    for (Batch& batch : batches) {
      TrainMode tm;
      tm.training = true;
      tm.dropout = cfg.deterministic ? 0.0 : run_step.dropout;
      tm.rng = &dropout_rng;
      LossReport r = run_step(batch, tm);
      check_non_finite(r.total, epoch, step);
      opt.step(cfg.clip_norm);
      log.log_step(epoch, step, cfg.learning_rate, r);
      accumulate(sum, r);
      ++step;
    }

    RunRecord rec;
    rec.epoch = epoch;
    rec.mean_losses = scale_report(sum, step);
    rec.val_metric = validate();
    if (rec.val_metric > result.best_metric) {
      result.best_metric = rec.val_metric;
      save(out_dir / kBestName);
      result.best_checkpoint = out_dir / kBestName;
      rec.checkpoint = kBestName;
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.log_epoch(rec);
    result.records.push_back(std::move(rec));
  }
  save(out_dir / kLastName);
  result.last_checkpoint = out_dir / kLastName;
  if (result.best_checkpoint.empty()) {
    save(out_dir / kBestName);
    result.best_checkpoint = out_dir / kBestName;
  }
  return result;
}

}  // namespace

double greedy_bleu(const ImageToTextModel& m,
                   const std::vector<corpus::TripleSample>& samples, int max_len) {
  std::vector<std::vector<int>> hyps, refs;
  hyps.reserve(samples.size());
  refs.reserve(samples.size());
  for (const corpus::TripleSample& s : samples) {
    hyps.push_back(strip_specials(m.greedy_decode(s.image, max_len)));
    refs.push_back(strip_specials(s.tgt_ids));
  }
  return eval::corpus_bleu(hyps, refs);
}

double greedy_bleu(const TextToTextModel& m,
                   const std::vector<corpus::TripleSample>& samples, int max_len) {
  std::vector<std::vector<int>> hyps, refs;
  for (const corpus::TripleSample& s : samples) {
    hyps.push_back(strip_specials(m.greedy_decode(char_ids_of(s), max_len)));
    refs.push_back(strip_specials(s.tgt_ids));
  }
  return eval::corpus_bleu(hyps, refs);
}

TrainResult pretrain_tir(const Dataset& ds, ModelConfig model_cfg, TrainConfig cfg,
                         const fs::path& out_dir) {
  cfg.validate();
  require(!ds.train.empty(), "corpus missing: no training samples");
  model_cfg.src_vocab = ds.src_vocab.size();
  model_cfg.tgt_vocab = ds.src_vocab.size();  // recognizes source characters
  model_cfg.seed = hash_combine(cfg.seed, hash_str("tir_model", 5));
  ImageToTextModel m(model_cfg);

  struct Step {
    ImageToTextModel* m;
    int epochs;
    double dropout;
    LossReport operator()(const Batch& b, const TrainMode& tm) {
      Graph g;
      FeatureSeq fi = m->encode_image(g, b.images, b.size, b.img_w, b.char_len, tm);
      FeatureSeq fs = m->encode_sequence(g, fi, tm);
      model::DecodeOut out = m->decode_prefix(g, fs, b.tir_prefix, b.tir_mask,
                                              b.size, b.tir_steps, tm);
      Var l = loss::ce_loss(g, out.log_probs, b.tir_gold, b.tir_mask, b.size);
      LossReport r;
      r.total = r.l_timt = g.scalar(l);
      g.backward(l);
      return r;
    }
  } step{&m, cfg.teacher_epochs, model_cfg.dropout};

  auto validate = [&] {
    return token_accuracy(ds.valid, cfg.batch_size, /*tir_view=*/true,
                          [&](const Batch& b) {
                            Graph g(false);
                            FeatureSeq fi = m.encode_image(g, b.images, b.size,
                                                           b.img_w, b.char_len, {});
                            FeatureSeq fs = m.encode_sequence(g, fi, {});
                            return g.value(m.decode_prefix(g, fs, b.tir_prefix,
                                                           b.tir_mask, b.size,
                                                           b.tir_steps, {})
                                               .logits);
                          });
  };
  auto save = [&](const fs::path& p) {
    model::save_checkpoint(p, model::kKindImageToText, m.config(), m.params());
  };
  return run_training_loop(m, ds, cfg, out_dir, step, validate, save);
}

TrainResult pretrain_mt(const Dataset& ds, ModelConfig model_cfg, TrainConfig cfg,
                        const fs::path& out_dir) {
  cfg.validate();
  require(!ds.train.empty(), "corpus missing: no training samples");
  model_cfg.src_vocab = ds.src_vocab.size();
  model_cfg.tgt_vocab = ds.tgt_vocab.size();
  model_cfg.seed = hash_combine(cfg.seed, hash_str("mt_model", 5));
  TextToTextModel m(model_cfg);

  struct Step {
    TextToTextModel* m;
    int epochs;
    double dropout;
    LossReport operator()(const Batch& b, const TrainMode& tm) {
      Graph g;
      FeatureSeq ft = m->encode_text(g, b.src_ids, b.size, b.src_len, b.src_mask, tm);
      FeatureSeq fs = m->encode_sequence(g, ft, tm);
      model::DecodeOut out = m->decode_prefix(g, fs, b.tgt_prefix, b.tgt_mask,
                                              b.size, b.tgt_steps, tm);
      Var l = loss::ce_loss(g, out.log_probs, b.tgt_gold, b.tgt_mask, b.size);
      LossReport r;
      r.total = r.l_timt = g.scalar(l);
      g.backward(l);
      return r;
    }
  } step{&m, cfg.teacher_epochs, model_cfg.dropout};

  auto validate = [&] {
    return token_accuracy(ds.valid, cfg.batch_size, /*tir_view=*/false,
                          [&](const Batch& b) {
                            Graph g(false);
                            FeatureSeq ft = m.encode_text(g, b.src_ids, b.size,
                                                          b.src_len, b.src_mask, {});
                            FeatureSeq fs = m.encode_sequence(g, ft, {});
                            return g.value(m.decode_prefix(g, fs, b.tgt_prefix,
                                                           b.tgt_mask, b.size,
                                                           b.tgt_steps, {})
                                               .logits);
                          });
  };
  auto save = [&](const fs::path& p) {
    model::save_checkpoint(p, model::kKindTextToText, m.config(), m.params());
  };
  return run_training_loop(m, ds, cfg, out_dir, step, validate, save);
}

TrainResult train_student(const Dataset& ds,
                          const std::optional<fs::path>& tir_ckpt,
                          const std::optional<fs::path>& mt_ckpt,
                          ModelConfig model_cfg, TrainConfig cfg,
                          const fs::path& out_dir) {
  cfg.validate();
  require(!ds.train.empty(), "corpus missing: no training samples");
  model_cfg.src_vocab = ds.src_vocab.size();
  model_cfg.tgt_vocab = ds.tgt_vocab.size();
  model_cfg.seed = hash_combine(cfg.seed, hash_str("student_model", 5));
  ImageToTextModel student(model_cfg);

  const loss::KDWeights& w = cfg.kd;
  const bool need_tir = w.image_teacher_needed();
  const bool need_mt = w.sequential_teacher_needed() || w.decoder_token_needed() ||
                       w.decoder_sentence_needed();

  std::optional<ImageToTextModel> tir;
  std::optional<TextToTextModel> mt;
  if (need_tir || cfg.warm_start_image_encoder) {
    require(tir_ckpt.has_value(), "image-teacher distillation needs --tir checkpoint");
    tir.emplace(model::load_image_model(*tir_ckpt));
    require(tir->config().d_model == model_cfg.d_model,
            "teacher/student feature dimension mismatch");
    require(tir->config().src_vocab == model_cfg.src_vocab,
            "TIR teacher vocabulary mismatch");
  }
  if (need_mt) {
    require(mt_ckpt.has_value(), "translation-teacher distillation needs --mt checkpoint");
    mt.emplace(model::load_text_model(*mt_ckpt));
    require(mt->config().d_model == model_cfg.d_model,
            "teacher/student feature dimension mismatch");
    require(mt->config().src_vocab == model_cfg.src_vocab &&
                mt->config().tgt_vocab == model_cfg.tgt_vocab,
            "MT teacher vocabulary mismatch");
  }
  if (cfg.warm_start_image_encoder) {
    for (const auto& p : tir->params().all()) {
      if (p->name.rfind("img_enc.", 0) != 0) continue;
      nn::Param* mine = student.params().find(p->name);
      require(mine != nullptr && mine->value.rows() == p->value.rows() &&
                  mine->value.cols() == p->value.cols(),
              "warm start shape mismatch for " + p->name);
      mine->value = p->value;
    }
  }

  // Teacher-decoded target sentences for sentence-level decoder distillation.
  // Teachers are frozen, so decoding once up front equals a per-epoch refresh.
  std::vector<std::vector<int>> mt_sentences;
  if (w.decoder_sentence_needed()) {
    mt_sentences.resize(ds.train.size());
    const int cap = decode_cap(ds, model_cfg);
    for (size_t i = 0; i < ds.train.size(); ++i) {
      mt_sentences[i] = mt->greedy_decode(char_ids_of(ds.train[i]), cap);
    }
  }

  struct Step {
    ImageToTextModel* student;
    ImageToTextModel* tir;
    TextToTextModel* mt;
    const loss::KDWeights* w;
    const std::vector<std::vector<int>>* mt_sentences;
    int epochs;
    double dropout;

    LossReport operator()(const Batch& b, const TrainMode& tm) {
      Graph g;
      FeatureSeq fi =
          student->encode_image(g, b.images, b.size, b.img_w, b.char_len, tm);
      FeatureSeq fs = student->encode_sequence(g, fi, tm);
      model::DecodeOut out = student->decode_prefix(g, fs, b.tgt_prefix, b.tgt_mask,
                                                    b.size, b.tgt_steps, tm);
      Var l_timt = loss::ce_loss(g, out.log_probs, b.tgt_gold, b.tgt_mask, b.size);

      KdTerms terms;
      if (w->image_teacher_needed()) {
        Graph tg(false);
        FeatureSeq tfi =
            tir->encode_image(tg, b.images, b.size, b.img_w, b.char_len, {});
        FeatureSeqValue teacher_fi = model::detach(tg, tfi);
        if (w->token_i) terms.tkd_i = loss::token_kd_l2(g, fi, teacher_fi, w->l2_squared);
        if (w->sentence_i) {
          terms.skd_i = loss::sentence_kd_l2(g, fi, teacher_fi, w->l2_squared);
        }
      }
      if (w->sequential_teacher_needed() || w->decoder_token_needed()) {
        Graph tg(false);
        FeatureSeq tft = mt->encode_text(tg, b.src_ids, b.size, b.src_len,
                                         b.src_mask, {});
        FeatureSeq tfs = mt->encode_sequence(tg, tft, {});
        if (w->sequential_teacher_needed()) {
          FeatureSeqValue teacher_fs = model::detach(tg, tfs);
          if (w->token_s) {
            terms.tkd_s = loss::token_kd_l2(g, fs, teacher_fs, w->l2_squared);
          }
          if (w->sentence_s) {
            terms.skd_s = loss::sentence_kd_l2(g, fs, teacher_fs, w->l2_squared);
          }
        }
        if (w->decoder_token_needed()) {
          model::DecodeOut t_out = mt->decode_prefix(tg, tfs, b.tgt_prefix,
                                                     b.tgt_mask, b.size,
                                                     b.tgt_steps, {});
          Mat probs = tg.value(t_out.log_probs).array().exp().matrix();
          terms.tkd_d = loss::decoder_token_kd(g, out.log_probs, probs,
                                               b.tgt_mask, b.size);
        }
      }
      if (w->decoder_sentence_needed()) {
        require(!b.sample_index.empty(), "sentence KD needs batch sample indices");
        int steps = 1;
        for (int idx : b.sample_index) {
          steps = std::max(steps,
                           static_cast<int>((*mt_sentences)[idx].size()) + 1);
        }
        std::vector<int> prefix(static_cast<size_t>(b.size) * steps, corpus::kPadId);
        std::vector<int> gold(static_cast<size_t>(b.size) * steps, corpus::kPadId);
        std::vector<uint8_t> mask(static_cast<size_t>(b.size) * steps, 0);
        for (int j = 0; j < b.size; ++j) {
          const std::vector<int>& sent = (*mt_sentences)[b.sample_index[j]];
          prefix[static_cast<size_t>(j) * steps] = corpus::kBosId;
          for (size_t i = 0; i < sent.size(); ++i) {
            prefix[static_cast<size_t>(j) * steps + i + 1] = sent[i];
            gold[static_cast<size_t>(j) * steps + i] = sent[i];
          }
          gold[static_cast<size_t>(j) * steps + sent.size()] = corpus::kEosId;
          for (size_t i = 0; i <= sent.size(); ++i) {
            mask[static_cast<size_t>(j) * steps + i] = 1;
          }
        }
        model::DecodeOut sent_out =
            student->decode_prefix(g, fs, prefix, mask, b.size, steps, tm);
        terms.skd_d = loss::ce_loss(g, sent_out.log_probs, gold, mask, b.size);
      }

      loss::CombinedLoss combined = loss::combined_loss(g, l_timt, terms, *w);
      g.backward(combined.total);
      return combined.report;
    }
  } step{&student,
         tir ? &*tir : nullptr,
         mt ? &*mt : nullptr,
         &w,
         &mt_sentences,
         cfg.epochs,
         model_cfg.dropout};

  const int cap = decode_cap(ds, model_cfg);
  auto validate = [&] { return greedy_bleu(student, ds.valid, cap); };
  auto save = [&](const fs::path& p) {
    model::save_checkpoint(p, model::kKindImageToText, student.config(),
                           student.params());
  };
  return run_training_loop(student, ds, cfg, out_dir, step, validate, save);
}

std::vector<AblationRow> ablate_teachers(const Dataset& ds,
                                         const fs::path& tir_ckpt,
                                         const fs::path& mt_ckpt,
                                         const ModelConfig& model_cfg,
                                         const TrainConfig& cfg,
                                         const fs::path& out_dir) {
  // rows: {D}, {S}, {S,D}, {I}, {I,D}, {I,S}, {I,S,D}
  const bool kRows[7][3] = {{true, false, false}, {false, true, false},
                            {true, true, false},  {false, false, true},
                            {true, false, true},  {false, true, true},
                            {true, true, true}};
  std::vector<AblationRow> rows;
  const int cap = decode_cap(ds, model_cfg);
  for (int i = 0; i < 7; ++i) {
    AblationRow row;
    row.row_no = i + 1;
    row.use_decoder = kRows[i][0];
    row.use_sequential = kRows[i][1];
    row.use_image = kRows[i][2];

    TrainConfig run_cfg = cfg;
    run_cfg.kd.lambda_d = row.use_decoder ? cfg.kd.lambda_d : 0.0;
    run_cfg.kd.lambda_s = row.use_sequential ? cfg.kd.lambda_s : 0.0;
    run_cfg.kd.lambda_i = row.use_image ? cfg.kd.lambda_i : 0.0;

    const fs::path row_dir = out_dir / ("row" + std::to_string(row.row_no));
    TrainResult res = train_student(ds, tir_ckpt, mt_ckpt, model_cfg, run_cfg, row_dir);
    ImageToTextModel best = model::load_image_model(res.best_checkpoint);
    row.valid_bleu = greedy_bleu(best, ds.valid, cap);
    row.test_bleu = greedy_bleu(best, ds.test, cap);
    rows.push_back(row);
  }
  return rows;
}

std::vector<SweepPoint> sweep_lambda(const Dataset& ds, const fs::path& tir_ckpt,
                                     const fs::path& mt_ckpt,
                                     const ModelConfig& model_cfg,
                                     const TrainConfig& cfg,
                                     const std::vector<double>& grid,
                                     const fs::path& out_dir) {
  require(!grid.empty(), "empty lambda grid");
  for (double v : grid) require(v >= 0.0 && v <= 1.0, "lambda grid must lie in [0,1]");
  std::vector<SweepPoint> points;
  const int cap = decode_cap(ds, model_cfg);
  for (size_t i = 0; i < grid.size(); ++i) {
    TrainConfig run_cfg = cfg;
    run_cfg.kd.lambda_kd = grid[i];
    std::ostringstream dir_name;
    dir_name << "lambda_" << i;
    const fs::path run_dir = out_dir / dir_name.str();
    std::optional<fs::path> tir_opt, mt_opt;
    if (run_cfg.kd.any_teacher_needed()) {
      tir_opt = tir_ckpt;
      mt_opt = mt_ckpt;
    }
    TrainResult res = train_student(ds, tir_opt, mt_opt, model_cfg, run_cfg, run_dir);
    ImageToTextModel best = model::load_image_model(res.best_checkpoint);
    SweepPoint p;
    p.lambda_kd = grid[i];
    p.valid_bleu = greedy_bleu(best, ds.valid, cap);
    p.test_bleu = greedy_bleu(best, ds.test, cap);
    points.push_back(p);
  }
  return points;
}

}  // namespace timt::train
