#include "timt/loss/losses.hpp"

#include <cmath>
#include <sstream>

namespace timt::loss {

using nn::Graph;
using nn::Var;

void KDWeights::validate() const {
  require(lambda_kd >= 0.0 && lambda_kd <= 1.0, "lambda_kd must be in [0,1]");
  require(std::isfinite(lambda_i) && lambda_i >= 0.0, "lambda_i must be >= 0");
  require(std::isfinite(lambda_s) && lambda_s >= 0.0, "lambda_s must be >= 0");
  require(std::isfinite(lambda_d) && lambda_d >= 0.0, "lambda_d must be >= 0");
}

std::string LossReport::to_json_fields() const {
  std::ostringstream os;
  os.precision(17);
  os << "\"total\":" << total << ",\"l_timt\":" << l_timt << ",\"l_kd\":" << l_kd
     << ",\"tkd_i\":" << tkd_i << ",\"skd_i\":" << skd_i << ",\"tkd_s\":" << tkd_s
     << ",\"skd_s\":" << skd_s << ",\"tkd_d\":" << tkd_d << ",\"skd_d\":" << skd_d;
  return os.str();
}

void LossReport::check_consistency(const KDWeights& w) const {
  const double expect = (1.0 - w.lambda_kd) * l_timt + w.lambda_kd * l_kd;
  if (std::abs(expect - total) > 1e-6) {
    throw std::runtime_error("loss bookkeeping violation: total=" +
                             std::to_string(total) + " expected=" +
                             std::to_string(expect));
  }
}

Var ce_loss(Graph& g, Var log_probs, const std::vector<int>& gold,
            const std::vector<uint8_t>& step_mask, int batch) {
  const Mat& lp = g.value(log_probs);
  require(static_cast<Eigen::Index>(gold.size()) == lp.rows(),
          "ce_loss: gold length != distribution rows");
  require(step_mask.size() == gold.size(), "ce_loss: mask size mismatch");
  require(batch >= 1, "ce_loss: batch must be >= 1");
  Var picked = g.gather_cols(log_probs, gold);
  Vec w(gold.size());
  for (size_t i = 0; i < gold.size(); ++i) {
    w(static_cast<Eigen::Index>(i)) = step_mask[i] ? -1.0 / batch : 0.0;
  }
  return g.weighted_sum(picked, std::move(w));
}

double ce_loss(const model::StepDistributions& dists, const std::vector<int>& gold,
               const std::vector<uint8_t>& step_mask) {
  require(static_cast<Eigen::Index>(gold.size()) == dists.probs.rows(),
          "ce_loss: gold length != distribution rows");
  require(step_mask.size() == gold.size(), "ce_loss: mask size mismatch");
  double total = 0.0;
  for (size_t i = 0; i < gold.size(); ++i) {
    if (!step_mask[i]) continue;
    require(gold[i] >= 0 && gold[i] < dists.probs.cols(), "ce_loss: gold id range");
    total -= std::log(dists.probs(static_cast<Eigen::Index>(i), gold[i]));
  }
  return total;
}

namespace {

void check_aligned(const model::FeatureSeq& student,
                   const model::FeatureSeqValue& teacher, const Graph& g) {
  const Mat& sv = g.value(student.data);
  require(student.batch == teacher.batch, "feature KD: batch mismatch");
  require(student.len == teacher.len, "feature KD: length mismatch");
  require(sv.rows() == teacher.data.rows() && sv.cols() == teacher.data.cols(),
          "feature KD: shape mismatch");
  require(student.mask == teacher.mask, "feature KD: mask mismatch");
}

}  // namespace

Var token_kd_l2(Graph& g, const model::FeatureSeq& student,
                const model::FeatureSeqValue& teacher, bool squared) {
  check_aligned(student, teacher, g);
  Var diff = g.sub(student.data, g.input(teacher.data));
  Var norms = squared ? g.rows_sqnorm(diff) : g.rows_norm2(diff);

  const int B = student.batch, L = student.len;
  std::vector<double> true_len(B, 0.0);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) {
      if (student.mask[static_cast<size_t>(b) * L + i]) true_len[b] += 1.0;
    }
  }
  Vec w(static_cast<Eigen::Index>(B) * L);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) {
      const size_t idx = static_cast<size_t>(b) * L + i;
      w(static_cast<Eigen::Index>(idx)) =
          student.mask[idx] ? 1.0 / (B * true_len[b]) : 0.0;
    }
  }
  return g.weighted_sum(norms, std::move(w));
}

Var sentence_kd_l2(Graph& g, const model::FeatureSeq& student,
                   const model::FeatureSeqValue& teacher, bool squared) {
  check_aligned(student, teacher, g);
  const int B = student.batch, L = student.len;
  std::vector<int> group(static_cast<size_t>(B) * L, -1);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) {
      const size_t idx = static_cast<size_t>(b) * L + i;
      if (student.mask[idx]) group[idx] = b;
    }
  }
  Var student_mean = g.group_mean_rows(student.data, group, B);

  Mat teacher_mean = Mat::Zero(B, teacher.data.cols());
  std::vector<double> cnt(B, 0.0);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) {
      const size_t idx = static_cast<size_t>(b) * L + i;
      if (teacher.mask[idx]) {
        teacher_mean.row(b) += teacher.data.row(static_cast<Eigen::Index>(idx));
        cnt[b] += 1.0;
      }
    }
    if (cnt[b] > 0.0) teacher_mean.row(b) /= cnt[b];
  }

  Var diff = g.sub(student_mean, g.input(std::move(teacher_mean)));
  Var norms = squared ? g.rows_sqnorm(diff) : g.rows_norm2(diff);
  return g.weighted_sum(norms, Vec::Constant(B, 1.0 / B));
}

Var decoder_token_kd(Graph& g, Var student_log_probs, const Mat& teacher_probs,
                     const std::vector<uint8_t>& step_mask, int batch) {
  const Mat& lp = g.value(student_log_probs);
  require(lp.rows() == teacher_probs.rows() && lp.cols() == teacher_probs.cols(),
          "decoder token KD: distribution shape mismatch");
  require(static_cast<Eigen::Index>(step_mask.size()) == lp.rows(),
          "decoder token KD: mask size mismatch");
  // -sum_j p_teacher(j) log p_student(j) per unmasked step, batch-averaged
  Mat masked_teacher = teacher_probs;
  for (Eigen::Index r = 0; r < masked_teacher.rows(); ++r) {
    if (!step_mask[static_cast<size_t>(r)]) masked_teacher.row(r).setZero();
  }
  Var weighted = g.mul(student_log_probs, g.input(std::move(masked_teacher)));
  return g.scale(g.sum_all(weighted), -1.0 / batch);
}

CombinedLoss combined_loss(Graph& g, Var l_timt, const KdTerms& terms,
                           const KDWeights& w) {
  w.validate();
  CombinedLoss out;
  LossReport& r = out.report;
  r.l_timt = l_timt.valid() ? g.scalar(l_timt) : 0.0;
  r.tkd_i = terms.tkd_i.valid() ? g.scalar(terms.tkd_i) : 0.0;
  r.skd_i = terms.skd_i.valid() ? g.scalar(terms.skd_i) : 0.0;
  r.tkd_s = terms.tkd_s.valid() ? g.scalar(terms.tkd_s) : 0.0;
  r.skd_s = terms.skd_s.valid() ? g.scalar(terms.skd_s) : 0.0;
  r.tkd_d = terms.tkd_d.valid() ? g.scalar(terms.tkd_d) : 0.0;
  r.skd_d = terms.skd_d.valid() ? g.scalar(terms.skd_d) : 0.0;
  r.l_kd = w.lambda_i * (r.tkd_i + r.skd_i) + w.lambda_s * (r.tkd_s + r.skd_s) +
           w.lambda_d * (r.tkd_d + r.skd_d);

  // per-teacher sums, each weighted into the graph only when present
  Var kd;
  auto add_term = [&](Var term, double weight) {
    if (!term.valid() || weight == 0.0) return;
    Var scaled = g.scale(term, weight);
    kd = kd.valid() ? g.add(kd, scaled) : scaled;
  };
  add_term(terms.tkd_i, w.lambda_i);
  add_term(terms.skd_i, w.lambda_i);
  add_term(terms.tkd_s, w.lambda_s);
  add_term(terms.skd_s, w.lambda_s);
  add_term(terms.tkd_d, w.lambda_d);
  add_term(terms.skd_d, w.lambda_d);

  Var total;
  if (w.lambda_kd < 1.0 && l_timt.valid()) {
    total = g.scale(l_timt, 1.0 - w.lambda_kd);
  }
  if (w.lambda_kd > 0.0 && kd.valid()) {
    Var kd_scaled = g.scale(kd, w.lambda_kd);
    total = total.valid() ? g.add(total, kd_scaled) : kd_scaled;
  }
  if (!total.valid()) total = g.input(Mat::Zero(1, 1));
  out.total = total;
  r.total = g.scalar(total);
  r.check_consistency(w);
  return out;
}

}  // namespace timt::loss
