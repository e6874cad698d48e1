#pragma once

#include "timt/model/models.hpp"
#include "timt/nn/graph.hpp"

#include <string>
#include <vector>

namespace timt::loss {

// Loss weights and granularity toggles for the combined objective. The
// sequential-feature weight defaults below the other two: at full strength
// its L2 pull dominates the mid-training gradient and erases the gain from
// the other teachers on corpora this size.
struct KDWeights {
  double lambda_kd = 0.8;
  double lambda_i = 1.0;
  double lambda_s = 0.25;
  double lambda_d = 1.0;
  bool token_i = true, sentence_i = true;
  bool token_s = true, sentence_s = true;
  bool token_d = true, sentence_d = true;
  bool l2_squared = false;

  void validate() const;

  bool image_teacher_needed() const {
    return lambda_kd > 0.0 && lambda_i > 0.0 && (token_i || sentence_i);
  }
  bool sequential_teacher_needed() const {
    return lambda_kd > 0.0 && lambda_s > 0.0 && (token_s || sentence_s);
  }
  bool decoder_token_needed() const {
    return lambda_kd > 0.0 && lambda_d > 0.0 && token_d;
  }
  bool decoder_sentence_needed() const {
    return lambda_kd > 0.0 && lambda_d > 0.0 && sentence_d;
  }
  bool any_teacher_needed() const {
    return image_teacher_needed() || sequential_teacher_needed() ||
           decoder_token_needed() || decoder_sentence_needed();
  }
};

struct LossReport {
  double total = 0.0;
  double l_timt = 0.0;
  double l_kd = 0.0;
  double tkd_i = 0.0, skd_i = 0.0;
  double tkd_s = 0.0, skd_s = 0.0;
  double tkd_d = 0.0, skd_d = 0.0;

  std::string to_json_fields() const;  // without braces, for log-line embedding
  void check_consistency(const KDWeights& w) const;
};

// Gold-token negative log-likelihood: summed over unmasked steps, averaged
// over the batch.
nn::Var ce_loss(nn::Graph& g, nn::Var log_probs, const std::vector<int>& gold,
                const std::vector<uint8_t>& step_mask, int batch);
double ce_loss(const model::StepDistributions& dists, const std::vector<int>& gold,
               const std::vector<uint8_t>& step_mask);

// Per-position L2 distance to detached teacher features, averaged over each
// sample's true length and over the batch.
nn::Var token_kd_l2(nn::Graph& g, const model::FeatureSeq& student,
                    const model::FeatureSeqValue& teacher, bool squared = false);

// L2 distance between masked mean-pooled features, averaged over the batch.
nn::Var sentence_kd_l2(nn::Graph& g, const model::FeatureSeq& student,
                       const model::FeatureSeqValue& teacher, bool squared = false);

// Full-distribution cross entropy against detached teacher step
// distributions, summed over unmasked steps, averaged over the batch.
nn::Var decoder_token_kd(nn::Graph& g, nn::Var student_log_probs,
                         const Mat& teacher_probs,
                         const std::vector<uint8_t>& step_mask, int batch);

struct KdTerms {
  nn::Var tkd_i, skd_i;
  nn::Var tkd_s, skd_s;
  nn::Var tkd_d, skd_d;  // skd_d is a ce_loss over teacher-decoded sentences
};

struct CombinedLoss {
  nn::Var total;
  LossReport report;
};

// total = (1-lambda_kd) * l_timt + lambda_kd * sum_t lambda_t * (tkd_t + skd_t).
// Endpoint wiring is exact: at lambda_kd==0 no KD node joins the total, at
// lambda_kd==1 the translation loss does not.
CombinedLoss combined_loss(nn::Graph& g, nn::Var l_timt, const KdTerms& terms,
                           const KDWeights& w);

}  // namespace timt::loss
