#pragma once

#include "timt/corpus.hpp"
#include "timt/nn/layers.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace timt::model {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  int src_vocab = 0;
  int tgt_vocab = 0;
  int max_len = 32;
  double dropout = 0.1;
  uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Batched feature sequence living on a graph: (batch*len) x d plus a mask of
// real positions.
struct FeatureSeq {
  nn::Var data;
  int batch = 0;
  int len = 0;
  std::vector<uint8_t> mask;
};

// Detached (teacher-side) counterpart.
struct FeatureSeqValue {
  Mat data;
  int batch = 0;
  int len = 0;
  std::vector<uint8_t> mask;
};

FeatureSeqValue detach(const nn::Graph& g, const FeatureSeq& f);

// Per-step output distributions of one decoded sample.
struct StepDistributions {
  Mat probs;   // z x vocab, rows sum to 1
  Mat logits;  // z x vocab
};

struct DecodeOut {
  nn::Var features;   // (batch*steps) x d
  nn::Var logits;     // (batch*steps) x vocab
  nn::Var log_probs;  // (batch*steps) x vocab
};

// Image -> token sequence transformer (the end-to-end translator when trained
// on targets, the recognizer when trained on sources).
class ImageToTextModel {
 public:
  explicit ImageToTextModel(const ModelConfig& cfg);

  FeatureSeq encode_image(nn::Graph& g, const Mat& images, int batch, int img_w,
                          const std::vector<int>& char_len,
                          const nn::TrainMode& tm) const;
  FeatureSeq encode_sequence(nn::Graph& g, const FeatureSeq& f,
                             const nn::TrainMode& tm,
                             bool add_positions = true) const;
  DecodeOut decode_prefix(nn::Graph& g, const FeatureSeq& memory,
                          const std::vector<int>& prefix,
                          const std::vector<uint8_t>& step_mask, int batch,
                          int steps, const nn::TrainMode& tm) const;

  StepDistributions decode_teacher_forced(const corpus::TextImage& image,
                                          const std::vector<int>& prefix) const;
  std::vector<int> greedy_decode(const corpus::TextImage& image, int max_len) const;

  int64_t count_params() const { return params_.count(); }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const Mat& positions() const { return pos_; }

  // encoder output for a single image, used by greedy decoding and evaluation
  std::pair<Mat, std::vector<uint8_t>> encode_single(const corpus::TextImage& image) const;

  const nn::TransformerDecoder& decoder() const { return decoder_; }
  const nn::Linear& output_projection() const { return out_proj_; }
  const nn::Embedding& target_embedding() const { return tgt_embed_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  nn::ConvImageEncoder image_enc_;
  nn::TransformerEncoder seq_enc_;
  nn::Embedding tgt_embed_;
  nn::TransformerDecoder decoder_;
  nn::Linear out_proj_;
  Mat pos_;
};

// Text -> token sequence transformer (the translation teacher).
class TextToTextModel {
 public:
  explicit TextToTextModel(const ModelConfig& cfg);

  FeatureSeq encode_text(nn::Graph& g, const std::vector<int>& ids, int batch,
                         int len, const std::vector<uint8_t>& mask,
                         const nn::TrainMode& tm) const;
  FeatureSeq encode_sequence(nn::Graph& g, const FeatureSeq& f,
                             const nn::TrainMode& tm,
                             bool add_positions = true) const;
  DecodeOut decode_prefix(nn::Graph& g, const FeatureSeq& memory,
                          const std::vector<int>& prefix,
                          const std::vector<uint8_t>& step_mask, int batch,
                          int steps, const nn::TrainMode& tm) const;

  StepDistributions decode_teacher_forced(const std::vector<int>& src_char_ids,
                                          const std::vector<int>& prefix) const;
  std::vector<int> greedy_decode(const std::vector<int>& src_char_ids,
                                 int max_len) const;

  int64_t count_params() const { return params_.count(); }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const Mat& positions() const { return pos_; }

  std::pair<Mat, std::vector<uint8_t>> encode_single(
      const std::vector<int>& src_char_ids) const;

  const nn::TransformerDecoder& decoder() const { return decoder_; }
  const nn::Linear& output_projection() const { return out_proj_; }
  const nn::Embedding& target_embedding() const { return tgt_embed_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  nn::Embedding src_embed_;
  nn::TransformerEncoder seq_enc_;
  nn::Embedding tgt_embed_;
  nn::TransformerDecoder decoder_;
  nn::Linear out_proj_;
  Mat pos_;
};

inline constexpr const char* kKindImageToText = "image2text";
inline constexpr const char* kKindTextToText = "text2text";

// Checkpoint container: magic "TIMTCKP1", kind string, config JSON, then
// named parameter arrays as little-endian f32, row-major.
void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const ModelConfig& cfg, const nn::ParamStore& params);

struct CheckpointInfo {
  std::string kind;
  ModelConfig config;
};
CheckpointInfo peek_checkpoint(const std::filesystem::path& path);

void load_checkpoint_params(const std::filesystem::path& path,
                            nn::ParamStore& params);

ImageToTextModel load_image_model(const std::filesystem::path& path);
TextToTextModel load_text_model(const std::filesystem::path& path);

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row);

}  // namespace timt::model
