#pragma once

#include "timt/nn/graph.hpp"
#include "timt/nn/param_store.hpp"

#include <vector>

namespace timt::nn {

// Training/inference context for a forward pass. Dropout fires only when
// training with a positive rate and an RNG.
struct TrainMode {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  bool drop() const { return training && dropout > 0.0 && rng != nullptr; }
};

struct Linear {
  Param* w = nullptr;  // in x out
  Param* b = nullptr;  // 1 x out, optional

  Var operator()(Graph& g, Var x) const;
  Mat apply(const Mat& x) const;
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;
  double eps = 1e-5;

  Var operator()(Graph& g, Var x) const;
  Mat apply(const Mat& x) const;
};

struct Embedding {
  Param* table = nullptr;  // vocab x d

  Var operator()(Graph& g, const std::vector<int>& ids) const;
  Mat apply(const std::vector<int>& ids) const;
};

struct MultiHeadAttention {
  int n_heads = 1;
  Linear wq, wk, wv, wo;

  Var operator()(Graph& g, Var q_in, Var kv_in, const AttentionSpec& spec) const;

  // single-row incremental paths used by greedy decoding
  Mat step_self(const Mat& u, Mat& cache_k, Mat& cache_v) const;
  Mat step_cross(const Mat& u, const Mat& mem_k, const Mat& mem_v,
                 const std::vector<uint8_t>& key_mask) const;
};

struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear ff1, ff2;

  Var operator()(Graph& g, Var x, const AttentionSpec& spec,
                 const TrainMode& tm) const;
};

struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  Linear ff1, ff2;

  Var operator()(Graph& g, Var x, Var memory, const AttentionSpec& self_spec,
                 const AttentionSpec& cross_spec, const TrainMode& tm) const;
};

struct TransformerEncoder {
  std::vector<EncoderLayer> layers;
  LayerNorm final_ln;
  int n_heads = 1;

  Var forward(Graph& g, Var x, int batch, int len,
              const std::vector<uint8_t>* key_mask, const TrainMode& tm) const;
};

// Incremental decoding state: per-layer growing self K/V plus fixed
// projections of the encoder memory.
struct DecoderState {
  struct Layer {
    Mat self_k, self_v;   // t x d
    Mat cross_k, cross_v; // mem_len x d
  };
  std::vector<Layer> layers;
  std::vector<uint8_t> mem_mask;
  int t = 0;
};

struct TransformerDecoder {
  std::vector<DecoderLayer> layers;
  LayerNorm final_ln;
  int n_heads = 1;

  Var forward(Graph& g, Var tgt, int batch, int len_q, Var memory, int len_k,
              const std::vector<uint8_t>* tgt_mask,
              const std::vector<uint8_t>* mem_mask, const TrainMode& tm) const;

  DecoderState begin(const Mat& memory, std::vector<uint8_t> mem_mask) const;
  Mat step(DecoderState& state, const Mat& x_row) const;  // final-normed feature
};

// Three stride-2 conv blocks (ReLU, padded columns re-zeroed) followed by a
// full-height mean pool and a layer norm; width downsample factor is 8.
struct ConvImageEncoder {
  static constexpr int kDownsample = 8;

  int d_model = 0;
  int ch[4] = {1, 0, 0, 0};
  Param* kernel[3] = {nullptr, nullptr, nullptr};
  Param* bias[3] = {nullptr, nullptr, nullptr};
  LayerNorm out_ln;

  // images: (batch * 32 * img_w) x 1; char_len: true character count per
  // sample. Returns (batch * img_w/8) x d_model.
  Var forward(Graph& g, Var images, int batch, int img_w,
              const std::vector<int>& char_len) const;
};

Mat sinusoidal_positions(int max_len, int d_model);
// tiles rows 0..len-1 of the table for each sample in the batch
Mat tile_positions(const Mat& table, int batch, int len);

Linear make_linear(ParamStore& store, const std::string& name, int in, int out,
                   Rng& rng, bool bias = true);
LayerNorm make_layer_norm(ParamStore& store, const std::string& name, int d);
Embedding make_embedding(ParamStore& store, const std::string& name, int vocab,
                         int d, Rng& rng);
MultiHeadAttention make_attention(ParamStore& store, const std::string& name,
                                  int d, int n_heads, Rng& rng);
EncoderLayer make_encoder_layer(ParamStore& store, const std::string& name, int d,
                                int n_heads, int d_ff, Rng& rng);
DecoderLayer make_decoder_layer(ParamStore& store, const std::string& name, int d,
                                int n_heads, int d_ff, Rng& rng);
TransformerEncoder make_encoder(ParamStore& store, const std::string& name,
                                int n_layers, int d, int n_heads, int d_ff,
                                Rng& rng);
TransformerDecoder make_decoder(ParamStore& store, const std::string& name,
                                int n_layers, int d, int n_heads, int d_ff,
                                Rng& rng);
ConvImageEncoder make_conv_encoder(ParamStore& store, const std::string& name,
                                   int d_model, Rng& rng);

}  // namespace timt::nn
