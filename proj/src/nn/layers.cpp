#include "timt/nn/layers.hpp"

#include <cmath>

namespace timt::nn {

Var Linear::operator()(Graph& g, Var x) const {
  Var y = g.matmul(x, g.param(*w));
  return b ? g.add_row(y, g.param(*b)) : y;
}

Mat Linear::apply(const Mat& x) const {
  Mat y = x * w->value;
  if (b) y.rowwise() += b->value.row(0);
  return y;
}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return g.layer_norm(x, g.param(*gamma), g.param(*beta), eps);
}

Mat LayerNorm::apply(const Mat& x) const {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    y.row(r) = ((x.row(r).array() - mean) * is * gamma->value.row(0).array() +
                beta->value.row(0).array())
                   .matrix();
  }
  return y;
}

Var Embedding::operator()(Graph& g, const std::vector<int>& ids) const {
  return g.embed_rows(g.param(*table), ids);
}

Mat Embedding::apply(const std::vector<int>& ids) const {
  Mat y(static_cast<Eigen::Index>(ids.size()), table->value.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table->value.rows(), "embedding id out of range");
    y.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  return y;
}

Var MultiHeadAttention::operator()(Graph& g, Var q_in, Var kv_in,
                                   const AttentionSpec& spec) const {
  AttentionSpec s = spec;
  s.n_heads = n_heads;
  Var q = wq(g, q_in);
  Var k = wk(g, kv_in);
  Var v = wv(g, kv_in);
  return wo(g, g.attention(q, k, v, s));
}

namespace {

// one query row against cached keys/values, per head
Mat attend_row(const Mat& q, const Mat& k, const Mat& v, int n_heads,
               const std::vector<uint8_t>* key_mask) {
  const int d = static_cast<int>(q.cols());
  const int dk = d / n_heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dk));
  const Eigen::Index lk = k.rows();
  Mat out(1, d);
  for (int h = 0; h < n_heads; ++h) {
    Eigen::RowVectorXd scores =
        q.block(0, h * dk, 1, dk) * k.middleCols(h * dk, dk).transpose() * scl;
    if (key_mask) {
      for (Eigen::Index j = 0; j < lk; ++j) {
        if (!(*key_mask)[static_cast<size_t>(j)]) scores(j) = -1e30;
      }
    }
    const double mx = scores.maxCoeff();
    Eigen::RowVectorXd ex = (scores.array() - mx).exp();
    ex /= ex.sum();
    out.block(0, h * dk, 1, dk) = ex * v.middleCols(h * dk, dk);
  }
  return out;
}

}  // namespace

Mat MultiHeadAttention::step_self(const Mat& u, Mat& cache_k, Mat& cache_v) const {
  Mat q = wq.apply(u);
  Mat k = wk.apply(u);
  Mat v = wv.apply(u);
  cache_k.conservativeResize(cache_k.rows() + 1, k.cols());
  cache_k.row(cache_k.rows() - 1) = k.row(0);
  cache_v.conservativeResize(cache_v.rows() + 1, v.cols());
  cache_v.row(cache_v.rows() - 1) = v.row(0);
  return wo.apply(attend_row(q, cache_k, cache_v, n_heads, nullptr));
}

Mat MultiHeadAttention::step_cross(const Mat& u, const Mat& mem_k, const Mat& mem_v,
                                   const std::vector<uint8_t>& key_mask) const {
  Mat q = wq.apply(u);
  return wo.apply(attend_row(q, mem_k, mem_v, n_heads, &key_mask));
}

namespace {

Var maybe_dropout(Graph& g, Var x, const TrainMode& tm) {
  return tm.drop() ? g.dropout(x, tm.dropout, *tm.rng) : x;
}

}  // namespace

Var EncoderLayer::operator()(Graph& g, Var x, const AttentionSpec& spec,
                             const TrainMode& tm) const {
  Var u = ln1(g, x);
  x = g.add(x, maybe_dropout(g, attn(g, u, u, spec), tm));
  Var f = ln2(g, x);
  Var h = ff2(g, g.relu(ff1(g, f)));
  return g.add(x, maybe_dropout(g, h, tm));
}

Var DecoderLayer::operator()(Graph& g, Var x, Var memory,
                             const AttentionSpec& self_spec,
                             const AttentionSpec& cross_spec,
                             const TrainMode& tm) const {
  Var u = ln1(g, x);
  x = g.add(x, maybe_dropout(g, self_attn(g, u, u, self_spec), tm));
  Var c = ln2(g, x);
  x = g.add(x, maybe_dropout(g, cross_attn(g, c, memory, cross_spec), tm));
  Var f = ln3(g, x);
  Var h = ff2(g, g.relu(ff1(g, f)));
  return g.add(x, maybe_dropout(g, h, tm));
}

Var TransformerEncoder::forward(Graph& g, Var x, int batch, int len,
                                const std::vector<uint8_t>* key_mask,
                                const TrainMode& tm) const {
  AttentionSpec spec;
  spec.batch = batch;
  spec.len_q = len;
  spec.len_k = len;
  spec.causal = false;
  spec.key_mask = key_mask;
  for (const EncoderLayer& layer : layers) {
    x = layer(g, x, spec, tm);
  }
  return final_ln(g, x);
}

Var TransformerDecoder::forward(Graph& g, Var tgt, int batch, int len_q,
                                Var memory, int len_k,
                                const std::vector<uint8_t>* tgt_mask,
                                const std::vector<uint8_t>* mem_mask,
                                const TrainMode& tm) const {
  AttentionSpec self_spec;
  self_spec.batch = batch;
  self_spec.len_q = len_q;
  self_spec.len_k = len_q;
  self_spec.causal = true;
  self_spec.key_mask = tgt_mask;

  AttentionSpec cross_spec;
  cross_spec.batch = batch;
  cross_spec.len_q = len_q;
  cross_spec.len_k = len_k;
  cross_spec.causal = false;
  cross_spec.key_mask = mem_mask;

  Var x = tgt;
  for (const DecoderLayer& layer : layers) {
    x = layer(g, x, memory, self_spec, cross_spec, tm);
  }
  return final_ln(g, x);
}

DecoderState TransformerDecoder::begin(const Mat& memory,
                                       std::vector<uint8_t> mem_mask) const {
  DecoderState st;
  st.mem_mask = std::move(mem_mask);
  st.layers.resize(layers.size());
  const int d = static_cast<int>(memory.cols());
  for (size_t i = 0; i < layers.size(); ++i) {
    st.layers[i].cross_k = layers[i].cross_attn.wk.apply(memory);
    st.layers[i].cross_v = layers[i].cross_attn.wv.apply(memory);
    st.layers[i].self_k.resize(0, d);
    st.layers[i].self_v.resize(0, d);
  }
  return st;
}

Mat TransformerDecoder::step(DecoderState& state, const Mat& x_row) const {
  Mat x = x_row;
  for (size_t i = 0; i < layers.size(); ++i) {
    const DecoderLayer& layer = layers[i];
    DecoderState::Layer& st = state.layers[i];
    Mat u = layer.ln1.apply(x);
    x += layer.self_attn.step_self(u, st.self_k, st.self_v);
    Mat c = layer.ln2.apply(x);
    x += layer.cross_attn.step_cross(c, st.cross_k, st.cross_v, state.mem_mask);
    Mat f = layer.ln3.apply(x);
    x += layer.ff2.apply(layer.ff1.apply(f).cwiseMax(0.0));
  }
  state.t += 1;
  return final_ln.apply(x);
}

Var ConvImageEncoder::forward(Graph& g, Var images, int batch, int img_w,
                              const std::vector<int>& char_len) const {
  require(img_w > 0 && img_w % kDownsample == 0,
          "image width must be divisible by 8");
  require(static_cast<int>(char_len.size()) == batch, "char_len size mismatch");

  int h = 32, w = img_w;
  std::vector<int> tw(char_len.size());
  for (size_t b = 0; b < char_len.size(); ++b) {
    tw[b] = char_len[b] * kDownsample;
    require(tw[b] >= 1 && tw[b] <= img_w, "bad true width");
  }

  Var x = images;
  for (int layer = 0; layer < 3; ++layer) {
    Conv2DSpec spec;
    spec.batch = batch;
    spec.in_h = h;
    spec.in_w = w;
    spec.in_ch = ch[layer];
    spec.out_ch = ch[layer + 1];
    x = g.relu(g.conv2d(x, g.param(*kernel[layer]), g.param(*bias[layer]), spec));
    h = spec.out_h();
    w = spec.out_w();
    // keep padded columns exactly zero so real features never see pad content
    std::vector<uint8_t> keep(static_cast<size_t>(batch) * h * w, 0);
    for (int b = 0; b < batch; ++b) {
      tw[b] = (tw[b] + 1) / 2;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          if (c < tw[b]) {
            keep[static_cast<size_t>(b) * h * w + static_cast<size_t>(r) * w + c] = 1;
          }
        }
      }
    }
    x = g.zero_rows(x, keep);
  }

  // mean over the remaining height; one group per (sample, column)
  std::vector<int> group(static_cast<size_t>(batch) * h * w);
  for (int b = 0; b < batch; ++b) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        group[static_cast<size_t>(b) * h * w + static_cast<size_t>(r) * w + c] =
            b * w + c;
      }
    }
  }
  x = g.group_mean_rows(x, group, batch * w);
  return out_ln(g, x);
}

Mat sinusoidal_positions(int max_len, int d_model) {
  Mat pe(max_len, d_model);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double angle =
          pos / std::pow(10000.0, (2.0 * (i / 2)) / static_cast<double>(d_model));
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Mat tile_positions(const Mat& table, int batch, int len) {
  require(len <= table.rows(), "sequence longer than position table");
  Mat out(static_cast<Eigen::Index>(batch) * len, table.cols());
  for (int b = 0; b < batch; ++b) {
    out.middleRows(static_cast<Eigen::Index>(b) * len, len) = table.topRows(len);
  }
  return out;
}

Linear make_linear(ParamStore& store, const std::string& name, int in, int out,
                   Rng& rng, bool bias) {
  Linear l;
  l.w = &store.create(name + ".w", in, out, in, rng);
  l.b = bias ? &store.create_const(name + ".b", 1, out, 0.0) : nullptr;
  return l;
}

LayerNorm make_layer_norm(ParamStore& store, const std::string& name, int d) {
  LayerNorm ln;
  ln.gamma = &store.create_const(name + ".gamma", 1, d, 1.0);
  ln.beta = &store.create_const(name + ".beta", 1, d, 0.0);
  return ln;
}

Embedding make_embedding(ParamStore& store, const std::string& name, int vocab,
                         int d, Rng& rng) {
  Embedding e;
  e.table = &store.create(name + ".table", vocab, d, d, rng);
  return e;
}

MultiHeadAttention make_attention(ParamStore& store, const std::string& name,
                                  int d, int n_heads, Rng& rng) {
  MultiHeadAttention mha;
  mha.n_heads = n_heads;
  mha.wq = make_linear(store, name + ".wq", d, d, rng);
  // a key bias shifts every score of a query row equally; softmax ignores it
  mha.wk = make_linear(store, name + ".wk", d, d, rng, /*bias=*/false);
  mha.wv = make_linear(store, name + ".wv", d, d, rng);
  mha.wo = make_linear(store, name + ".wo", d, d, rng);
  return mha;
}

EncoderLayer make_encoder_layer(ParamStore& store, const std::string& name, int d,
                                int n_heads, int d_ff, Rng& rng) {
  EncoderLayer layer;
  layer.ln1 = make_layer_norm(store, name + ".ln1", d);
  layer.attn = make_attention(store, name + ".attn", d, n_heads, rng);
  layer.ln2 = make_layer_norm(store, name + ".ln2", d);
  layer.ff1 = make_linear(store, name + ".ff1", d, d_ff, rng);
  layer.ff2 = make_linear(store, name + ".ff2", d_ff, d, rng);
  return layer;
}

DecoderLayer make_decoder_layer(ParamStore& store, const std::string& name, int d,
                                int n_heads, int d_ff, Rng& rng) {
  DecoderLayer layer;
  layer.ln1 = make_layer_norm(store, name + ".ln1", d);
  layer.self_attn = make_attention(store, name + ".self", d, n_heads, rng);
  layer.ln2 = make_layer_norm(store, name + ".ln2", d);
  layer.cross_attn = make_attention(store, name + ".cross", d, n_heads, rng);
  layer.ln3 = make_layer_norm(store, name + ".ln3", d);
  layer.ff1 = make_linear(store, name + ".ff1", d, d_ff, rng);
  layer.ff2 = make_linear(store, name + ".ff2", d_ff, d, rng);
  return layer;
}

TransformerEncoder make_encoder(ParamStore& store, const std::string& name,
                                int n_layers, int d, int n_heads, int d_ff,
                                Rng& rng) {
  TransformerEncoder enc;
  enc.n_heads = n_heads;
  for (int i = 0; i < n_layers; ++i) {
    enc.layers.push_back(make_encoder_layer(
        store, name + ".layer" + std::to_string(i), d, n_heads, d_ff, rng));
  }
  enc.final_ln = make_layer_norm(store, name + ".final_ln", d);
  return enc;
}

TransformerDecoder make_decoder(ParamStore& store, const std::string& name,
                                int n_layers, int d, int n_heads, int d_ff,
                                Rng& rng) {
  TransformerDecoder dec;
  dec.n_heads = n_heads;
  for (int i = 0; i < n_layers; ++i) {
    dec.layers.push_back(make_decoder_layer(
        store, name + ".layer" + std::to_string(i), d, n_heads, d_ff, rng));
  }
  dec.final_ln = make_layer_norm(store, name + ".final_ln", d);
  return dec;
}

ConvImageEncoder make_conv_encoder(ParamStore& store, const std::string& name,
                                   int d_model, Rng& rng) {
  ConvImageEncoder enc;
  enc.d_model = d_model;
  enc.ch[0] = 1;
  enc.ch[1] = std::max(4, d_model / 4);
  enc.ch[2] = std::max(8, d_model / 2);
  enc.ch[3] = d_model;
  for (int i = 0; i < 3; ++i) {
    const int fan_in = 9 * enc.ch[i];
    enc.kernel[i] = &store.create(name + ".conv" + std::to_string(i) + ".kernel",
                                  fan_in, enc.ch[i + 1], fan_in, rng);
    enc.bias[i] = &store.create_const(name + ".conv" + std::to_string(i) + ".bias",
                                      1, enc.ch[i + 1], 0.0);
  }
  enc.out_ln = make_layer_norm(store, name + ".out_ln", d_model);
  return enc;
}

}  // namespace timt::nn
