#include "timt/model/models.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace timt::model {

using nn::Graph;
using nn::TrainMode;
using nn::Var;

void ModelConfig::validate() const {
  require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && d_ff >= 1,
          "model dims must be >= 1");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(src_vocab >= corpus::kNumSpecials && tgt_vocab >= corpus::kNumSpecials,
          "vocab sizes must include the specials");
  require(max_len >= 2, "max_len must be >= 2");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["src_vocab"] = src_vocab;
  j["tgt_vocab"] = tgt_vocab;
  j["max_len"] = max_len;
  j["dropout"] = dropout;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.src_vocab = j.at("src_vocab").get<int>();
  c.tgt_vocab = j.at("tgt_vocab").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

FeatureSeqValue detach(const Graph& g, const FeatureSeq& f) {
  FeatureSeqValue v;
  v.data = g.value(f.data);
  v.batch = f.batch;
  v.len = f.len;
  v.mask = f.mask;
  return v;
}

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

namespace {

std::vector<uint8_t> char_mask(const std::vector<int>& char_len, int len) {
  std::vector<uint8_t> mask(char_len.size() * static_cast<size_t>(len), 0);
  for (size_t b = 0; b < char_len.size(); ++b) {
    for (int i = 0; i < char_len[b] && i < len; ++i) {
      mask[b * static_cast<size_t>(len) + i] = 1;
    }
  }
  return mask;
}

template <typename EncodeFn, typename Model>
std::vector<int> greedy_loop(const Model& m, EncodeFn encode, int max_len) {
  require(max_len >= 1, "max_len must be >= 1");
  require(max_len <= m.config().max_len, "max_len exceeds model position table");
  auto [memory, mem_mask] = encode();
  nn::DecoderState st = m.decoder().begin(memory, std::move(mem_mask));
  std::vector<int> out;
  int cur = corpus::kBosId;
  for (int t = 0; t < max_len; ++t) {
    Mat emb = m.target_embedding().apply({cur});
    emb.row(0) += m.positions().row(t);
    Mat feat = m.decoder().step(st, emb);
    Mat logits = m.output_projection().apply(feat);
    const int best = argmax_lowest(logits.row(0));
    if (best == corpus::kEosId) break;
    out.push_back(best);
    cur = best;
  }
  return out;
}

template <typename Model>
StepDistributions teacher_forced_single(const Model& m, const FeatureSeq& memory,
                                        Graph& g, const std::vector<int>& prefix) {
  require(!prefix.empty(), "empty decoder prefix");
  require(prefix.front() == corpus::kBosId, "decoder prefix must begin with BOS");
  std::vector<uint8_t> step_mask(prefix.size(), 1);
  DecodeOut out = m.decode_prefix(g, memory, prefix, step_mask,
                                  /*batch=*/1, static_cast<int>(prefix.size()),
                                  TrainMode{});
  StepDistributions d;
  d.logits = g.value(out.logits);
  d.probs.resize(d.logits.rows(), d.logits.cols());
  for (Eigen::Index r = 0; r < d.logits.rows(); ++r) {
    const double mx = d.logits.row(r).maxCoeff();
    Eigen::RowVectorXd ex = (d.logits.row(r).array() - mx).exp();
    d.probs.row(r) = ex / ex.sum();
  }
  return d;
}

}  // namespace

ImageToTextModel::ImageToTextModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(hash_combine(cfg_.seed, hash_str(kKindImageToText, 17)));
  image_enc_ = nn::make_conv_encoder(params_, "img_enc", cfg_.d_model, rng);
  seq_enc_ = nn::make_encoder(params_, "seq_enc", cfg_.n_layers, cfg_.d_model,
                              cfg_.n_heads, cfg_.d_ff, rng);
  tgt_embed_ = nn::make_embedding(params_, "tgt_embed", cfg_.tgt_vocab,
                                  cfg_.d_model, rng);
  decoder_ = nn::make_decoder(params_, "decoder", cfg_.n_layers, cfg_.d_model,
                              cfg_.n_heads, cfg_.d_ff, rng);
  out_proj_ = nn::make_linear(params_, "out_proj", cfg_.d_model, cfg_.tgt_vocab, rng);
  pos_ = nn::sinusoidal_positions(cfg_.max_len, cfg_.d_model);
}

FeatureSeq ImageToTextModel::encode_image(Graph& g, const Mat& images, int batch,
                                          int img_w,
                                          const std::vector<int>& char_len,
                                          const TrainMode& tm) const {
  require(images.cols() == 1, "images must have one channel");
  require(images.rows() == static_cast<Eigen::Index>(batch) * corpus::kImageHeight * img_w,
          "image rows must be batch * 32 * width");
  require(img_w % nn::ConvImageEncoder::kDownsample == 0,
          "image width must be divisible by 8");
  (void)tm;
  FeatureSeq f;
  f.batch = batch;
  f.len = img_w / nn::ConvImageEncoder::kDownsample;
  f.data = image_enc_.forward(g, g.input(images), batch, img_w, char_len);
  f.mask = char_mask(char_len, f.len);
  return f;
}

FeatureSeq ImageToTextModel::encode_sequence(Graph& g, const FeatureSeq& f,
                                             const TrainMode& tm,
                                             bool add_positions) const {
  FeatureSeq out = f;
  Var x = f.data;
  if (add_positions) {
    x = g.add(x, g.input(nn::tile_positions(pos_, f.batch, f.len)));
  }
  if (tm.drop()) x = g.dropout(x, tm.dropout, *tm.rng);
  out.data = seq_enc_.forward(g, x, f.batch, f.len, &f.mask, tm);
  return out;
}

DecodeOut ImageToTextModel::decode_prefix(Graph& g, const FeatureSeq& memory,
                                          const std::vector<int>& prefix,
                                          const std::vector<uint8_t>& step_mask,
                                          int batch, int steps,
                                          const TrainMode& tm) const {
  require(steps >= 1, "decoder needs at least one step");
  require(prefix.size() == static_cast<size_t>(batch) * steps, "prefix size mismatch");
  require(step_mask.size() == prefix.size(), "step mask size mismatch");
  Var x = g.add(tgt_embed_(g, prefix), g.input(nn::tile_positions(pos_, batch, steps)));
  if (tm.drop()) x = g.dropout(x, tm.dropout, *tm.rng);
  DecodeOut out;
  out.features = decoder_.forward(g, x, batch, steps, memory.data, memory.len,
                                  &step_mask, &memory.mask, tm);
  out.logits = out_proj_(g, out.features);
  out.log_probs = g.log_softmax_rows(out.logits);
  return out;
}

std::pair<Mat, std::vector<uint8_t>> ImageToTextModel::encode_single(
    const corpus::TextImage& image) const {
  Graph g(/*grad_enabled=*/false);
  const int w = image.width();
  Mat flat(static_cast<Eigen::Index>(corpus::kImageHeight) * w, 1);
  for (int r = 0; r < corpus::kImageHeight; ++r) {
    for (int c = 0; c < w; ++c) {
      flat(static_cast<Eigen::Index>(r) * w + c, 0) = image.pixels(r, c);
    }
  }
  std::vector<int> char_len = {w / nn::ConvImageEncoder::kDownsample};
  FeatureSeq fi = encode_image(g, flat, 1, w, char_len, TrainMode{});
  FeatureSeq fs = encode_sequence(g, fi, TrainMode{});
  return {g.value(fs.data), fs.mask};
}

StepDistributions ImageToTextModel::decode_teacher_forced(
    const corpus::TextImage& image, const std::vector<int>& prefix) const {
  Graph g(/*grad_enabled=*/false);
  const int w = image.width();
  Mat flat(static_cast<Eigen::Index>(corpus::kImageHeight) * w, 1);
  for (int r = 0; r < corpus::kImageHeight; ++r) {
    for (int c = 0; c < w; ++c) {
      flat(static_cast<Eigen::Index>(r) * w + c, 0) = image.pixels(r, c);
    }
  }
  std::vector<int> char_len = {w / nn::ConvImageEncoder::kDownsample};
  FeatureSeq fi = encode_image(g, flat, 1, w, char_len, TrainMode{});
  FeatureSeq fs = encode_sequence(g, fi, TrainMode{});
  return teacher_forced_single(*this, fs, g, prefix);
}

std::vector<int> ImageToTextModel::greedy_decode(const corpus::TextImage& image,
                                                 int max_len) const {
  return greedy_loop(*this, [&] { return encode_single(image); }, max_len);
}

TextToTextModel::TextToTextModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(hash_combine(cfg_.seed, hash_str(kKindTextToText, 17)));
  src_embed_ = nn::make_embedding(params_, "src_embed", cfg_.src_vocab,
                                  cfg_.d_model, rng);
  seq_enc_ = nn::make_encoder(params_, "seq_enc", cfg_.n_layers, cfg_.d_model,
                              cfg_.n_heads, cfg_.d_ff, rng);
  tgt_embed_ = nn::make_embedding(params_, "tgt_embed", cfg_.tgt_vocab,
                                  cfg_.d_model, rng);
  decoder_ = nn::make_decoder(params_, "decoder", cfg_.n_layers, cfg_.d_model,
                              cfg_.n_heads, cfg_.d_ff, rng);
  out_proj_ = nn::make_linear(params_, "out_proj", cfg_.d_model, cfg_.tgt_vocab, rng);
  pos_ = nn::sinusoidal_positions(cfg_.max_len, cfg_.d_model);
}

FeatureSeq TextToTextModel::encode_text(Graph& g, const std::vector<int>& ids,
                                        int batch, int len,
                                        const std::vector<uint8_t>& mask,
                                        const TrainMode& tm) const {
  require(ids.size() == static_cast<size_t>(batch) * len, "text ids size mismatch");
  require(mask.size() == ids.size(), "text mask size mismatch");
  (void)tm;
  FeatureSeq f;
  f.batch = batch;
  f.len = len;
  f.data = src_embed_(g, ids);
  f.mask = mask;
  return f;
}

FeatureSeq TextToTextModel::encode_sequence(Graph& g, const FeatureSeq& f,
                                            const TrainMode& tm,
                                            bool add_positions) const {
  FeatureSeq out = f;
  Var x = f.data;
  if (add_positions) {
    x = g.add(x, g.input(nn::tile_positions(pos_, f.batch, f.len)));
  }
  if (tm.drop()) x = g.dropout(x, tm.dropout, *tm.rng);
  out.data = seq_enc_.forward(g, x, f.batch, f.len, &f.mask, tm);
  return out;
}

DecodeOut TextToTextModel::decode_prefix(Graph& g, const FeatureSeq& memory,
                                         const std::vector<int>& prefix,
                                         const std::vector<uint8_t>& step_mask,
                                         int batch, int steps,
                                         const TrainMode& tm) const {
  require(steps >= 1, "decoder needs at least one step");
  require(prefix.size() == static_cast<size_t>(batch) * steps, "prefix size mismatch");
  require(step_mask.size() == prefix.size(), "step mask size mismatch");
  Var x = g.add(tgt_embed_(g, prefix), g.input(nn::tile_positions(pos_, batch, steps)));
  if (tm.drop()) x = g.dropout(x, tm.dropout, *tm.rng);
  DecodeOut out;
  out.features = decoder_.forward(g, x, batch, steps, memory.data, memory.len,
                                  &step_mask, &memory.mask, tm);
  out.logits = out_proj_(g, out.features);
  out.log_probs = g.log_softmax_rows(out.logits);
  return out;
}

std::pair<Mat, std::vector<uint8_t>> TextToTextModel::encode_single(
    const std::vector<int>& src_char_ids) const {
  require(!src_char_ids.empty(), "empty source sequence");
  Graph g(/*grad_enabled=*/false);
  const int len = static_cast<int>(src_char_ids.size());
  std::vector<uint8_t> mask(src_char_ids.size(), 1);
  FeatureSeq ft = encode_text(g, src_char_ids, 1, len, mask, TrainMode{});
  FeatureSeq fs = encode_sequence(g, ft, TrainMode{});
  return {g.value(fs.data), fs.mask};
}

StepDistributions TextToTextModel::decode_teacher_forced(
    const std::vector<int>& src_char_ids, const std::vector<int>& prefix) const {
  Graph g(/*grad_enabled=*/false);
  const int len = static_cast<int>(src_char_ids.size());
  std::vector<uint8_t> mask(src_char_ids.size(), 1);
  FeatureSeq ft = encode_text(g, src_char_ids, 1, len, mask, TrainMode{});
  FeatureSeq fs = encode_sequence(g, ft, TrainMode{});
  return teacher_forced_single(*this, fs, g, prefix);
}

std::vector<int> TextToTextModel::greedy_decode(const std::vector<int>& src_char_ids,
                                                int max_len) const {
  return greedy_loop(*this, [&] { return encode_single(src_char_ids); }, max_len);
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

void write_str(std::ofstream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::ifstream& in) {
  const uint32_t n = read_u32(in);
  if (n > (1u << 24)) throw std::runtime_error("corrupt checkpoint string");
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

constexpr char kCkptMagic[8] = {'T', 'I', 'M', 'T', 'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const ModelConfig& cfg, const nn::ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kCkptMagic, 8);
  write_str(out, kind);
  write_str(out, cfg.to_json());
  write_u32(out, static_cast<uint32_t>(params.all().size()));
  std::vector<float> buf;
  for (const auto& p : params.all()) {
    write_str(out, p->name);
    write_u32(out, static_cast<uint32_t>(p->value.rows()));
    write_u32(out, static_cast<uint32_t>(p->value.cols()));
    buf.resize(static_cast<size_t>(p->value.size()));
    size_t k = 0;
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        buf[k++] = static_cast<float>(p->value(r, c));
      }
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

CheckpointInfo peek_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw std::runtime_error("bad checkpoint magic: " + path.string());
  }
  CheckpointInfo info;
  info.kind = read_str(in);
  info.config = ModelConfig::from_json(read_str(in));
  return info;
}

void load_checkpoint_params(const std::filesystem::path& path,
                            nn::ParamStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw std::runtime_error("bad checkpoint magic: " + path.string());
  }
  read_str(in);  // kind
  read_str(in);  // config
  const uint32_t n = read_u32(in);
  if (n != params.all().size()) {
    throw std::runtime_error("checkpoint parameter count mismatch in " + path.string());
  }
  std::vector<float> buf;
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = read_str(in);
    const uint32_t rows = read_u32(in);
    const uint32_t cols = read_u32(in);
    nn::Param* p = params.find(name);
    if (!p) throw std::runtime_error("unknown parameter in checkpoint: " + name);
    if (p->value.rows() != static_cast<Eigen::Index>(rows) ||
        p->value.cols() != static_cast<Eigen::Index>(cols)) {
      throw std::runtime_error("shape mismatch for parameter: " + name);
    }
    buf.resize(static_cast<size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    size_t k = 0;
    for (uint32_t r = 0; r < rows; ++r) {
      for (uint32_t c = 0; c < cols; ++c) {
        p->value(r, c) = static_cast<double>(buf[k++]);
      }
    }
  }
}

ImageToTextModel load_image_model(const std::filesystem::path& path) {
  CheckpointInfo info = peek_checkpoint(path);
  require(info.kind == kKindImageToText, "checkpoint is not an image2text model");
  ImageToTextModel m(info.config);
  load_checkpoint_params(path, m.params());
  return m;
}

TextToTextModel load_text_model(const std::filesystem::path& path) {
  CheckpointInfo info = peek_checkpoint(path);
  require(info.kind == kKindTextToText, "checkpoint is not a text2text model");
  TextToTextModel m(info.config);
  load_checkpoint_params(path, m.params());
  return m;
}

}  // namespace timt::model
