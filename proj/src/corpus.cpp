#include "timt/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

namespace timt::corpus {

using json = nlohmann::ordered_json;

namespace {

const char* kSpecialNames[kNumSpecials] = {"<pad>", "<bos>", "<eos>", "<unk>"};

const char* split_name(int split_id) {
  switch (split_id) {
    case 0: return "train";
    case 1: return "valid";
    case 2: return "test";
    default: throw std::invalid_argument("bad split id");
  }
}

int split_id_of(const std::string& name) {
  if (name == "train") return 0;
  if (name == "valid") return 1;
  if (name == "test") return 2;
  throw std::invalid_argument("unknown split: " + name);
}

}  // namespace

int Vocab::id_of(const std::string& token) const {
  for (int i = 0; i < kNumSpecials; ++i) {
    if (token == kSpecialNames[i]) return i;
  }
  if (token.size() == 1) return id_of_char(token[0]);
  return kUnkId;
}

int Vocab::id_of_char(char c) const {
  auto it = char_ids_.find(c);
  return it == char_ids_.end() ? kUnkId : it->second;
}

std::string Vocab::token_of(int id) const {
  require(id >= 0 && id < size(), "token id out of range");
  if (id < kNumSpecials) return kSpecialNames[id];
  return std::string(1, chars_[id - kNumSpecials]);
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id_of_char(c));
  return ids;
}

std::vector<int> Vocab::tokenize_with_bos_eos(const std::string& text) const {
  std::vector<int> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kBosId);
  for (char c : text) ids.push_back(id_of_char(c));
  ids.push_back(kEosId);
  return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    require(id >= 0 && id < size(), "token id out of range");
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    out.push_back(id == kUnkId ? '?' : chars_[id - kNumSpecials]);
  }
  return out;
}

Vocab build_vocab(const std::string& alphabet) {
  require(!alphabet.empty(), "empty alphabet");
  Vocab v;
  v.alphabet_ = alphabet;
  for (char c : alphabet) {
    require(v.char_ids_.find(c) == v.char_ids_.end(),
            std::string("duplicate character in alphabet: '") + c + "'");
    v.char_ids_[c] = kNumSpecials + static_cast<int>(v.chars_.size());
    v.chars_.push_back(c);
  }
  return v;
}

std::string translate_oracle(const std::string& src, const std::string& alphabet) {
  const int n = static_cast<int>(alphabet.size());
  require(n > 0, "empty alphabet");
  std::unordered_map<char, int> pos;
  for (int i = 0; i < n; ++i) pos[alphabet[i]] = i;
  const int shift = n / 2;
  std::string out(src.size(), '\0');
  for (size_t i = 0; i < src.size(); ++i) {
    auto it = pos.find(src[i]);
    require(it != pos.end(),
            std::string("character outside alphabet: '") + src[i] + "'");
    out[src.size() - 1 - i] = alphabet[(it->second + shift) % n];
  }
  return out;
}

GlyphSet::GlyphSet(const std::string& alphabet, int glyph_width, uint64_t seed)
    : glyph_width_(glyph_width) {
  require(glyph_width > 0, "glyph width must be positive");
  for (char c : alphabet) {
    Rng rng(hash_combine(seed, static_cast<uint64_t>(static_cast<unsigned char>(c))));
    Mat g(kImageHeight, glyph_width);
    for (int r = 0; r < kImageHeight; ++r) {
      for (int w = 0; w < glyph_width; ++w) {
        g(r, w) = static_cast<double>(rng.next() & 1u);
      }
    }
    glyphs_[c] = std::move(g);
  }
}

const Mat& GlyphSet::glyph(char c) const {
  auto it = glyphs_.find(c);
  require(it != glyphs_.end(), std::string("no glyph for character: '") + c + "'");
  return it->second;
}

TextImage render_text_image(const std::string& src, const GlyphSet& glyphs) {
  require(!src.empty(), "cannot render empty string");
  const int gw = glyphs.glyph_width();
  TextImage img;
  img.pixels = Mat::Zero(kImageHeight, gw * static_cast<int>(src.size()));
  for (size_t i = 0; i < src.size(); ++i) {
    img.pixels.middleCols(static_cast<int>(i) * gw, gw) = glyphs.glyph(src[i]);
  }
  return img;
}

void CorpusSpec::validate() const {
  require(!alphabet.empty(), "empty alphabet");
  std::set<char> uniq(alphabet.begin(), alphabet.end());
  require(uniq.size() == alphabet.size(), "duplicate character in alphabet");
  require(min_len >= 1, "min_len must be >= 1");
  require(min_len <= max_len, "min_len must be <= max_len");
  require(n_train > 0 && n_valid > 0 && n_test > 0, "sample counts must be > 0");
  require(glyph_width > 0, "glyph_width must be > 0");
}

const std::vector<TripleSample>& Dataset::split(const std::string& name) const {
  switch (split_id_of(name)) {
    case 0: return train;
    case 1: return valid;
    default: return test;
  }
}

TripleSample generate_sample(const CorpusSpec& spec, const Vocab& vocab,
                             const GlyphSet& glyphs, int split_id, int index) {
  Rng rng(hash_combine(hash_combine(spec.seed, 0x5350u + split_id),
                       static_cast<uint64_t>(index)));
  const int len =
      spec.min_len + static_cast<int>(rng.below(spec.max_len - spec.min_len + 1));
  std::string src(len, '\0');
  for (int i = 0; i < len; ++i) {
    src[i] = spec.alphabet[rng.below(spec.alphabet.size())];
  }
  TripleSample s;
  s.src_text = src;
  s.tgt_text = translate_oracle(src, spec.alphabet);
  s.src_ids = vocab.tokenize_with_bos_eos(s.src_text);
  s.tgt_ids = vocab.tokenize_with_bos_eos(s.tgt_text);
  s.image = render_text_image(src, glyphs);
  return s;
}

Dataset generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.src_vocab = build_vocab(spec.alphabet);
  ds.tgt_vocab = build_vocab(spec.alphabet);
  ds.glyphs = GlyphSet(spec.alphabet, spec.glyph_width, spec.seed);

  const int counts[3] = {spec.n_train, spec.n_valid, spec.n_test};
  std::vector<TripleSample>* splits[3] = {&ds.train, &ds.valid, &ds.test};
  for (int sp = 0; sp < 3; ++sp) {
    splits[sp]->reserve(counts[sp]);
    for (int i = 0; i < counts[sp]; ++i) {
      splits[sp]->push_back(generate_sample(spec, ds.src_vocab, ds.glyphs, sp, i));
    }
  }
  return ds;
}

void write_image_file(const TextImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image file: " + path.string());
  out.write("MTKDIMG1", 8);
  const uint32_t h = static_cast<uint32_t>(img.pixels.rows());
  const uint32_t w = static_cast<uint32_t>(img.pixels.cols());
  const uint32_t c = 1;
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&c), 4);
  std::vector<float> buf(static_cast<size_t>(h) * w);
  for (uint32_t r = 0; r < h; ++r) {
    for (uint32_t col = 0; col < w; ++col) {
      buf[static_cast<size_t>(r) * w + col] = static_cast<float>(img.pixels(r, col));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

TextImage read_image_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "MTKDIMG1", 8) != 0) {
    throw std::runtime_error("bad image magic in " + path.string());
  }
  uint32_t h = 0, w = 0, c = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&c), 4);
  if (!in || c != 1 || h == 0 || w == 0) {
    throw std::runtime_error("bad image header in " + path.string());
  }
  std::vector<float> buf(static_cast<size_t>(h) * w);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated image file: " + path.string());
  TextImage img;
  img.pixels.resize(h, w);
  for (uint32_t r = 0; r < h; ++r) {
    for (uint32_t col = 0; col < w; ++col) {
      img.pixels(r, col) = buf[static_cast<size_t>(r) * w + col];
    }
  }
  return img;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");

  json spec;
  spec["alphabet"] = ds.spec.alphabet;
  spec["min_len"] = ds.spec.min_len;
  spec["max_len"] = ds.spec.max_len;
  spec["n_train"] = ds.spec.n_train;
  spec["n_valid"] = ds.spec.n_valid;
  spec["n_test"] = ds.spec.n_test;
  spec["seed"] = ds.spec.seed;
  spec["glyph_width"] = ds.spec.glyph_width;
  {
    std::ofstream out(dir / "corpus_spec.json");
    out << spec.dump(2) << "\n";
  }

  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  const std::vector<TripleSample>* splits[3] = {&ds.train, &ds.valid, &ds.test};
  for (int sp = 0; sp < 3; ++sp) {
    for (size_t i = 0; i < splits[sp]->size(); ++i) {
      const TripleSample& s = (*splits[sp])[i];
      char name[64];
      std::snprintf(name, sizeof(name), "images/%s_%06zu.img", split_name(sp), i);
      write_image_file(s.image, dir / name);
      json rec;
      rec["split"] = split_name(sp);
      rec["index"] = i;
      rec["src"] = s.src_text;
      rec["tgt"] = s.tgt_text;
      rec["image"] = name;
      manifest << rec.dump() << "\n";
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream spec_in(dir / "corpus_spec.json");
  if (!spec_in) throw std::runtime_error("missing corpus_spec.json in " + dir.string());
  json spec = json::parse(spec_in);

  Dataset ds;
  ds.spec.alphabet = spec.at("alphabet").get<std::string>();
  ds.spec.min_len = spec.at("min_len").get<int>();
  ds.spec.max_len = spec.at("max_len").get<int>();
  ds.spec.n_train = spec.at("n_train").get<int>();
  ds.spec.n_valid = spec.at("n_valid").get<int>();
  ds.spec.n_test = spec.at("n_test").get<int>();
  ds.spec.seed = spec.at("seed").get<uint64_t>();
  ds.spec.glyph_width = spec.at("glyph_width").get<int>();
  ds.spec.validate();
  ds.src_vocab = build_vocab(ds.spec.alphabet);
  ds.tgt_vocab = build_vocab(ds.spec.alphabet);
  ds.glyphs = GlyphSet(ds.spec.alphabet, ds.spec.glyph_width, ds.spec.seed);

  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("missing manifest.jsonl in " + dir.string());
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    TripleSample s;
    s.src_text = rec.at("src").get<std::string>();
    s.tgt_text = rec.at("tgt").get<std::string>();
    s.src_ids = ds.src_vocab.tokenize_with_bos_eos(s.src_text);
    s.tgt_ids = ds.tgt_vocab.tokenize_with_bos_eos(s.tgt_text);
    s.image = read_image_file(dir / rec.at("image").get<std::string>());
    switch (split_id_of(rec.at("split").get<std::string>())) {
      case 0: ds.train.push_back(std::move(s)); break;
      case 1: ds.valid.push_back(std::move(s)); break;
      default: ds.test.push_back(std::move(s)); break;
    }
  }
  return ds;
}

Batch collate(std::span<const TripleSample* const> samples) {
  require(!samples.empty(), "empty batch");
  Batch b;
  b.size = static_cast<int>(samples.size());

  int max_chars = 0, max_tgt = 0, max_src_seq = 0, img_h = 0;
  for (const TripleSample* s : samples) {
    const int chars = static_cast<int>(s->src_text.size());
    max_chars = std::max(max_chars, chars);
    max_src_seq = std::max(max_src_seq, static_cast<int>(s->src_ids.size()));
    max_tgt = std::max(max_tgt, static_cast<int>(s->tgt_ids.size()));
    img_h = s->image.height();
    require(img_h == kImageHeight, "image height must be 32");
  }

  const int gw = samples[0]->image.width() /
                 std::max<int>(1, static_cast<int>(samples[0]->src_text.size()));
  b.src_len = max_chars;
  b.img_w = gw * max_chars;
  b.images = Mat::Zero(static_cast<Eigen::Index>(b.size) * kImageHeight * b.img_w, 1);

  b.src_ids.assign(static_cast<size_t>(b.size) * b.src_len, kPadId);
  b.src_mask.assign(static_cast<size_t>(b.size) * b.src_len, 0);

  b.tir_steps = max_src_seq - 1;  // predict chars... EOS from BOS-prefixed input
  b.tir_prefix.assign(static_cast<size_t>(b.size) * b.tir_steps, kPadId);
  b.tir_gold.assign(static_cast<size_t>(b.size) * b.tir_steps, kPadId);
  b.tir_mask.assign(static_cast<size_t>(b.size) * b.tir_steps, 0);

  b.tgt_steps = max_tgt - 1;
  b.tgt_prefix.assign(static_cast<size_t>(b.size) * b.tgt_steps, kPadId);
  b.tgt_gold.assign(static_cast<size_t>(b.size) * b.tgt_steps, kPadId);
  b.tgt_mask.assign(static_cast<size_t>(b.size) * b.tgt_steps, 0);

  b.char_len.resize(b.size);

  for (int j = 0; j < b.size; ++j) {
    const TripleSample& s = *samples[j];
    const int chars = static_cast<int>(s.src_text.size());
    b.char_len[j] = chars;

    const int w = s.image.width();
    for (int r = 0; r < kImageHeight; ++r) {
      for (int c = 0; c < w; ++c) {
        b.images(static_cast<Eigen::Index>(j) * kImageHeight * b.img_w +
                     static_cast<Eigen::Index>(r) * b.img_w + c,
                 0) = s.image.pixels(r, c);
      }
    }

    for (int i = 0; i < chars; ++i) {
      b.src_ids[static_cast<size_t>(j) * b.src_len + i] = s.src_ids[i + 1];
      b.src_mask[static_cast<size_t>(j) * b.src_len + i] = 1;
    }

    const int zs = static_cast<int>(s.src_ids.size()) - 1;
    for (int i = 0; i < zs; ++i) {
      b.tir_prefix[static_cast<size_t>(j) * b.tir_steps + i] = s.src_ids[i];
      b.tir_gold[static_cast<size_t>(j) * b.tir_steps + i] = s.src_ids[i + 1];
      b.tir_mask[static_cast<size_t>(j) * b.tir_steps + i] = 1;
    }

    const int zt = static_cast<int>(s.tgt_ids.size()) - 1;
    for (int i = 0; i < zt; ++i) {
      b.tgt_prefix[static_cast<size_t>(j) * b.tgt_steps + i] = s.tgt_ids[i];
      b.tgt_gold[static_cast<size_t>(j) * b.tgt_steps + i] = s.tgt_ids[i + 1];
      b.tgt_mask[static_cast<size_t>(j) * b.tgt_steps + i] = 1;
    }
  }
  return b;
}

Batch collate(const std::vector<TripleSample>& samples) {
  std::vector<const TripleSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const TripleSample& s : samples) ptrs.push_back(&s);
  return collate(std::span<const TripleSample* const>(ptrs));
}

std::vector<Batch> make_batches(const std::vector<TripleSample>& samples,
                                int batch_size, const std::vector<int>* order) {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(!samples.empty(), "empty sample list");
  std::vector<int> idx;
  if (order) {
    idx = *order;
  } else {
    idx.resize(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) idx[i] = static_cast<int>(i);
  }
  std::vector<Batch> out;
  for (size_t start = 0; start < idx.size(); start += batch_size) {
    std::vector<const TripleSample*> ptrs;
    std::vector<int> members;
    for (size_t k = start; k < std::min(idx.size(), start + batch_size); ++k) {
      ptrs.push_back(&samples[idx[k]]);
      members.push_back(idx[k]);
    }
    out.push_back(collate(std::span<const TripleSample* const>(ptrs)));
    out.back().sample_index = std::move(members);
  }
  return out;
}

}  // namespace timt::corpus
