#pragma once

#include "timt/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace timt::corpus {

// Special token ids shared by both vocabularies.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kUnkId = 3;
constexpr int kNumSpecials = 4;

// Character vocabulary with four reserved specials at ids 0..3.
class Vocab {
 public:
  Vocab() = default;

  int size() const { return kNumSpecials + static_cast<int>(chars_.size()); }

  int id_of(const std::string& token) const;
  int id_of_char(char c) const;  // kUnkId when absent
  std::string token_of(int id) const;

  std::vector<int> tokenize(const std::string& text) const;
  std::vector<int> tokenize_with_bos_eos(const std::string& text) const;
  // Drops PAD/BOS/EOS; UNK renders as '?'.
  std::string detokenize(const std::vector<int>& ids) const;

  const std::string& alphabet() const { return alphabet_; }

  friend Vocab build_vocab(const std::string& alphabet);

 private:
  std::string alphabet_;
  std::vector<char> chars_;
  std::unordered_map<char, int> char_ids_;
};

Vocab build_vocab(const std::string& alphabet);

// Substitution cipher (half-alphabet rotation) followed by whole-string
// reversal. Deterministic and length-preserving.
std::string translate_oracle(const std::string& src, const std::string& alphabet);

constexpr int kImageHeight = 32;

struct TextImage {
  Mat pixels;  // kImageHeight x W, values in [0,1]
  int height() const { return static_cast<int>(pixels.rows()); }
  int width() const { return static_cast<int>(pixels.cols()); }
  int channels() const { return 1; }
};

// One fixed binary bitmap per character, derived from hash(char, seed).
class GlyphSet {
 public:
  GlyphSet() = default;
  GlyphSet(const std::string& alphabet, int glyph_width, uint64_t seed);

  const Mat& glyph(char c) const;
  int glyph_width() const { return glyph_width_; }

 private:
  int glyph_width_ = 0;
  std::map<char, Mat> glyphs_;
};

TextImage render_text_image(const std::string& src, const GlyphSet& glyphs);

struct TripleSample {
  TextImage image;
  std::string src_text;
  std::string tgt_text;
  std::vector<int> src_ids;  // BOS ... EOS
  std::vector<int> tgt_ids;  // BOS ... EOS
};

struct CorpusSpec {
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  int min_len = 3;
  int max_len = 8;
  int n_train = 5000;
  int n_valid = 200;
  int n_test = 500;
  uint64_t seed = 7;
  int glyph_width = 8;

  void validate() const;
};

struct Dataset {
  CorpusSpec spec;
  Vocab src_vocab;
  Vocab tgt_vocab;
  GlyphSet glyphs;
  std::vector<TripleSample> train;
  std::vector<TripleSample> valid;
  std::vector<TripleSample> test;

  const std::vector<TripleSample>& split(const std::string& name) const;
};

// One sample, reproducible from (spec.seed, split, index) alone.
TripleSample generate_sample(const CorpusSpec& spec, const Vocab& vocab,
                             const GlyphSet& glyphs, int split_id, int index);

Dataset generate_corpus(const CorpusSpec& spec);

// On-disk layout: manifest.jsonl + corpus_spec.json + images/<split>_<idx>.img.
// Image files: magic "MTKDIMG1", u32 H, W, C, then H*W*C little-endian f32,
// row-major.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_image_file(const TextImage& img, const std::filesystem::path& path);
TextImage read_image_file(const std::filesystem::path& path);

// Collated training batch. Images are padded on the right with zero columns,
// token sequences with PAD; masks flag real positions. Row layouts:
//   images:   (B * 32 * img_w) x 1, row = b*32*img_w + r*img_w + c
//   tokens:   index = b * len + i
struct Batch {
  int size = 0;     // B
  int img_w = 0;    // padded width, = glyph_width * src_len
  Mat images;       // (B * 32 * img_w) x 1

  int src_len = 0;  // padded character count (no BOS/EOS)
  std::vector<int> src_ids;
  std::vector<uint8_t> src_mask;

  // decoder view of the source (BOS ... EOS), for recognition training
  int tir_steps = 0;
  std::vector<int> tir_prefix, tir_gold;
  std::vector<uint8_t> tir_mask;

  // decoder view of the target (BOS ... EOS)
  int tgt_steps = 0;
  std::vector<int> tgt_prefix, tgt_gold;
  std::vector<uint8_t> tgt_mask;

  std::vector<int> char_len;      // true character count per sample
  std::vector<int> sample_index;  // positions in the source list (make_batches)
};

Batch collate(std::span<const TripleSample* const> samples);
Batch collate(const std::vector<TripleSample>& samples);

std::vector<Batch> make_batches(const std::vector<TripleSample>& samples,
                                int batch_size,
                                const std::vector<int>* order = nullptr);

}  // namespace timt::corpus
