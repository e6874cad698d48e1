#include "timt/model/models.hpp"
#include "timt/util/sha256.hpp"

#include <doctest.h>

#include <filesystem>

using namespace timt;
using namespace timt::model;
using nn::Graph;
using nn::TrainMode;
using nn::Var;

namespace {

ModelConfig tiny_config(int vocab = 8, uint64_t seed = 3) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.max_len = 16;
  c.dropout = 0.0;
  c.seed = seed;
  return c;
}

Mat flat_images(const std::vector<corpus::TextImage>& imgs, int img_w) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(imgs.size()) * 32 * img_w, 1);
  for (size_t b = 0; b < imgs.size(); ++b) {
    for (int r = 0; r < 32; ++r) {
      for (int c = 0; c < imgs[b].width(); ++c) {
        out(static_cast<Eigen::Index>(b) * 32 * img_w + r * img_w + c, 0) =
            imgs[b].pixels(r, c);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("image_encode shapes, masks, determinism, errors") {
  corpus::GlyphSet glyphs("abcd", 8, 11);
  ImageToTextModel m(tiny_config());

  std::vector<corpus::TextImage> imgs = {corpus::render_text_image("abcd", glyphs),
                                         corpus::render_text_image("ab", glyphs)};
  const int img_w = 40;  // padded to 5 characters
  Mat flat = flat_images(imgs, img_w);
  std::vector<int> char_len = {4, 2};

  Graph g(false);
  FeatureSeq f = m.encode_image(g, flat, 2, img_w, char_len, TrainMode{});
  CHECK(f.batch == 2);
  CHECK(f.len == 5);
  CHECK(g.value(f.data).rows() == 10);
  CHECK(g.value(f.data).cols() == 16);

  // mask marks only real character positions
  std::vector<uint8_t> expect_mask = {1, 1, 1, 1, 0, 1, 1, 0, 0, 0};
  CHECK(f.mask == expect_mask);

  Graph g2(false);
  FeatureSeq f2 = m.encode_image(g2, flat, 2, img_w, char_len, TrainMode{});
  CHECK(g.value(f.data) == g2.value(f2.data));

  Graph g3(false);
  CHECK_THROWS_AS(m.encode_image(g3, flat, 2, 39, char_len, TrainMode{}),
                  std::invalid_argument);
  Mat two_channel = Mat::Zero(2 * 32 * img_w, 2);
  CHECK_THROWS_AS(m.encode_image(g3, two_channel, 2, img_w, char_len, TrainMode{}),
                  std::invalid_argument);
  Mat bad_height = Mat::Zero(2 * 16 * img_w, 1);
  CHECK_THROWS_AS(m.encode_image(g3, bad_height, 2, img_w, char_len, TrainMode{}),
                  std::invalid_argument);
}

TEST_CASE("text_encode embeds one row per token and repeats rows for equal ids") {
  TextToTextModel m(tiny_config());
  Graph g(false);
  std::vector<int> ids = {4, 5, 4, 0};
  std::vector<uint8_t> mask = {1, 1, 1, 0};
  FeatureSeq f = m.encode_text(g, ids, 1, 4, mask, TrainMode{});
  const Mat& v = g.value(f.data);
  CHECK(v.rows() == 4);
  CHECK(v.cols() == 16);
  CHECK(v.row(0) == v.row(2));  // same id, same embedding
  CHECK(v.row(0) != v.row(1));
  CHECK(f.mask[3] == 0);

  std::vector<int> bad = {99, 0, 0, 0};
  CHECK_THROWS_AS(m.encode_text(g, bad, 1, 4, mask, TrainMode{}),
                  std::invalid_argument);
}

TEST_CASE("sequential_encode preserves shape and is permutation-equivariant without positions") {
  TextToTextModel m(tiny_config());
  Graph g(false);

  const int L = 5, d = 16;
  Rng rng(21);
  Mat x(L, d);
  for (int r = 0; r < L; ++r) {
    for (int c = 0; c < d; ++c) x(r, c) = rng.uniform(-1, 1);
  }
  std::vector<uint8_t> mask(L, 1);

  FeatureSeq fin;
  fin.data = g.input(x);
  fin.batch = 1;
  fin.len = L;
  fin.mask = mask;
  FeatureSeq fs = m.encode_sequence(g, fin, TrainMode{}, /*add_positions=*/false);
  const Mat y = g.value(fs.data);
  CHECK(y.rows() == L);
  CHECK(y.cols() == d);

  // swap two positions; the output must swap identically
  Mat xp = x;
  xp.row(1).swap(xp.row(3));
  Graph g2(false);
  FeatureSeq fin2;
  fin2.data = g2.input(xp);
  fin2.batch = 1;
  fin2.len = L;
  fin2.mask = mask;
  Mat yp = g2.value(m.encode_sequence(g2, fin2, TrainMode{}, false).data);
  CHECK((yp.row(1) - y.row(3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((yp.row(3) - y.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((yp.row(0) - y.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sequential_encode masked tail cannot influence unmasked outputs") {
  TextToTextModel m(tiny_config());
  const int L = 6, d = 16;
  Rng rng(22);
  Mat x(L, d);
  for (int r = 0; r < L; ++r) {
    for (int c = 0; c < d; ++c) x(r, c) = rng.uniform(-1, 1);
  }
  std::vector<uint8_t> mask = {1, 1, 1, 1, 0, 0};

  auto run = [&](const Mat& input) {
    Graph g(false);
    FeatureSeq fin;
    fin.data = g.input(input);
    fin.batch = 1;
    fin.len = L;
    fin.mask = mask;
    return g.value(m.encode_sequence(g, fin, TrainMode{}).data);
  };

  Mat y1 = run(x);
  Mat x2 = x;
  x2.row(4).setConstant(7.5);
  x2.row(5).setConstant(-3.25);
  Mat y2 = run(x2);
  for (int r = 0; r < 4; ++r) {
    CHECK((y1.row(r) - y2.row(r)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("decode_teacher_forced shape, normalization, causality") {
  corpus::GlyphSet glyphs("abcd", 8, 31);
  ImageToTextModel m(tiny_config());
  corpus::TextImage img = corpus::render_text_image("abc", glyphs);

  std::vector<int> prefix = {corpus::kBosId, 4, 5, 6};
  StepDistributions d = m.decode_teacher_forced(img, prefix);
  CHECK(d.probs.rows() == 4);
  CHECK(d.probs.cols() == 8);
  for (Eigen::Index r = 0; r < d.probs.rows(); ++r) {
    CHECK(d.probs.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(d.probs.row(r).minCoeff() >= 0.0);
  }

  // altering prefix position k leaves rows < k bit-identical
  std::vector<int> altered = prefix;
  altered[2] = 7;
  StepDistributions d2 = m.decode_teacher_forced(img, altered);
  CHECK((d.logits.row(0) - d2.logits.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d.logits.row(1) - d2.logits.row(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d.logits.row(2) - d2.logits.row(2)).cwiseAbs().maxCoeff() != 0.0);

  CHECK_THROWS_AS(m.decode_teacher_forced(img, {}), std::invalid_argument);
  CHECK_THROWS_AS(m.decode_teacher_forced(img, {4, 5}), std::invalid_argument);
}

TEST_CASE("greedy_decode EOS stop, tie break, self-consistency") {
  corpus::GlyphSet glyphs("abcd", 8, 41);
  corpus::TextImage img = corpus::render_text_image("ab", glyphs);

  ImageToTextModel forced(tiny_config(8, 5));
  // constant logits that favour EOS -> empty output immediately
  forced.params().find("out_proj.w")->value.setZero();
  forced.params().find("out_proj.b")->value.setZero();
  forced.params().find("out_proj.b")->value(0, corpus::kEosId) = 10.0;
  CHECK(forced.greedy_decode(img, 6).empty());

  // all logits tied -> lowest id everywhere, runs to max_len
  forced.params().find("out_proj.b")->value.setZero();
  std::vector<int> tied = forced.greedy_decode(img, 4);
  CHECK(tied == std::vector<int>{0, 0, 0, 0});

  CHECK_THROWS_AS(forced.greedy_decode(img, 0), std::invalid_argument);

  // greedy output equals stepwise argmax of the teacher-forced pass
  ImageToTextModel m(tiny_config(8, 6));
  std::vector<int> out = m.greedy_decode(img, 6);
  std::vector<int> prefix = {corpus::kBosId};
  prefix.insert(prefix.end(), out.begin(), out.end());
  StepDistributions d = m.decode_teacher_forced(img, prefix);
  for (size_t i = 0; i < out.size(); ++i) {
    CHECK(argmax_lowest(d.logits.row(static_cast<Eigen::Index>(i))) == out[i]);
  }
  if (out.size() < 6) {
    CHECK(argmax_lowest(d.logits.row(static_cast<Eigen::Index>(out.size()))) ==
          corpus::kEosId);
  }
}

TEST_CASE("count_params matches hand counts") {
  nn::ParamStore store;
  Rng rng(1);
  nn::make_linear(store, "lin", 4, 3, rng);
  CHECK(store.count() == 15);  // 4*3 + 3

  nn::ParamStore store2;
  nn::make_embedding(store2, "emb", 6, 8, rng);
  CHECK(store2.count() == 48);

  ModelConfig dflt;
  dflt.src_vocab = 30;
  dflt.tgt_vocab = 30;
  ImageToTextModel student(dflt);
  ImageToTextModel tir(dflt);
  TextToTextModel mt(dflt);
  CHECK(student.count_params() < tir.count_params() + mt.count_params());
}

TEST_CASE("checkpoint save/load round trip with validation") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "timt_ckpt_test.ckpt";

  ImageToTextModel m(tiny_config(8, 77));
  save_checkpoint(path, kKindImageToText, m.config(), m.params());

  CheckpointInfo info = peek_checkpoint(path);
  CHECK(info.kind == kKindImageToText);
  CHECK(info.config.d_model == 16);

  ImageToTextModel loaded = load_image_model(path);
  CHECK(loaded.count_params() == m.count_params());

  // float32 storage is stable: saving the loaded model reproduces the bytes
  const fs::path path2 = fs::temp_directory_path() / "timt_ckpt_test2.ckpt";
  save_checkpoint(path2, kKindImageToText, loaded.config(), loaded.params());
  CHECK(util::sha256_file(path) == util::sha256_file(path2));

  // behaviour carries over the round trip
  corpus::GlyphSet glyphs("abcd", 8, 3);
  corpus::TextImage img = corpus::render_text_image("abc", glyphs);
  CHECK(m.greedy_decode(img, 8) == loaded.greedy_decode(img, 8));

  // kind and shape validation
  CHECK_THROWS_AS(load_text_model(path), std::invalid_argument);
  ModelConfig other = tiny_config(8, 77);
  other.d_model = 8;
  other.d_ff = 16;
  ImageToTextModel wrong(other);
  CHECK_THROWS_AS(load_checkpoint_params(path, wrong.params()), std::runtime_error);

  fs::remove(path);
  fs::remove(path2);
}
