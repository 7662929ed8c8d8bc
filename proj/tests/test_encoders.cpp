#include <cmath>
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "camml/encoders.hpp"

using namespace camml;

namespace {

RawImage make_image(size_t w, size_t h, double fill) {
  RawImage img;
  img.width = w;
  img.height = h;
  img.pixels.assign(w * h * 3, fill);
  return img;
}

RawImage random_image(size_t w, size_t h, std::mt19937_64& rng) {
  RawImage img = make_image(w, h, 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& p : img.pixels) p = unit(rng);
  return img;
}

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.seed = 9;
  cfg.d = 16;
  cfg.d_r = 12;
  cfg.patch = 4;
  cfg.vocab = 64;
  return cfg;
}

}  // namespace

TEST_CASE("tokenize basics") {
  CHECK(tokenize("", 512).ids == std::vector<int>{kBosToken, kEosToken});
  CHECK(tokenize("hello world", 512).ids == tokenize("hello world", 512).ids);

  auto t = tokenize("a b a", 512);
  REQUIRE(t.ids.size() == 5);
  CHECK(t.ids.front() == kBosToken);
  CHECK(t.ids.back() == kEosToken);
  CHECK(t.ids[1] == t.ids[3]);
  CHECK(t.ids[1] != t.ids[2]);

  // Case folding and punctuation splitting.
  CHECK(tokenize("Hello, WORLD!", 512).ids == tokenize("hello world", 512).ids);
  for (int id : tokenize("some ordinary words here", 512).ids) {
    if (id == kBosToken || id == kEosToken) continue;
    CHECK(id >= kFirstWordToken);
    CHECK(id < 512);
  }
}

TEST_CASE("encode_image token counts and position-only zero image") {
  EncoderConfig cfg = small_config();
  VisionEncoder enc(cfg);

  RawImage zero8 = make_image(8, 8, 0.0);
  Tensor t8 = enc.encode(zero8);
  CHECK(t8.shape == std::vector<size_t>{4, cfg.d});
  // All-zero image: every token is purely the position signal, so tokens at
  // different grid cells differ while the linear-map contribution is zero.
  bool any_diff = false;
  for (size_t j = 0; j < cfg.d; ++j) any_diff = any_diff || t8.at(0, j) != t8.at(3, j);
  CHECK(any_diff);

  RawImage img16 = make_image(16, 16, 0.2);
  CHECK(enc.encode(img16).shape == std::vector<size_t>{16, cfg.d});

  // Zero-content tokens depend on grid position alone: the 8x8 image's
  // 2x2 grid matches the same positions inside a zero 16x16's 4x4 grid.
  Tensor t16 = enc.encode(make_image(16, 16, 0.0));
  const size_t map[4] = {0, 1, 4, 5};  // (0,0) (0,1) (1,0) (1,1) in a 4-wide grid
  for (size_t r = 0; r < 4; ++r)
    for (size_t j = 0; j < cfg.d; ++j) CHECK(t8.at(r, j) == t16.at(map[r], j));
}

TEST_CASE("encode_image is deterministic and rejects misaligned sizes") {
  EncoderConfig cfg = small_config();
  VisionEncoder enc(cfg);
  std::mt19937_64 rng(4);
  RawImage img = random_image(8, 8, rng);
  Tensor a = enc.encode(img);
  Tensor b = enc.encode(img);
  CHECK(*a.data == *b.data);

  RawImage bad = make_image(7, 8, 0.0);
  try {
    enc.encode(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("4") != std::string::npos);  // names the patch size
  }
}

TEST_CASE("embed_text is an exact row lookup") {
  EncoderConfig cfg = small_config();
  TextEmbedder emb(cfg);
  TokenizedText toks;
  toks.ids = {1, 2};
  Tensor out = emb.embed(toks);
  REQUIRE(out.shape == std::vector<size_t>{2, cfg.d});
  for (size_t j = 0; j < cfg.d; ++j) {
    CHECK(out.at(0, j) == emb.table().at(1, j));
    CHECK(out.at(1, j) == emb.table().at(2, j));
  }

  TokenizedText repeated;
  repeated.ids = {5, 5};
  Tensor r = emb.embed(repeated);
  for (size_t j = 0; j < cfg.d; ++j) CHECK(r.at(0, j) == r.at(1, j));

  TokenizedText bad;
  bad.ids = {static_cast<int>(cfg.vocab)};
  CHECK_THROWS_AS(emb.embed(bad), DataError);
}

TEST_CASE("retrieval embeddings are unit norm, deterministic and cross-modal") {
  EncoderConfig cfg = small_config();
  RetrievalEmbedder ret(cfg);
  std::mt19937_64 rng(8);

  RetrievalEmbedding img_e = ret.embed_image(random_image(16, 16, rng));
  RetrievalEmbedding txt_e = ret.embed_text("a handful of words");
  CHECK(img_e.vector.size() == cfg.d_r);
  CHECK(txt_e.vector.size() == cfg.d_r);

  for (const auto& e : {img_e, txt_e}) {
    double norm = 0.0;
    for (double v : e.vector) norm += v * v;
    CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-9);
  }

  RetrievalEmbedding txt_e2 = ret.embed_text("a handful of words");
  CHECK(txt_e.vector == txt_e2.vector);

  double cos = 0.0;
  for (size_t i = 0; i < cfg.d_r; ++i) cos += txt_e.vector[i] * txt_e.vector[i];
  CHECK(cos == doctest::Approx(1.0));
}

TEST_CASE("projector maps zero to zero and preserves token count") {
  Projector proj(16, 16, 3);
  Tensor zero = Tensor::zeros({4, 16});
  Tensor out = proj.forward(zero);
  for (size_t i = 0; i < out.numel(); ++i) CHECK((*out.data)[i] == 0.0);

  for (size_t t : {1u, 4u, 16u}) {
    Tensor in = Tensor::zeros({t, 16});
    CHECK(proj.forward(in).shape == std::vector<size_t>{t, 16});
  }
  CHECK_THROWS_AS(proj.forward(Tensor::zeros({2, 8})), DimensionError);
}

TEST_CASE("projector gradient matches finite differences") {
  Projector proj(8, 8, 21);
  std::mt19937_64 rng(13);
  Tensor in = Tensor::randn({3, 8}, rng, 1.0);
  Tensor w = Tensor::randn({3, 8}, rng, 1.0);
  auto params = proj.parameters();
  std::vector<Tensor> tensors;
  for (auto* p : params) tensors.push_back(p->tensor);
  auto forward = [&] { return sum(mul(proj.forward(in), w)); };
  auto res = check_gradients(forward, tensors);
  CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("frozen encoder parameters carry enc/ret prefixes and frozen flags") {
  EncoderConfig cfg = small_config();
  EncoderSet set(cfg);
  auto frozen = set.frozen_parameters();
  REQUIRE(frozen.size() == 4);
  for (const auto& p : frozen) {
    CHECK(p.frozen);
    const bool enc = p.name.rfind("enc.", 0) == 0;
    const bool ret = p.name.rfind("ret.", 0) == 0;
    CHECK((enc || ret));
    CHECK_FALSE(p.tensor.requires_grad);
  }
}

TEST_CASE("text-only samples produce an empty vision stream") {
  EncoderConfig cfg = small_config();
  EncoderSet set(cfg);
  EncodedContext ctx = set.encode_sample(std::nullopt, "just text", 7);
  CHECK(ctx.vision_tokens.rows() == 0);
  CHECK(ctx.text_tokens.rows() >= 3);
  CHECK(ctx.source_id == 7);

  std::mt19937_64 rng(2);
  RawImage img = random_image(8, 8, rng);
  EncodedContext both = set.encode_sample(img, "text and image", 8);
  CHECK(both.vision_tokens.rows() == 4);  // (8/4)^2
}
