#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "grad_check.hpp"
#include "camml/perceiver.hpp"

using namespace camml;

namespace {

PerceiverConfig small_config(size_t m = 8) {
  PerceiverConfig cfg;
  cfg.layers = 1;
  cfg.d = 8;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.m = m;
  cfg.share_context_weights = true;
  return cfg;
}

Tensor random_tokens(size_t rows, size_t d, std::mt19937_64& rng) {
  return Tensor::randn({rows, d}, rng, 1.0);
}

EncodedContext make_context(size_t t_img, size_t t_txt, size_t d, uint64_t id,
                            std::mt19937_64& rng) {
  EncodedContext c;
  c.vision_tokens = t_img > 0 ? random_tokens(t_img, d, rng) : Tensor::zeros({0, d});
  c.text_tokens = random_tokens(t_txt, d, rng);
  c.source_id = id;
  return c;
}

void randomize_parameters(PerceiverModel& model, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.3);
  for (auto* p : model.parameters()) {
    for (auto& v : *p->tensor.data) v = dist(rng);
  }
}

// Copies lp.* weights from the matching vp.* weights so the two couplers
// compute the same function.
void mirror_vp_into_lp(PerceiverModel& model) {
  std::map<std::string, Tensor> vp;
  for (auto* p : model.parameters()) {
    if (p->name.rfind("vp.", 0) == 0) vp.emplace(p->name.substr(3), p->tensor);
  }
  for (auto* p : model.parameters()) {
    if (p->name.rfind("lp.", 0) == 0) {
      *p->tensor.data = *vp.at(p->name.substr(3)).data;
    }
  }
}

}  // namespace

TEST_CASE("perceiver config validation") {
  PerceiverConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.m = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.layers = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("vision_perceive preserves shape and is identity at init") {
  PerceiverModel model(small_config(), 11);
  std::mt19937_64 rng(1);
  for (size_t t_img : {1u, 4u, 16u}) {
    Tensor v = random_tokens(t_img, 8, rng);
    Tensor u = random_tokens(3, 8, rng);
    Tensor out = model.vision_perceive(v, u);
    REQUIRE(out.shape == v.shape);
    // Zero-initialized output projections make every sublayer residual.
    for (size_t i = 0; i < out.numel(); ++i) {
      CHECK((*out.data)[i] == doctest::Approx((*v.data)[i]));
    }
  }
  CHECK_THROWS_AS(model.vision_perceive(random_tokens(2, 8, rng), Tensor::zeros({0, 8})),
                  DataError);
}

TEST_CASE("language_perceive skips cross-attention for text-only samples") {
  PerceiverModel model(small_config(), 13);
  randomize_parameters(model, 2);
  std::mt19937_64 rng(3);
  for (size_t t_txt : {2u, 9u}) {
    Tensor u = random_tokens(t_txt, 8, rng);
    CHECK(model.language_perceive(u, Tensor::zeros({0, 8})).shape ==
          std::vector<size_t>{t_txt, 8});
  }
  // With an empty vision stream the output must be defined and must equal
  // the self-attention + feed-forward path; adding a context changes it.
  Tensor u = random_tokens(4, 8, rng);
  Tensor without = model.language_perceive(u, Tensor::zeros({0, 8}));
  Tensor with_ctx = model.language_perceive(u, random_tokens(3, 8, rng));
  bool differs = false;
  for (size_t i = 0; i < without.numel(); ++i) {
    if ((*without.data)[i] != (*with_ctx.data)[i]) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("vision and language perceivers share one implementation") {
  PerceiverModel model(small_config(), 17);
  randomize_parameters(model, 4);
  mirror_vp_into_lp(model);
  std::mt19937_64 rng(5);
  Tensor a = random_tokens(3, 8, rng);
  Tensor b = random_tokens(5, 8, rng);
  Tensor vision_out = model.vision_perceive(a, b);
  Tensor language_out = model.language_perceive(a, b);
  CHECK(*vision_out.data == *language_out.data);
}

TEST_CASE("concat_streams preserves order and row counts") {
  std::mt19937_64 rng(7);
  Tensor one = random_tokens(4, 8, rng);
  Tensor e1 = concat_streams({one}, 8);
  CHECK(*e1.data == *one.data);

  Tensor two = random_tokens(4, 8, rng);
  Tensor e2 = concat_streams({one, two}, 8);
  REQUIRE(e2.shape == std::vector<size_t>{8, 8});
  for (size_t j = 0; j < 8; ++j) CHECK(e2.at(0, j) == one.at(0, j));
  for (size_t j = 0; j < 8; ++j) CHECK(e2.at(4, j) == two.at(0, j));

  Tensor three = random_tokens(16, 8, rng);
  Tensor single = random_tokens(1, 8, rng);
  CHECK(concat_streams({one, three, single}, 8).shape == std::vector<size_t>{21, 8});
}

TEST_CASE("context_perceive always emits M/2 rows") {
  PerceiverModel model(small_config(8), 19);
  randomize_parameters(model, 6);
  std::mt19937_64 rng(8);
  for (size_t rows : {0u, 1u, 200u}) {
    Tensor stream = rows > 0 ? random_tokens(rows, 8, rng) : Tensor::zeros({0, 8});
    Tensor out = model.context_perceive(model.latents().h_img, stream, false);
    CHECK(out.shape == std::vector<size_t>{4, 8});
  }
}

TEST_CASE("context_perceive is identity at init") {
  PerceiverModel model(small_config(8), 23);
  std::mt19937_64 rng(9);
  Tensor stream = random_tokens(6, 8, rng);
  Tensor out = model.context_perceive(model.latents().h_txt, stream, true);
  for (size_t i = 0; i < out.numel(); ++i) {
    CHECK((*out.data)[i] == doctest::Approx((*model.latents().h_txt.data)[i]));
  }
}

TEST_CASE("context_perceive is invariant to row permutations of the stream") {
  PerceiverModel model(small_config(8), 29);
  randomize_parameters(model, 10);
  std::mt19937_64 rng(11);
  Tensor stream = random_tokens(7, 8, rng);

  Tensor permuted = Tensor::zeros({7, 8});
  for (size_t i = 0; i < 7; ++i)
    for (size_t j = 0; j < 8; ++j) permuted.at(i, j) = stream.at(6 - i, j);

  Tensor a = model.context_perceive(model.latents().h_img, stream, false);
  Tensor b = model.context_perceive(model.latents().h_img, permuted, false);
  for (size_t i = 0; i < a.numel(); ++i) {
    CHECK(std::fabs((*a.data)[i] - (*b.data)[i]) < 1e-9);
  }
}

TEST_CASE("shared context perceiver gives identical outputs for identical inputs") {
  PerceiverModel model(small_config(8), 31);
  randomize_parameters(model, 12);
  std::mt19937_64 rng(13);
  Tensor h = random_tokens(4, 8, rng);
  Tensor e = random_tokens(5, 8, rng);
  Tensor img_path = model.context_perceive(h, e, false);
  Tensor txt_path = model.context_perceive(h, e, true);
  CHECK(*img_path.data == *txt_path.data);
}

TEST_CASE("fuse_contexts emits exactly M rows for every N and length mix") {
  PerceiverConfig cfg = small_config(8);
  PerceiverModel model(cfg, 37);
  randomize_parameters(model, 14);
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<size_t> img_len(0, 20);
  std::uniform_int_distribution<size_t> txt_len(1, 20);

  for (size_t n : {1u, 2u, 3u, 8u}) {
    std::vector<EncodedContext> contexts;
    for (size_t i = 0; i < n; ++i) {
      contexts.push_back(make_context(img_len(rng), txt_len(rng), 8, i, rng));
    }
    ContextPrefix prefix = model.fuse_contexts(contexts);
    CHECK(prefix.tokens.shape == std::vector<size_t>{cfg.m, cfg.d});
    CHECK_FALSE(prefix.variable_length);
    REQUIRE(prefix.provenance.size() == n);
  }
  CHECK_THROWS_AS(model.fuse_contexts({}), DataError);
}

TEST_CASE("no_perceiver mode returns the raw concatenation of length L") {
  PerceiverModel model(small_config(8), 41);
  std::mt19937_64 rng(16);
  std::vector<EncodedContext> contexts;
  contexts.push_back(make_context(4, 3, 8, 0, rng));
  contexts.push_back(make_context(4, 5, 8, 1, rng));
  ContextPrefix prefix = model.fuse_contexts(contexts, AblationMode::no_perceiver);
  CHECK(prefix.tokens.shape == std::vector<size_t>{16, 8});  // L = 4+3+4+5
  CHECK(prefix.variable_length);
  // First block is sample 0's raw vision tokens.
  for (size_t j = 0; j < 8; ++j) {
    CHECK(prefix.tokens.at(0, j) == contexts[0].vision_tokens.at(0, j));
  }
}

TEST_CASE("fuse_contexts full mode matches a hand-unrolled composition") {
  PerceiverConfig cfg = small_config(8);
  cfg.d = 4;
  cfg.width = 4;
  cfg.heads = 1;
  PerceiverModel model(cfg, 43);
  randomize_parameters(model, 17);
  std::mt19937_64 rng(18);

  EncodedContext ctx = make_context(1, 1, 4, 5, rng);
  ContextPrefix fused = model.fuse_contexts({ctx});

  Tensor v_out = model.vision_perceive(ctx.vision_tokens, ctx.text_tokens);
  Tensor u_out = model.language_perceive(ctx.text_tokens, ctx.vision_tokens);
  Tensor h_img = model.context_perceive(model.latents().h_img, v_out, false);
  Tensor h_txt = model.context_perceive(model.latents().h_txt, u_out, true);
  Tensor expected = concat_rows({h_img, h_txt});

  CHECK(*fused.tokens.data == *expected.data);
}

TEST_CASE("ablation bypasses feed raw tokens to the context perceiver") {
  PerceiverConfig cfg = small_config(8);
  PerceiverModel model(cfg, 47);
  randomize_parameters(model, 19);
  std::mt19937_64 rng(20);
  EncodedContext ctx = make_context(3, 4, 8, 9, rng);

  ContextPrefix no_vp = model.fuse_contexts({ctx}, AblationMode::no_vp);
  Tensor u_out = model.language_perceive(ctx.text_tokens, ctx.vision_tokens);
  Tensor expected_img = model.context_perceive(model.latents().h_img, ctx.vision_tokens, false);
  Tensor expected_txt = model.context_perceive(model.latents().h_txt, u_out, true);
  Tensor expected = concat_rows({expected_img, expected_txt});
  CHECK(*no_vp.tokens.data == *expected.data);

  ContextPrefix no_lp = model.fuse_contexts({ctx}, AblationMode::no_lp);
  Tensor v_out = model.vision_perceive(ctx.vision_tokens, ctx.text_tokens);
  Tensor expected_img2 = model.context_perceive(model.latents().h_img, v_out, false);
  Tensor expected_txt2 = model.context_perceive(model.latents().h_txt, ctx.text_tokens, true);
  Tensor expected2 = concat_rows({expected_img2, expected_txt2});
  CHECK(*no_lp.tokens.data == *expected2.data);
}

TEST_CASE("unshared context perceiver produces distinct streams and parameters") {
  PerceiverConfig cfg = small_config(8);
  cfg.share_context_weights = false;
  PerceiverModel model(cfg, 53);
  randomize_parameters(model, 21);

  size_t cp_img = 0, cp_txt = 0, cp_shared = 0;
  for (auto* p : model.parameters()) {
    if (p->name.rfind("cp.img.", 0) == 0) ++cp_img;
    if (p->name.rfind("cp.txt.", 0) == 0) ++cp_txt;
    if (p->name.rfind("cp.layer", 0) == 0) ++cp_shared;
  }
  CHECK(cp_img > 0);
  CHECK(cp_img == cp_txt);
  CHECK(cp_shared == 0);

  std::mt19937_64 rng(22);
  Tensor h = random_tokens(4, 8, rng);
  Tensor e = random_tokens(5, 8, rng);
  Tensor img_path = model.context_perceive(h, e, false);
  Tensor txt_path = model.context_perceive(h, e, true);
  CHECK(*img_path.data != *txt_path.data);
}

TEST_CASE("per-sample order flows through the couplers, not the compressor") {
  // Exercising the boundary: the context perceiver ignores row order, but
  // reordering whole samples changes the per-sample coupling inputs, so
  // fuse outputs may legitimately differ. Both orders must produce valid
  // M-row prefixes.
  PerceiverConfig cfg = small_config(8);
  PerceiverModel model(cfg, 67);
  randomize_parameters(model, 25);
  std::mt19937_64 rng(26);
  std::vector<EncodedContext> fwd{make_context(2, 3, 8, 0, rng), make_context(4, 2, 8, 1, rng)};
  std::vector<EncodedContext> rev{fwd[1], fwd[0]};

  ContextPrefix a = model.fuse_contexts(fwd);
  ContextPrefix b = model.fuse_contexts(rev);
  CHECK(a.tokens.shape == b.tokens.shape);
  CHECK(a.provenance == std::vector<uint64_t>{0, 1});
  CHECK(b.provenance == std::vector<uint64_t>{1, 0});
}

TEST_CASE("every perceiver parameter is trainable and uniquely named") {
  PerceiverModel model(small_config(8), 59);
  std::set<std::string> names;
  bool saw_h_img = false, saw_h_txt = false;
  for (auto* p : model.parameters()) {
    CHECK_FALSE(p->frozen);
    CHECK(p->tensor.requires_grad);
    CHECK(names.insert(p->name).second);
    if (p->name == "latents.H_img") saw_h_img = true;
    if (p->name == "latents.H_txt") saw_h_txt = true;
  }
  CHECK(saw_h_img);
  CHECK(saw_h_txt);
}

TEST_CASE("gradients flow from the prefix into every perceiver parameter group") {
  PerceiverConfig cfg = small_config(4);
  cfg.layers = 1;
  PerceiverModel model(cfg, 61);
  randomize_parameters(model, 23);
  std::mt19937_64 rng(24);

  EncodedContext ctx = make_context(2, 3, 8, 0, rng);
  Tensor readout = Tensor::randn({cfg.m, cfg.d}, rng, 1.0);

  auto params = model.parameters();
  std::vector<Tensor> tensors;
  for (auto* p : params) tensors.push_back(p->tensor);

  auto forward = [&] {
    ContextPrefix prefix = model.fuse_contexts({ctx});
    return sum(mul(prefix.tokens, readout));
  };
  auto res = check_gradients(forward, tensors);
  CHECK_MESSAGE(res.ok, res.detail);

  // Latent queries and every stack see non-zero gradients.
  for (auto* p : params) p->tensor.zero_grad();
  backward(forward());
  auto group_has_grad = [&](const std::string& prefix_name) {
    for (auto* p : params) {
      if (p->name.rfind(prefix_name, 0) != 0) continue;
      for (double g : *p->tensor.grad) {
        if (g != 0.0) return true;
      }
    }
    return false;
  };
  CHECK(group_has_grad("latents.H_img"));
  CHECK(group_has_grad("latents.H_txt"));
  CHECK(group_has_grad("vp."));
  CHECK(group_has_grad("lp."));
  CHECK(group_has_grad("cp."));
}
