#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camml/encoders.hpp"
#include "camml/perceiver.hpp"
#include "camml/tensor.hpp"

namespace camml {

struct GeneratorConfig {
  size_t d = 64;
  size_t layers = 2;
  size_t heads = 8;
  size_t vocab = 512;
  size_t max_seq = 256;

  void validate() const;
};

struct GeneratorInput {
  ContextPrefix prefix;        // M x d (or L x d for the no-perceiver baseline)
  Tensor query_image_tokens;   // T_qimg x d, post-projector; may be empty
  TokenizedText query_text;    // BOS ... EOS ids
  std::vector<int> target_ids; // answer tokens, empty at inference
};

struct AssembledInput {
  Tensor embeds;            // T_total x d, positional signal included
  std::vector<int> ids;     // token id per row (PAD for non-token rows)
  std::vector<bool> loss_mask;  // true exactly on positions predicting targets
};

struct DecoderLayerParams {
  Tensor ln_attn_gain, ln_attn_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln_ffn_gain, ln_ffn_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Decoder-only causal language model consuming [prefix ; projected query
// image ; query text ; target] rows. Output head starts at zero, so the
// initial distribution is uniform and the initial loss is ln(vocab).
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& cfg, uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }

  AssembledInput assemble(const GeneratorInput& input) const;
  Tensor forward(const Tensor& embeds) const;
  Tensor loss(const Tensor& logits, const std::vector<int>& ids,
              const std::vector<bool>& loss_mask) const;

  // Greedy decoding until EOS or max_new tokens; EOS is included in the
  // output when produced.
  std::vector<int> generate(const GeneratorInput& input, size_t max_new) const;

  const Tensor& token_embedding() const { return tok_emb_; }
  std::vector<Parameter*> parameters();

 private:
  GeneratorConfig cfg_;
  Tensor tok_emb_;  // vocab x d
  Tensor pos_emb_;  // max_seq x d
  std::vector<DecoderLayerParams> layers_;
  Tensor ln_final_gain_, ln_final_bias_;
  Tensor head_w_;  // d x vocab, zero-initialized
  Tensor head_b_;
  std::vector<Parameter> params_;
};

}  // namespace camml
