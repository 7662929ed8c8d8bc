#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camml/encoders.hpp"
#include "camml/tensor.hpp"

namespace camml {

struct PerceiverConfig {
  size_t layers = 2;
  size_t d = 64;       // token width (input/output of every perceiver)
  size_t width = 768;  // internal hidden size of attention/feed-forward
  size_t heads = 8;
  size_t m = 128;      // prefix token budget, must be even
  bool share_context_weights = true;

  void validate() const;
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv;  // d -> width
  Tensor wo, bo;                  // width -> d, zero-initialized
};

struct PerceiverLayerParams {
  Tensor ln_self_gain, ln_self_bias;
  AttentionParams self_attn;
  Tensor ln_cross_gain, ln_cross_bias;
  Tensor ln_kv_gain, ln_kv_bias;
  AttentionParams cross_attn;
  Tensor ln_ffn_gain, ln_ffn_bias;
  Tensor ffn_w1, ffn_b1;  // d -> width
  Tensor ffn_w2, ffn_b2;  // width -> d, zero-initialized
};

// A stack of residual pre-norm perceiver layers: self-attention over the
// primary stream, cross-attention into the context stream, feed-forward.
// Output projections start at zero, so each layer is the identity at init.
// An empty context stream skips the cross-attention sublayer.
class PerceiverStack {
 public:
  PerceiverStack() = default;
  PerceiverStack(const PerceiverConfig& cfg, const std::string& prefix, uint64_t seed);

  Tensor forward(const Tensor& primary, const Tensor& context) const;
  void collect_parameters(std::vector<Parameter*>& out);
  const std::string& prefix() const { return prefix_; }

 private:
  PerceiverConfig cfg_;
  std::string prefix_;
  std::vector<PerceiverLayerParams> layers_;
  std::vector<Parameter> params_;
};

struct LatentQueries {
  Tensor h_img;  // M/2 x d, trainable
  Tensor h_txt;  // M/2 x d, trainable
};

enum class AblationMode { full, no_perceiver, no_vp, no_lp };

const char* ablation_name(AblationMode mode);
AblationMode ablation_from_name(const std::string& name);

struct ContextPrefix {
  Tensor tokens;  // M x d in fixed-budget modes, L x d for no_perceiver
  std::vector<uint64_t> provenance;
  bool variable_length = false;
};

// Vision/Language/Context Perceivers plus the learnable latent queries.
class PerceiverModel {
 public:
  PerceiverModel() = default;
  PerceiverModel(const PerceiverConfig& cfg, uint64_t seed);

  const PerceiverConfig& config() const { return cfg_; }

  // Per-sample couplers. Both run the same layer recipe with the streams
  // swapped; the language side skips cross-attention when there is no image.
  Tensor vision_perceive(const Tensor& vision_tokens, const Tensor& text_tokens) const;
  Tensor language_perceive(const Tensor& text_tokens, const Tensor& vision_tokens) const;

  // Compresses a concatenated stream into the latent-query rows.
  Tensor context_perceive(const Tensor& latents, const Tensor& stream, bool text_stream) const;

  // Full pipeline: per-sample couplers -> stream concatenation -> context
  // compression -> M-row prefix (image half then text half).
  ContextPrefix fuse_contexts(const std::vector<EncodedContext>& contexts,
                              AblationMode mode = AblationMode::full) const;

  LatentQueries& latents() { return latents_; }
  const LatentQueries& latents() const { return latents_; }
  std::vector<Parameter*> parameters();

 private:
  const PerceiverStack& context_stack(bool text_stream) const;

  PerceiverConfig cfg_;
  PerceiverStack vp_, lp_;
  PerceiverStack cp_;             // used when weights are shared
  PerceiverStack cp_img_, cp_txt_;  // used otherwise
  LatentQueries latents_;
  std::vector<Parameter> latent_params_;
};

// Row-wise concatenation preserving per-sample order.
Tensor concat_streams(const std::vector<Tensor>& per_sample_outputs, size_t d);

}  // namespace camml
