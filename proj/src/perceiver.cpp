#include "camml/perceiver.hpp"

#include <cmath>

#include "camml/rng.hpp"

namespace camml {

void PerceiverConfig::validate() const {
  if (layers < 1) throw ConfigError("perceiver: layers must be >= 1");
  if (m == 0 || m % 2 != 0) {
    throw ConfigError("perceiver: M must be even and positive, got " + std::to_string(m));
  }
  if (heads == 0 || d % heads != 0 || width % heads != 0) {
    throw ConfigError("perceiver: d=" + std::to_string(d) + " and width=" +
                      std::to_string(width) + " must be divisible by heads=" +
                      std::to_string(heads));
  }
}

namespace {

AttentionParams make_attention(size_t d, size_t width, std::mt19937_64& rng) {
  AttentionParams p;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  p.wq = Tensor::randn({d, width}, rng, s, true);
  p.bq = Tensor::zeros({width}, true);
  p.wk = Tensor::randn({d, width}, rng, s, true);
  p.bk = Tensor::zeros({width}, true);
  p.wv = Tensor::randn({d, width}, rng, s, true);
  p.bv = Tensor::zeros({width}, true);
  p.wo = Tensor::zeros({width, d}, true);  // zero: layer is identity at init
  p.bo = Tensor::zeros({d}, true);
  return p;
}

Tensor attend(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in, size_t heads) {
  Tensor q = add_rowwise(matmul(q_in, p.wq), p.bq);
  Tensor k = add_rowwise(matmul(kv_in, p.wk), p.bk);
  Tensor v = add_rowwise(matmul(kv_in, p.wv), p.bv);
  Tensor att = attention(q, k, v, heads, false);
  return add_rowwise(matmul(att, p.wo), p.bo);
}

void collect_attention(std::vector<Parameter>& out, const std::string& prefix,
                       AttentionParams& p) {
  out.push_back({prefix + ".wq", p.wq, false});
  out.push_back({prefix + ".bq", p.bq, false});
  out.push_back({prefix + ".wk", p.wk, false});
  out.push_back({prefix + ".bk", p.bk, false});
  out.push_back({prefix + ".wv", p.wv, false});
  out.push_back({prefix + ".bv", p.bv, false});
  out.push_back({prefix + ".wo", p.wo, false});
  out.push_back({prefix + ".bo", p.bo, false});
}

}  // namespace

PerceiverStack::PerceiverStack(const PerceiverConfig& cfg, const std::string& prefix,
                               uint64_t seed)
    : cfg_(cfg), prefix_(prefix) {
  cfg_.validate();
  auto rng = substream(seed, prefix);
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  for (size_t l = 0; l < cfg.layers; ++l) {
    PerceiverLayerParams lp;
    lp.ln_self_gain = Tensor::full({cfg.d}, 1.0, true);
    lp.ln_self_bias = Tensor::zeros({cfg.d}, true);
    lp.self_attn = make_attention(cfg.d, cfg.width, rng);
    lp.ln_cross_gain = Tensor::full({cfg.d}, 1.0, true);
    lp.ln_cross_bias = Tensor::zeros({cfg.d}, true);
    lp.ln_kv_gain = Tensor::full({cfg.d}, 1.0, true);
    lp.ln_kv_bias = Tensor::zeros({cfg.d}, true);
    lp.cross_attn = make_attention(cfg.d, cfg.width, rng);
    lp.ln_ffn_gain = Tensor::full({cfg.d}, 1.0, true);
    lp.ln_ffn_bias = Tensor::zeros({cfg.d}, true);
    lp.ffn_w1 = Tensor::randn({cfg.d, cfg.width}, rng, s, true);
    lp.ffn_b1 = Tensor::zeros({cfg.width}, true);
    lp.ffn_w2 = Tensor::zeros({cfg.width, cfg.d}, true);  // zero: identity at init
    lp.ffn_b2 = Tensor::zeros({cfg.d}, true);
    layers_.push_back(std::move(lp));
  }
}

Tensor PerceiverStack::forward(const Tensor& primary, const Tensor& context) const {
  if (primary.rank() != 2 || primary.shape[1] != cfg_.d) {
    throw DimensionError(prefix_ + ": primary stream " + shape_str(primary.shape) +
                         " does not have width " + std::to_string(cfg_.d));
  }
  if (primary.shape[0] < 1) {
    throw DimensionError(prefix_ + ": primary stream is empty");
  }
  const bool has_context = context.defined() && context.rows() > 0;
  if (has_context && context.shape[1] != cfg_.d) {
    throw DimensionError(prefix_ + ": context stream " + shape_str(context.shape) +
                         " does not have width " + std::to_string(cfg_.d));
  }

  Tensor x = primary;
  for (const auto& l : layers_) {
    Tensor normed = layer_norm(x, l.ln_self_gain, l.ln_self_bias);
    x = add(x, attend(l.self_attn, normed, normed, cfg_.heads));
    if (has_context) {
      Tensor q_in = layer_norm(x, l.ln_cross_gain, l.ln_cross_bias);
      Tensor kv_in = layer_norm(context, l.ln_kv_gain, l.ln_kv_bias);
      x = add(x, attend(l.cross_attn, q_in, kv_in, cfg_.heads));
    }
    Tensor f_in = layer_norm(x, l.ln_ffn_gain, l.ln_ffn_bias);
    Tensor h = gelu(add_rowwise(matmul(f_in, l.ffn_w1), l.ffn_b1));
    x = add(x, add_rowwise(matmul(h, l.ffn_w2), l.ffn_b2));
  }
  return x;
}

void PerceiverStack::collect_parameters(std::vector<Parameter*>& out) {
  if (params_.empty()) {
    for (size_t l = 0; l < layers_.size(); ++l) {
      auto& lp = layers_[l];
      const std::string base = prefix_ + ".layer" + std::to_string(l);
      params_.push_back({base + ".ln_self.gain", lp.ln_self_gain, false});
      params_.push_back({base + ".ln_self.bias", lp.ln_self_bias, false});
      collect_attention(params_, base + ".self_attn", lp.self_attn);
      params_.push_back({base + ".ln_cross.gain", lp.ln_cross_gain, false});
      params_.push_back({base + ".ln_cross.bias", lp.ln_cross_bias, false});
      params_.push_back({base + ".ln_kv.gain", lp.ln_kv_gain, false});
      params_.push_back({base + ".ln_kv.bias", lp.ln_kv_bias, false});
      collect_attention(params_, base + ".cross_attn", lp.cross_attn);
      params_.push_back({base + ".ln_ffn.gain", lp.ln_ffn_gain, false});
      params_.push_back({base + ".ln_ffn.bias", lp.ln_ffn_bias, false});
      params_.push_back({base + ".ffn.w1", lp.ffn_w1, false});
      params_.push_back({base + ".ffn.b1", lp.ffn_b1, false});
      params_.push_back({base + ".ffn.w2", lp.ffn_w2, false});
      params_.push_back({base + ".ffn.b2", lp.ffn_b2, false});
    }
  }
  for (auto& p : params_) out.push_back(&p);
}

const char* ablation_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::no_perceiver: return "no_perceiver";
    case AblationMode::no_vp: return "no_vp";
    case AblationMode::no_lp: return "no_lp";
  }
  return "full";
}

AblationMode ablation_from_name(const std::string& name) {
  if (name == "full") return AblationMode::full;
  if (name == "no_perceiver") return AblationMode::no_perceiver;
  if (name == "no_vp") return AblationMode::no_vp;
  if (name == "no_lp") return AblationMode::no_lp;
  throw ConfigError("unknown ablation mode: " + name);
}

PerceiverModel::PerceiverModel(const PerceiverConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  vp_ = PerceiverStack(cfg, "vp", seed);
  lp_ = PerceiverStack(cfg, "lp", seed);
  if (cfg.share_context_weights) {
    cp_ = PerceiverStack(cfg, "cp", seed);
  } else {
    cp_img_ = PerceiverStack(cfg, "cp.img", seed);
    cp_txt_ = PerceiverStack(cfg, "cp.txt", seed);
  }
  auto rng = substream(seed, "latents");
  latents_.h_img = Tensor::randn({cfg.m / 2, cfg.d}, rng, 0.05, true);
  latents_.h_txt = Tensor::randn({cfg.m / 2, cfg.d}, rng, 0.05, true);
}

Tensor PerceiverModel::vision_perceive(const Tensor& vision_tokens,
                                       const Tensor& text_tokens) const {
  if (!text_tokens.defined() || text_tokens.rows() == 0) {
    throw DataError("vision_perceive: sample has no text tokens");
  }
  return vp_.forward(vision_tokens, text_tokens);
}

Tensor PerceiverModel::language_perceive(const Tensor& text_tokens,
                                         const Tensor& vision_tokens) const {
  return lp_.forward(text_tokens, vision_tokens);
}

const PerceiverStack& PerceiverModel::context_stack(bool text_stream) const {
  if (cfg_.share_context_weights) return cp_;
  return text_stream ? cp_txt_ : cp_img_;
}

Tensor PerceiverModel::context_perceive(const Tensor& latents, const Tensor& stream,
                                        bool text_stream) const {
  return context_stack(text_stream).forward(latents, stream);
}

Tensor concat_streams(const std::vector<Tensor>& per_sample_outputs, size_t d) {
  std::vector<Tensor> nonempty;
  for (const auto& t : per_sample_outputs) {
    if (t.defined() && t.rows() > 0) nonempty.push_back(t);
  }
  if (nonempty.empty()) return Tensor::zeros({0, d});
  return concat_rows(nonempty);
}

ContextPrefix PerceiverModel::fuse_contexts(const std::vector<EncodedContext>& contexts,
                                            AblationMode mode) const {
  if (contexts.empty()) {
    throw DataError("fuse_contexts: context list is empty");
  }
  ContextPrefix out;
  for (const auto& c : contexts) out.provenance.push_back(c.source_id);

  if (mode == AblationMode::no_perceiver) {
    // Baseline: raw concatenation of every vision and text token, length L.
    std::vector<Tensor> parts;
    for (const auto& c : contexts) {
      if (c.vision_tokens.rows() > 0) parts.push_back(c.vision_tokens);
      parts.push_back(c.text_tokens);
    }
    out.tokens = concat_rows(parts);
    out.variable_length = true;
    return out;
  }

  std::vector<Tensor> img_parts, txt_parts;
  img_parts.reserve(contexts.size());
  txt_parts.reserve(contexts.size());
  for (const auto& c : contexts) {
    if (c.text_tokens.rows() == 0) {
      throw DataError("fuse_contexts: context sample " + std::to_string(c.source_id) +
                      " has no text tokens");
    }
    if (c.vision_tokens.rows() > 0) {
      img_parts.push_back(mode == AblationMode::no_vp
                              ? c.vision_tokens
                              : vision_perceive(c.vision_tokens, c.text_tokens));
    }
    txt_parts.push_back(mode == AblationMode::no_lp
                            ? c.text_tokens
                            : language_perceive(c.text_tokens, c.vision_tokens));
  }
  Tensor e_img = concat_streams(img_parts, cfg_.d);
  Tensor e_txt = concat_streams(txt_parts, cfg_.d);

  Tensor h_img = context_perceive(latents_.h_img, e_img, /*text_stream=*/false);
  Tensor h_txt = context_perceive(latents_.h_txt, e_txt, /*text_stream=*/true);
  out.tokens = concat_rows({h_img, h_txt});
  out.variable_length = false;
  return out;
}

std::vector<Parameter*> PerceiverModel::parameters() {
  std::vector<Parameter*> out;
  vp_.collect_parameters(out);
  lp_.collect_parameters(out);
  if (cfg_.share_context_weights) {
    cp_.collect_parameters(out);
  } else {
    cp_img_.collect_parameters(out);
    cp_txt_.collect_parameters(out);
  }
  if (latent_params_.empty()) {
    latent_params_.push_back({"latents.H_img", latents_.h_img, false});
    latent_params_.push_back({"latents.H_txt", latents_.h_txt, false});
  }
  for (auto& p : latent_params_) out.push_back(&p);
  return out;
}

}  // namespace camml
