#include "camml/generator.hpp"

#include <algorithm>
#include <cmath>

#include "camml/rng.hpp"

namespace camml {

void GeneratorConfig::validate() const {
  if (layers < 1) throw ConfigError("generator: layers must be >= 1");
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("generator: d=" + std::to_string(d) + " must be divisible by heads=" +
                      std::to_string(heads));
  }
  if (vocab <= static_cast<size_t>(kEosToken)) {
    throw ConfigError("generator: vocabulary too small");
  }
}

Generator::Generator(const GeneratorConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  auto rng = substream(seed, "gen");
  tok_emb_ = Tensor::randn({cfg.vocab, cfg.d}, rng, 0.05, true);
  pos_emb_ = Tensor::randn({cfg.max_seq, cfg.d}, rng, 0.05, true);
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  for (size_t l = 0; l < cfg.layers; ++l) {
    DecoderLayerParams lp;
    lp.ln_attn_gain = Tensor::full({cfg.d}, 1.0, true);
    lp.ln_attn_bias = Tensor::zeros({cfg.d}, true);
    lp.wq = Tensor::randn({cfg.d, cfg.d}, rng, s, true);
    lp.bq = Tensor::zeros({cfg.d}, true);
    lp.wk = Tensor::randn({cfg.d, cfg.d}, rng, s, true);
    lp.bk = Tensor::zeros({cfg.d}, true);
    lp.wv = Tensor::randn({cfg.d, cfg.d}, rng, s, true);
    lp.bv = Tensor::zeros({cfg.d}, true);
    lp.wo = Tensor::zeros({cfg.d, cfg.d}, true);
    lp.bo = Tensor::zeros({cfg.d}, true);
    lp.ln_ffn_gain = Tensor::full({cfg.d}, 1.0, true);
    lp.ln_ffn_bias = Tensor::zeros({cfg.d}, true);
    lp.ffn_w1 = Tensor::randn({cfg.d, 4 * cfg.d}, rng, s, true);
    lp.ffn_b1 = Tensor::zeros({4 * cfg.d}, true);
    lp.ffn_w2 = Tensor::zeros({4 * cfg.d, cfg.d}, true);
    lp.ffn_b2 = Tensor::zeros({cfg.d}, true);
    layers_.push_back(std::move(lp));
  }
  ln_final_gain_ = Tensor::full({cfg.d}, 1.0, true);
  ln_final_bias_ = Tensor::zeros({cfg.d}, true);
  head_w_ = Tensor::zeros({cfg.d, cfg.vocab}, true);  // uniform logits at init
  head_b_ = Tensor::zeros({cfg.vocab}, true);
}

AssembledInput Generator::assemble(const GeneratorInput& input) const {
  const size_t m = input.prefix.tokens.defined() ? input.prefix.tokens.rows() : 0;
  const size_t t_img =
      input.query_image_tokens.defined() ? input.query_image_tokens.rows() : 0;
  const size_t t_txt = input.query_text.ids.size();
  const size_t t_tgt = input.target_ids.size();
  const size_t total = m + t_img + t_txt + t_tgt;

  if (m == 0) throw DataError("assemble: missing context prefix");
  if (t_txt == 0) throw DataError("assemble: query text is empty");
  if (input.prefix.tokens.cols() != cfg_.d ||
      (t_img > 0 && input.query_image_tokens.cols() != cfg_.d)) {
    throw DimensionError("assemble: component width does not match generator width " +
                         std::to_string(cfg_.d));
  }
  if (total > cfg_.max_seq) {
    throw DataError("assemble: sequence of " + std::to_string(total) +
                    " rows exceeds max_seq " + std::to_string(cfg_.max_seq) + " (prefix " +
                    std::to_string(m) + ", image " + std::to_string(t_img) + ", text " +
                    std::to_string(t_txt) + ", target " + std::to_string(t_tgt) + ")");
  }

  AssembledInput out;
  out.ids.assign(total, kPadToken);
  out.loss_mask.assign(total, false);
  for (size_t i = 0; i < t_txt; ++i) out.ids[m + t_img + i] = input.query_text.ids[i];
  for (size_t i = 0; i < t_tgt; ++i) out.ids[m + t_img + t_txt + i] = input.target_ids[i];
  // Position t predicts token t+1, so predictors of the target block start
  // one row before it.
  for (size_t i = 0; i < t_tgt; ++i) out.loss_mask[m + t_img + t_txt + i - 1] = true;

  std::vector<Tensor> parts;
  parts.push_back(input.prefix.tokens);
  if (t_img > 0) parts.push_back(input.query_image_tokens);
  std::vector<int> token_ids(out.ids.begin() + static_cast<std::ptrdiff_t>(m + t_img),
                             out.ids.end());
  parts.push_back(embedding_lookup(tok_emb_, token_ids));
  Tensor embeds = concat_rows(parts);
  out.embeds = add(embeds, slice_rows(pos_emb_, 0, total));
  return out;
}

Tensor Generator::forward(const Tensor& embeds) const {
  if (embeds.rank() != 2 || embeds.shape[1] != cfg_.d) {
    throw DimensionError("generator forward: input " + shape_str(embeds.shape) +
                         " does not have width " + std::to_string(cfg_.d));
  }
  if (embeds.shape[0] > cfg_.max_seq) {
    throw DataError("generator forward: " + std::to_string(embeds.shape[0]) +
                    " rows exceed max_seq " + std::to_string(cfg_.max_seq));
  }
  Tensor x = embeds;
  for (const auto& l : layers_) {
    Tensor normed = layer_norm(x, l.ln_attn_gain, l.ln_attn_bias);
    Tensor q = add_rowwise(matmul(normed, l.wq), l.bq);
    Tensor k = add_rowwise(matmul(normed, l.wk), l.bk);
    Tensor v = add_rowwise(matmul(normed, l.wv), l.bv);
    Tensor att = attention(q, k, v, cfg_.heads, /*causal=*/true);
    x = add(x, add_rowwise(matmul(att, l.wo), l.bo));
    Tensor f_in = layer_norm(x, l.ln_ffn_gain, l.ln_ffn_bias);
    Tensor h = gelu(add_rowwise(matmul(f_in, l.ffn_w1), l.ffn_b1));
    x = add(x, add_rowwise(matmul(h, l.ffn_w2), l.ffn_b2));
  }
  Tensor final = layer_norm(x, ln_final_gain_, ln_final_bias_);
  return add_rowwise(matmul(final, head_w_), head_b_);
}

Tensor Generator::loss(const Tensor& logits, const std::vector<int>& ids,
                       const std::vector<bool>& loss_mask) const {
  const size_t t = logits.rows();
  if (ids.size() != t || loss_mask.size() != t) {
    throw DimensionError("generator loss: ids/mask length does not match logits rows");
  }
  if (t < 2) throw DataError("generator loss: sequence too short for shifted targets");
  // Shift by one: logits at position i are scored against token i+1.
  Tensor shifted_logits = slice_rows(logits, 0, t - 1);
  std::vector<int> shifted_targets(ids.begin() + 1, ids.end());
  std::vector<bool> shifted_mask(loss_mask.begin(), loss_mask.end() - 1);
  return cross_entropy(shifted_logits, shifted_targets, shifted_mask);
}

std::vector<int> Generator::generate(const GeneratorInput& input, size_t max_new) const {
  if (max_new < 1) throw DataError("generate: max_new must be >= 1");
  NoGradGuard ng;
  GeneratorInput work = input;
  work.target_ids.clear();

  std::vector<int> produced;
  for (size_t step = 0; step < max_new; ++step) {
    work.target_ids = produced;
    AssembledInput asm_in = assemble(work);
    Tensor logits = forward(asm_in.embeds);
    const size_t last = logits.rows() - 1;
    int best = 0;
    double best_v = logits.at(last, 0);
    for (size_t j = 1; j < cfg_.vocab; ++j) {
      if (logits.at(last, j) > best_v) {
        best_v = logits.at(last, j);
        best = static_cast<int>(j);
      }
    }
    produced.push_back(best);
    if (best == kEosToken) break;
  }
  return produced;
}

std::vector<Parameter*> Generator::parameters() {
  if (params_.empty()) {
    params_.push_back({"gen.tok_emb", tok_emb_, false});
    params_.push_back({"gen.pos_emb", pos_emb_, false});
    for (size_t l = 0; l < layers_.size(); ++l) {
      auto& lp = layers_[l];
      const std::string base = "gen.layer" + std::to_string(l);
      params_.push_back({base + ".ln_attn.gain", lp.ln_attn_gain, false});
      params_.push_back({base + ".ln_attn.bias", lp.ln_attn_bias, false});
      params_.push_back({base + ".attn.wq", lp.wq, false});
      params_.push_back({base + ".attn.bq", lp.bq, false});
      params_.push_back({base + ".attn.wk", lp.wk, false});
      params_.push_back({base + ".attn.bk", lp.bk, false});
      params_.push_back({base + ".attn.wv", lp.wv, false});
      params_.push_back({base + ".attn.bv", lp.bv, false});
      params_.push_back({base + ".attn.wo", lp.wo, false});
      params_.push_back({base + ".attn.bo", lp.bo, false});
      params_.push_back({base + ".ln_ffn.gain", lp.ln_ffn_gain, false});
      params_.push_back({base + ".ln_ffn.bias", lp.ln_ffn_bias, false});
      params_.push_back({base + ".ffn.w1", lp.ffn_w1, false});
      params_.push_back({base + ".ffn.b1", lp.ffn_b1, false});
      params_.push_back({base + ".ffn.w2", lp.ffn_w2, false});
      params_.push_back({base + ".ffn.b2", lp.ffn_b2, false});
    }
    params_.push_back({"gen.ln_final.gain", ln_final_gain_, false});
    params_.push_back({"gen.ln_final.bias", ln_final_bias_, false});
    params_.push_back({"gen.head.w", head_w_, false});
    params_.push_back({"gen.head.b", head_b_, false});
  }
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

}  // namespace camml
