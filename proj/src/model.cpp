#include "camml/model.hpp"

#include <map>

#include "camml/checkpoint.hpp"
#include "camml/rng.hpp"

namespace camml {

Pipeline::Pipeline(const PipelineConfig& cfg)
    : cfg_(cfg),
      encoders_(cfg.encoder),
      projector_(cfg.encoder.d, cfg.generator.d, cfg.seed),
      perceiver_(cfg.perceiver, cfg.seed),
      generator_(cfg.generator, cfg.seed) {
  if (cfg.perceiver.d != cfg.generator.d || cfg.encoder.d != cfg.generator.d) {
    throw ConfigError("pipeline: encoder, perceiver and generator widths must agree");
  }
  if (cfg.generator.vocab != cfg.encoder.vocab) {
    throw ConfigError("pipeline: generator and tokenizer vocabularies must agree");
  }
}

std::vector<Parameter*> Pipeline::trainable_parameters() {
  std::vector<Parameter*> out;
  for (auto* p : generator_.parameters()) out.push_back(p);
  for (auto* p : projector_.parameters()) out.push_back(p);
  for (auto* p : perceiver_.parameters()) out.push_back(p);
  std::set<std::string> names;
  for (auto* p : out) {
    if (!names.insert(p->name).second) {
      throw Error("pipeline: duplicate parameter name " + p->name);
    }
  }
  return out;
}

std::vector<Parameter> Pipeline::frozen_parameters() const {
  return encoders_.frozen_parameters();
}

uint64_t Pipeline::frozen_hash() const {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& p : frozen_parameters()) {
    h = fnv1a(p.name, h);
    h = fnv1a_bytes(p.tensor.data->data(), p.tensor.numel() * sizeof(double), h);
  }
  return h;
}

std::vector<EncodedContext> Pipeline::encode_contexts(
    const DatastoreIndex& index, const std::vector<RetrievalHit>& hits) const {
  std::vector<EncodedContext> out;
  out.reserve(hits.size());
  for (const auto& hit : hits) {
    const MultimodalSample& s = index.sample(hit.id);
    out.push_back(encoders_.encode_sample(s.image, s.text, s.id));
  }
  return out;
}

GeneratorInput Pipeline::prepare_input(const MultimodalSample& query,
                                       const std::vector<EncodedContext>& contexts,
                                       const ForwardOptions& opt) const {
  GeneratorInput in;
  if (opt.zero_prefix) {
    in.prefix.tokens = Tensor::zeros({cfg_.perceiver.m, cfg_.perceiver.d});
    in.prefix.variable_length = false;
  } else {
    in.prefix = perceiver_.fuse_contexts(contexts, opt.ablation);
  }
  if (opt.feed_query_image && query.image) {
    in.query_image_tokens = projector_.forward(encoders_.vision.encode(*query.image));
  }
  in.query_text = tokenize(query.text, cfg_.encoder.vocab);
  if (query.answer) in.target_ids = answer_target_ids(*query.answer, cfg_.encoder.vocab);
  return in;
}

void Pipeline::save(const std::string& path) {
  std::vector<NamedTensor> params;
  for (auto* p : trainable_parameters()) params.push_back({p->name, p->tensor});
  save_checkpoint(path, params);
}

void Pipeline::load(const std::string& path) {
  std::vector<NamedTensor> loaded = load_checkpoint(path);
  std::map<std::string, Tensor> by_name;
  for (auto& nt : loaded) by_name.emplace(nt.name, nt.tensor);

  auto params = trainable_parameters();
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw FormatError("checkpoint " + path + ": missing parameter " + p->name);
    }
    if (it->second.shape != p->tensor.shape) {
      throw FormatError("checkpoint " + path + ": parameter " + p->name + " has shape " +
                        shape_str(it->second.shape) + ", model expects " +
                        shape_str(p->tensor.shape));
    }
    *p->tensor.data = *it->second.data;
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw FormatError("checkpoint " + path + ": unknown parameter " + by_name.begin()->first);
  }
}

std::vector<int> answer_target_ids(const std::string& answer, size_t vocab) {
  TokenizedText toks = tokenize(answer, vocab);
  // Drop BOS, keep content plus the closing EOS.
  return std::vector<int>(toks.ids.begin() + 1, toks.ids.end());
}

}  // namespace camml
