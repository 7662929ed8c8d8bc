#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "camml/datastore.hpp"
#include "camml/encoders.hpp"
#include "camml/generator.hpp"
#include "camml/perceiver.hpp"

namespace camml {

struct PipelineConfig {
  uint64_t seed = 1;
  EncoderConfig encoder;
  PerceiverConfig perceiver;
  GeneratorConfig generator;
};

// How one example is turned into generator input.
struct ForwardOptions {
  AblationMode ablation = AblationMode::full;
  bool feed_query_image = true;  // project the query image into the sequence
  bool zero_prefix = false;      // control: prefix replaced by M zero rows
};

// The whole desk-scale stack: frozen encoders and retrieval embedder,
// trainable projector, perceiver and generator.
class Pipeline {
 public:
  explicit Pipeline(const PipelineConfig& cfg);

  const PipelineConfig& config() const { return cfg_; }
  EncoderSet& encoders() { return encoders_; }
  const EncoderSet& encoders() const { return encoders_; }
  Projector& projector() { return projector_; }
  PerceiverModel& perceiver() { return perceiver_; }
  const PerceiverModel& perceiver() const { return perceiver_; }
  Generator& generator() { return generator_; }
  const Generator& generator() const { return generator_; }

  // Exactly {generator, projector, VP, LP, CP, latent queries}; never any
  // encoder or retrieval weight.
  std::vector<Parameter*> trainable_parameters();
  std::vector<Parameter> frozen_parameters() const;
  uint64_t frozen_hash() const;

  // Encodes retrieved context samples in rank order.
  std::vector<EncodedContext> encode_contexts(const DatastoreIndex& index,
                                              const std::vector<RetrievalHit>& hits) const;

  // Fuses contexts and assembles the generator input for one query.
  GeneratorInput prepare_input(const MultimodalSample& query,
                               const std::vector<EncodedContext>& contexts,
                               const ForwardOptions& opt) const;

  void save(const std::string& path);
  void load(const std::string& path);

 private:
  PipelineConfig cfg_;
  EncoderSet encoders_;
  Projector projector_;
  PerceiverModel perceiver_;
  Generator generator_;
};

// Target token ids for an answer string: content tokens followed by EOS.
std::vector<int> answer_target_ids(const std::string& answer, size_t vocab);

}  // namespace camml
