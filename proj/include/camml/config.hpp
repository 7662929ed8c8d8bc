#pragma once

#include <string>

#include "json.hpp"
#include "camml/model.hpp"
#include "camml/synthetic.hpp"
#include "camml/training.hpp"

namespace camml {

// Full run configuration. Parsed from UTF-8 key = value text with
// [section] headers; unknown sections or keys are rejected. Every results
// file embeds the serialized form for reproducibility.
struct RunConfig {
  uint64_t seed = 1;  // model/encoder seed ([model] section)
  size_t d = 64;      // shared token width

  EncoderConfig encoder;      // d_r, patch, vocab ([encoder])
  PerceiverConfig perceiver;  // layers, width, heads, m, share_context_weights
  GeneratorConfig generator;  // layers, heads, max_seq
  TrainConfig train;
  SyntheticTaskSpec task;

  // Training/eval retrieval defaults to query-text vs entry-image; the
  // synthetic task overrides it since its queries carry a generic text.
  RetrievalMode retrieval_mode = RetrievalMode::text_to_image;
  size_t eval_shots = 3;
  std::string datastore_path;
  AblationMode ablation = AblationMode::full;

  static RunConfig parse(const std::string& text);
  static RunConfig parse_file(const std::string& path);

  std::string serialize() const;
  nlohmann::json to_json() const;

  // Derived pipeline config with the shared width and vocab threaded
  // through all components.
  PipelineConfig pipeline_config() const;
};

const std::string& build_id();

}  // namespace camml
