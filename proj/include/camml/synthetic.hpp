#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "camml/training.hpp"

namespace camml {

// Key-value lookup task whose answers live only in the datastore: each key
// has a seeded glyph image, datastore entries pair a noisy glyph render
// with a text stating the key's value, and queries show a fresh render with
// a generic question. The generator never receives the query image and the
// question text carries no key or value tokens, so answers can only come
// from the retrieved context prefix.
struct SyntheticTaskSpec {
  size_t keys = 32;         // >= 8
  size_t variants = 4;      // datastore entries per key
  size_t values = 16;       // distinct answer words; keys % values == 0 keeps them balanced
  size_t eval_per_key = 2;
  size_t image_size = 16;   // pixels, patch-aligned
  double noise = 0.05;      // per-pixel render jitter
  size_t check_top_n = 3;   // construction check: answer present in this many hits
};

struct SyntheticDataset {
  SyntheticTaskSpec spec;
  std::vector<MultimodalSample> entries;  // the datastore content
  std::vector<QueryExample> train_queries;
  std::vector<QueryExample> eval_queries;
  std::vector<std::string> key_words;
  std::vector<std::string> value_words;
  std::map<uint64_t, std::vector<uint64_t>> retrieval_truth;  // eval id -> hit ids

  // Deterministic serialization; equal seeds must produce equal bytes.
  std::string canonical_bytes() const;
};

// Deterministic given (spec, seed). Verifies by full-scan retrieval that
// every query's top hits carry its answer and that answer tokens never
// appear in query content; throws DataError when the task spec cannot satisfy
// those invariants.
SyntheticDataset make_synthetic_dataset(const SyntheticTaskSpec& spec, uint64_t seed,
                                        const EncoderSet& encoders);

}  // namespace camml
