#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "camml/encoders.hpp"

namespace camml {

struct MultimodalSample {
  uint64_t id = 0;
  std::optional<RawImage> image;
  std::string text;
  std::optional<std::string> answer;
};

enum class RetrievalMode { text_to_image, image_to_image };

struct RetrievalHit {
  uint64_t id = 0;
  double score = 0.0;  // cosine similarity in [-1, 1]
};

struct RetrievalResult {
  std::vector<RetrievalHit> hits;  // scores non-increasing, ties by ascending id
  RetrievalMode query_mode = RetrievalMode::text_to_image;
  bool flagged_short = false;  // fewer entries available than requested
};

// Embedding index over a sample collection. Entries are indexed by their
// image embedding; rows are stored as f32 values (the on-disk payload
// precision) held in doubles so save/load round-trips are bitwise exact.
class DatastoreIndex {
 public:
  size_t count() const { return ids_.size(); }
  size_t dim() const { return d_r_; }
  const std::vector<uint64_t>& ids() const { return ids_; }
  const std::vector<float>& embeddings() const { return embeddings_; }
  const MultimodalSample& sample(uint64_t id) const;
  bool contains(uint64_t id) const { return payload_.count(id) > 0; }

  static DatastoreIndex build(const std::vector<MultimodalSample>& samples,
                              const RetrievalEmbedder& embedder);

  RetrievalResult retrieve(const MultimodalSample& query, size_t n, RetrievalMode mode,
                           const std::set<uint64_t>& exclude, const RetrievalEmbedder& embedder) const;

  void save(const std::string& path) const;
  static DatastoreIndex load(const std::string& path);

 private:
  size_t d_r_ = 0;
  std::vector<float> embeddings_;  // count x d_r, row-major
  std::vector<uint64_t> ids_;      // ascending
  std::map<uint64_t, MultimodalSample> payload_;
};

inline constexpr uint32_t kIndexVersion = 1;

uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

// Payload record codec shared by the index file and dataset dumps.
nlohmann::json sample_to_json(const MultimodalSample& s);
MultimodalSample sample_from_json(const nlohmann::json& j);

}  // namespace camml
