#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "camml/tensor.hpp"

namespace camml {

// Reserved token ids; normal text never produces them.
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kFirstWordToken = 3;

struct EncoderConfig {
  uint64_t seed = 1;
  size_t d = 64;       // token width shared by vision/text streams
  size_t d_r = 64;     // retrieval embedding dimension
  size_t patch = 4;    // vision patch size, pixels
  size_t vocab = 512;  // V_toy
};

struct RawImage {
  size_t width = 0;
  size_t height = 0;
  static constexpr size_t channels = 3;
  std::vector<double> pixels;  // unit-interval, row-major, channel-interleaved

  double at(size_t y, size_t x, size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  double& at(size_t y, size_t x, size_t c) { return pixels[(y * width + x) * 3 + c]; }
};

struct TokenizedText {
  std::vector<int> ids;  // BOS ... EOS
};

struct EncodedContext {
  Tensor vision_tokens;  // T_img x d; zero rows for text-only samples
  Tensor text_tokens;    // T_txt x d
  uint64_t source_id = 0;
};

struct RetrievalEmbedding {
  std::vector<double> vector;  // unit L2 norm, length d_r
  enum class Modality { image, text } modality = Modality::text;
};

// Whitespace/punctuation split, lowercased, hash-bucketed into the fixed
// vocabulary; wrapped as BOS ... EOS. Stable across runs.
TokenizedText tokenize(const std::string& text, size_t vocab);

// Frozen vision encoder: non-overlapping patch flattening through a fixed
// seed-derived linear map plus a fixed sinusoidal 2-D position signal.
class VisionEncoder {
 public:
  VisionEncoder(const EncoderConfig& cfg);

  Tensor encode(const RawImage& img) const;
  size_t token_count(const RawImage& img) const;
  const Tensor& weights() const { return patch_proj_; }

 private:
  size_t patch_;
  size_t d_;
  Tensor patch_proj_;  // (patch*patch*3) x d, frozen
};

// Frozen token embedding table, seed-derived.
class TextEmbedder {
 public:
  TextEmbedder(const EncoderConfig& cfg);

  Tensor embed(const TokenizedText& tokens) const;
  const Tensor& table() const { return table_; }
  size_t vocab() const { return table_.shape[0]; }

 private:
  Tensor table_;  // vocab x d, frozen
};

// Frozen cross-modal retrieval embedder. Images are mean-pooled onto a
// fixed 8x8x3 grid and texts counted into a bag of token ids; both are
// centered and pushed through seed-derived projections into one d_r space.
class RetrievalEmbedder {
 public:
  static constexpr size_t kStatsGrid = 8;

  RetrievalEmbedder(const EncoderConfig& cfg);

  RetrievalEmbedding embed_image(const RawImage& img) const;
  RetrievalEmbedding embed_text(const std::string& text) const;
  size_t dim() const { return d_r_; }
  const Tensor& image_proj() const { return img_proj_; }
  const Tensor& text_proj() const { return txt_proj_; }

  // The fixed grid statistics an image reduces to before projection.
  std::vector<double> image_stats(const RawImage& img) const;

 private:
  size_t d_r_;
  size_t vocab_;
  Tensor img_proj_;  // d_r x (8*8*3), frozen
  Tensor txt_proj_;  // d_r x vocab, frozen
};

// Trainable two-layer feed-forward map from vision-encoder feature space
// into generator token space (applied to the query image only).
class Projector {
 public:
  Projector(size_t d_in, size_t d_out, uint64_t seed);

  Tensor forward(const Tensor& vision_tokens) const;
  std::vector<Parameter*> parameters();

 private:
  Tensor w1_, b1_, w2_, b2_;
  std::vector<Parameter> params_;
};

// All frozen encoders for one run, built from one config.
struct EncoderSet {
  EncoderConfig cfg;
  VisionEncoder vision;
  TextEmbedder text;
  RetrievalEmbedder retrieval;

  explicit EncoderSet(const EncoderConfig& c) : cfg(c), vision(c), text(c), retrieval(c) {}

  // Frozen parameter views under the "enc." / "ret." prefixes, for the
  // frozen-weight hash and the trainable-set exclusion checks.
  std::vector<Parameter> frozen_parameters() const;

  EncodedContext encode_sample(const std::optional<RawImage>& image, const std::string& text,
                               uint64_t source_id) const;
};

}  // namespace camml
