#include "camml/encoders.hpp"

#include <cctype>
#include <cmath>

#include "camml/rng.hpp"

namespace camml {

TokenizedText tokenize(const std::string& text, size_t vocab) {
  if (vocab <= static_cast<size_t>(kFirstWordToken)) {
    throw ConfigError("tokenize: vocabulary of " + std::to_string(vocab) +
                      " leaves no room for word tokens");
  }
  TokenizedText out;
  out.ids.push_back(kBosToken);
  const size_t buckets = vocab - kFirstWordToken;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    out.ids.push_back(kFirstWordToken + static_cast<int>(fnv1a(word) % buckets));
    word.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      word.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      flush();
    }
  }
  flush();
  out.ids.push_back(kEosToken);
  return out;
}

VisionEncoder::VisionEncoder(const EncoderConfig& cfg) : patch_(cfg.patch), d_(cfg.d) {
  auto rng = substream(cfg.seed, "enc.vision.patch_proj");
  const size_t in = patch_ * patch_ * 3;
  patch_proj_ = Tensor::randn({in, d_}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
}

size_t VisionEncoder::token_count(const RawImage& img) const {
  return (img.width / patch_) * (img.height / patch_);
}

Tensor VisionEncoder::encode(const RawImage& img) const {
  if (img.width == 0 || img.height == 0 || img.width % patch_ != 0 || img.height % patch_ != 0) {
    throw DataError("encode_image: image " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + " is not aligned to patch size " +
                    std::to_string(patch_));
  }
  if (img.pixels.size() != img.width * img.height * 3) {
    throw DataError("encode_image: pixel buffer length does not match dimensions");
  }
  NoGradGuard ng;
  const size_t px = img.width / patch_;
  const size_t py = img.height / patch_;
  const size_t t = px * py;
  const size_t in = patch_ * patch_ * 3;

  Tensor patches = Tensor::zeros({t, in});
  for (size_t gy = 0; gy < py; ++gy) {
    for (size_t gx = 0; gx < px; ++gx) {
      const size_t row = gy * px + gx;
      size_t col = 0;
      for (size_t dy = 0; dy < patch_; ++dy)
        for (size_t dx = 0; dx < patch_; ++dx)
          for (size_t c = 0; c < 3; ++c)
            patches.at(row, col++) = img.at(gy * patch_ + dy, gx * patch_ + dx, c);
    }
  }
  Tensor tokens = matmul(patches, patch_proj_);

  // Fixed sinusoidal 2-D position signal: first half of the channels keyed
  // by grid row, second half by grid column.
  const size_t half = d_ / 2;
  for (size_t gy = 0; gy < py; ++gy) {
    for (size_t gx = 0; gx < px; ++gx) {
      const size_t row = gy * px + gx;
      for (size_t j = 0; j < d_; ++j) {
        const bool use_row = j < half;
        const size_t local = use_row ? j : j - half;
        const size_t span = use_row ? half : d_ - half;
        const double pos = static_cast<double>(use_row ? gy : gx);
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(local / 2) /
                                                   static_cast<double>(span));
        tokens.at(row, j) += (local % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
      }
    }
  }
  return tokens;
}

TextEmbedder::TextEmbedder(const EncoderConfig& cfg) {
  auto rng = substream(cfg.seed, "enc.text.table");
  table_ = Tensor::randn({cfg.vocab, cfg.d}, rng, 0.5);
}

Tensor TextEmbedder::embed(const TokenizedText& tokens) const {
  NoGradGuard ng;
  return embedding_lookup(table_, tokens.ids);
}

RetrievalEmbedder::RetrievalEmbedder(const EncoderConfig& cfg)
    : d_r_(cfg.d_r), vocab_(cfg.vocab) {
  const size_t stats = kStatsGrid * kStatsGrid * 3;
  auto rng_i = substream(cfg.seed, "ret.img_proj");
  img_proj_ = Tensor::randn({d_r_, stats}, rng_i, 1.0 / std::sqrt(static_cast<double>(stats)));
  auto rng_t = substream(cfg.seed, "ret.txt_proj");
  txt_proj_ = Tensor::randn({d_r_, vocab_}, rng_t, 1.0 / std::sqrt(static_cast<double>(vocab_)));
}

std::vector<double> RetrievalEmbedder::image_stats(const RawImage& img) const {
  std::vector<double> stats(kStatsGrid * kStatsGrid * 3, 0.0);
  std::vector<double> counts(kStatsGrid * kStatsGrid, 0.0);
  for (size_t y = 0; y < img.height; ++y) {
    const size_t gy = y * kStatsGrid / img.height;
    for (size_t x = 0; x < img.width; ++x) {
      const size_t gx = x * kStatsGrid / img.width;
      const size_t cell = gy * kStatsGrid + gx;
      counts[cell] += 1.0;
      for (size_t c = 0; c < 3; ++c) stats[cell * 3 + c] += img.at(y, x, c);
    }
  }
  for (size_t cell = 0; cell < counts.size(); ++cell) {
    if (counts[cell] > 0.0)
      for (size_t c = 0; c < 3; ++c) stats[cell * 3 + c] /= counts[cell];
  }
  return stats;
}

namespace {

RetrievalEmbedding project_normalized(const Tensor& proj, const std::vector<double>& feat,
                                      RetrievalEmbedding::Modality modality) {
  const size_t d_r = proj.shape[0];
  const size_t in = proj.shape[1];
  RetrievalEmbedding out;
  out.modality = modality;
  out.vector.assign(d_r, 0.0);
  for (size_t i = 0; i < d_r; ++i) {
    double acc = 0.0;
    for (size_t j = 0; j < in; ++j) acc += proj.at(i, j) * feat[j];
    out.vector[i] = acc;
  }
  double norm = 0.0;
  for (double v : out.vector) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    // Degenerate all-zero feature vector: pin to the first axis.
    out.vector[0] = 1.0;
  } else {
    for (double& v : out.vector) v /= norm;
  }
  return out;
}

}  // namespace

RetrievalEmbedding RetrievalEmbedder::embed_image(const RawImage& img) const {
  std::vector<double> stats = image_stats(img);
  for (double& v : stats) v -= 0.5;  // center unit-interval pixel means
  return project_normalized(img_proj_, stats, RetrievalEmbedding::Modality::image);
}

RetrievalEmbedding RetrievalEmbedder::embed_text(const std::string& text) const {
  TokenizedText toks = tokenize(text, vocab_);
  std::vector<double> counts(vocab_, 0.0);
  for (int id : toks.ids) {
    if (id == kBosToken || id == kEosToken) continue;
    counts[static_cast<size_t>(id)] += 1.0;
  }
  return project_normalized(txt_proj_, counts, RetrievalEmbedding::Modality::text);
}

Projector::Projector(size_t d_in, size_t d_out, uint64_t seed) {
  auto rng = substream(seed, "proj");
  const size_t hidden = d_out;
  w1_ = Tensor::randn({d_in, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)), true);
  b1_ = Tensor::zeros({hidden}, true);
  w2_ = Tensor::randn({hidden, d_out}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)), true);
  b2_ = Tensor::zeros({d_out}, true);
}

Tensor Projector::forward(const Tensor& vision_tokens) const {
  if (vision_tokens.rank() != 2 || vision_tokens.shape[1] != w1_.shape[0]) {
    throw DimensionError("project_query_image: input " + shape_str(vision_tokens.shape) +
                         " does not match projector input width " +
                         std::to_string(w1_.shape[0]));
  }
  Tensor h = gelu(add_rowwise(matmul(vision_tokens, w1_), b1_));
  return add_rowwise(matmul(h, w2_), b2_);
}

std::vector<Parameter*> Projector::parameters() {
  if (params_.empty()) {
    params_.push_back({"proj.w1", w1_, false});
    params_.push_back({"proj.b1", b1_, false});
    params_.push_back({"proj.w2", w2_, false});
    params_.push_back({"proj.b2", b2_, false});
  }
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<Parameter> EncoderSet::frozen_parameters() const {
  std::vector<Parameter> out;
  out.push_back({"enc.vision.patch_proj", vision.weights(), true});
  out.push_back({"enc.text.table", text.table(), true});
  out.push_back({"ret.img_proj", retrieval.image_proj(), true});
  out.push_back({"ret.txt_proj", retrieval.text_proj(), true});
  return out;
}

EncodedContext EncoderSet::encode_sample(const std::optional<RawImage>& image,
                                         const std::string& text, uint64_t source_id) const {
  EncodedContext out;
  out.source_id = source_id;
  out.vision_tokens = image ? vision.encode(*image) : Tensor::zeros({0, cfg.d});
  out.text_tokens = this->text.embed(tokenize(text, cfg.vocab));
  return out;
}

}  // namespace camml
