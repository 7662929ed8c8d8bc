#include "camml/datastore.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

namespace camml {

namespace {

uint32_t crc_table_entry(uint32_t i) {
  uint32_t c = i;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
  return c;
}

const std::array<uint32_t, 256>& crc_table() {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) t[i] = crc_table_entry(i);
    return t;
  }();
  return table;
}

}  // namespace

uint32_t crc32(const void* data, size_t len, uint32_t seed) {
  const auto& table = crc_table();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

const MultimodalSample& DatastoreIndex::sample(uint64_t id) const {
  auto it = payload_.find(id);
  if (it == payload_.end()) {
    throw DataError("datastore: no sample with id " + std::to_string(id));
  }
  return it->second;
}

DatastoreIndex DatastoreIndex::build(const std::vector<MultimodalSample>& samples,
                                     const RetrievalEmbedder& embedder) {
  if (samples.empty()) throw DataError("build_index: empty sample list");
  std::vector<uint64_t> missing;
  for (const auto& s : samples) {
    if (!s.image) missing.push_back(s.id);
  }
  if (!missing.empty()) {
    std::string ids;
    for (uint64_t id : missing) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    throw DataError("build_index: samples without an image cannot be indexed: ids " + ids);
  }

  DatastoreIndex idx;
  idx.d_r_ = embedder.dim();
  for (const auto& s : samples) {
    if (s.text.empty()) throw DataError("build_index: sample " + std::to_string(s.id) + " has empty text");
    if (idx.payload_.count(s.id)) {
      throw DataError("build_index: duplicate sample id " + std::to_string(s.id));
    }
    idx.payload_[s.id] = s;
  }
  // std::map keeps ids ascending; embedding rows follow that order.
  idx.ids_.reserve(samples.size());
  idx.embeddings_.reserve(samples.size() * idx.d_r_);
  for (const auto& [id, s] : idx.payload_) {
    idx.ids_.push_back(id);
    RetrievalEmbedding e = embedder.embed_image(*s.image);
    for (double v : e.vector) idx.embeddings_.push_back(static_cast<float>(v));
  }
  return idx;
}

RetrievalResult DatastoreIndex::retrieve(const MultimodalSample& query, size_t n,
                                         RetrievalMode mode, const std::set<uint64_t>& exclude,
                                         const RetrievalEmbedder& embedder) const {
  if (n < 1) throw DataError("retrieve: n must be >= 1");
  if (count() == 0) throw DataError("retrieve: index is empty");

  RetrievalEmbedding q;
  if (mode == RetrievalMode::text_to_image) {
    if (query.text.empty()) throw DataError("retrieve: text->image query has no text");
    q = embedder.embed_text(query.text);
  } else {
    if (!query.image) throw DataError("retrieve: image->image query has no image");
    q = embedder.embed_image(*query.image);
  }

  struct Scored {
    double score;
    uint64_t id;
  };
  std::vector<Scored> scored;
  scored.reserve(count());
  for (size_t row = 0; row < count(); ++row) {
    if (exclude.count(ids_[row])) continue;
    double dot = 0.0;
    const float* e = embeddings_.data() + row * d_r_;
    for (size_t j = 0; j < d_r_; ++j) dot += q.vector[j] * static_cast<double>(e[j]);
    scored.push_back({dot, ids_[row]});
  }
  if (scored.empty()) throw DataError("retrieve: no entries left after exclusions");

  const size_t take = std::min(n, scored.size());
  auto better = [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;  // tie-break by ascending id
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), better);

  RetrievalResult out;
  out.query_mode = mode;
  out.flagged_short = take < n;
  out.hits.reserve(take);
  for (size_t i = 0; i < take; ++i) out.hits.push_back({scored[i].id, scored[i].score});
  return out;
}

namespace {

void append_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(byte()) << (8 * i);
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(byte()) << (8 * i);
    return v;
  }
  float f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n, const char* what) {
    if (pos_ + n > buf_.size()) {
      throw TruncatedFileError(path_ + ": truncated while reading " + what);
    }
  }
  unsigned char byte() { return static_cast<unsigned char>(buf_[pos_++]); }

  const std::string& buf_;
  std::string path_;
  size_t pos_ = 0;
};

nlohmann::json image_to_json(const RawImage& img) {
  return nlohmann::json{{"width", img.width}, {"height", img.height}, {"pixels", img.pixels}};
}

RawImage image_from_json(const nlohmann::json& j) {
  RawImage img;
  img.width = j.at("width").get<size_t>();
  img.height = j.at("height").get<size_t>();
  img.pixels = j.at("pixels").get<std::vector<double>>();
  if (img.pixels.size() != img.width * img.height * 3) {
    throw FormatError("index payload: pixel count does not match image dimensions");
  }
  return img;
}

}  // namespace

nlohmann::json sample_to_json(const MultimodalSample& s) {
  nlohmann::json j{{"id", s.id}, {"text", s.text}};
  j["answer"] = s.answer ? nlohmann::json(*s.answer) : nlohmann::json(nullptr);
  j["image"] = s.image ? image_to_json(*s.image) : nlohmann::json(nullptr);
  return j;
}

MultimodalSample sample_from_json(const nlohmann::json& j) {
  MultimodalSample s;
  s.id = j.at("id").get<uint64_t>();
  s.text = j.at("text").get<std::string>();
  if (!j.at("answer").is_null()) s.answer = j.at("answer").get<std::string>();
  if (!j.at("image").is_null()) s.image = image_from_json(j.at("image"));
  return s;
}

void DatastoreIndex::save(const std::string& path) const {
  std::string buf;
  buf += "CMIX";
  append_u32(buf, kIndexVersion);
  append_u32(buf, static_cast<uint32_t>(d_r_));
  append_u64(buf, count());
  for (float v : embeddings_) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(buf, bits);
  }
  for (uint64_t id : ids_) append_u64(buf, id);
  for (uint64_t id : ids_) {
    const std::string rec = sample_to_json(payload_.at(id)).dump();
    append_u32(buf, static_cast<uint32_t>(rec.size()));
    buf += rec;
  }
  append_u32(buf, crc32(buf.data(), buf.size()));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("save_index: cannot open " + path + " for writing");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("save_index: write failed for " + path);
}

DatastoreIndex DatastoreIndex::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_index: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string buf = ss.str();

  if (buf.size() < 4 || buf.compare(0, 4, "CMIX") != 0) {
    throw FormatError(path + ": bad magic, not an index file");
  }
  if (buf.size() < 8) throw TruncatedFileError(path + ": truncated before checksum");
  {
    const std::string body = buf.substr(0, buf.size() - 4);
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) {
      stored |= static_cast<uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4 + i]))
                << (8 * i);
    }
    if (crc32(body.data(), body.size()) != stored) {
      throw ChecksumError(path + ": CRC32 mismatch, file is corrupted");
    }
  }

  Reader r(buf, path);
  r.bytes(4, "magic");
  const uint32_t version = r.u32("version");
  if (version != kIndexVersion) {
    throw VersionError(path + ": unsupported index version " + std::to_string(version));
  }
  DatastoreIndex idx;
  idx.d_r_ = r.u32("dimension");
  const uint64_t count = r.u64("count");
  idx.embeddings_.reserve(count * idx.d_r_);
  for (uint64_t i = 0; i < count * idx.d_r_; ++i) idx.embeddings_.push_back(r.f32("embedding"));
  idx.ids_.reserve(count);
  for (uint64_t i = 0; i < count; ++i) idx.ids_.push_back(r.u64("id"));
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t len = r.u32("payload length");
    const std::string rec = r.bytes(len, "payload record");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(rec);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": malformed payload record: " + e.what());
    }
    MultimodalSample s = sample_from_json(j);
    if (s.id != idx.ids_[i]) {
      throw FormatError(path + ": payload id " + std::to_string(s.id) +
                        " does not match id table entry " + std::to_string(idx.ids_[i]));
    }
    idx.payload_[s.id] = std::move(s);
  }
  if (r.pos() != buf.size() - 4) {
    throw FormatError(path + ": trailing bytes after payload records");
  }
  return idx;
}

}  // namespace camml
