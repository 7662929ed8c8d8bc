#include "camml/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace camml {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

uint32_t get_u32(std::istream& is, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw TruncatedFileError(path + ": truncated while reading " + what);
  }
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is, const std::string& path, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw TruncatedFileError(path + ": truncated while reading " + what);
  }
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is, const std::string& path, const char* what) {
  uint64_t bits = get_u64(is, path, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("save_checkpoint: cannot open " + path + " for writing");
  os.write("CMML", 4);
  put_u32(os, kCheckpointVersion);
  put_u64(os, params.size());
  for (const auto& p : params) {
    put_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(os, static_cast<uint32_t>(p.tensor.shape.size()));
    for (size_t d : p.tensor.shape) put_u64(os, d);
    for (double v : *p.tensor.data) put_f64(os, v);
  }
  if (!os) throw DataError("save_checkpoint: write failed for " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw TruncatedFileError(path + ": truncated while reading magic");
  if (std::memcmp(magic, "CMML", 4) != 0) {
    throw FormatError(path + ": bad magic, not a checkpoint file");
  }
  const uint32_t version = get_u32(is, path, "version");
  if (version != kCheckpointVersion) {
    throw VersionError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const uint64_t count = get_u64(is, path, "parameter count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(is, path, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw TruncatedFileError(path + ": truncated while reading name");
    }
    const uint32_t rank = get_u32(is, path, "rank");
    std::vector<size_t> shape(rank);
    size_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<size_t>(get_u64(is, path, "dim"));
      numel *= shape[r];
    }
    Tensor t = Tensor::zeros(shape);
    for (size_t j = 0; j < numel; ++j) (*t.data)[j] = get_f64(is, path, "payload");
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

}  // namespace camml
