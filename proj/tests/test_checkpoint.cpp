#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "camml/checkpoint.hpp"

using namespace camml;

namespace {

std::string temp_path(const char* stem) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path();
  return (dir / (std::string(stem) + "_" + std::to_string(++counter) + ".bin")).string();
}

std::vector<NamedTensor> sample_params() {
  std::mt19937_64 rng(5);
  std::vector<NamedTensor> params;
  params.push_back({"vp.layer0.cross_attn.wq", Tensor::randn({3, 4}, rng, 1.0)});
  params.push_back({"latents.H_img", Tensor::randn({2, 4}, rng, 1.0)});
  params.push_back({"gen.head.b", Tensor::randn({7}, rng, 1.0)});
  return params;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bitwise exact") {
  const std::string path = temp_path("ckpt");
  auto params = sample_params();
  save_checkpoint(path, params);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(loaded[i].name == params[i].name);
    CHECK(loaded[i].tensor.shape == params[i].tensor.shape);
    CHECK(*loaded[i].tensor.data == *params[i].tensor.data);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint re-save produces identical bytes") {
  const std::string p1 = temp_path("ckpt");
  const std::string p2 = temp_path("ckpt");
  auto params = sample_params();
  save_checkpoint(p1, params);
  save_checkpoint(p2, load_checkpoint(p1));
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("checkpoint rejects bad magic, version and truncation") {
  const std::string path = temp_path("ckpt");
  save_checkpoint(path, sample_params());

  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();

  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << bad;
    os.close();
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  {
    std::string bad = bytes;
    bad[4] = 99;  // version field
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << bad;
    os.close();
    CHECK_THROWS_AS(load_checkpoint(path), VersionError);
  }
  {
    std::string bad = bytes.substr(0, bytes.size() / 2);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << bad;
    os.close();
    CHECK_THROWS_AS(load_checkpoint(path), TruncatedFileError);
  }
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.close();
    CHECK_THROWS_AS(load_checkpoint(path), TruncatedFileError);
  }
  std::filesystem::remove(path);
}
