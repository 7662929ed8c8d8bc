#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

// End-to-end checks of the installed CLI surface via std::system.

namespace {

namespace fs = std::filesystem;

const char* cli_path() { return CAMML_CLI_PATH; }

int run(const std::string& args, const std::string& stdout_file = "") {
  std::string cmd = std::string(cli_path()) + " " + args + " >";
  cmd += stdout_file.empty() ? "/dev/null" : stdout_file;
  cmd += " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string tiny_config_text() {
  return R"([model]
seed = 3
d = 16

[encoder]
d_r = 16
patch = 4
vocab = 128

[perceiver]
layers = 1
width = 16
heads = 2
m = 8

[generator]
layers = 1
heads = 2
max_seq = 128

[train]
steps = 15
batch = 2
lr = 0.002
seed = 9

[task]
keys = 8
variants = 4
values = 4
eval_per_key = 1
image_size = 8

[retrieval]
mode = image_to_image
eval_shots = 3
)";
}

struct TempTree {
  fs::path root;
  TempTree() {
    static int counter = 0;
    root = fs::temp_directory_path() / ("camml_cli_" + std::to_string(++counter));
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }
  std::string file(const std::string& name, const std::string& content) const {
    const fs::path p = root / name;
    std::ofstream os(p);
    os << content;
    return p.string();
  }
  std::string path(const std::string& name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("cli usage errors exit 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("train") == 1);  // missing required --config
}

TEST_CASE("cli missing config file exits 2") {
  TempTree t;
  CHECK(run("train --config " + t.path("nope.cfg") + " --out " + t.path("out")) == 2);
}

TEST_CASE("cli rejects malformed config with exit 2") {
  TempTree t;
  const std::string cfg = t.file("bad.cfg", "[model]\nbogus = 1\n");
  CHECK(run("train --config " + cfg + " --out " + t.path("out")) == 2);
}

TEST_CASE("cli make-data, retrieve, train, eval and generate round trip") {
  TempTree t;
  const std::string cfg = t.file("run.cfg", tiny_config_text());
  const std::string out = t.path("out");

  CHECK(run("make-data --config " + cfg + " --out " + out) == 0);
  CHECK(fs::exists(out + "/dataset.json"));
  CHECK(fs::exists(out + "/index.cmix"));

  // retrieve prints one "id score" row per hit with non-increasing scores.
  const std::string retrieve_out = t.path("retrieve.txt");
  CHECK(run("retrieve --config " + cfg + " --index " + out + "/index.cmix --query-id 7 --n 3",
            retrieve_out) == 0);
  {
    std::ifstream is(retrieve_out);
    double prev = 2.0;
    size_t rows = 0;
    uint64_t id;
    double score;
    while (is >> id >> score) {
      CHECK(score <= prev);
      prev = score;
      ++rows;
    }
    CHECK(rows == 3);
  }

  // build-index from the dataset dump reproduces the index bitwise.
  const std::string out2 = t.path("out2");
  CHECK(run("build-index --config " + cfg + " --samples " + out + "/dataset.json --out " +
            out2) == 0);
  {
    std::ifstream a(out + "/index.cmix", std::ios::binary);
    std::ifstream b(out2 + "/index.cmix", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }

  // Pipeline smoke: train then eval on the emitted checkpoint.
  CHECK(run("train --config " + cfg + " --out " + out) == 0);
  CHECK(fs::exists(out + "/checkpoint.cmml"));
  CHECK(run("eval --config " + cfg + " --checkpoint " + out + "/checkpoint.cmml --out " + out +
            " --shots 1,3") == 0);
  CHECK(fs::exists(out + "/eval.csv"));

  const std::string gen_out = t.path("gen.txt");
  CHECK(run("generate --config " + cfg + " --checkpoint " + out +
            "/checkpoint.cmml --query-id 0 --out " + out, gen_out) == 0);
  {
    std::ifstream is(gen_out);
    std::string line;
    CHECK(std::getline(is, line));
    CHECK(line.find("query 0") != std::string::npos);
  }
}

TEST_CASE("cli seed override changes the generated dataset") {
  TempTree t;
  const std::string cfg = t.file("run.cfg", tiny_config_text());
  const std::string out_a = t.path("a");
  const std::string out_b = t.path("b");
  const std::string out_c = t.path("c");
  CHECK(run("make-data --config " + cfg + " --out " + out_a) == 0);
  CHECK(run("make-data --config " + cfg + " --out " + out_b + " --seed 99") == 0);
  CHECK(run("make-data --config " + cfg + " --out " + out_c + " --seed 99") == 0);

  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(out_a + "/dataset.json") != slurp(out_b + "/dataset.json"));
  CHECK(slurp(out_b + "/dataset.json") == slurp(out_c + "/dataset.json"));
}

TEST_CASE("cli retrieve against a missing index exits 2") {
  TempTree t;
  const std::string cfg = t.file("run.cfg", tiny_config_text());
  CHECK(run("retrieve --config " + cfg + " --index " + t.path("none.cmix") +
            " --query-id 0 --n 1") == 2);
}
