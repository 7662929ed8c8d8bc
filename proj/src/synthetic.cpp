#include "camml/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "camml/rng.hpp"

namespace camml {

namespace {

constexpr const char* kQuestionText = "what value is stored here";
constexpr const char* kEntryVerb = "holds";
constexpr uint64_t kEvalIdBase = 1000000;

// Picks words with pairwise-distinct token ids, also avoiding `avoid`.
std::vector<std::string> pick_words(const std::string& stem, size_t count, size_t vocab,
                                    std::set<int>& used) {
  std::vector<std::string> words;
  size_t suffix = 0;
  while (words.size() < count) {
    if (suffix > 100 * count + 1000) {
      throw DataError("make_synthetic_dataset: cannot find " + std::to_string(count) +
                      " collision-free '" + stem + "' words in a vocabulary of " +
                      std::to_string(vocab));
    }
    std::string w = stem + std::to_string(suffix++);
    TokenizedText t = tokenize(w, vocab);
    const int id = t.ids[1];
    if (t.ids.size() != 3 || used.count(id)) continue;
    used.insert(id);
    words.push_back(std::move(w));
  }
  return words;
}

RawImage render_glyph(const std::vector<double>& pattern, size_t image_size, size_t grid,
                      double noise, std::mt19937_64& rng) {
  RawImage img;
  img.width = image_size;
  img.height = image_size;
  img.pixels.assign(image_size * image_size * 3, 0.0);
  std::uniform_real_distribution<double> jitter(-noise, noise);
  for (size_t y = 0; y < image_size; ++y) {
    const size_t gy = y * grid / image_size;
    for (size_t x = 0; x < image_size; ++x) {
      const size_t gx = x * grid / image_size;
      for (size_t c = 0; c < 3; ++c) {
        double v = pattern[(gy * grid + gx) * 3 + c] + jitter(rng);
        img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

}  // namespace

SyntheticDataset make_synthetic_dataset(const SyntheticTaskSpec& spec, uint64_t seed,
                                        const EncoderSet& encoders) {
  if (spec.keys < 8) {
    throw DataError("make_synthetic_dataset: need >= 8 distinct keys, got " +
                    std::to_string(spec.keys));
  }
  if (spec.values < 2 || spec.variants < 2 || spec.eval_per_key < 1) {
    throw DataError("make_synthetic_dataset: need >= 2 values, >= 2 variants and >= 1 eval query per key");
  }
  const size_t vocab = encoders.cfg.vocab;
  const size_t patch = encoders.cfg.patch;
  if (spec.image_size % patch != 0) {
    throw DataError("make_synthetic_dataset: image size " + std::to_string(spec.image_size) +
                    " is not aligned to patch size " + std::to_string(patch));
  }

  SyntheticDataset ds;
  ds.spec = spec;

  // Reserve the question and entry template tokens first so key and value
  // words never collide with them (or with each other) in the hash space.
  std::set<int> used_ids;
  for (int id : tokenize(kQuestionText, vocab).ids) used_ids.insert(id);
  for (int id : tokenize(kEntryVerb, vocab).ids) used_ids.insert(id);
  ds.key_words = pick_words("key", spec.keys, vocab, used_ids);
  ds.value_words = pick_words("val", spec.values, vocab, used_ids);

  // Balanced key -> value assignment over a seeded key shuffle.
  auto rng = substream(seed, "synthetic");
  std::vector<size_t> key_order(spec.keys);
  for (size_t i = 0; i < spec.keys; ++i) key_order[i] = i;
  std::shuffle(key_order.begin(), key_order.end(), rng);
  std::vector<size_t> value_of(spec.keys);
  for (size_t rank = 0; rank < spec.keys; ++rank) {
    value_of[key_order[rank]] = rank % spec.values;
  }

  constexpr size_t grid = RetrievalEmbedder::kStatsGrid;
  std::vector<std::vector<double>> patterns(spec.keys);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (size_t k = 0; k < spec.keys; ++k) {
    patterns[k].resize(grid * grid * 3);
    for (double& v : patterns[k]) v = unit(rng);
  }

  uint64_t next_id = 0;
  for (size_t k = 0; k < spec.keys; ++k) {
    for (size_t r = 0; r < spec.variants; ++r) {
      MultimodalSample s;
      s.id = next_id++;
      s.image = render_glyph(patterns[k], spec.image_size, grid, spec.noise, rng);
      s.text = ds.key_words[k] + " " + kEntryVerb + " " + ds.value_words[value_of[k]];
      s.answer = ds.value_words[value_of[k]];
      ds.entries.push_back(std::move(s));
    }
  }

  for (size_t k = 0; k < spec.keys; ++k) {
    for (size_t r = 0; r < spec.variants; ++r) {
      QueryExample q;
      q.sample.id = k * spec.variants + r;
      q.sample.image = render_glyph(patterns[k], spec.image_size, grid, spec.noise, rng);
      q.sample.text = kQuestionText;
      q.sample.answer = ds.value_words[value_of[k]];
      q.exclude = {q.sample.id};  // leave-one-out against the paired entry
      ds.train_queries.push_back(std::move(q));
    }
  }
  for (size_t k = 0; k < spec.keys; ++k) {
    for (size_t e = 0; e < spec.eval_per_key; ++e) {
      QueryExample q;
      q.sample.id = kEvalIdBase + k * spec.eval_per_key + e;
      q.sample.image = render_glyph(patterns[k], spec.image_size, grid, spec.noise, rng);
      q.sample.text = kQuestionText;
      q.sample.answer = ds.value_words[value_of[k]];
      ds.eval_queries.push_back(std::move(q));
    }
  }

  // Answer tokens must be absent from every query's own content.
  {
    std::set<int> value_ids;
    for (const auto& w : ds.value_words) value_ids.insert(tokenize(w, vocab).ids[1]);
    for (int id : tokenize(kQuestionText, vocab).ids) {
      if (value_ids.count(id)) {
        throw DataError("make_synthetic_dataset: question text collides with a value token");
      }
    }
  }

  // Construction check: full-scan retrieval must place a sample carrying
  // the right answer inside the top hits for every query.
  DatastoreIndex index = DatastoreIndex::build(ds.entries, encoders.retrieval);
  auto check = [&](const QueryExample& q, bool record) {
    RetrievalResult res = index.retrieve(q.sample, spec.check_top_n,
                                         RetrievalMode::image_to_image, q.exclude,
                                         encoders.retrieval);
    bool found = false;
    std::vector<uint64_t> hit_ids;
    for (const auto& hit : res.hits) {
      hit_ids.push_back(hit.id);
      const MultimodalSample& s = index.sample(hit.id);
      if (s.answer && *s.answer == *q.sample.answer) found = true;
    }
    if (!found) {
      throw DataError("make_synthetic_dataset: query " + std::to_string(q.sample.id) +
                      " cannot reach its answer through top-" +
                      std::to_string(spec.check_top_n) +
                      " retrieval; spec is too small or too noisy");
    }
    if (record) ds.retrieval_truth[q.sample.id] = hit_ids;
  };
  for (const auto& q : ds.train_queries) check(q, false);
  for (const auto& q : ds.eval_queries) check(q, true);

  return ds;
}

namespace {

nlohmann::json query_to_json(const QueryExample& q) {
  nlohmann::json j;
  j["sample"] = sample_to_json(q.sample);
  j["exclude"] = std::vector<uint64_t>(q.exclude.begin(), q.exclude.end());
  j["generator_sees_image"] = q.generator_sees_image;
  return j;
}

}  // namespace

std::string SyntheticDataset::canonical_bytes() const {
  nlohmann::json j;
  j["spec"] = {{"keys", spec.keys},
               {"variants", spec.variants},
               {"values", spec.values},
               {"eval_per_key", spec.eval_per_key},
               {"image_size", spec.image_size},
               {"noise", spec.noise},
               {"check_top_n", spec.check_top_n}};
  j["key_words"] = key_words;
  j["value_words"] = value_words;
  j["entries"] = nlohmann::json::array();
  for (const auto& s : entries) j["entries"].push_back(sample_to_json(s));
  j["train_queries"] = nlohmann::json::array();
  for (const auto& q : train_queries) j["train_queries"].push_back(query_to_json(q));
  j["eval_queries"] = nlohmann::json::array();
  for (const auto& q : eval_queries) j["eval_queries"].push_back(query_to_json(q));
  j["retrieval_truth"] = nlohmann::json::object();
  for (const auto& [id, hits] : retrieval_truth) {
    j["retrieval_truth"][std::to_string(id)] = hits;
  }
  return j.dump();
}

}  // namespace camml
