#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "camml/model.hpp"

namespace camml {

struct TrainConfig {
  size_t steps = 200;
  size_t batch = 8;
  double lr = 2e-5;
  uint64_t seed = 1;
  enum class Shots { fixed, mixed } shots_mode = Shots::mixed;
  size_t shots_fixed = 3;
  size_t shots_min = 1;
  size_t shots_max = 3;
  size_t eval_every = 0;  // 0 disables mid-run eval hooks

  void validate() const;
};

// Adam with bias correction; beta (0.9, 0.999), eps 1e-8. Parameters with
// all-zero grads keep zero moments, so untouched weights never drift.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();
  size_t steps_taken() const { return t_; }

 private:
  struct Slot {
    Parameter* param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  size_t t_ = 0;
};

// Draws N for one example: fixed -> the constant; mixed -> uniform over
// [shots_min, shots_max].
size_t sample_shots(const TrainConfig& cfg, std::mt19937_64& rng);

// One training or evaluation example: a query plus its leave-one-out
// exclusion set. The synthetic task keeps the generator blind to the query
// image (the retriever still sees it), so that flag lives here.
struct QueryExample {
  MultimodalSample sample;  // answer field carries the ground truth
  std::set<uint64_t> exclude;
  bool generator_sees_image = false;
};

struct TrainerOptions {
  RetrievalMode retrieval_mode = RetrievalMode::image_to_image;
  AblationMode ablation = AblationMode::full;
};

struct StepRecord {
  size_t step = 0;
  double loss = 0.0;
  std::map<size_t, size_t> shots_histogram;  // N -> count within the batch
  double wall_ms = 0.0;
  std::optional<double> eval_accuracy;  // present on eval_every steps
};

struct TrainResult {
  std::vector<StepRecord> records;
  std::map<size_t, size_t> shots_histogram;  // cumulative coverage counters
  uint64_t frozen_hash_before = 0;
  uint64_t frozen_hash_after = 0;
};

class Trainer {
 public:
  using EvalHook = std::function<double(size_t step)>;

  Trainer(Pipeline& model, const DatastoreIndex& index, const TrainConfig& cfg,
          const TrainerOptions& opt);

  // Retrieve -> encode -> fuse -> assemble -> forward -> loss -> backward
  // -> update, over one batch. Returns the mean loss. N is drawn per
  // example. Throws on a non-finite loss.
  double train_step(const std::vector<const QueryExample*>& batch);

  // When eval_every > 0 the hook runs every eval_every steps; its return
  // value lands in that step's record. Evaluation is read-only, so the
  // loss trace is unchanged by it.
  TrainResult run(const std::vector<QueryExample>& train_queries,
                  const EvalHook& eval_hook = nullptr);

  const std::map<size_t, size_t>& shots_histogram() const { return shots_histogram_; }

 private:
  GeneratorInput build_input(const QueryExample& ex, size_t shots) const;

  Pipeline& model_;
  const DatastoreIndex& index_;
  TrainConfig cfg_;
  TrainerOptions opt_;
  AdamOptimizer optimizer_;
  std::mt19937_64 rng_;
  std::map<size_t, size_t> shots_histogram_;
  std::map<size_t, size_t> last_batch_histogram_;
  size_t step_count_ = 0;
};

struct GenerationRecord {
  uint64_t query_id = 0;
  std::vector<int> generated;
  std::vector<int> expected;
  bool match = false;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<GenerationRecord> generations;
};

// Greedy generation against each query's answer tokens, exact match.
EvalResult evaluate(Pipeline& model, const DatastoreIndex& index,
                    const std::vector<QueryExample>& queries, size_t shots,
                    const TrainerOptions& opt, bool zero_prefix = false);

}  // namespace camml
