#include "camml/training.hpp"

#include <chrono>
#include <cmath>

namespace camml {

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train: steps must be >= 1");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (shots_mode == Shots::mixed && shots_min > shots_max) {
    throw ConfigError("train: mixed shots range is empty");
  }
  if (shots_mode == Shots::fixed && shots_fixed < 1) {
    throw ConfigError("train: fixed shots must be >= 1");
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1,
                             double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params) {
    if (p->frozen || !p->tensor.requires_grad) {
      throw Error("optimizer: refusing frozen parameter " + p->name);
    }
    slots_.push_back({p, std::vector<double>(p->tensor.numel(), 0.0),
                      std::vector<double>(p->tensor.numel(), 0.0)});
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& slot : slots_) {
    auto& data = *slot.param->tensor.data;
    auto& grad = *slot.param->tensor.grad;
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& slot : slots_) slot.param->tensor.zero_grad();
}

size_t sample_shots(const TrainConfig& cfg, std::mt19937_64& rng) {
  if (cfg.shots_mode == TrainConfig::Shots::fixed) return cfg.shots_fixed;
  std::uniform_int_distribution<size_t> dist(cfg.shots_min, cfg.shots_max);
  return dist(rng);
}

Trainer::Trainer(Pipeline& model, const DatastoreIndex& index, const TrainConfig& cfg,
                 const TrainerOptions& opt)
    : model_(model),
      index_(index),
      cfg_(cfg),
      opt_(opt),
      optimizer_(model.trainable_parameters(), cfg.lr),
      rng_(cfg.seed) {
  cfg_.validate();
}

GeneratorInput Trainer::build_input(const QueryExample& ex, size_t shots) const {
  RetrievalResult hits =
      index_.retrieve(ex.sample, shots, opt_.retrieval_mode, ex.exclude,
                      model_.encoders().retrieval);
  std::vector<EncodedContext> contexts = model_.encode_contexts(index_, hits.hits);
  ForwardOptions fopt;
  fopt.ablation = opt_.ablation;
  fopt.feed_query_image = ex.generator_sees_image;
  return model_.prepare_input(ex.sample, contexts, fopt);
}

double Trainer::train_step(const std::vector<const QueryExample*>& batch) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  last_batch_histogram_.clear();

  Tensor total;
  for (const QueryExample* ex : batch) {
    const size_t shots = sample_shots(cfg_, rng_);
    ++last_batch_histogram_[shots];
    ++shots_histogram_[shots];
    GeneratorInput in = build_input(*ex, shots);
    if (in.target_ids.empty()) {
      throw DataError("train_step: query " + std::to_string(ex->sample.id) + " has no answer");
    }
    AssembledInput asm_in = model_.generator().assemble(in);
    Tensor logits = model_.generator().forward(asm_in.embeds);
    Tensor loss = model_.generator().loss(logits, asm_in.ids, asm_in.loss_mask);
    total = total.defined() ? add(total, loss) : loss;
  }
  Tensor mean_loss = scale(total, 1.0 / static_cast<double>(batch.size()));
  const double value = mean_loss.scalar();
  if (!std::isfinite(value)) {
    throw Error("train_step: non-finite loss " + std::to_string(value) + " at step " +
                std::to_string(step_count_ + 1) + " (batch of " +
                std::to_string(batch.size()) + ", lr " + std::to_string(cfg_.lr) + ")");
  }
  optimizer_.zero_grad();
  backward(mean_loss);
  optimizer_.step();
  ++step_count_;
  return value;
}

TrainResult Trainer::run(const std::vector<QueryExample>& train_queries,
                         const EvalHook& eval_hook) {
  if (train_queries.empty()) throw DataError("train: no training queries");
  TrainResult result;
  result.frozen_hash_before = model_.frozen_hash();

  std::uniform_int_distribution<size_t> pick(0, train_queries.size() - 1);
  for (size_t step = 0; step < cfg_.steps; ++step) {
    std::vector<const QueryExample*> batch;
    batch.reserve(cfg_.batch);
    for (size_t b = 0; b < cfg_.batch; ++b) batch.push_back(&train_queries[pick(rng_)]);

    const auto start = std::chrono::steady_clock::now();
    const double loss = train_step(batch);
    const auto end = std::chrono::steady_clock::now();

    StepRecord rec;
    rec.step = step + 1;
    rec.loss = loss;
    rec.shots_histogram = last_batch_histogram_;
    rec.wall_ms = std::chrono::duration<double, std::milli>(end - start).count();
    if (eval_hook && cfg_.eval_every > 0 && rec.step % cfg_.eval_every == 0) {
      rec.eval_accuracy = eval_hook(rec.step);
    }
    result.records.push_back(std::move(rec));
  }
  result.shots_histogram = shots_histogram_;
  result.frozen_hash_after = model_.frozen_hash();
  return result;
}

EvalResult evaluate(Pipeline& model, const DatastoreIndex& index,
                    const std::vector<QueryExample>& queries, size_t shots,
                    const TrainerOptions& opt, bool zero_prefix) {
  if (queries.empty()) throw DataError("evaluate: no queries");
  NoGradGuard ng;
  EvalResult result;
  size_t correct = 0;
  for (const auto& ex : queries) {
    if (!ex.sample.answer) {
      throw DataError("evaluate: query " + std::to_string(ex.sample.id) + " has no answer");
    }
    ForwardOptions fopt;
    fopt.ablation = opt.ablation;
    fopt.feed_query_image = ex.generator_sees_image;
    fopt.zero_prefix = zero_prefix;

    std::vector<EncodedContext> contexts;
    if (!zero_prefix) {
      RetrievalResult hits =
          index.retrieve(ex.sample, shots, opt.retrieval_mode, ex.exclude,
                         model.encoders().retrieval);
      contexts = model.encode_contexts(index, hits.hits);
    }
    GeneratorInput in = model.prepare_input(ex.sample, contexts, fopt);
    std::vector<int> expected = in.target_ids;
    in.target_ids.clear();

    GenerationRecord rec;
    rec.query_id = ex.sample.id;
    rec.expected = expected;
    rec.generated = model.generator().generate(in, expected.size() + 2);
    rec.match = rec.generated == expected;
    if (rec.match) ++correct;
    result.generations.push_back(std::move(rec));
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(queries.size());
  return result;
}

}  // namespace camml
