#include "camml/harness.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

namespace camml {

namespace {

namespace fs = std::filesystem;

void ensure_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir + ": " + ec.message());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

nlohmann::json generations_json(const std::vector<GenerationRecord>& gens) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : gens) {
    arr.push_back({{"query_id", g.query_id},
                   {"generated", g.generated},
                   {"expected", g.expected},
                   {"match", g.match}});
  }
  return arr;
}

void write_train_log(const std::string& path, const TrainResult& result) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path + " for writing");
  for (const auto& rec : result.records) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [n, count] : rec.shots_histogram) hist[std::to_string(n)] = count;
    nlohmann::json line{{"step", rec.step},
                        {"loss", rec.loss},
                        {"shots_histogram", hist},
                        {"wall_ms", rec.wall_ms}};
    if (rec.eval_accuracy) line["eval_accuracy"] = *rec.eval_accuracy;
    os << line.dump() << "\n";
  }
}

}  // namespace

void write_results(const std::string& out_dir, const std::string& name,
                   const std::string& csv_header, const std::vector<std::string>& csv_rows,
                   const RunConfig& cfg, const nlohmann::json& extra) {
  ensure_dir(out_dir);
  const fs::path base = fs::path(out_dir) / name;
  {
    std::ofstream os(base.string() + ".csv", std::ios::trunc);
    if (!os) throw DataError("cannot open " + base.string() + ".csv for writing");
    os << csv_header << "\n";
    for (const auto& row : csv_rows) os << row << "\n";
  }
  {
    nlohmann::json j = cfg.to_json();
    j["results"] = extra;
    std::ofstream os(base.string() + ".json", std::ios::trunc);
    if (!os) throw DataError("cannot open " + base.string() + ".json for writing");
    os << j.dump(2) << "\n";
  }
}

TrainOutcome run_training(const RunConfig& cfg, const std::string& out_dir,
                          bool write_artifacts) {
  Pipeline model(cfg.pipeline_config());
  SyntheticDataset ds = make_synthetic_dataset(cfg.task, cfg.train.seed, model.encoders());
  DatastoreIndex index = DatastoreIndex::build(ds.entries, model.encoders().retrieval);

  TrainerOptions topt;
  topt.retrieval_mode = cfg.retrieval_mode;
  topt.ablation = cfg.ablation;

  Trainer trainer(model, index, cfg.train, topt);
  Trainer::EvalHook hook;
  if (cfg.train.eval_every > 0) {
    hook = [&](size_t) {
      return evaluate(model, index, ds.eval_queries, cfg.eval_shots, topt).accuracy;
    };
  }
  TrainOutcome out;
  out.result = trainer.run(ds.train_queries, hook);

  out.eval_accuracy =
      evaluate(model, index, ds.eval_queries, cfg.eval_shots, topt).accuracy;
  out.control_accuracy =
      evaluate(model, index, ds.eval_queries, cfg.eval_shots, topt, /*zero_prefix=*/true)
          .accuracy;

  for (auto* p : model.trainable_parameters()) out.trainable_elements += p->tensor.numel();
  std::vector<double> step_ms;
  for (const auto& rec : out.result.records) step_ms.push_back(rec.wall_ms);
  out.median_step_ms = median(step_ms);

  if (write_artifacts) {
    ensure_dir(out_dir);
    model.save((fs::path(out_dir) / "checkpoint.cmml").string());
    index.save((fs::path(out_dir) / "index.cmix").string());
    write_train_log((fs::path(out_dir) / "train_log.jsonl").string(), out.result);

    std::vector<std::string> rows;
    rows.push_back("retrieved," + std::to_string(out.eval_accuracy));
    rows.push_back("zero_prefix_control," + std::to_string(out.control_accuracy));
    nlohmann::json extra{{"eval_accuracy", out.eval_accuracy},
                         {"control_accuracy", out.control_accuracy},
                         {"trainable_elements", out.trainable_elements},
                         {"median_step_ms", out.median_step_ms},
                         {"final_loss", out.result.records.back().loss},
                         {"frozen_hash_before", out.result.frozen_hash_before},
                         {"frozen_hash_after", out.result.frozen_hash_after},
                         {"published_reference",
                          {{"scienceqa_avg_7b", 91.32},
                           {"note", "full-scale published accuracy, for context only; "
                                    "not reproducible at desk scale"}}}};
    write_results(out_dir, "train_summary", "condition,accuracy", rows, cfg, extra);
  }
  return out;
}

EvalOutcome run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                     const std::vector<size_t>& shots_list, const std::string& out_dir) {
  if (shots_list.empty()) throw DataError("eval: empty shots list");
  Pipeline model(cfg.pipeline_config());
  model.load(checkpoint_path);
  SyntheticDataset ds = make_synthetic_dataset(cfg.task, cfg.train.seed, model.encoders());
  DatastoreIndex index = DatastoreIndex::build(ds.entries, model.encoders().retrieval);

  TrainerOptions topt;
  topt.retrieval_mode = cfg.retrieval_mode;
  topt.ablation = cfg.ablation;

  EvalOutcome out;
  std::vector<std::string> rows;
  for (size_t shots : shots_list) {
    EvalResult r = evaluate(model, index, ds.eval_queries, shots, topt);
    out.rows.push_back({shots, r.accuracy});
    out.generations = std::move(r.generations);
    rows.push_back(std::to_string(shots) + "," + std::to_string(out.rows.back().accuracy));
  }
  nlohmann::json extra{{"generations", generations_json(out.generations)}};
  extra["per_shots_accuracy"] = nlohmann::json::array();
  for (const auto& r : out.rows) {
    extra["per_shots_accuracy"].push_back({{"shots", r.shots}, {"accuracy", r.accuracy}});
  }
  write_results(out_dir, "eval", "shots,accuracy", rows, cfg, extra);
  return out;
}

AblationOutcome run_ablation(const RunConfig& cfg, const std::string& out_dir) {
  struct VariantSpec {
    const char* name;
    AblationMode mode;
    bool share_cp;
    double published_reference;  // ScienceQA averages, recorded as documentation
  };
  // Published full-scale reference accuracies; explicitly not
  // reproducible at desk scale and never asserted.
  const VariantSpec variants[] = {
      {"full", AblationMode::full, true, 91.3},
      {"no_perceiver", AblationMode::no_perceiver, true, 89.7},
      {"no_vp", AblationMode::no_vp, true, 89.8},
      {"no_lp", AblationMode::no_lp, true, 90.0},
      {"full_unshared_cp", AblationMode::full, false, 91.3},
  };

  AblationOutcome out;
  nlohmann::json dumps = nlohmann::json::object();
  for (const auto& v : variants) {
    RunConfig vcfg = cfg;
    vcfg.ablation = v.mode;
    vcfg.perceiver.share_context_weights = v.share_cp;

    Pipeline model(vcfg.pipeline_config());
    SyntheticDataset ds = make_synthetic_dataset(vcfg.task, vcfg.train.seed, model.encoders());
    DatastoreIndex index = DatastoreIndex::build(ds.entries, model.encoders().retrieval);
    TrainerOptions topt;
    topt.retrieval_mode = vcfg.retrieval_mode;
    topt.ablation = v.mode;
    Trainer trainer(model, index, vcfg.train, topt);
    TrainResult tr = trainer.run(ds.train_queries);

    EvalResult er = evaluate(model, index, ds.eval_queries, vcfg.eval_shots, topt);
    out.variants.push_back({v.name, er.accuracy, tr.records.back().loss, v.published_reference});
    dumps[v.name] = generations_json(er.generations);

    if (v.mode == AblationMode::full && v.share_cp) {
      out.control_accuracy =
          evaluate(model, index, ds.eval_queries, vcfg.eval_shots, topt, /*zero_prefix=*/true)
              .accuracy;
    }
  }

  std::vector<std::string> rows;
  for (const auto& r : out.variants) {
    rows.push_back(r.variant + "," + std::to_string(r.accuracy) + "," +
                   std::to_string(r.final_loss) + "," + std::to_string(r.published_reference));
  }
  rows.push_back("zero_prefix_control," + std::to_string(out.control_accuracy) + ",,");
  nlohmann::json extra{
      {"control_accuracy", out.control_accuracy},
      {"published_reference_note",
       "reference column reproduces published full-scale numbers for context only; "
       "not reproducible at desk scale"},
      {"generations", dumps}};
  write_results(out_dir, "ablation", "variant,accuracy,final_loss,reference", rows, cfg, extra);
  return out;
}

SweepAxis::Kind SweepAxis::kind_from_name(const std::string& name) {
  if (name == "layers") return Kind::layers;
  if (name == "m") return Kind::m;
  if (name == "hidden") return Kind::hidden;
  throw ConfigError("sweep: unknown axis '" + name + "' (expected layers, m or hidden)");
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg, SweepAxis::Kind axis,
                                const std::vector<size_t>& values, const std::string& out_dir) {
  if (values.empty()) throw DataError("sweep: empty axis value list");
  std::vector<SweepRow> out;
  for (size_t value : values) {
    RunConfig vcfg = cfg;
    switch (axis) {
      case SweepAxis::Kind::layers: vcfg.perceiver.layers = value; break;
      case SweepAxis::Kind::m: vcfg.perceiver.m = value; break;
      case SweepAxis::Kind::hidden: vcfg.perceiver.width = value; break;
    }
    vcfg.perceiver.validate();
    TrainOutcome t = run_training(vcfg, out_dir, /*write_artifacts=*/false);
    out.push_back({value, t.eval_accuracy, vcfg.perceiver.m, t.trainable_elements,
                   t.median_step_ms});
  }

  const char* axis_name = axis == SweepAxis::Kind::layers ? "layers"
                          : axis == SweepAxis::Kind::m    ? "m"
                                                          : "hidden";
  std::vector<std::string> rows;
  for (const auto& r : out) {
    rows.push_back(std::to_string(r.value) + "," + std::to_string(r.accuracy) + "," +
                   std::to_string(r.prefix_tokens) + "," +
                   std::to_string(r.trainable_elements) + "," +
                   std::to_string(r.median_step_ms));
  }
  nlohmann::json extra{{"axis", axis_name}};
  write_results(out_dir, std::string("sweep_") + axis_name,
                "value,accuracy,prefix_tokens,trainable_elements,median_step_ms", rows, cfg,
                extra);
  return out;
}

namespace {

// Homogeneous benchmark sample: 16 vision tokens (16x16 image, patch 4)
// plus 8 text tokens.
MultimodalSample bench_sample(uint64_t id, size_t image_size) {
  MultimodalSample s;
  s.id = id;
  RawImage img;
  img.width = image_size;
  img.height = image_size;
  img.pixels.assign(image_size * image_size * 3, 0.0);
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<double>((i * 2654435761ULL + id) % 1000) / 1000.0;
  }
  s.image = img;
  s.text = "sample item alpha beta gamma " + std::to_string(id);
  return s;
}

}  // namespace

std::pair<CostReport, CostReport> run_bench_cost(const RunConfig& cfg,
                                                 const std::vector<size_t>& shots_list,
                                                 const std::string& out_dir, size_t timed_runs,
                                                 size_t warmups) {
  if (shots_list.empty()) throw DataError("bench-cost: empty shots list");
  Pipeline model(cfg.pipeline_config());
  const size_t max_shots = *std::max_element(shots_list.begin(), shots_list.end());

  std::vector<EncodedContext> contexts;
  for (size_t i = 0; i < max_shots; ++i) {
    MultimodalSample s = bench_sample(i, 16);
    contexts.push_back(model.encoders().encode_sample(s.image, s.text, s.id));
  }
  MultimodalSample query = bench_sample(9999, 16);
  query.image.reset();  // text-only query keeps both variants identical past the prefix

  CostReport camml_report{"camml", {}};
  CostReport baseline_report{"no_perceiver", {}};

  auto run_variant = [&](AblationMode mode, CostReport& report, size_t shots) {
    NoGradGuard ng;
    std::vector<EncodedContext> slice(contexts.begin(),
                                      contexts.begin() + static_cast<std::ptrdiff_t>(shots));
    ForwardOptions fopt;
    fopt.ablation = mode;
    fopt.feed_query_image = false;

    CostRow row;
    row.shots = shots;
    GeneratorInput in = model.prepare_input(query, slice, fopt);
    row.prefix_tokens = in.prefix.tokens.rows();
    AssembledInput asm_in;
    try {
      asm_in = model.generator().assemble(in);
    } catch (const DataError&) {
      row.overflow = true;  // baseline outgrew max_seq: the scaling point itself
      report.rows.push_back(std::move(row));
      return;
    }
    for (size_t w = 0; w < warmups; ++w) model.generator().forward(asm_in.embeds);
    alloc_stats().reset_peak();
    const uint64_t live_before = alloc_stats().live_bytes;
    model.generator().forward(asm_in.embeds);
    row.peak_alloc_bytes = alloc_stats().peak_bytes - live_before;
    for (size_t r = 0; r < timed_runs; ++r) {
      const auto start = std::chrono::steady_clock::now();
      Tensor logits = model.generator().forward(asm_in.embeds);
      const auto end = std::chrono::steady_clock::now();
      row.raw_ms.push_back(std::chrono::duration<double, std::milli>(end - start).count());
    }
    row.median_forward_ms = median(row.raw_ms);
    report.rows.push_back(std::move(row));
  };

  std::vector<size_t> sorted_shots = shots_list;
  std::sort(sorted_shots.begin(), sorted_shots.end());
  for (size_t shots : sorted_shots) {
    run_variant(AblationMode::full, camml_report, shots);
    run_variant(AblationMode::no_perceiver, baseline_report, shots);
  }

  std::vector<std::string> rows;
  nlohmann::json raw = nlohmann::json::array();
  for (const CostReport* rep : {&camml_report, &baseline_report}) {
    for (const auto& r : rep->rows) {
      rows.push_back(rep->variant + "," + std::to_string(r.shots) + "," +
                     std::to_string(r.prefix_tokens) + "," +
                     (r.overflow ? "overflow" : std::to_string(r.median_forward_ms)) + "," +
                     std::to_string(r.peak_alloc_bytes));
      raw.push_back({{"variant", rep->variant},
                     {"shots", r.shots},
                     {"prefix_tokens", r.prefix_tokens},
                     {"overflow", r.overflow},
                     {"median_forward_ms", r.median_forward_ms},
                     {"peak_alloc_bytes", r.peak_alloc_bytes},
                     {"raw_ms", r.raw_ms}});
    }
  }
  write_results(out_dir, "bench_cost", "variant,shots,prefix_tokens,median_forward_ms,peak_alloc_bytes",
                rows, cfg, nlohmann::json{{"rows", raw}});

  // Plot recipe next to the CSV; keeps the artifact free of plotting deps.
  {
    ensure_dir(out_dir);
    std::ofstream os(std::filesystem::path(out_dir) / "bench_cost.gp", std::ios::trunc);
    os << "set datafile separator ','\n"
       << "set key left top\n"
       << "set xlabel 'context samples N'\n"
       << "set ylabel 'median generator forward (ms)'\n"
       << "plot '< grep ^camml, bench_cost.csv' using 2:4 with linespoints title 'camml', \\\n"
       << "     '< grep ^no_perceiver, bench_cost.csv' using 2:4 with linespoints title "
          "'no perceiver'\n";
  }
  return {camml_report, baseline_report};
}

}  // namespace camml
