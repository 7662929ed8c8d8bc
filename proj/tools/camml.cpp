#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "camml/harness.hpp"

namespace {

std::vector<size_t> parse_size_list(const std::string& csv, const char* what) {
  std::vector<size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw camml::ConfigError(std::string(what) + ": bad list entry '" + item + "'");
    }
  }
  if (out.empty()) throw camml::ConfigError(std::string(what) + ": empty list");
  return out;
}

std::string words_for_ids(const std::vector<int>& ids, const camml::SyntheticDataset& ds,
                          size_t vocab) {
  std::string text;
  for (int id : ids) {
    if (!text.empty()) text += " ";
    if (id == camml::kEosToken) {
      text += "<eos>";
      continue;
    }
    if (id == camml::kBosToken) {
      text += "<bos>";
      continue;
    }
    bool named = false;
    for (const auto& w : ds.value_words) {
      if (camml::tokenize(w, vocab).ids[1] == id) {
        text += w;
        named = true;
        break;
      }
    }
    if (!named) text += "<tok" + std::to_string(id) + ">";
  }
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context-aware multimodal pipeline: retrieval datastore, token-budget "
               "perceiver and causal generator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string checkpoint_path;
  std::string index_path;
  std::string samples_path;
  std::string mode_str;
  std::string axis_str = "layers";
  std::string values_csv;
  std::string shots_csv;
  uint64_t query_id = 0;
  uint64_t seed_override = 0;
  bool have_seed_override = false;
  bool exclude_self = false;
  bool eval_query = false;
  size_t retrieve_n = 3;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file")->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option_function<uint64_t>(
        "--seed",
        [&](uint64_t v) {
          seed_override = v;
          have_seed_override = true;
        },
        "override [model]/[train] seeds");
  };

  CLI::App* cmd_make = app.add_subcommand("make-data", "generate the synthetic dataset and index");
  add_common(cmd_make);

  CLI::App* cmd_index = app.add_subcommand("build-index", "build a datastore index from a sample dump");
  add_common(cmd_index);
  cmd_index->add_option("--samples", samples_path, "dataset JSON produced by make-data");

  CLI::App* cmd_retrieve = app.add_subcommand("retrieve", "inspect top-n retrieval for a datastore entry");
  add_common(cmd_retrieve);
  cmd_retrieve->add_option("--query-id", query_id, "datastore id to query with")->required();
  cmd_retrieve->add_option("--n", retrieve_n, "number of hits");
  cmd_retrieve->add_option("--index", index_path, "index file (defaults to [datastore] path)");
  cmd_retrieve->add_option("--mode", mode_str, "text_to_image or image_to_image");
  cmd_retrieve->add_flag("--exclude-self", exclude_self, "exclude the query id from results");

  CLI::App* cmd_train = app.add_subcommand("train", "train on the synthetic task");
  add_common(cmd_train);

  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(cmd_eval);
  cmd_eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  cmd_eval->add_option("--shots", shots_csv, "comma list of shot counts");

  CLI::App* cmd_ablate = app.add_subcommand("ablate", "run the perceiver component ablation grid");
  add_common(cmd_ablate);

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "hyperparameter sweep");
  add_common(cmd_sweep);
  cmd_sweep->add_option("--axis", axis_str, "layers, m or hidden")->required();
  cmd_sweep->add_option("--values", values_csv, "comma list of axis values")->required();

  CLI::App* cmd_bench = app.add_subcommand("bench-cost", "inference cost scaling benchmark");
  add_common(cmd_bench);
  cmd_bench->add_option("--shots", shots_csv, "comma list of shot counts");

  CLI::App* cmd_generate = app.add_subcommand("generate", "greedy generation for one query");
  add_common(cmd_generate);
  cmd_generate->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  cmd_generate->add_option("--query-id", query_id, "query index");
  cmd_generate->add_flag("--eval-query", eval_query, "pick from eval queries instead of train");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    camml::RunConfig cfg = camml::RunConfig::parse_file(config_path);
    if (have_seed_override) {
      cfg.seed = seed_override;
      cfg.train.seed = seed_override;
    }
    namespace fs = std::filesystem;

    if (app.got_subcommand(cmd_make)) {
      camml::Pipeline model(cfg.pipeline_config());
      camml::SyntheticDataset ds =
          camml::make_synthetic_dataset(cfg.task, cfg.train.seed, model.encoders());
      camml::DatastoreIndex index =
          camml::DatastoreIndex::build(ds.entries, model.encoders().retrieval);
      fs::create_directories(out_dir);
      {
        std::ofstream os(fs::path(out_dir) / "dataset.json", std::ios::trunc);
        os << ds.canonical_bytes();
      }
      index.save((fs::path(out_dir) / "index.cmix").string());
      std::cout << "wrote " << ds.entries.size() << " entries, " << ds.train_queries.size()
                << " train queries, " << ds.eval_queries.size() << " eval queries to "
                << out_dir << "\n";
    } else if (app.got_subcommand(cmd_index)) {
      if (samples_path.empty()) {
        samples_path = (fs::path(out_dir) / "dataset.json").string();
      }
      std::ifstream is(samples_path);
      if (!is) throw camml::DataError("samples file not found: " + samples_path);
      nlohmann::json j;
      try {
        is >> j;
      } catch (const nlohmann::json::exception& e) {
        throw camml::FormatError(samples_path + ": " + e.what());
      }
      std::vector<camml::MultimodalSample> samples;
      for (const auto& e : j.at("entries")) samples.push_back(camml::sample_from_json(e));
      camml::EncoderSet encoders(cfg.pipeline_config().encoder);
      camml::DatastoreIndex index = camml::DatastoreIndex::build(samples, encoders.retrieval);
      fs::create_directories(out_dir);
      const std::string path = (fs::path(out_dir) / "index.cmix").string();
      index.save(path);
      std::cout << "indexed " << index.count() << " samples into " << path << "\n";
    } else if (app.got_subcommand(cmd_retrieve)) {
      if (index_path.empty()) index_path = cfg.datastore_path;
      if (index_path.empty()) {
        throw camml::ConfigError("retrieve: no --index given and [datastore] path is empty");
      }
      camml::DatastoreIndex index = camml::DatastoreIndex::load(index_path);
      camml::EncoderSet encoders(cfg.pipeline_config().encoder);
      // Inspection defaults to image->image similarity; pass --mode to
      // query with the entry's text instead.
      camml::RetrievalMode mode = camml::RetrievalMode::image_to_image;
      if (!mode_str.empty()) {
        if (mode_str == "text_to_image") mode = camml::RetrievalMode::text_to_image;
        else if (mode_str == "image_to_image") mode = camml::RetrievalMode::image_to_image;
        else throw camml::ConfigError("retrieve: unknown mode " + mode_str);
      }
      std::set<uint64_t> exclude;
      if (exclude_self) exclude.insert(query_id);
      camml::RetrievalResult res =
          index.retrieve(index.sample(query_id), retrieve_n, mode, exclude, encoders.retrieval);
      for (const auto& hit : res.hits) {
        std::cout << hit.id << " " << hit.score << "\n";
      }
      if (res.flagged_short) {
        std::cerr << "note: only " << res.hits.size() << " entries available\n";
      }
    } else if (app.got_subcommand(cmd_train)) {
      camml::TrainOutcome t = camml::run_training(cfg, out_dir, /*write_artifacts=*/true);
      std::cout << "final loss " << t.result.records.back().loss << ", eval accuracy "
                << t.eval_accuracy << ", zero-prefix control " << t.control_accuracy << "\n";
      std::cout << "checkpoint: " << (fs::path(out_dir) / "checkpoint.cmml").string() << "\n";
    } else if (app.got_subcommand(cmd_eval)) {
      std::vector<size_t> shots = shots_csv.empty()
                                      ? std::vector<size_t>{cfg.eval_shots}
                                      : parse_size_list(shots_csv, "eval --shots");
      camml::EvalOutcome e = camml::run_eval(cfg, checkpoint_path, shots, out_dir);
      std::cout << "shots,accuracy\n";
      for (const auto& row : e.rows) std::cout << row.shots << "," << row.accuracy << "\n";
    } else if (app.got_subcommand(cmd_ablate)) {
      camml::AblationOutcome a = camml::run_ablation(cfg, out_dir);
      std::cout << "variant,accuracy\n";
      for (const auto& row : a.variants) std::cout << row.variant << "," << row.accuracy << "\n";
      std::cout << "zero_prefix_control," << a.control_accuracy << "\n";
    } else if (app.got_subcommand(cmd_sweep)) {
      auto kind = camml::SweepAxis::kind_from_name(axis_str);
      auto values = parse_size_list(values_csv, "sweep --values");
      auto rows = camml::run_sweep(cfg, kind, values, out_dir);
      std::cout << "value,accuracy,prefix_tokens,trainable_elements,median_step_ms\n";
      for (const auto& r : rows) {
        std::cout << r.value << "," << r.accuracy << "," << r.prefix_tokens << ","
                  << r.trainable_elements << "," << r.median_step_ms << "\n";
      }
    } else if (app.got_subcommand(cmd_bench)) {
      std::vector<size_t> shots = shots_csv.empty()
                                      ? std::vector<size_t>{1, 2, 4, 8, 16, 32}
                                      : parse_size_list(shots_csv, "bench-cost --shots");
      auto [camml_rep, base_rep] = camml::run_bench_cost(cfg, shots, out_dir);
      std::cout << "variant,shots,prefix_tokens,median_forward_ms\n";
      for (const auto* rep : {&camml_rep, &base_rep}) {
        for (const auto& r : rep->rows) {
          std::cout << rep->variant << "," << r.shots << "," << r.prefix_tokens << ",";
          if (r.overflow) std::cout << "overflow";
          else std::cout << r.median_forward_ms;
          std::cout << "\n";
        }
      }
    } else if (app.got_subcommand(cmd_generate)) {
      camml::Pipeline model(cfg.pipeline_config());
      model.load(checkpoint_path);
      camml::SyntheticDataset ds =
          camml::make_synthetic_dataset(cfg.task, cfg.train.seed, model.encoders());
      camml::DatastoreIndex index =
          camml::DatastoreIndex::build(ds.entries, model.encoders().retrieval);
      const auto& pool = eval_query ? ds.eval_queries : ds.train_queries;
      const camml::QueryExample* picked = nullptr;
      for (const auto& q : pool) {
        if (q.sample.id == query_id) picked = &q;
      }
      if (!picked) {
        throw camml::DataError("generate: no query with id " + std::to_string(query_id));
      }
      camml::TrainerOptions topt;
      topt.retrieval_mode = cfg.retrieval_mode;
      topt.ablation = cfg.ablation;
      camml::EvalResult res = camml::evaluate(model, index, {*picked}, cfg.eval_shots, topt);
      const auto& g = res.generations.front();
      const size_t vocab = cfg.pipeline_config().encoder.vocab;
      std::cout << "query " << g.query_id << ": generated '"
                << words_for_ids(g.generated, ds, vocab) << "', expected '"
                << words_for_ids(g.expected, ds, vocab) << "' ("
                << (g.match ? "match" : "mismatch") << ")\n";
    }
    return 0;
  } catch (const camml::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
