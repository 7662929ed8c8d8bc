#include "camml/config.hpp"

#include <fstream>
#include <sstream>

namespace camml {

#ifndef CAMML_BUILD_ID
#define CAMML_BUILD_ID "unknown"
#endif

const std::string& build_id() {
  static const std::string id = CAMML_BUILD_ID;
  return id;
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

uint64_t parse_u64(const std::string& v, const std::string& where) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: " + where + ": expected an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& where) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: " + where + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: " + where + ": expected true or false, got '" + v + "'");
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "encoder" && section != "perceiver" &&
          section != "generator" && section != "train" && section != "task" &&
          section != "retrieval" && section != "datastore" && section != "ablation") {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" +
                          section + "]");
      }
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string where = "[" + section + "] " + key;

    if (section == "model") {
      if (key == "seed") cfg.seed = parse_u64(value, where);
      else if (key == "d") cfg.d = parse_u64(value, where);
      else throw ConfigError("config: unknown key " + where);
    } else if (section == "encoder") {
      if (key == "d_r") cfg.encoder.d_r = parse_u64(value, where);
      else if (key == "patch") cfg.encoder.patch = parse_u64(value, where);
      else if (key == "vocab") cfg.encoder.vocab = parse_u64(value, where);
      else throw ConfigError("config: unknown key " + where);
    } else if (section == "perceiver") {
      if (key == "layers") cfg.perceiver.layers = parse_u64(value, where);
      else if (key == "width") cfg.perceiver.width = parse_u64(value, where);
      else if (key == "heads") cfg.perceiver.heads = parse_u64(value, where);
      else if (key == "m") cfg.perceiver.m = parse_u64(value, where);
      else if (key == "share_context_weights")
        cfg.perceiver.share_context_weights = parse_bool(value, where);
      else throw ConfigError("config: unknown key " + where);
    } else if (section == "generator") {
      if (key == "layers") cfg.generator.layers = parse_u64(value, where);
      else if (key == "heads") cfg.generator.heads = parse_u64(value, where);
      else if (key == "max_seq") cfg.generator.max_seq = parse_u64(value, where);
      else throw ConfigError("config: unknown key " + where);
    } else if (section == "train") {
      if (key == "steps") cfg.train.steps = parse_u64(value, where);
      else if (key == "batch") cfg.train.batch = parse_u64(value, where);
      else if (key == "lr") cfg.train.lr = parse_double(value, where);
      else if (key == "seed") cfg.train.seed = parse_u64(value, where);
      else if (key == "shots_mode") {
        if (value == "fixed") cfg.train.shots_mode = TrainConfig::Shots::fixed;
        else if (value == "mixed") cfg.train.shots_mode = TrainConfig::Shots::mixed;
        else throw ConfigError("config: " + where + ": expected fixed or mixed");
      } else if (key == "shots_fixed") cfg.train.shots_fixed = parse_u64(value, where);
      else if (key == "shots_min") cfg.train.shots_min = parse_u64(value, where);
      else if (key == "shots_max") cfg.train.shots_max = parse_u64(value, where);
      else if (key == "eval_every") cfg.train.eval_every = parse_u64(value, where);
      else throw ConfigError("config: unknown key " + where);
    } else if (section == "task") {
      if (key == "keys") cfg.task.keys = parse_u64(value, where);
      else if (key == "variants") cfg.task.variants = parse_u64(value, where);
      else if (key == "values") cfg.task.values = parse_u64(value, where);
      else if (key == "eval_per_key") cfg.task.eval_per_key = parse_u64(value, where);
      else if (key == "image_size") cfg.task.image_size = parse_u64(value, where);
      else if (key == "noise") cfg.task.noise = parse_double(value, where);
      else if (key == "check_top_n") cfg.task.check_top_n = parse_u64(value, where);
      else throw ConfigError("config: unknown key " + where);
    } else if (section == "retrieval") {
      if (key == "mode") {
        if (value == "text_to_image") cfg.retrieval_mode = RetrievalMode::text_to_image;
        else if (value == "image_to_image") cfg.retrieval_mode = RetrievalMode::image_to_image;
        else throw ConfigError("config: " + where + ": expected text_to_image or image_to_image");
      } else if (key == "eval_shots") cfg.eval_shots = parse_u64(value, where);
      else throw ConfigError("config: unknown key " + where);
    } else if (section == "datastore") {
      if (key == "path") cfg.datastore_path = value;
      else throw ConfigError("config: unknown key " + where);
    } else if (section == "ablation") {
      if (key == "mode") cfg.ablation = ablation_from_name(value);
      else throw ConfigError("config: unknown key " + where);
    } else {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": key outside of any section");
    }
  }
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("config file not found: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "[model]\n"
     << "seed = " << seed << "\n"
     << "d = " << d << "\n\n";
  os << "[encoder]\n"
     << "d_r = " << encoder.d_r << "\n"
     << "patch = " << encoder.patch << "\n"
     << "vocab = " << encoder.vocab << "\n\n";
  os << "[perceiver]\n"
     << "layers = " << perceiver.layers << "\n"
     << "width = " << perceiver.width << "\n"
     << "heads = " << perceiver.heads << "\n"
     << "m = " << perceiver.m << "\n"
     << "share_context_weights = " << (perceiver.share_context_weights ? "true" : "false")
     << "\n\n";
  os << "[generator]\n"
     << "layers = " << generator.layers << "\n"
     << "heads = " << generator.heads << "\n"
     << "max_seq = " << generator.max_seq << "\n\n";
  os << "[train]\n"
     << "steps = " << train.steps << "\n"
     << "batch = " << train.batch << "\n"
     << "lr = " << train.lr << "\n"
     << "seed = " << train.seed << "\n"
     << "shots_mode = " << (train.shots_mode == TrainConfig::Shots::fixed ? "fixed" : "mixed")
     << "\n"
     << "shots_fixed = " << train.shots_fixed << "\n"
     << "shots_min = " << train.shots_min << "\n"
     << "shots_max = " << train.shots_max << "\n"
     << "eval_every = " << train.eval_every << "\n\n";
  os << "[task]\n"
     << "keys = " << task.keys << "\n"
     << "variants = " << task.variants << "\n"
     << "values = " << task.values << "\n"
     << "eval_per_key = " << task.eval_per_key << "\n"
     << "image_size = " << task.image_size << "\n"
     << "noise = " << task.noise << "\n"
     << "check_top_n = " << task.check_top_n << "\n\n";
  os << "[retrieval]\n"
     << "mode = "
     << (retrieval_mode == RetrievalMode::text_to_image ? "text_to_image" : "image_to_image")
     << "\n"
     << "eval_shots = " << eval_shots << "\n\n";
  os << "[datastore]\n"
     << "path = " << datastore_path << "\n\n";
  os << "[ablation]\n"
     << "mode = " << ablation_name(ablation) << "\n";
  return os.str();
}

nlohmann::json RunConfig::to_json() const {
  return nlohmann::json{{"config_text", serialize()}, {"build_id", build_id()}};
}

PipelineConfig RunConfig::pipeline_config() const {
  PipelineConfig pc;
  pc.seed = seed;
  pc.encoder = encoder;
  pc.encoder.seed = seed;
  pc.encoder.d = d;
  pc.perceiver = perceiver;
  pc.perceiver.d = d;
  pc.generator = generator;
  pc.generator.d = d;
  pc.generator.vocab = encoder.vocab;
  return pc;
}

}  // namespace camml
