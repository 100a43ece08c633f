#include "segnas/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace segnas {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
}

AuxMode to_aux(const std::string& key, const std::string& v) {
  if (v == "none") return AuxMode::None;
  if (v == "classifier") return AuxMode::Classifier;
  if (v == "cell") return AuxMode::Cell;
  throw ConfigError("key '" + key + "': expected none|classifier|cell, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

const char* aux_name(AuxMode aux) {
  switch (aux) {
    case AuxMode::None: return "none";
    case AuxMode::Classifier: return "classifier";
    case AuxMode::Cell: return "cell";
  }
  return "?";
}

}  // namespace

void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"task.image_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.image_size = to_int(k, v); }},
      {"task.num_classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.num_classes = to_int(k, v); }},
      {"task.min_shapes", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.min_shapes = to_int(k, v); }},
      {"task.max_shapes", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.max_shapes = to_int(k, v); }},
      {"task.noise", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.noise = to_double(k, v); }},
      {"task.meta_train", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.meta_train = to_int(k, v); }},
      {"task.meta_val", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.meta_val = to_int(k, v); }},
      {"task.holdout", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.holdout = to_int(k, v); }},
      {"task.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.task.seed = to_u64(k, v); }},
      {"search.total_architectures", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.total_architectures = to_int(k, v); }},
      {"search.max_new_architectures", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.max_new_architectures = to_int(k, v); }},
      {"search.stage1_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.stage1_epochs = to_int(k, v); }},
      {"search.stage2_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.stage2_epochs = to_int(k, v); }},
      {"search.p_start", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.p_start = to_double(k, v); }},
      {"search.p_end", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.p_end = to_double(k, v); }},
      {"search.polyak_decay1", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.polyak_decay1 = to_double(k, v); }},
      {"search.polyak_decay2", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.polyak_decay2 = to_double(k, v); }},
      {"search.kd_coeff", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.kd_coeff = to_double(k, v); }},
      {"search.aux_coeff", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.aux_coeff = to_double(k, v); }},
      {"search.mode", [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "rl") c.search.mode = SearchMode::Rl;
         else if (v == "random") c.search.mode = SearchMode::Random;
         else throw ConfigError("key '" + k + "': expected rl|random, got '" + v + "'");
       }},
      {"search.polyak", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.ablation.polyak = to_bool(k, v); }},
      {"search.kd", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.ablation.kd = to_bool(k, v); }},
      {"search.aux", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.ablation.aux = to_aux(k, v); }},
      {"search.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.batch_size = to_int(k, v); }},
      {"search.adapt_channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.adapt_channels = to_int(k, v); }},
      {"search.decoder_lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.decoder_lr = to_double(k, v); }},
      {"search.encoder_lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.encoder_lr = to_double(k, v); }},
      {"search.encoder_momentum", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.encoder_momentum = to_double(k, v); }},
      {"search.workers", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.workers = to_int(k, v); }},
      {"search.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.seed = to_u64(k, v); }},
      {"search.top_k", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.top_k = to_int(k, v); }},
      {"controller.layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.layers = to_int(k, v); }},
      {"controller.hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.hidden = to_int(k, v); }},
      {"controller.embed_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.embed_dim = to_int(k, v); }},
      {"controller.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.lr = to_double(k, v); }},
      {"controller.ppo_clip", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.ppo_clip = to_double(k, v); }},
      {"controller.ppo_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.ppo_epochs = to_int(k, v); }},
      {"controller.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.batch_size = to_int(k, v); }},
      {"controller.baseline_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.baseline_decay = to_double(k, v); }},
      {"controller.entropy_coeff", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.entropy_coeff = to_double(k, v); }},
      {"controller.init_range", [](RunConfig& c, const std::string& k, const std::string& v) { c.search.controller.init_range = to_double(k, v); }},
      {"train.phase_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.phase_epochs = to_int(k, v); }},
      {"train.aux", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.aux = to_aux(k, v); }},
      {"train.adapt_channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adapt_channels = to_int(k, v); }},
      {"train.decoder_lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.decoder_lr = to_double(k, v); }},
      {"train.encoder_lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.encoder_lr = to_double(k, v); }},
      {"train.encoder_momentum", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.encoder_momentum = to_double(k, v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = to_int(k, v); }},
      {"train.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_u64(k, v); }},
      {"train.aux_coeffs", [](RunConfig& c, const std::string& k, const std::string& v) {
         std::istringstream is(v);
         for (auto& coeff : c.train.aux_coeffs) {
           std::string tok;
           if (!std::getline(is, tok, ',')) throw ConfigError("key '" + k + "': expected 4 comma-separated values");
           coeff = to_double(k, trim(tok));
         }
         std::string extra;
         if (std::getline(is, extra, ','))
           throw ConfigError("key '" + k + "': expected 4 comma-separated values");
       }},
  };

  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, key, value);
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    apply_key(config, key, value);
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::string echo_config(const RunConfig& c) {
  std::ostringstream os;
  os << "task.image_size = " << c.task.image_size << "\n";
  os << "task.num_classes = " << c.task.num_classes << "\n";
  os << "task.min_shapes = " << c.task.min_shapes << "\n";
  os << "task.max_shapes = " << c.task.max_shapes << "\n";
  os << "task.noise = " << c.task.noise << "\n";
  os << "task.meta_train = " << c.task.meta_train << "\n";
  os << "task.meta_val = " << c.task.meta_val << "\n";
  os << "task.holdout = " << c.task.holdout << "\n";
  os << "task.seed = " << c.task.seed << "\n";
  os << "search.total_architectures = " << c.search.total_architectures << "\n";
  os << "search.max_new_architectures = " << c.search.max_new_architectures << "\n";
  os << "search.stage1_epochs = " << c.search.stage1_epochs << "\n";
  os << "search.stage2_epochs = " << c.search.stage2_epochs << "\n";
  os << "search.p_start = " << c.search.p_start << "\n";
  os << "search.p_end = " << c.search.p_end << "\n";
  os << "search.polyak_decay1 = " << c.search.polyak_decay1 << "\n";
  os << "search.polyak_decay2 = " << c.search.polyak_decay2 << "\n";
  os << "search.kd_coeff = " << c.search.kd_coeff << "\n";
  os << "search.aux_coeff = " << c.search.aux_coeff << "\n";
  os << "search.mode = " << (c.search.mode == SearchMode::Rl ? "rl" : "random") << "\n";
  os << "search.polyak = " << (c.search.ablation.polyak ? "true" : "false") << "\n";
  os << "search.kd = " << (c.search.ablation.kd ? "true" : "false") << "\n";
  os << "search.aux = " << aux_name(c.search.ablation.aux) << "\n";
  os << "search.batch_size = " << c.search.batch_size << "\n";
  os << "search.adapt_channels = " << c.search.adapt_channels << "\n";
  os << "search.decoder_lr = " << c.search.decoder_lr << "\n";
  os << "search.encoder_lr = " << c.search.encoder_lr << "\n";
  os << "search.encoder_momentum = " << c.search.encoder_momentum << "\n";
  os << "search.workers = " << c.search.workers << "\n";
  os << "search.seed = " << c.search.seed << "\n";
  os << "search.top_k = " << c.search.top_k << "\n";
  os << "controller.layers = " << c.search.controller.layers << "\n";
  os << "controller.hidden = " << c.search.controller.hidden << "\n";
  os << "controller.embed_dim = " << c.search.controller.embed_dim << "\n";
  os << "controller.lr = " << c.search.controller.lr << "\n";
  os << "controller.ppo_clip = " << c.search.controller.ppo_clip << "\n";
  os << "controller.ppo_epochs = " << c.search.controller.ppo_epochs << "\n";
  os << "controller.batch_size = " << c.search.controller.batch_size << "\n";
  os << "controller.baseline_decay = " << c.search.controller.baseline_decay << "\n";
  os << "controller.entropy_coeff = " << c.search.controller.entropy_coeff << "\n";
  os << "controller.init_range = " << c.search.controller.init_range << "\n";
  os << "train.phase_epochs = " << c.train.phase_epochs << "\n";
  os << "train.aux = " << aux_name(c.train.aux) << "\n";
  os << "train.adapt_channels = " << c.train.adapt_channels << "\n";
  os << "train.decoder_lr = " << c.train.decoder_lr << "\n";
  os << "train.encoder_lr = " << c.train.encoder_lr << "\n";
  os << "train.encoder_momentum = " << c.train.encoder_momentum << "\n";
  os << "train.batch_size = " << c.train.batch_size << "\n";
  os << "train.seed = " << c.train.seed << "\n";
  os << "train.aux_coeffs = " << c.train.aux_coeffs[0] << "," << c.train.aux_coeffs[1]
     << "," << c.train.aux_coeffs[2] << "," << c.train.aux_coeffs[3] << "\n";
  return os.str();
}

}  // namespace segnas
