#include "pbact/config.hpp"

#include <functional>
#include <map>
#include <sstream>

#include "pbact/errors.hpp"
#include "pbact/io.hpp"
#include "pbact/numerics.hpp"

namespace pbact {

PolicyConfig ExperimentConfig::policy(bool use_pb, uint64_t seed) const {
  PolicyConfig p;
  p.d_model = d_model;
  p.n_heads = n_heads;
  p.enc_layers = enc_layers;
  p.dec_layers = dec_layers;
  p.chunk = chunk;
  p.action_dim = kActionDim;
  p.obs_dim = kObsDim;
  p.obs_tokens = obs_tokens;
  p.ffn_dim = ffn_dim;
  p.d_pb = d_pb;
  p.use_pb = use_pb;
  p.alpha_pb = alpha_pb;
  p.lambda_kl = lambda_kl;
  p.learning_rate = learning_rate;
  p.weight_decay = weight_decay;
  p.epochs = epochs;
  p.batch_size = batch_size;
  p.seed = seed;
  return p;
}

void ExperimentConfig::validate() const {
  if (n_success < 0 || n_failure < 0)
    throw ConfigError("data counts must be >= 0");
  if (episode_steps < chunk)
    throw ConfigError("episode_steps must be >= chunk");
  if (seeds.empty()) throw ConfigError("at least one training seed required");
  for (size_t i = 0; i < seeds.size(); ++i)
    for (size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j]) throw ConfigError("duplicate training seed");
  if (rollouts < 1) throw ConfigError("rollouts must be >= 1");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (subset_size < 0) throw ConfigError("subset_size must be >= 0");
  if (random_subsets < 0) throw ConfigError("random_subsets must be >= 0");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  policy(true, 0).validate();
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad unsigned integer for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& ini_text) {
  ExperimentConfig c;

  using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"data.n_success", [](auto& c, auto& k, auto& v) { c.n_success = parse_int(v, k); }},
      {"data.n_failure", [](auto& c, auto& k, auto& v) { c.n_failure = parse_int(v, k); }},
      {"data.failure_mix",
       [](auto& c, auto& k, auto& v) {
         const auto parts = split(v, ',');
         if (parts.size() != 3)
           throw ConfigError(k + " needs three comma-separated fractions");
         c.failure_mix.miss = parse_double(parts[0], k);
         c.failure_mix.early_release = parse_double(parts[1], k);
         c.failure_mix.wander = parse_double(parts[2], k);
       }},
      {"data.episode_steps", [](auto& c, auto& k, auto& v) { c.episode_steps = parse_int(v, k); }},
      {"data.data_seed", [](auto& c, auto& k, auto& v) { c.data_seed = parse_u64(v, k); }},
      {"model.d_model", [](auto& c, auto& k, auto& v) { c.d_model = parse_int(v, k); }},
      {"model.n_heads", [](auto& c, auto& k, auto& v) { c.n_heads = parse_int(v, k); }},
      {"model.enc_layers", [](auto& c, auto& k, auto& v) { c.enc_layers = parse_int(v, k); }},
      {"model.dec_layers", [](auto& c, auto& k, auto& v) { c.dec_layers = parse_int(v, k); }},
      {"model.chunk", [](auto& c, auto& k, auto& v) { c.chunk = parse_int(v, k); }},
      {"model.obs_tokens", [](auto& c, auto& k, auto& v) { c.obs_tokens = parse_int(v, k); }},
      {"model.ffn_dim", [](auto& c, auto& k, auto& v) { c.ffn_dim = parse_int(v, k); }},
      {"model.d_pb", [](auto& c, auto& k, auto& v) { c.d_pb = parse_int(v, k); }},
      {"model.alpha_pb", [](auto& c, auto& k, auto& v) { c.alpha_pb = parse_double(v, k); }},
      {"train.lambda_kl", [](auto& c, auto& k, auto& v) { c.lambda_kl = parse_double(v, k); }},
      {"train.learning_rate", [](auto& c, auto& k, auto& v) { c.learning_rate = parse_double(v, k); }},
      {"train.weight_decay", [](auto& c, auto& k, auto& v) { c.weight_decay = parse_double(v, k); }},
      {"train.epochs", [](auto& c, auto& k, auto& v) { c.epochs = parse_int(v, k); }},
      {"train.batch_size", [](auto& c, auto& k, auto& v) { c.batch_size = parse_int(v, k); }},
      {"train.seeds",
       [](auto& c, auto& k, auto& v) {
         c.seeds.clear();
         for (const auto& part : split(v, ','))
           c.seeds.push_back(parse_u64(part, k));
       }},
      {"selection.subset_size", [](auto& c, auto& k, auto& v) { c.subset_size = parse_int(v, k); }},
      {"selection.random_subsets", [](auto& c, auto& k, auto& v) { c.random_subsets = parse_int(v, k); }},
      {"selection.selection_seed", [](auto& c, auto& k, auto& v) { c.selection_seed = parse_u64(v, k); }},
      {"eval.rollouts", [](auto& c, auto& k, auto& v) { c.rollouts = parse_int(v, k); }},
      {"eval.env_seed_base", [](auto& c, auto& k, auto& v) { c.env_seed_base = parse_u64(v, k); }},
      {"eval.max_steps", [](auto& c, auto& k, auto& v) { c.max_steps = parse_int(v, k); }},
      {"run.threads", [](auto& c, auto& k, auto& v) { c.threads = parse_int(v, k); }},
      {"run.out_dir", [](auto& c, auto&, auto& v) { c.out_dir = v; }},
      {"run.retrain_act_baselines",
       [](auto& c, auto& k, auto& v) { c.retrain_act_baselines = parse_bool(v, k); }},
  };

  std::istringstream in(ini_text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full_key = section + "." + key;
    const auto it = setters.find(full_key);
    if (it == setters.end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                        full_key + "'");
    it->second(c, full_key, value);
  }

  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  if (!file_exists(path))
    throw IoError("config file not found: " + path.string());
  return parse(read_text_file(path));
}

std::string ExperimentConfig::to_ini_text() const {
  std::ostringstream out;
  out << "[data]\n";
  out << "n_success = " << n_success << "\n";
  out << "n_failure = " << n_failure << "\n";
  out << "failure_mix = " << format_double(failure_mix.miss) << ","
      << format_double(failure_mix.early_release) << ","
      << format_double(failure_mix.wander) << "\n";
  out << "episode_steps = " << episode_steps << "\n";
  out << "data_seed = " << data_seed << "\n";
  out << "\n[model]\n";
  out << "d_model = " << d_model << "\n";
  out << "n_heads = " << n_heads << "\n";
  out << "enc_layers = " << enc_layers << "\n";
  out << "dec_layers = " << dec_layers << "\n";
  out << "chunk = " << chunk << "\n";
  out << "obs_tokens = " << obs_tokens << "\n";
  out << "ffn_dim = " << ffn_dim << "\n";
  out << "d_pb = " << d_pb << "\n";
  out << "alpha_pb = " << format_double(alpha_pb) << "\n";
  out << "\n[train]\n";
  out << "lambda_kl = " << format_double(lambda_kl) << "\n";
  out << "learning_rate = " << format_double(learning_rate) << "\n";
  out << "weight_decay = " << format_double(weight_decay) << "\n";
  out << "epochs = " << epochs << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "seeds = ";
  for (size_t i = 0; i < seeds.size(); ++i) out << (i ? "," : "") << seeds[i];
  out << "\n";
  out << "\n[selection]\n";
  out << "subset_size = " << subset_size << "\n";
  out << "random_subsets = " << random_subsets << "\n";
  out << "selection_seed = " << selection_seed << "\n";
  out << "\n[eval]\n";
  out << "rollouts = " << rollouts << "\n";
  out << "env_seed_base = " << env_seed_base << "\n";
  out << "max_steps = " << max_steps << "\n";
  out << "\n[run]\n";
  out << "threads = " << threads << "\n";
  out << "out_dir = " << out_dir << "\n";
  out << "retrain_act_baselines = " << (retrain_act_baselines ? "true" : "false")
      << "\n";
  return out.str();
}

}  // namespace pbact
