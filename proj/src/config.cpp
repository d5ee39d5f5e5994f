#include "metassl/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "metassl/errors.hpp"

namespace metassl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(begin, &end);
  if (v.empty() || end != begin + v.size() || errno == ERANGE) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": '" + v + "' is not a nonnegative integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(sizes[i]);
  }
  return out;
}

std::string_view to_string(MetaGradScaling s) {
  return s == MetaGradScaling::alpha_over_batch ? "alpha-over-batch" : "unscaled";
}

bool apply_schedule(Schedule& s, const std::string& prefix, const std::string& key, const std::string& value) {
  if (key == prefix) {
    s.base = parse_double(key, value);
  } else if (key == prefix + "_schedule") {
    s.kind = parse_schedule(value);
  } else if (key == prefix + "_decay_at") {
    s.decay_at = parse_double(key, value);
  } else if (key == prefix + "_decay_factor") {
    s.factor = parse_double(key, value);
  } else {
    return false;
  }
  return true;
}

void push_schedule(KeyValues& kv, const std::string& prefix, const Schedule& s) {
  kv.emplace_back(prefix, num(s.base));
  kv.emplace_back(prefix + "_schedule", std::string(to_string(s.kind)));
  kv.emplace_back(prefix + "_decay_at", num(s.decay_at));
  kv.emplace_back(prefix + "_decay_factor", num(s.factor));
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(line_no, "empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  return parse_key_values(in);
}

void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "algorithm") {
    cfg.algorithm = parse_algorithm(value);
  } else if (key == "hidden") {
    cfg.hidden = parse_sizes(key, value);
  } else if (key == "activation") {
    try {
      cfg.activation = parse_activation(value);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  } else if (apply_schedule(cfg.alpha, "alpha", key, value)) {
  } else if (apply_schedule(cfg.beta, "beta", key, value)) {
    if (key == "beta") cfg.beta_equals_alpha = false;
  } else if (key == "beta_equals_alpha") {
    cfg.beta_equals_alpha = parse_bool(key, value);
  } else if (key == "batch_size_labeled") {
    cfg.batch_size_labeled = parse_uint(key, value);
  } else if (key == "batch_size_unlabeled") {
    cfg.batch_size_unlabeled = parse_uint(key, value);
  } else if (key == "full_labeled_batch") {
    cfg.full_labeled_batch = parse_bool(key, value);
  } else if (key == "gamma") {
    cfg.gamma = parse_double(key, value);
  } else if (key == "optimizer") {
    cfg.optimizer = parse_optimizer(value);
  } else if (key == "momentum") {
    cfg.momentum = parse_double(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = parse_double(key, value);
  } else if (key == "steps") {
    cfg.total_steps = parse_uint(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_uint(key, value);
  } else if (key == "consistency_weight") {
    cfg.consistency_weight = parse_double(key, value);
  } else if (key == "project") {
    if (value == "auto") {
      cfg.project.reset();
    } else {
      cfg.project = parse_bool(key, value);
    }
  } else if (key == "eps_rule") {
    cfg.eps_rule = parse_double(key, value);
  } else if (key == "meta_scaling") {
    if (value == "alpha-over-batch") {
      cfg.meta_scaling = MetaGradScaling::alpha_over_batch;
    } else if (value == "unscaled") {
      cfg.meta_scaling = MetaGradScaling::unscaled;
    } else {
      throw ConfigError("meta_scaling: expected alpha-over-batch or unscaled, got '" + value + "'");
    }
  } else if (key == "use_meta") {
    cfg.use_meta = parse_bool(key, value);
  } else if (key == "use_mixup") {
    cfg.use_mixup = parse_bool(key, value);
  } else if (key == "theorem_mode") {
    cfg.theorem_mode = parse_bool(key, value);
  } else if (key == "theorem_refresh_every") {
    cfg.theorem_refresh_every = parse_uint(key, value);
  } else if (key == "safety_factor") {
    cfg.safety_factor = parse_double(key, value);
  } else if (key == "standardize") {
    cfg.standardize = parse_bool(key, value);
  } else if (key == "eval_every") {
    cfg.eval_every = parse_uint(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

KeyValues config_settings(const TrainConfig& cfg) {
  KeyValues kv;
  kv.emplace_back("algorithm", std::string(to_string(cfg.algorithm)));
  kv.emplace_back("hidden", join_sizes(cfg.hidden));
  kv.emplace_back("activation", std::string(to_string(cfg.activation)));
  push_schedule(kv, "alpha", cfg.alpha);
  push_schedule(kv, "beta", cfg.beta);
  kv.emplace_back("beta_equals_alpha", cfg.beta_equals_alpha ? "true" : "false");
  kv.emplace_back("batch_size_labeled", std::to_string(cfg.batch_size_labeled));
  kv.emplace_back("batch_size_unlabeled", std::to_string(cfg.batch_size_unlabeled));
  kv.emplace_back("full_labeled_batch", cfg.full_labeled_batch ? "true" : "false");
  kv.emplace_back("gamma", num(cfg.gamma));
  kv.emplace_back("optimizer", std::string(to_string(cfg.optimizer)));
  kv.emplace_back("momentum", num(cfg.momentum));
  kv.emplace_back("weight_decay", num(cfg.weight_decay));
  kv.emplace_back("steps", std::to_string(cfg.total_steps));
  kv.emplace_back("seed", std::to_string(cfg.seed));
  kv.emplace_back("consistency_weight", num(cfg.consistency_weight));
  kv.emplace_back("project", cfg.project ? (*cfg.project ? "true" : "false") : "auto");
  kv.emplace_back("eps_rule", num(cfg.eps_rule));
  kv.emplace_back("meta_scaling", std::string(to_string(cfg.meta_scaling)));
  kv.emplace_back("use_meta", cfg.use_meta ? "true" : "false");
  kv.emplace_back("use_mixup", cfg.use_mixup ? "true" : "false");
  kv.emplace_back("theorem_mode", cfg.theorem_mode ? "true" : "false");
  kv.emplace_back("theorem_refresh_every", std::to_string(cfg.theorem_refresh_every));
  kv.emplace_back("safety_factor", num(cfg.safety_factor));
  kv.emplace_back("standardize", cfg.standardize ? "true" : "false");
  kv.emplace_back("eval_every", std::to_string(cfg.eval_every));
  return kv;
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  KeyValues kv;
  try {
    kv = read_key_values(path);
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  for (const auto& [k, v] : kv) apply_setting(base, k, v);
  return base;
}

void write_config(std::ostream& out, const TrainConfig& cfg) {
  for (const auto& [k, v] : config_settings(cfg)) out << k << " = " << v << '\n';
}

// ---------------------------------------------------------------------------

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream out = open_out(path);
  out << "# metassl run manifest\n";
  out << "manifest_version = 1\n";
  out << "command = " << m.command << '\n';
  out << "data = " << m.data_path << '\n';
  out << "data_fingerprint = " << m.data_fingerprint << '\n';
  out << "labels = " << (m.labels ? std::to_string(*m.labels) : "none") << '\n';
  out << "include_labeled = " << (m.include_labeled ? "true" : "false") << '\n';
  out << "metrics = " << m.metrics_path << '\n';
  out << "eval = " << m.eval_path << '\n';
  out << "checkpoint = " << m.checkpoint_path << '\n';
  out << "wall_clock_seconds = " << num(m.wall_clock_seconds) << '\n';
  for (const auto& [k, v] : config_settings(m.config)) out << "config." << k << " = " << v << '\n';
}

RunManifest read_manifest(const std::filesystem::path& path) {
  KeyValues kv;
  try {
    kv = read_key_values(path);
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunManifest m;
  bool versioned = false;
  for (const auto& [k, v] : kv) {
    if (k.rfind("config.", 0) == 0) {
      apply_setting(m.config, k.substr(7), v);
    } else if (k == "manifest_version") {
      if (v != "1") throw ConfigError("unsupported manifest version '" + v + "'");
      versioned = true;
    } else if (k == "command") {
      m.command = v;
    } else if (k == "data") {
      m.data_path = v;
    } else if (k == "data_fingerprint") {
      m.data_fingerprint = v;
    } else if (k == "labels") {
      if (v == "none") {
        m.labels.reset();
      } else {
        m.labels = parse_uint(k, v);
      }
    } else if (k == "include_labeled") {
      m.include_labeled = parse_bool(k, v);
    } else if (k == "metrics") {
      m.metrics_path = v;
    } else if (k == "eval") {
      m.eval_path = v;
    } else if (k == "checkpoint") {
      m.checkpoint_path = v;
    } else if (k == "wall_clock_seconds") {
      m.wall_clock_seconds = parse_double(k, v);
    } else {
      throw ConfigError("unknown manifest key '" + k + "'");
    }
  }
  if (!versioned) throw ConfigError(path.string() + ": not a run manifest");
  return m;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out = open_out(path);
  out << "metassl-checkpoint 1\n";
  out << "layers";
  for (std::size_t s : ck.model.layer_sizes()) out << ' ' << s;
  out << "\nactivation " << to_string(ck.model.activation()) << '\n';
  out << "scaling " << (ck.scaling.identity() ? 0 : ck.scaling.mean.size()) << '\n';
  for (std::size_t i = 0; i < ck.scaling.mean.size(); ++i) {
    out << num(ck.scaling.mean[i]) << ' ' << num(ck.scaling.stddev[i]) << '\n';
  }
  out << "params " << ck.model.num_params() << '\n';
  for (double v : ck.model.params().values()) out << num(v) << '\n';
  if (!out) throw ConfigError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::istringstream {
    if (!std::getline(in, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
    ++line_no;
    return std::istringstream(line);
  };
  auto expect = [&](std::istringstream& ss, const std::string& word) {
    std::string got;
    if (!(ss >> got) || got != word) throw ParseError(line_no, "expected '" + word + "'");
  };

  {
    auto ss = next_line();
    expect(ss, "metassl-checkpoint");
    int version = 0;
    if (!(ss >> version) || version != 1) throw ParseError(line_no, "unsupported checkpoint version");
  }
  std::vector<std::size_t> layers;
  {
    auto ss = next_line();
    expect(ss, "layers");
    std::size_t s = 0;
    while (ss >> s) layers.push_back(s);
    if (layers.size() < 2) throw ParseError(line_no, "need at least input and output sizes");
  }
  Activation act = Activation::tanh;
  {
    auto ss = next_line();
    expect(ss, "activation");
    std::string name;
    ss >> name;
    try {
      act = parse_activation(name);
    } catch (const std::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  InputScaling scaling;
  {
    auto ss = next_line();
    expect(ss, "scaling");
    std::size_t n = 0;
    if (!(ss >> n)) throw ParseError(line_no, "missing scaling dimension");
    if (n != 0 && n != layers.front()) throw ParseError(line_no, "scaling dimension does not match the input size");
    for (std::size_t i = 0; i < n; ++i) {
      auto row = next_line();
      double m = 0.0;
      double s = 0.0;
      if (!(row >> m >> s)) throw ParseError(line_no, "expected 'mean stddev'");
      scaling.mean.push_back(m);
      scaling.stddev.push_back(s);
    }
  }
  std::size_t count = 0;
  {
    auto ss = next_line();
    expect(ss, "params");
    if (!(ss >> count)) throw ParseError(line_no, "missing parameter count");
  }
  std::vector<double> values(count);
  for (double& v : values) {
    auto ss = next_line();
    const std::string text = trim(line);
    char* end = nullptr;
    v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size()) throw ParseError(line_no, "bad parameter value");
  }
  const std::vector<LayerSlot> layout = mlp_layout(layers);
  std::size_t expected = 0;
  for (const LayerSlot& s : layout) expected += s.fan_in * s.fan_out + s.fan_out;
  if (expected != count) throw ParseError(line_no, "parameter count does not match the architecture");
  return {MlpClassifier(layers, act, ParamVector(std::move(values), layout)), std::move(scaling)};
}

}  // namespace metassl
