#include "todma/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace todma {

using nlohmann::json;

namespace {

bool is_sweep_axis(const std::string& name) {
  return std::find(std::begin(kSweepAxes), std::end(kSweepAxes), name) != std::end(kSweepAxes);
}

bool is_integer_axis(const std::string& name) { return name != "snr_db"; }

// Every key of `doc` must exist in `schema`; "sweep" is a free-form map.
void check_keys(const json& doc, const json& schema, const std::string& path) {
  if (!doc.is_object()) return;
  for (const auto& [key, value] : doc.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw InvalidArgument("config: unknown key '" + where + "'");
    if (key == "sweep" && path.empty()) continue;
    if (value.is_object()) check_keys(value, schema.at(key), where);
  }
}

std::size_t get_count(const json& j, const std::string& where) {
  if (!j.is_number_integer() || j.get<long long>() < 0) {
    throw InvalidArgument("config: '" + where + "' must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

double get_real(const json& j, const std::string& where) {
  if (!j.is_number()) throw InvalidArgument("config: '" + where + "' must be a number");
  return j.get<double>();
}

std::string get_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw InvalidArgument("config: '" + where + "' must be a string");
  return j.get<std::string>();
}

bool get_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw InvalidArgument("config: '" + where + "' must be true or false");
  return j.get<bool>();
}

CodeLength parse_code_length(const std::string& s) {
  if (s == "fixed") return CodeLength::Fixed;
  if (s == "k_plus_1") return CodeLength::KPlusOne;
  if (s == "one_point_five_k") return CodeLength::OnePointFiveK;
  throw InvalidArgument("config: code_length must be fixed, k_plus_1 or one_point_five_k");
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace

const char* to_string(CodeLength rule) {
  switch (rule) {
    case CodeLength::Fixed: return "fixed";
    case CodeLength::KPlusOne: return "k_plus_1";
    case CodeLength::OnePointFiveK: return "one_point_five_k";
  }
  return "fixed";
}

void ExperimentConfig::validate() const {
  require(trials >= 1, "config: trials must be >= 1");
  require(workers >= 1, "config: workers must be >= 1");
  require(clustering.max_iterations >= 1 && clustering.restarts >= 1,
          "config: clustering iterations and restarts must be >= 1");
  require(source.kind == "uniform" || source.kind == "sparse" || source.kind == "corpus",
          "config: source.kind must be uniform, sparse or corpus");
  require(source.order >= 1 && source.order <= 3, "config: source.order must be in 1..3");
  require(source.kind != "sparse" || source.successors >= 1, "config: source.successors must be >= 1");
  require(source.kind != "corpus" || !source.corpus.empty(), "config: source.corpus path is required");
  require(source.smoothing >= 0.0, "config: source.smoothing must be >= 0");
  require(predictor.kind == "markov" || predictor.kind == "random" || predictor.kind == "external",
          "config: predictor.kind must be markov, random or external");
  require(predictor.kind != "external" || !predictor.endpoint.empty(),
          "config: predictor.endpoint is required for the external predictor");
  require(predictor.timeout_s > 0.0, "config: predictor.timeout_s must be positive");
  require(latency.bandwidth_hz > 0.0, "config: latency.bandwidth_hz must be positive");
  require(latency.ber > 0.0 && latency.ber < 0.2, "config: latency.ber must be in (0, 0.2)");
  require(orth_ber >= 0.0 && orth_ber <= 1.0, "config: orth_ber must be in [0, 1]");
  require(code_length == CodeLength::Fixed || !sweep.contains("L"),
          "config: sweeping L requires code_length = fixed");
  for (const auto& [axis, values] : sweep) {
    require(is_sweep_axis(axis), "config: unknown sweep axis '" + axis + "'");
    require(!values.empty(), "config: sweep axis '" + axis + "' is empty");
    for (double v : values) {
      require(std::isfinite(v), "config: sweep values must be finite");
      if (is_integer_axis(axis)) {
        require(v >= 1.0 && v == std::floor(v), "config: sweep axis '" + axis + "' needs positive integers");
      }
    }
  }
  detector.validate();
  for (const auto& point : sweep_points(*this)) resolve_point(*this, point).validate();
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig cfg;
  if (name == "desk") {
    cfg.sim.K = 20;
    cfg.sim.L = 21;
    cfg.sim.M = 64;
    cfg.sim.Q = 256;
    cfg.sim.N = 32;
    cfg.code_length = CodeLength::KPlusOne;
  } else if (name == "full" || name == "text") {
    cfg.sim.K_T = 400;
    cfg.sim.K = 20;
    cfg.sim.M = 256;
    cfg.sim.Q = 1024;
    cfg.sim.N = 256;
    cfg.code_length = name == "full" ? CodeLength::KPlusOne : CodeLength::OnePointFiveK;
    cfg.sim.L = name == "full" ? 21 : 30;
  } else {
    throw InvalidArgument("config: unknown preset '" + name + "' (desk, full, text)");
  }
  cfg.sim.snr_db = 25.0;
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json sweep = json::object();
  for (const auto& [axis, values] : cfg.sweep) sweep[axis] = values;
  return {
      {"sim",
       {{"K_T", cfg.sim.K_T},
        {"K", cfg.sim.K},
        {"M", cfg.sim.M},
        {"L", cfg.sim.L},
        {"Q", cfg.sim.Q},
        {"N", cfg.sim.N},
        {"snr_db", cfg.sim.snr_db},
        {"seed", cfg.sim.seed}}},
      {"code_length", to_string(cfg.code_length)},
      {"detector",
       {{"iterations", cfg.detector.iterations},
        {"activity_threshold", cfg.detector.activity_threshold},
        {"damping", cfg.detector.damping},
        {"early_stop_tol", cfg.detector.early_stop_tol},
        {"gamma_init", cfg.detector.gamma_init},
        {"known_k", cfg.detector.known_k}}},
      {"clustering", {{"max_iterations", cfg.clustering.max_iterations}, {"restarts", cfg.clustering.restarts}}},
      {"source",
       {{"kind", cfg.source.kind},
        {"order", cfg.source.order},
        {"successors", cfg.source.successors},
        {"smoothing", cfg.source.smoothing},
        {"corpus", cfg.source.corpus}}},
      {"predictor",
       {{"kind", cfg.predictor.kind}, {"endpoint", cfg.predictor.endpoint}, {"timeout_s", cfg.predictor.timeout_s}}},
      {"sweep", sweep},
      {"trials", cfg.trials},
      {"workers", cfg.workers},
      {"latency", {{"bandwidth_hz", cfg.latency.bandwidth_hz}, {"ber", cfg.latency.ber}}},
      {"orth_ber", cfg.orth_ber},
      {"nmse_squared", cfg.nmse_squared},
      {"output_dir", cfg.output_dir},
  };
}

ExperimentConfig config_from_json(const json& input) {
  if (!input.is_object()) throw InvalidArgument("config: document must be an object");
  json doc = input;
  ExperimentConfig base;
  if (doc.contains("preset")) {
    base = preset(get_string(doc["preset"], "preset"));
    doc.erase("preset");
  }
  json merged = to_json(base);
  check_keys(doc, merged, "");
  if (doc.contains("sweep")) merged["sweep"] = json::object();  // replaced, not merged
  merged.merge_patch(doc);

  ExperimentConfig cfg;
  const json& s = merged["sim"];
  cfg.sim.K_T = get_count(s["K_T"], "sim.K_T");
  cfg.sim.K = get_count(s["K"], "sim.K");
  cfg.sim.M = get_count(s["M"], "sim.M");
  cfg.sim.L = get_count(s["L"], "sim.L");
  cfg.sim.Q = get_count(s["Q"], "sim.Q");
  cfg.sim.N = get_count(s["N"], "sim.N");
  cfg.sim.snr_db = get_real(s["snr_db"], "sim.snr_db");
  if (!s["seed"].is_number_unsigned()) throw InvalidArgument("config: 'sim.seed' must be a non-negative integer");
  cfg.sim.seed = s["seed"].get<std::uint64_t>();
  cfg.code_length = parse_code_length(get_string(merged["code_length"], "code_length"));

  const json& d = merged["detector"];
  cfg.detector.iterations = static_cast<int>(get_count(d["iterations"], "detector.iterations"));
  cfg.detector.activity_threshold = get_real(d["activity_threshold"], "detector.activity_threshold");
  cfg.detector.damping = get_real(d["damping"], "detector.damping");
  cfg.detector.early_stop_tol = get_real(d["early_stop_tol"], "detector.early_stop_tol");
  cfg.detector.gamma_init = get_real(d["gamma_init"], "detector.gamma_init");
  cfg.detector.known_k = get_bool(d["known_k"], "detector.known_k");

  const json& c = merged["clustering"];
  cfg.clustering.max_iterations = static_cast<int>(get_count(c["max_iterations"], "clustering.max_iterations"));
  cfg.clustering.restarts = static_cast<int>(get_count(c["restarts"], "clustering.restarts"));

  const json& src = merged["source"];
  cfg.source.kind = get_string(src["kind"], "source.kind");
  cfg.source.order = static_cast<int>(get_count(src["order"], "source.order"));
  cfg.source.successors = get_count(src["successors"], "source.successors");
  cfg.source.smoothing = get_real(src["smoothing"], "source.smoothing");
  cfg.source.corpus = get_string(src["corpus"], "source.corpus");

  const json& p = merged["predictor"];
  cfg.predictor.kind = get_string(p["kind"], "predictor.kind");
  cfg.predictor.endpoint = get_string(p["endpoint"], "predictor.endpoint");
  cfg.predictor.timeout_s = get_real(p["timeout_s"], "predictor.timeout_s");

  if (!merged["sweep"].is_object()) throw InvalidArgument("config: 'sweep' must be an object");
  for (const auto& [axis, values] : merged["sweep"].items()) {
    if (!values.is_array()) throw InvalidArgument("config: sweep axis '" + axis + "' must be a list");
    auto& out = cfg.sweep[axis];
    for (const auto& v : values) out.push_back(get_real(v, "sweep." + axis));
  }

  cfg.trials = get_count(merged["trials"], "trials");
  cfg.workers = get_count(merged["workers"], "workers");
  cfg.latency.bandwidth_hz = get_real(merged["latency"]["bandwidth_hz"], "latency.bandwidth_hz");
  cfg.latency.ber = get_real(merged["latency"]["ber"], "latency.ber");
  cfg.orth_ber = get_real(merged["orth_ber"], "orth_ber");
  cfg.nmse_squared = get_bool(merged["nmse_squared"], "nmse_squared");
  cfg.output_dir = get_string(merged["output_dir"], "output_dir");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("config: cannot write '" + path.string() + "'");
  out << to_json(cfg).dump(2) << '\n';
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return cfg;
  json doc = to_json(cfg);
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("config: override '" + item + "' is not path=value");
    const std::string path = item.substr(0, eq);
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty()) throw InvalidArgument("config: malformed override path '" + path + "'");
      const bool last = dot == std::string::npos;
      const bool in_sweep = node == &doc.at("sweep");
      if (!node->is_object() || (!node->contains(key) && !in_sweep)) {
        throw InvalidArgument("config: unknown key '" + path + "'");
      }
      node = &(*node)[key];
      if (last) break;
      start = dot + 1;
    }
    *node = parse_value(item.substr(eq + 1));
  }
  return config_from_json(doc);
}

SimConfig resolve_point(const ExperimentConfig& cfg, const std::map<std::string, double>& point) {
  SimConfig sim = cfg.sim;
  for (const auto& [axis, value] : point) {
    if (axis == "snr_db") {
      sim.snr_db = value;
      continue;
    }
    const auto v = static_cast<std::size_t>(value);
    if (axis == "K") sim.K = v;
    else if (axis == "L") sim.L = v;
    else if (axis == "M") sim.M = v;
    else if (axis == "Q") sim.Q = v;
    else if (axis == "N") sim.N = v;
    else throw InvalidArgument("config: unknown sweep axis '" + axis + "'");
  }
  if (cfg.code_length == CodeLength::KPlusOne) sim.L = sim.K + 1;
  if (cfg.code_length == CodeLength::OnePointFiveK) sim.L = static_cast<std::size_t>(std::ceil(1.5 * sim.K));
  return sim;
}

std::vector<std::map<std::string, double>> sweep_points(const ExperimentConfig& cfg) {
  std::vector<std::map<std::string, double>> points{{}};
  for (const char* axis : kSweepAxes) {
    const auto it = cfg.sweep.find(axis);
    if (it == cfg.sweep.end()) continue;
    std::vector<std::map<std::string, double>> next;
    for (const auto& p : points) {
      for (double v : it->second) {
        auto q = p;
        q[axis] = v;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json doc = to_json(cfg);
  doc.erase("output_dir");
  doc.erase("workers");
  doc.erase("trials");
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace todma
