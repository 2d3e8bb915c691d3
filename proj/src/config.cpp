#include "ssmil/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ssmil/hash.hpp"
#include "ssmil/metrics.hpp"

namespace ssmil {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ParseError("config: bad numeric value '" + value + "' for " + key, 0);
  }
}

Index to_index(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw ParseError("config: bad integer value '" + value + "' for " + key, 0);
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ParseError("config: bad unsigned value '" + value + "' for " + key, 0);
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ParseError("config: bad flag value '" + value + "' for " + key, 0);
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config: line " + std::to_string(line_no) + " has no '='", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("config: empty key on line " + std::to_string(line_no), line_no);
    if (kv.count(key))
      throw ParseError("config: duplicate key '" + key + "' on line " + std::to_string(line_no),
                       line_no);
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str());
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  std::set<std::string> known;
  const auto take = [&](const std::string& key) -> const std::string* {
    known.insert(key);
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (const auto* v = take("arch")) {
    if (*v == "full") cfg.arch = Arch::full;
    else if (*v == "mean") cfg.arch = Arch::mean_pool;
    else if (*v == "max") cfg.arch = Arch::max_pool;
    else if (*v == "gated_attention") cfg.arch = Arch::gated_attention;
    else throw ParseError("config: unknown arch '" + *v + "'", 0);
  }
  if (const auto* v = take("d_model")) cfg.d_model = to_index("d_model", *v);
  if (const auto* v = take("state_dim")) cfg.state_dim = to_index("state_dim", *v);
  if (const auto* v = take("n_blocks")) cfg.n_blocks = to_index("n_blocks", *v);
  if (const auto* v = take("k_classes")) cfg.k_classes = to_index("k_classes", *v);
  if (const auto* v = take("ssm_mode")) {
    if (*v == "diag") cfg.mode = SsmMode::diag;
    else if (*v == "scalar") cfg.mode = SsmMode::scalar;
    else throw ParseError("config: unknown ssm_mode '" + *v + "'", 0);
  }
  if (const auto* v = take("n_heads")) cfg.n_heads = to_index("n_heads", *v);
  if (const auto* v = take("discretization")) {
    if (*v == "euler") cfg.method = Discretization::euler;
    else if (*v == "zoh") cfg.method = Discretization::zoh;
    else throw ParseError("config: unknown discretization '" + *v + "'", 0);
  }
  if (const auto* v = take("overlap")) cfg.overlap = to_bool("overlap", *v);
  if (const auto* v = take("cts_ratio")) cfg.cts_ratio = to_double("cts_ratio", *v);
  if (const auto* v = take("local_channels")) cfg.local_channels = to_index("local_channels", *v);
  if (const auto* v = take("s2pe")) cfg.s2pe_enabled = to_bool("s2pe", *v);
  if (const auto* v = take("s2pe_kernel")) cfg.s2pe_kernel = to_index("s2pe_kernel", *v);
  if (const auto* v = take("s2pe_dilation")) cfg.s2pe_dilation = static_cast<int>(to_index("s2pe_dilation", *v));
  if (const auto* v = take("s2pe_residual")) cfg.s2pe_residual = to_bool("s2pe_residual", *v);
  if (const auto* v = take("aux_pooling")) {
    if (*v == "mean") cfg.aux_pooling = Pooling::mean;
    else if (*v == "max") cfg.aux_pooling = Pooling::max;
    else throw ParseError("config: unknown aux_pooling '" + *v + "'", 0);
  }
  if (const auto* v = take("aux_weight")) cfg.aux_weight = to_double("aux_weight", *v);
  if (const auto* v = take("learning_rate")) cfg.learning_rate = to_double("learning_rate", *v);
  if (const auto* v = take("weight_decay")) cfg.weight_decay = to_double("weight_decay", *v);
  if (const auto* v = take("epochs")) cfg.epochs = to_index("epochs", *v);
  if (const auto* v = take("attention_dim")) cfg.attention_dim = to_index("attention_dim", *v);
  if (const auto* v = take("seed")) cfg.seed = to_u64("seed", *v);
  for (const auto& [key, value] : kv) {
    (void)value;
    if (!known.count(key)) throw ParseError("config: unknown key '" + key + "'", 0);
  }
  contract(cfg.d_model >= 1 && cfg.state_dim >= 1 && cfg.n_blocks >= 1 && cfg.k_classes >= 2,
           "config: extents must be positive and k_classes >= 2");
  contract(cfg.cts_ratio >= 0.0 && cfg.cts_ratio < 1.0, "config: cts_ratio outside [0,1)");
  contract(cfg.epochs >= 1, "config: epochs must be >= 1");
  contract(cfg.s2pe_kernel >= 1 && cfg.s2pe_kernel % 2 == 1, "config: s2pe_kernel must be odd");
  contract(cfg.s2pe_dilation >= 1, "config: s2pe_dilation must be >= 1");
  return cfg;
}

ModelConfig model_config_from_file(const std::string& path) {
  return model_config_from_kv(parse_kv_file(path));
}

ModelConfig reference_lr_preset() {
  ModelConfig cfg;
  cfg.learning_rate = 2e-5;
  return cfg;
}

std::string model_config_to_text(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "arch = "
      << (cfg.arch == Arch::full ? "full"
          : cfg.arch == Arch::mean_pool ? "mean"
          : cfg.arch == Arch::max_pool ? "max"
                                       : "gated_attention")
      << "\n";
  out << "d_model = " << cfg.d_model << "\n";
  out << "state_dim = " << cfg.state_dim << "\n";
  out << "n_blocks = " << cfg.n_blocks << "\n";
  out << "k_classes = " << cfg.k_classes << "\n";
  out << "ssm_mode = " << (cfg.mode == SsmMode::diag ? "diag" : "scalar") << "\n";
  out << "n_heads = " << cfg.n_heads << "\n";
  out << "discretization = " << (cfg.method == Discretization::euler ? "euler" : "zoh") << "\n";
  out << "overlap = " << (cfg.overlap ? "on" : "off") << "\n";
  out << "cts_ratio = " << format_double(cfg.cts_ratio) << "\n";
  out << "local_channels = " << cfg.local_channels << "\n";
  out << "s2pe = " << (cfg.s2pe_enabled ? "on" : "off") << "\n";
  out << "s2pe_kernel = " << cfg.s2pe_kernel << "\n";
  out << "s2pe_dilation = " << cfg.s2pe_dilation << "\n";
  out << "s2pe_residual = " << (cfg.s2pe_residual ? "on" : "off") << "\n";
  out << "aux_pooling = " << (cfg.aux_pooling == Pooling::mean ? "mean" : "max") << "\n";
  out << "aux_weight = " << format_double(cfg.aux_weight) << "\n";
  out << "learning_rate = " << format_double(cfg.learning_rate) << "\n";
  out << "weight_decay = " << format_double(cfg.weight_decay) << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "attention_dim = " << cfg.attention_dim << "\n";
  out << "seed = " << cfg.seed << "\n";
  return out.str();
}

std::string config_fingerprint(const ModelConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(model_config_to_text(cfg))));
  return buf;
}

BagSpec bag_spec_from_kv(const std::map<std::string, std::string>& kv) {
  BagSpec spec;
  std::set<std::string> known;
  const auto take = [&](const std::string& key) -> const std::string* {
    known.insert(key);
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (const auto* v = take("coarse_rows")) spec.coarse_rows = to_index("coarse_rows", *v);
  if (const auto* v = take("coarse_cols")) spec.coarse_cols = to_index("coarse_cols", *v);
  if (const auto* v = take("feature_dim")) spec.feature_dim = to_index("feature_dim", *v);
  if (const auto* v = take("tissue_fraction")) spec.tissue_fraction = to_double("tissue_fraction", *v);
  if (const auto* v = take("cluster_radius")) spec.cluster_radius = to_double("cluster_radius", *v);
  if (const auto* v = take("signal_strength")) spec.signal_strength = to_double("signal_strength", *v);
  if (const auto* v = take("noise_scale")) spec.noise_scale = to_double("noise_scale", *v);
  if (const auto* v = take("n_classes")) spec.n_classes = to_index("n_classes", *v);
  if (const auto* v = take("seed")) spec.seed = to_u64("seed", *v);
  for (const auto& [key, value] : kv) {
    (void)value;
    if (!known.count(key)) throw ParseError("spec: unknown key '" + key + "'", 0);
  }
  return spec;
}

BagSpec bag_spec_from_file(const std::string& path) {
  return bag_spec_from_kv(parse_kv_file(path));
}

}  // namespace ssmil
