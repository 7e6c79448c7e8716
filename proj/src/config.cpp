#include "concner/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "concner/error.hpp"

namespace concner {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* expected) {
  throw Error(ErrorCode::ConfigError,
              key + ": expected " + expected + ", got '" + value + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') bad(key, v, "a non-negative integer");
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used, 10);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  bad(key, v, "a non-negative integer");
}

double to_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  bad(key, v, "a number");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, v, "true or false");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Shortest of %.15g / %.17g that reads back to the same double.
std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  if (std::stod(buf) != v) std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

void apply(const KeyValues& kv, const std::map<std::string, Setter>& setters, const char* what) {
  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw Error(ErrorCode::ConfigError, key + ": unknown " + std::string(what) + " key");
    }
    it->second(key, value);
  }
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": empty key");
    }
    if (!kv.emplace(key, trim(std::string_view(body).substr(eq + 1))).second) {
      throw Error(ErrorCode::ConfigError, key + ": given more than once");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

GenConfig gen_config_from(const KeyValues& kv, GenConfig c) {
  auto sz = [](std::size_t& f) {
    return [&f](const std::string& k, const std::string& v) { f = to_u64(k, v); };
  };
  apply(kv,
        {{"vocab_size_per_language", sz(c.vocab_size_per_language)},
         {"overlap_fraction",
          [&](const std::string& k, const std::string& v) { c.overlap_fraction = to_f64(k, v); }},
         {"entity_types",
          [&](const std::string&, const std::string& v) { c.entity_types = to_list(v); }},
         {"gazetteer_size_per_type", sz(c.gazetteer_size_per_type)},
         {"templates_per_type", sz(c.templates_per_type)},
         {"n_train", sz(c.n_train)},
         {"n_dev", sz(c.n_dev)},
         {"n_unlabeled", sz(c.n_unlabeled)},
         {"n_test", sz(c.n_test)},
         {"max_sentence_len", sz(c.max_sentence_len)},
         {"seed", [&](const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }}},
        "generator");
  return c;
}

TrainConfig train_config_from(const KeyValues& kv, TrainConfig c) {
  auto sz = [](std::size_t& f) {
    return [&f](const std::string& k, const std::string& v) { f = to_u64(k, v); };
  };
  auto f64 = [](double& f) {
    return [&f](const std::string& k, const std::string& v) { f = to_f64(k, v); };
  };
  auto flag = [](bool& f) {
    return [&f](const std::string& k, const std::string& v) { f = to_bool(k, v); };
  };
  apply(kv,
        {{"batch_size", sz(c.batch_size)},
         {"epochs", sz(c.epochs)},
         {"learning_rate", f64(c.optimizer.learning_rate)},
         {"alpha", f64(c.weights.alpha)},
         {"beta", f64(c.weights.beta)},
         {"tau_lcl", f64(c.weights.tau_lcl)},
         {"tau_tcl", f64(c.weights.tau_tcl)},
         {"eval_every", sz(c.eval_every)},
         {"seed", [&](const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
         {"adam_beta1", f64(c.optimizer.beta1)},
         {"adam_beta2", f64(c.optimizer.beta2)},
         {"adam_eps", f64(c.optimizer.eps)},
         {"weight_decay", f64(c.optimizer.weight_decay)},
         {"use_lcl", flag(c.use_lcl)},
         {"use_tcl", flag(c.use_tcl)},
         {"use_kd", flag(c.use_kd)},
         {"use_src", flag(c.use_src)},
         {"use_tgt", flag(c.use_tgt)},
         {"lcl_include_o", flag(c.lcl_include_o)},
         {"kd_epochs", sz(c.kd_epochs)},
         {"kd_steps",
          [&](const std::string& k, const std::string& v) {
            if (v == "none") {
              c.kd_steps.reset();
            } else {
              c.kd_steps = to_u64(k, v);
            }
          }},
         {"embed_dim", sz(c.encoder.embed_dim)},
         {"num_layers", sz(c.encoder.num_layers)},
         {"num_heads", sz(c.encoder.num_heads)},
         {"ffn_dim", sz(c.encoder.ffn_dim)},
         {"max_len", sz(c.encoder.max_len)},
         {"init_scale", f64(c.encoder.init_scale)}},
        "training");
  return c;
}

std::string format_gen_config(const GenConfig& c) {
  std::string types;
  for (std::size_t i = 0; i < c.entity_types.size(); ++i) {
    if (i) types += ",";
    types += c.entity_types[i];
  }
  std::ostringstream o;
  o << "vocab_size_per_language=" << c.vocab_size_per_language << "\n"
    << "overlap_fraction=" << exact(c.overlap_fraction) << "\n"
    << "entity_types=" << types << "\n"
    << "gazetteer_size_per_type=" << c.gazetteer_size_per_type << "\n"
    << "templates_per_type=" << c.templates_per_type << "\n"
    << "n_train=" << c.n_train << "\n"
    << "n_dev=" << c.n_dev << "\n"
    << "n_unlabeled=" << c.n_unlabeled << "\n"
    << "n_test=" << c.n_test << "\n"
    << "max_sentence_len=" << c.max_sentence_len << "\n"
    << "seed=" << c.seed << "\n";
  return o.str();
}

std::string format_train_config(const TrainConfig& c) {
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::ostringstream o;
  o << "batch_size=" << c.batch_size << "\n"
    << "epochs=" << c.epochs << "\n"
    << "learning_rate=" << exact(c.optimizer.learning_rate) << "\n"
    << "alpha=" << exact(c.weights.alpha) << "\n"
    << "beta=" << exact(c.weights.beta) << "\n"
    << "tau_lcl=" << exact(c.weights.tau_lcl) << "\n"
    << "tau_tcl=" << exact(c.weights.tau_tcl) << "\n"
    << "eval_every=" << c.eval_every << "\n"
    << "seed=" << c.seed << "\n"
    << "adam_beta1=" << exact(c.optimizer.beta1) << "\n"
    << "adam_beta2=" << exact(c.optimizer.beta2) << "\n"
    << "adam_eps=" << exact(c.optimizer.eps) << "\n"
    << "weight_decay=" << exact(c.optimizer.weight_decay) << "\n"
    << "use_lcl=" << b(c.use_lcl) << "\n"
    << "use_tcl=" << b(c.use_tcl) << "\n"
    << "use_kd=" << b(c.use_kd) << "\n"
    << "use_src=" << b(c.use_src) << "\n"
    << "use_tgt=" << b(c.use_tgt) << "\n"
    << "lcl_include_o=" << b(c.lcl_include_o) << "\n"
    << "kd_epochs=" << c.kd_epochs << "\n"
    << "kd_steps=" << (c.kd_steps ? std::to_string(*c.kd_steps) : std::string("none")) << "\n"
    << "embed_dim=" << c.encoder.embed_dim << "\n"
    << "num_layers=" << c.encoder.num_layers << "\n"
    << "num_heads=" << c.encoder.num_heads << "\n"
    << "ffn_dim=" << c.encoder.ffn_dim << "\n"
    << "max_len=" << c.encoder.max_len << "\n"
    << "init_scale=" << exact(c.encoder.init_scale) << "\n";
  return o.str();
}

}  // namespace concner
