#include "concner/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "concner/error.hpp"

namespace concner {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[6] = {'C', 'N', 'E', 'R', '1', '\0'};
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::BadCheckpoint, std::string("truncated checkpoint while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string manifest_text(const Checkpoint& c) {
  const EncoderConfig& e = c.params.config;
  std::ostringstream m;
  m << "labels=" << join(c.label_set.labels(), ',') << "\n";
  m << "entity_types=" << join(c.label_set.entity_types(), ',') << "\n";
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(c.vocab.hash()));
  m << "vocab_hash=" << hash << "\n";
  m << "vocab=" << join(c.vocab.tokens(), '\t') << "\n";
  m << "vocab_size=" << e.vocab_size << "\n";
  m << "embed_dim=" << e.embed_dim << "\n";
  m << "num_layers=" << e.num_layers << "\n";
  m << "num_heads=" << e.num_heads << "\n";
  m << "ffn_dim=" << e.ffn_dim << "\n";
  m << "max_len=" << e.max_len << "\n";
  m << "label_count=" << e.label_count << "\n";
  m << "init_seed=" << e.init_seed << "\n";
  m << "init_scale=" << exact(e.init_scale) << "\n";
  m << "step=" << c.step << "\n";
  m << "dev_f1=" << exact(c.dev_f1) << "\n";
  return m.str();
}

std::map<std::string, std::string> parse_manifest(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string line(text.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::BadCheckpoint, "checkpoint manifest line without '=': " + line);
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& field(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorCode::BadCheckpoint, "checkpoint manifest lacks " + key);
  return it->second;
}

std::uint64_t field_u64(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& v = field(kv, key);
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::BadCheckpoint, "checkpoint manifest: bad integer for " + key);
}

double field_f64(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& v = field(kv, key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::BadCheckpoint, "checkpoint manifest: bad number for " + key);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint16_t>(out, kCheckpointVersion);
  const std::string manifest = manifest_text(c);
  put<std::uint64_t>(out, manifest.size());
  out += manifest;
  put<std::uint64_t>(out, c.params.tensors.size());
  for (std::size_t i = 0; i < c.params.tensors.size(); ++i) {
    const std::string& name = c.params.names[i];
    const Tensor& t = c.params.tensors[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    const auto values = t.values();
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof kMagic, "magic") != std::string_view(kMagic, sizeof kMagic)) {
    throw Error(ErrorCode::BadCheckpoint, "not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::BadCheckpoint,
                "unsupported checkpoint version " + std::to_string(version));
  }
  const auto manifest_len = r.get<std::uint64_t>("manifest length");
  const auto kv = parse_manifest(r.take(manifest_len, "manifest"));

  Checkpoint c;
  try {
    c.label_set = LabelSet::from_labels(split(field(kv, "labels"), ','));
  } catch (const Error& e) {
    throw Error(ErrorCode::BadCheckpoint, std::string("checkpoint label set: ") + e.what());
  }
  c.vocab = Vocabulary::from_tokens(split(field(kv, "vocab"), '\t'));
  EncoderConfig& e = c.params.config;
  e.vocab_size = field_u64(kv, "vocab_size");
  e.embed_dim = field_u64(kv, "embed_dim");
  e.num_layers = field_u64(kv, "num_layers");
  e.num_heads = field_u64(kv, "num_heads");
  e.ffn_dim = field_u64(kv, "ffn_dim");
  e.max_len = field_u64(kv, "max_len");
  e.label_count = field_u64(kv, "label_count");
  e.init_seed = field_u64(kv, "init_seed");
  e.init_scale = field_f64(kv, "init_scale");
  c.step = field_u64(kv, "step");
  c.dev_f1 = field_f64(kv, "dev_f1");
  if (e.vocab_size != c.vocab.size() || e.label_count != c.label_set.size()) {
    throw Error(ErrorCode::ArchitectureMismatch,
                "checkpoint encoder config disagrees with its vocabulary or label set");
  }

  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    std::string name(r.take(name_len, "tensor name"));
    if (r.get<std::uint8_t>("dtype") != kDtypeF64) {
      throw Error(ErrorCode::BadCheckpoint, "tensor " + name + " has an unknown dtype");
    }
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint64_t>("dims"));
    const std::size_t n = shape_size(shape);
    auto raw = r.take(n * sizeof(double), "tensor data");
    std::vector<double> data(n);
    std::memcpy(data.data(), raw.data(), raw.size());
    c.params.names.push_back(std::move(name));
    c.params.tensors.emplace_back(std::move(shape), std::move(data));
  }
  if (!r.done()) throw Error(ErrorCode::BadCheckpoint, "trailing bytes after checkpoint tensors");
  check_params(c.params);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace concner
