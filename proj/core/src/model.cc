#include "modnic/model.h"

#include <bit>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "modnic/io.h"

namespace modnic {

namespace {

constexpr char kMagic[4] = {'M', 'N', 'C', 'K'};
constexpr char kEchoMarker[] = "# training config\n";

class Writer {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto u = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<uint8_t>(u >> (8 * i)));
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}
  void need(size_t n) {
    if (b_.size() - pos_ < n) {
      throw FormatError("checkpoint: truncated at byte " + std::to_string(pos_));
    }
  }
  uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const uint8_t> b_;
  size_t pos_ = 0;
};

std::string geometry_echo(const Model& m) {
  std::ostringstream os;
  os.precision(17);
  const auto& c = m.config;
  os << "model.latent_channels = " << c.latent_channels << "\n"
     << "model.hidden_channels = " << c.hidden_channels << "\n"
     << "model.density_stages = " << c.density_stages << "\n"
     << "model.density_width = " << c.density_width << "\n"
     << "model.modnet_width = " << c.modnet_width << "\n"
     << "model.lambda_max = " << c.lambda_max << "\n"
     << "model.support = " << c.support << "\n"
     << "model.precision = " << c.precision << "\n"
     << "model.has_modnet = " << (m.modnet ? 1 : 0) << "\n"
     << "model.step = " << m.step << "\n";
  return os.str();
}

int get_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint: config echo lacks " + key);
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw FormatError("checkpoint: bad integer for " + key);
  }
}

}  // namespace

Model Model::create(const ModelConfig& config, Rng& rng) {
  Model m;
  m.config = config;
  m.transforms = TransformParams::create(
      {config.latent_channels, config.hidden_channels}, rng);
  DensityConfig dc;
  dc.channels = config.latent_channels;
  dc.stages = config.density_stages;
  dc.width = config.density_width;
  m.density = MonotoneCdfNetwork::create(dc, rng);
  return m;
}

void Model::attach_modnet(Rng& rng) {
  ModNetConfig mc;
  mc.latent_channels = config.latent_channels;
  mc.width = config.modnet_width;
  mc.lambda_max = config.lambda_max;
  modnet = ModNetParams::create(mc, rng);
}

std::vector<std::pair<std::string, Tensor>> Model::base_parameters() const {
  auto out = transforms.named_parameters();
  for (auto& p : density.named_parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  auto out = base_parameters();
  if (modnet) {
    for (auto& p : modnet->named_parameters()) out.push_back(std::move(p));
  }
  return out;
}

Model Model::clone() const {
  // A serialization round trip rebuilds every tensor as a fresh leaf.
  return parse_checkpoint(serialize_checkpoint(*this));
}

std::vector<uint8_t> serialize_checkpoint(const Model& model) {
  const auto params = model.named_parameters();
  Writer w;
  w.bytes(kMagic, 4);
  w.u8(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u16(static_cast<uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<uint8_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<uint32_t>(d));
    w.u8(0);
    for (double v : t.values()) w.f64(v);
  }
  const std::string echo = geometry_echo(model) + kEchoMarker + model.config_echo;
  w.u32(static_cast<uint32_t>(echo.size()));
  w.bytes(echo.data(), echo.size());
  return w.take();
}

Model parse_checkpoint(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("checkpoint: bad magic");
  const uint8_t version = r.u8();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> loaded;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    const int rank = r.u8();
    Shape shape(rank);
    for (int& d : shape) {
      const uint32_t v = r.u32();
      if (v == 0 || v > (1u << 24)) throw FormatError("checkpoint: bad dimension in " + name);
      d = static_cast<int>(v);
    }
    if (r.u8() != 0) throw FormatError("checkpoint: unsupported dtype in " + name);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.f64();
    try {
      loaded.emplace_back(std::move(name), Tensor(shape, std::move(values)));
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    }
  }
  const std::string echo = r.str(r.u32());
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");

  const auto marker = echo.find(kEchoMarker);
  const auto kv = parse_key_values(echo.substr(0, marker));
  Model m;
  m.config.latent_channels = get_int(kv, "model.latent_channels");
  m.config.hidden_channels = get_int(kv, "model.hidden_channels");
  m.config.density_stages = get_int(kv, "model.density_stages");
  m.config.density_width = get_int(kv, "model.density_width");
  m.config.modnet_width = get_int(kv, "model.modnet_width");
  m.config.support = get_int(kv, "model.support");
  m.config.precision = get_int(kv, "model.precision");
  m.config.lambda_max = std::stod(kv.at("model.lambda_max"));
  m.step = std::stoull(kv.at("model.step"));
  if (marker != std::string::npos) {
    m.config_echo = echo.substr(marker + std::strlen(kEchoMarker));
  }

  // Rebuild the layout, then overwrite every tensor by name.
  Rng rng(0);
  Model fresh = Model::create(m.config, rng);
  m.transforms = std::move(fresh.transforms);
  m.density = std::move(fresh.density);
  if (get_int(kv, "model.has_modnet")) m.attach_modnet(rng);
  auto slots = m.named_parameters();
  if (slots.size() != loaded.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(slots.size()) +
                      " tensors, found " + std::to_string(loaded.size()));
  }
  for (size_t i = 0; i < slots.size(); ++i) {
    auto& [name, slot] = slots[i];
    const auto& [lname, tensor] = loaded[i];
    if (name != lname || slot.shape() != tensor.shape()) {
      throw FormatError("checkpoint: tensor " + lname + " " +
                        shape_string(tensor.shape()) + " does not match " +
                        name + " " + shape_string(slot.shape()));
    }
    auto dst = slot.mutable_values();
    std::copy(tensor.values().begin(), tensor.values().end(), dst.begin());
  }
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  write_file(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

uint32_t fnv1a32(std::span<const uint8_t> bytes) {
  uint32_t h = 0x811C9DC5u;
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 0x01000193u;
  }
  return h;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace modnic
