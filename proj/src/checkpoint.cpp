#include "vesselkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace vk {

namespace {

constexpr std::string_view kMagic = "VKCP1";

void put_le32(std::string& out, float v) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
}

float get_le32(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

Shape parse_shape(const std::string& s) {
  Shape sh;
  char x1, x2, x3;
  std::istringstream in(s);
  if (!(in >> sh.n >> x1 >> sh.c >> x2 >> sh.h >> x3 >> sh.w) || x1 != 'x' || x2 != 'x' || x3 != 'x' ||
      sh.n < 0 || sh.c < 0 || sh.h < 0 || sh.w < 0) {
    throw FormatError("checkpoint: malformed shape '" + s + "'");
  }
  return sh;
}

std::map<std::string, std::string> split_arch(const std::string& a) {
  std::map<std::string, std::string> kv;
  std::istringstream in(a);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      kv[item] = "";
    } else {
      kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
  }
  return kv;
}

}  // namespace

template <typename T>
Checkpoint make_checkpoint(const std::string& architecture, const std::string& fingerprint,
                           const std::vector<Parameter<T>*>& params) {
  Checkpoint c{architecture, fingerprint, {}};
  for (const auto* p : params) c.tensors.push_back({p->name, p->value.template cast<float>()});
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out += fmt::format("{}\narch {}\nfingerprint {}\ntensors {}\n", kMagic, ckpt.architecture,
                     ckpt.fingerprint, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    if (t.name.find_first_of(" \n") != std::string::npos) {
      throw FormatError("checkpoint: tensor name contains whitespace: " + t.name);
    }
    const Shape& s = t.value.shape();
    out += fmt::format("{} {}x{}x{}x{} f32\n", t.name, s.n, s.c, s.h, s.w);
  }
  out += "end\n";
  for (const auto& t : ckpt.tensors) {
    for (float v : t.value.values()) put_le32(out, v);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&](const char* what) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError(fmt::format("checkpoint: truncated header ({})", what));
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (bytes.compare(0, kMagic.size() + 1, std::string(kMagic) + "\n") != 0) {
    throw FormatError("not a checkpoint (missing VKCP1 magic)");
  }
  pos = kMagic.size() + 1;
  Checkpoint c;
  auto field = [&](const std::string& key) {
    const std::string line = next_line(key.c_str());
    if (line.rfind(key + " ", 0) != 0) throw FormatError("checkpoint: expected '" + key + "' line");
    return line.substr(key.size() + 1);
  };
  c.architecture = field("arch");
  c.fingerprint = field("fingerprint");
  std::size_t count = 0;
  try {
    count = std::stoul(field("tensors"));
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint: malformed tensor count");
  }
  std::size_t payload = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream in(next_line("tensor"));
    std::string name, shape, dtype;
    if (!(in >> name >> shape >> dtype) || dtype != "f32") {
      throw FormatError("checkpoint: malformed tensor line " + std::to_string(i));
    }
    const Shape s = parse_shape(shape);
    c.tensors.push_back({name, Tensor<float>(s)});
    payload += s.numel() * 4;
  }
  if (next_line("end") != "end") throw FormatError("checkpoint: missing 'end' line");
  const std::size_t found = bytes.size() - pos;
  if (found != payload) {
    throw FormatError(fmt::format("payload length mismatch: header declares {} bytes, file holds {}",
                                  payload, found));
  }
  const char* p = bytes.data() + pos;
  for (auto& t : c.tensors) {
    for (auto& v : t.value.values()) {
      v = get_le32(p);
      p += 4;
    }
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

std::string architecture_diff(const std::string& expected, const std::string& found) {
  const auto a = split_arch(expected);
  const auto b = split_arch(found);
  std::string out;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end()) {
      out += fmt::format("  {}: config {} | checkpoint (absent)\n", k, v);
    } else if (it->second != v) {
      out += fmt::format("  {}: config {} | checkpoint {}\n", k, v, it->second);
    }
  }
  for (const auto& [k, v] : b) {
    if (!a.count(k)) out += fmt::format("  {}: config (absent) | checkpoint {}\n", k, v);
  }
  return out;
}

template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, const std::string& architecture,
                      const std::string& fingerprint, const std::vector<Parameter<T>*>& params) {
  if (ckpt.fingerprint != fingerprint || ckpt.architecture != architecture) {
    throw ConfigError(fmt::format("checkpoint fingerprint mismatch (config {}, checkpoint {}):\n{}",
                                  fingerprint, ckpt.fingerprint,
                                  architecture_diff(architecture, ckpt.architecture)));
  }
  if (ckpt.tensors.size() != params.size()) {
    throw FormatError(fmt::format("checkpoint holds {} tensors, pipeline expects {}", ckpt.tensors.size(),
                                  params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = ckpt.tensors[i];
    if (e.name != params[i]->name || e.value.shape() != params[i]->value.shape()) {
      throw FormatError(fmt::format("checkpoint tensor {} is {} {}, pipeline expects {} {}", i, e.name,
                                    e.value.shape().str(), params[i]->name, params[i]->value.shape().str()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = ckpt.tensors[i].value.template cast<T>();
}

template Checkpoint make_checkpoint(const std::string&, const std::string&, const std::vector<Parameter<float>*>&);
template Checkpoint make_checkpoint(const std::string&, const std::string&, const std::vector<Parameter<double>*>&);
template void apply_checkpoint(const Checkpoint&, const std::string&, const std::string&,
                               const std::vector<Parameter<float>*>&);
template void apply_checkpoint(const Checkpoint&, const std::string&, const std::string&,
                               const std::vector<Parameter<double>*>&);

}  // namespace vk
