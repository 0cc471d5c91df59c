#include "ccdc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ccdc {

namespace {

constexpr char kMagic[8] = {'C', 'C', 'D', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_values(std::string& out, const Array& a) {
  for (Index i = 0; i < a.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(a[i]));
}

struct Reader {
  std::string bytes;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw InputError("truncated checkpoint: " + path);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  void values(Array& a) {
    for (Index i = 0; i < a.size(); ++i) a[i] = std::bit_cast<double>(u64());
  }
};

std::string serialize_params(const ParameterStore& store) {
  std::string out;
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store.at(i);
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (Index e : p.shape) put_u32(out, static_cast<std::uint32_t>(e));
    put_values(out, p.value);
  }
  return out;
}

}  // namespace

AdamState AdamState::zeros_like(const ParameterStore& store) {
  AdamState s;
  for (std::size_t i = 0; i < store.size(); ++i) {
    s.m.push_back(Array::Zero(store.at(i).numel()));
    s.v.push_back(Array::Zero(store.at(i).numel()));
  }
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const AdamState& adam, const CheckpointMeta& meta) {
  if (adam.m.size() != store.size() || adam.v.size() != store.size())
    throw UsageError("optimizer state does not match the parameter store");
  std::string out;
  out.append(kMagic, 8);
  put_u64(out, meta.config_digest);
  put_u32(out, meta.epoch);
  out += serialize_params(store);
  put_u64(out, static_cast<std::uint64_t>(adam.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    put_values(out, adam.m[i]);
    put_values(out, adam.v[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot create " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failure on " + path.string());
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParameterStore& store,
                               AdamState& adam, std::uint64_t expected_digest) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  Reader r;
  r.path = path.string();
  r.bytes.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  r.need(8);
  if (std::memcmp(r.bytes.data(), kMagic, 8) != 0)
    throw InputError("bad checkpoint magic in " + path.string());
  r.pos = 8;

  CheckpointMeta meta;
  meta.config_digest = r.u64();
  if (meta.config_digest != expected_digest)
    throw ConfigError("checkpoint " + path.string() + " was written for a different model config");
  meta.epoch = r.u32();

  const std::uint32_t count = r.u32();
  if (count != store.size())
    throw ConfigError("checkpoint parameter count " + std::to_string(count) +
                      " does not match the model's " + std::to_string(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store.at(i);
    const std::string name = r.str(r.u32());
    if (name != p.name)
      throw ConfigError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(r.u32()));
    if (shape != p.shape)
      throw ConfigError("checkpoint shape " + shape_str(shape) + " for '" + p.name +
                        "' does not match " + shape_str(p.shape));
    r.values(p.value);
  }
  adam = AdamState::zeros_like(store);
  adam.step = static_cast<std::int64_t>(r.u64());
  for (std::size_t i = 0; i < store.size(); ++i) {
    r.values(adam.m[i]);
    r.values(adam.v[i]);
  }
  if (r.pos != r.bytes.size()) throw InputError("trailing bytes in " + path.string());
  return meta;
}

std::uint64_t parameter_digest(const ParameterStore& store) {
  const std::string bytes = serialize_params(store);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace ccdc
