#include "ccdc/volume_io.hpp"

#include <bit>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ccdc {

namespace {

constexpr char kVolumeMagic[8] = {'C', 'C', 'D', 'C', 'V', 'O', 'L', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

// Cursor over a fully loaded file; all reads bounds-checked.
struct ByteReader {
  const std::string& bytes;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n) const {
    if (pos + n > bytes.size())
      throw InputError("truncated file: " + path);
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
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
};

std::string load_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return bytes;
}

void store_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

std::string encode_volume(const Shape& extents, const std::array<double, 3>& spacing,
                          const double* values, Index n) {
  std::string out;
  out.reserve(8 + 12 + 24 + static_cast<std::size_t>(n) * 4);
  out.append(kVolumeMagic, 8);
  for (Index e : extents) put_u32(out, static_cast<std::uint32_t>(e));
  for (double s : spacing) put_f64(out, s);
  for (Index i = 0; i < n; ++i) put_f32(out, static_cast<float>(values[i]));
  return out;
}

struct DecodedVolume {
  Shape extents;
  std::array<double, 3> spacing;
  std::vector<float> values;
};

DecodedVolume decode_volume(const std::filesystem::path& path) {
  const std::string bytes = load_bytes(path);
  ByteReader r{bytes, 0, path.string()};
  r.need(8);
  if (std::memcmp(bytes.data(), kVolumeMagic, 8) != 0)
    throw InputError("bad volume magic in " + path.string());
  r.pos = 8;
  DecodedVolume v;
  for (int i = 0; i < 3; ++i) {
    const std::uint32_t e = r.u32();
    if (e == 0) throw InputError("zero extent in " + path.string());
    v.extents.push_back(static_cast<Index>(e));
  }
  for (int i = 0; i < 3; ++i) v.spacing[static_cast<std::size_t>(i)] = r.f64();
  const Index n = numel(v.extents);
  v.values.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v.values[static_cast<std::size_t>(i)] = r.f32();
  if (r.pos != bytes.size()) throw InputError("trailing bytes in " + path.string());
  return v;
}

}  // namespace

Index Mask::foreground() const {
  Index n = 0;
  for (std::uint8_t v : values) n += v != 0;
  return n;
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
  if (v.extents.size() != 3) throw ShapeError("volume must have 3 extents");
  if (v.values.size() != v.numel()) throw ShapeError("volume value count does not match extents");
  for (double s : v.spacing)
    if (!(s > 0)) throw InputError("non-positive spacing writing " + path.string());
  store_bytes(path, encode_volume(v.extents, v.spacing, v.values.data(), v.numel()));
}

Volume read_volume(const std::filesystem::path& path) {
  DecodedVolume d = decode_volume(path);
  Volume v;
  v.extents = d.extents;
  v.spacing = d.spacing;
  v.values.resize(static_cast<Index>(d.values.size()));
  for (std::size_t i = 0; i < d.values.size(); ++i)
    v.values[static_cast<Index>(i)] = static_cast<double>(d.values[i]);
  return v;
}

void write_mask(const std::filesystem::path& path, const Mask& m) {
  if (m.extents.size() != 3) throw ShapeError("mask must have 3 extents");
  if (static_cast<Index>(m.values.size()) != m.numel())
    throw ShapeError("mask value count does not match extents");
  std::vector<double> vals(m.values.size());
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    if (m.values[i] > 1) throw InputError("mask voxels must be 0 or 1 writing " + path.string());
    vals[i] = m.values[i];
  }
  store_bytes(path, encode_volume(m.extents, {1.0, 1.0, 1.0}, vals.data(),
                                  static_cast<Index>(vals.size())));
}

Mask read_mask(const std::filesystem::path& path) {
  DecodedVolume d = decode_volume(path);
  Mask m;
  m.extents = d.extents;
  m.values.resize(d.values.size());
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const float v = d.values[i];
    if (v != 0.0f && v != 1.0f)
      throw InputError("non-binary mask voxel in " + path.string());
    m.values[i] = v != 0.0f;
  }
  return m;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  if (img.width <= 0 || img.height <= 0 ||
      static_cast<Index>(img.pixels.size()) != 3 * img.width * img.height)
    throw ShapeError("inconsistent image writing " + path.string());
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  store_bytes(path, out);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const std::string bytes = load_bytes(path);
  std::size_t pos = 0;
  const auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {  // comment to end of line
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw InputError("truncated header in " + path.string());
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw InputError("not a P6 image: " + path.string());
  RgbImage img;
  img.width = std::stoll(token());
  img.height = std::stoll(token());
  if (token() != "255") throw InputError("unsupported maxval in " + path.string());
  if (img.width <= 0 || img.height <= 0) throw InputError("bad raster size in " + path.string());
  ++pos;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(3 * img.width * img.height);
  if (pos + n > bytes.size()) throw InputError("truncated raster in " + path.string());
  if (pos + n != bytes.size()) throw InputError("trailing bytes in " + path.string());
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void write_patch_dir(const std::filesystem::path& dir, const std::vector<RgbImage>& patches,
                     const std::vector<Magnification>& mags) {
  if (patches.size() != mags.size())
    throw UsageError("patch and magnification counts differ");
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["schema_version"] = 1;
  index["patches"] = nlohmann::json::array();
  for (std::size_t i = 0; i < patches.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "p%04zu.ppm", i);
    write_ppm(dir / name, patches[i]);
    index["patches"].push_back({{"file", name}, {"magnification", mag_to_string(mags[i])}});
  }
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw IoError("cannot create " + (dir / "index.json").string());
  out << index.dump(2) << '\n';
}

PatchDirImages read_patch_images(const std::filesystem::path& dir) {
  const std::filesystem::path index_path = dir / "index.json";
  std::ifstream in(index_path);
  if (!in) throw IoError("cannot open " + index_path.string());
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad index in " + index_path.string() + ": " + e.what());
  }
  if (!index.contains("schema_version") || index["schema_version"].get<int>() != 1)
    throw InputError("unsupported index schema in " + index_path.string());
  PatchDirImages out;
  for (const auto& entry : index.at("patches")) {
    out.images.push_back(read_ppm(dir / entry.at("file").get<std::string>()));
    out.mags.push_back(mag_from_string(entry.at("magnification").get<std::string>()));
  }
  return out;
}

PatchBag read_patch_dir(const std::filesystem::path& dir, const std::string& case_id) {
  PatchDirImages raw = read_patch_images(dir);
  PatchBag bag;
  bag.case_id = case_id;
  for (const RgbImage& img : raw.images) bag.patches.push_back(image_to_feature(img));
  bag.mags = std::move(raw.mags);
  return bag;
}

Array image_to_feature(const RgbImage& img) {
  Array f(3 * img.width * img.height);
  for (int c = 0; c < 3; ++c)
    for (Index x = 0; x < img.width; ++x)
      for (Index y = 0; y < img.height; ++y)
        f[(c * img.width + x) * img.height + y] = img.at(x, y, c) / 255.0;
  return f;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
  const std::string bytes = load_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace ccdc
