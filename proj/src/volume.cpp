#include "samamba/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "samamba/tensor.hpp"

namespace samamba {
namespace {

using ojson = nlohmann::ordered_json;

std::filesystem::path strip(const std::filesystem::path& base) {
  auto ext = base.extension();
  if (ext == ".json" || ext == ".raw") {
    auto p = base;
    p.replace_extension();
    return p;
  }
  return base;
}

template <class T>
void put_le(std::vector<char>& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  buf.insert(buf.end(), bytes, bytes + sizeof(T));
}

template <class T>
T get_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

std::size_t voxel_bytes(VoxelType t) {
  switch (t) {
    case VoxelType::f32:
      return 4;
    case VoxelType::u8:
      return 1;
    case VoxelType::u16:
      return 2;
  }
  return 0;
}

void write_sidecar(const std::filesystem::path& base, const Dims& dims, const Spacing& sp, VoxelType type) {
  ojson j;
  j["dims"] = {dims.d, dims.h, dims.w};
  j["spacing_um"] = {sp.z, sp.y, sp.x};
  j["dtype"] = to_string(type);
  j["order"] = "little-endian";
  j["layout"] = "z-major (index=(z*H+y)*W+x)";
  std::ofstream out(sidecar_path(base));
  if (!out) throw FormatError("cannot write " + sidecar_path(base).string());
  out << j.dump(2) << '\n';
}

struct Sidecar {
  Dims dims;
  Spacing spacing;
  VoxelType type;
};

Sidecar read_sidecar(const std::filesystem::path& base) {
  std::ifstream in(sidecar_path(base));
  if (!in) throw FormatError("cannot open " + sidecar_path(base).string());
  ojson j;
  try {
    in >> j;
    Sidecar s;
    auto d = j.at("dims");
    auto sp = j.at("spacing_um");
    s.dims = {d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>(), d.at(2).get<std::size_t>()};
    s.spacing = {sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>()};
    s.type = voxel_type_from_string(j.at("dtype").get<std::string>());
    if (j.value("order", "little-endian") != "little-endian") throw FormatError("only little-endian volumes are supported");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad sidecar " + sidecar_path(base).string() + ": " + e.what());
  }
}

std::vector<char> read_raw(const std::filesystem::path& base, std::size_t expected) {
  std::ifstream in(raw_path(base), std::ios::binary);
  if (!in) throw FormatError("cannot open " + raw_path(base).string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() != expected) {
    throw FormatError(raw_path(base).string() + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(buf.size()));
  }
  return buf;
}

void write_raw(const std::filesystem::path& base, const std::vector<char>& buf) {
  std::ofstream out(raw_path(base), std::ios::binary);
  if (!out) throw FormatError("cannot write " + raw_path(base).string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

std::string to_string(const Dims& dims) {
  return std::to_string(dims.d) + "x" + std::to_string(dims.h) + "x" + std::to_string(dims.w);
}

Volume::Volume(Dims d, Spacing s, double fill) : dims(d), spacing(s), data(d.count(), fill) {}

void Volume::validate() const {
  for (double c : {spacing.z, spacing.y, spacing.x}) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("volume: spacing components must be positive and finite");
  }
  if (data.size() != dims.count()) throw DimensionError("volume: data size does not match dims");
}

LabelVolume::LabelVolume(Dims d, Spacing s, std::uint8_t fill) : dims(d), spacing(s), labels(d.count(), fill) {}

std::string to_string(VoxelType t) {
  switch (t) {
    case VoxelType::f32:
      return "f32";
    case VoxelType::u8:
      return "u8";
    case VoxelType::u16:
      return "u16";
  }
  return "?";
}

VoxelType voxel_type_from_string(const std::string& s) {
  if (s == "f32") return VoxelType::f32;
  if (s == "u8") return VoxelType::u8;
  if (s == "u16") return VoxelType::u16;
  throw FormatError("unknown dtype '" + s + "'");
}

std::filesystem::path sidecar_path(const std::filesystem::path& base) {
  auto p = strip(base);
  p += ".json";
  return p;
}

std::filesystem::path raw_path(const std::filesystem::path& base) {
  auto p = strip(base);
  p += ".raw";
  return p;
}

void save_volume(const std::filesystem::path& base, const Volume& v, VoxelType type) {
  v.validate();
  std::vector<char> buf;
  buf.reserve(v.data.size() * voxel_bytes(type));
  for (double x : v.data) {
    switch (type) {
      case VoxelType::f32:
        put_le(buf, static_cast<float>(x));
        break;
      case VoxelType::u8:
        put_le(buf, static_cast<std::uint8_t>(std::clamp(std::lround(x), 0L, 255L)));
        break;
      case VoxelType::u16:
        put_le(buf, static_cast<std::uint16_t>(std::clamp(std::lround(x), 0L, 65535L)));
        break;
    }
  }
  write_sidecar(base, v.dims, v.spacing, type);
  write_raw(base, buf);
}

void save_labels(const std::filesystem::path& base, const LabelVolume& v) {
  std::vector<char> buf(v.labels.begin(), v.labels.end());
  write_sidecar(base, v.dims, v.spacing, VoxelType::u8);
  write_raw(base, buf);
}

Volume load_volume(const std::filesystem::path& base) {
  Sidecar s = read_sidecar(base);
  std::size_t bytes = voxel_bytes(s.type);
  auto buf = read_raw(base, s.dims.count() * bytes);
  Volume v(s.dims, s.spacing);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const char* p = buf.data() + i * bytes;
    switch (s.type) {
      case VoxelType::f32:
        v.data[i] = get_le<float>(p);
        break;
      case VoxelType::u8:
        v.data[i] = static_cast<unsigned char>(*p);
        break;
      case VoxelType::u16:
        v.data[i] = get_le<std::uint16_t>(p);
        break;
    }
  }
  v.validate();
  return v;
}

LabelVolume load_labels(const std::filesystem::path& base, std::vector<std::string> class_names) {
  Sidecar s = read_sidecar(base);
  if (s.type != VoxelType::u8) throw FormatError("label volumes must be stored as u8");
  auto buf = read_raw(base, s.dims.count());
  LabelVolume v(s.dims, s.spacing);
  v.class_names = std::move(class_names);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    auto label = static_cast<std::uint8_t>(buf[i]);
    if (label >= v.class_names.size()) {
      throw FormatError("label " + std::to_string(label) + " outside the " + std::to_string(v.class_names.size()) +
                        "-class map");
    }
    v.labels[i] = label;
  }
  return v;
}

}  // namespace samamba
