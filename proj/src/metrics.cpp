#include "samamba/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "samamba/tensor.hpp"

namespace samamba {

OverlapReport overlap(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                      std::size_t classes) {
  if (pred.size() != truth.size()) throw DimensionError("overlap: label volumes differ in size");
  if (classes == 0) throw ConfigError("overlap: no classes");
  std::vector<std::uint64_t> np(classes, 0), ng(classes, 0), inter(classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= classes || truth[i] >= classes) throw ContractError("overlap: label out of range");
    ++np[pred[i]];
    ++ng[truth[i]];
    if (pred[i] == truth[i]) ++inter[pred[i]];
  }
  OverlapReport r;
  for (std::size_t c = 0; c < classes; ++c) {
    std::uint64_t sum = np[c] + ng[c], uni = sum - inter[c];
    double dsc = sum ? 2.0 * static_cast<double>(inter[c]) / static_cast<double>(sum) : 1.0;
    // I/(S-I) and D/(2-D) agree algebraically; deriving one from the other keeps them bit-identical
    double iou = uni ? dsc / (2.0 - dsc) : 1.0;
    r.dice.push_back(dsc);
    r.iou.push_back(iou);
    r.macro_dice += dsc / static_cast<double>(classes);
    r.macro_iou += iou / static_cast<double>(classes);
  }
  return r;
}

OverlapReport overlap(const LabelVolume& pred, const LabelVolume& truth) {
  if (!(pred.dims == truth.dims))
    throw DimensionError("overlap: dims " + to_string(pred.dims) + " vs " + to_string(truth.dims));
  return overlap(pred.labels, truth.labels, std::max(pred.num_classes(), truth.num_classes()));
}

Fractions fractions(const LabelVolume& labels) {
  const std::size_t K = labels.num_classes();
  if (K < 2) throw ConfigError("fractions: need rock and at least one fluid class");
  std::vector<std::uint64_t> n(K, 0);
  for (auto l : labels.labels) {
    if (l >= K) throw ContractError("fractions: label out of range");
    ++n[l];
  }
  const std::uint64_t total = labels.labels.size(), pore = total - n[0];
  if (pore == 0) throw ContractError("fractions: no pore voxels, saturation undefined");
  Fractions f;
  f.porosity = static_cast<double>(pore) / static_cast<double>(total);
  for (std::size_t c = 1; c < K; ++c) f.saturation.push_back(static_cast<double>(n[c]) / static_cast<double>(pore));
  return f;
}

std::array<std::uint64_t, 3> interface_faces(const LabelVolume& labels, std::uint8_t a, std::uint8_t b) {
  if (a == b) throw ContractError("interfacial_area: classes must differ");
  const Dims d = labels.dims;
  std::array<std::uint64_t, 3> n{0, 0, 0};
  auto pair = [&](std::uint8_t p, std::uint8_t q) { return (p == a && q == b) || (p == b && q == a); };
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        auto l = labels.at(z, y, x);
        if (z + 1 < d.d && pair(l, labels.at(z + 1, y, x))) ++n[0];
        if (y + 1 < d.h && pair(l, labels.at(z, y + 1, x))) ++n[1];
        if (x + 1 < d.w && pair(l, labels.at(z, y, x + 1))) ++n[2];
      }
  return n;
}

double interfacial_area(const LabelVolume& labels, std::uint8_t a, std::uint8_t b) {
  const Spacing s = labels.spacing;
  if (!(s.z > 0 && s.y > 0 && s.x > 0)) throw ConfigError("interfacial_area: spacing must be positive");
  auto n = interface_faces(labels, a, b);
  // a face normal to z spans y and x
  return static_cast<double>(n[0]) * s.y * s.x + static_cast<double>(n[1]) * s.z * s.x +
         static_cast<double>(n[2]) * s.z * s.y;
}

std::int64_t euler_number(const std::vector<bool>& mask, Dims dims) {
  if (mask.size() != dims.count()) throw DimensionError("euler_number: mask size does not match dims");
  const auto D = static_cast<std::int64_t>(dims.d), H = static_cast<std::int64_t>(dims.h),
             W = static_cast<std::int64_t>(dims.w);
  auto fg = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return z >= 0 && y >= 0 && x >= 0 && z < D && y < H && x < W && mask[(z * H + y) * W + x];
  };
  std::int64_t V = 0, E = 0, F = 0, C = 0;
  // Lattice point (z, y, x) is the corner shared by voxels (z-1..z, y-1..y, x-1..x).
  for (std::int64_t z = 0; z <= D; ++z)
    for (std::int64_t y = 0; y <= H; ++y)
      for (std::int64_t x = 0; x <= W; ++x) {
        bool any = false;
        for (int k = 0; k < 8 && !any; ++k) any = fg(z - (k & 1), y - ((k >> 1) & 1), x - ((k >> 2) & 1));
        V += any;
        // edges starting at this point in +x, +y, +z
        if (x < W) E += fg(z, y, x) || fg(z - 1, y, x) || fg(z, y - 1, x) || fg(z - 1, y - 1, x);
        if (y < H) E += fg(z, y, x) || fg(z - 1, y, x) || fg(z, y, x - 1) || fg(z - 1, y, x - 1);
        if (z < D) E += fg(z, y, x) || fg(z, y - 1, x) || fg(z, y, x - 1) || fg(z, y - 1, x - 1);
        // faces with this point as their lowest corner, normal to z, y, x
        if (y < H && x < W) F += fg(z, y, x) || fg(z - 1, y, x);
        if (z < D && x < W) F += fg(z, y, x) || fg(z, y - 1, x);
        if (z < D && y < H) F += fg(z, y, x) || fg(z, y, x - 1);
        C += fg(z, y, x);
      }
  return V - E + F - C;
}

std::int64_t euler_number(const LabelVolume& labels, const std::vector<std::uint8_t>& classes) {
  std::vector<bool> mask(labels.labels.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    for (auto c : classes)
      if (labels.labels[i] == c) mask[i] = true;
  return euler_number(mask, labels.dims);
}

std::vector<std::tuple<std::string, double, std::string>> PropertyReport::rows() const {
  return {
      {"Porosity", porosity_pct, "%"},
      {"Saturation of brine, Sw", brine_saturation_pct, "%"},
      {"Saturation of oil, So", oil_saturation_pct, "%"},
      {"Interfacial area oil-brine", area_oil_brine, "um^2"},
      {"Interfacial area brine-grains", area_brine_grain, "um^2"},
      {"Interfacial area oil-grains", area_oil_grain, "um^2"},
      {"Surface area of grains", area_grain, "um^2"},
      {"Euler number of pore space", static_cast<double>(euler_pore), ""},
      {"Euler number of brine", static_cast<double>(euler_brine), ""},
      {"Euler number of oil", static_cast<double>(euler_oil), ""},
  };
}

std::string PropertyReport::table() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-32s %16s  %s\n", "Property", "Value", "Unit");
  os << line;
  for (const auto& [name, value, unit] : rows()) {
    if (unit.empty())
      std::snprintf(line, sizeof line, "%-32s %16.0f\n", name.c_str(), value);
    else
      std::snprintf(line, sizeof line, "%-32s %16.4f  %s\n", name.c_str(), value, unit.c_str());
    os << line;
  }
  return os.str();
}

std::string PropertyReport::json() const {
  nlohmann::ordered_json j;
  j["porosity_pct"] = porosity_pct;
  j["brine_saturation_pct"] = brine_saturation_pct;
  j["oil_saturation_pct"] = oil_saturation_pct;
  j["interfacial_area_oil_brine_um2"] = area_oil_brine;
  j["interfacial_area_brine_grain_um2"] = area_brine_grain;
  j["interfacial_area_oil_grain_um2"] = area_oil_grain;
  j["grain_surface_area_um2"] = area_grain;
  j["euler_pore"] = euler_pore;
  j["euler_brine"] = euler_brine;
  j["euler_oil"] = euler_oil;
  return j.dump(2);
}

PropertyReport property_report(const LabelVolume& labels) {
  if (labels.num_classes() != 3) throw ConfigError("property_report: expects three classes (rock, brine, oil)");
  Fractions f = fractions(labels);
  PropertyReport r;
  r.porosity_pct = 100.0 * f.porosity;
  r.brine_saturation_pct = 100.0 * f.saturation[0];
  r.oil_saturation_pct = 100.0 * f.saturation[1];
  r.area_oil_brine = interfacial_area(labels, 2, 1);
  r.area_brine_grain = interfacial_area(labels, 1, 0);
  r.area_oil_grain = interfacial_area(labels, 2, 0);
  r.area_grain = r.area_brine_grain + r.area_oil_grain;
  r.euler_pore = euler_number(labels, {1, 2});
  r.euler_brine = euler_number(labels, {1});
  r.euler_oil = euler_number(labels, {2});
  return r;
}

}  // namespace samamba
