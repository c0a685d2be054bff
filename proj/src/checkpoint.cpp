#include "samamba/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

namespace samamba {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "samamba-checkpoint/1";

json reference_json(const ReferenceStats& s) {
  return {{"q_low", s.q_low}, {"q_high", s.q_high}, {"mean", s.mean}, {"std", s.std},
          {"p_low", s.p_low}, {"p_high", s.p_high}, {"provenance", s.provenance}};
}

ReferenceStats reference_from(const json& j) {
  ReferenceStats s;
  s.q_low = j.at("q_low");
  s.q_high = j.at("q_high");
  s.mean = j.at("mean");
  s.std = j.at("std");
  s.p_low = j.at("p_low");
  s.p_high = j.at("p_high");
  s.provenance = j.at("provenance");
  s.validate();
  return s;
}

// NaN is not representable in JSON; store it as null.
json maybe_number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

struct Entry {
  std::string name, kind;
  Shape shape;
  std::size_t offset = 0, count = 0;
};

std::vector<Entry> entries_of(const json& manifest) {
  std::vector<Entry> out;
  for (const auto& t : manifest.at("tensors")) {
    Entry e;
    e.name = t.at("name");
    e.kind = t.at("kind");
    e.shape = t.at("shape").get<Shape>();
    e.offset = t.at("offset");
    e.count = t.at("count");
    if (numel(e.shape) != e.count) throw FormatError("checkpoint: element count mismatch for '" + e.name + "'");
    out.push_back(std::move(e));
  }
  return out;
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("cannot open " + (dir / "manifest.json").string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != kFormat) throw FormatError("unsupported checkpoint format in " + dir.string());
  return j;
}

std::vector<double> read_blob(std::ifstream& blob, const Entry& e) {
  std::vector<double> v(e.count);
  blob.seekg(static_cast<std::streamoff>(e.offset * sizeof(double)));
  read_f64le(blob, v);
  if (!blob) throw FormatError("checkpoint: truncated tensor data for '" + e.name + "'");
  return v;
}

}  // namespace

void write_f64le(std::ostream& out, std::span<const double> values) {
  std::vector<unsigned char> buf(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto u = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_f64le(std::istream& in, std::span<double> values) {
  std::vector<unsigned char> buf(values.size() * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
    values[i] = std::bit_cast<double>(u);
  }
}

std::vector<std::pair<std::string, std::vector<std::string>>> component_prefixes() {
  return {
      {"early_fusion_stem", {"stem.", "early."}},
      {"mamba_encoder", {"mamba.stage"}},
      {"global_descriptor_and_conditioning", {"mamba.descriptor", "mamba.importance", "mamba.cond"}},
      {"sam_patch_embedding", {"sam.embed"}},
      {"sam_backbone", {"sam.block*.attn.{q,k,v,o}.{w,b}", "sam.block*.mlp."}},
      {"sam_layernorms", {"sam.block*.ln"}},
      {"lora", {"sam.block*.attn.{q,v}.lora_"}},
      {"adapters_3d", {"sam.block*.adapter."}},
      {"forward_adapters", {"bridge.shallow"}},
      {"cross_encoder_fusion", {"bridge.deep*.fuse."}},
      {"reverse_feedback", {"bridge.deep*.reverse."}},
      {"decoder", {"decoder.", "head."}},
  };
}

void save_checkpoint(const fs::path& dir, const Config& config, const Model& model, const CheckpointMeta& meta,
                     const OptimizerState* optimizer) {
  if (!model.params().materialized()) throw ContractError("checkpoint: model has no parameter values");
  fs::create_directories(dir);

  ordered_json m;
  m["format"] = kFormat;
  m["stage"] = to_string(meta.stage);
  m["epoch"] = meta.epoch;
  m["seed"] = meta.seed;
  m["val_loss"] = maybe_number(meta.val_loss);
  m["config"] = json::parse(config_to_json(config));
  if (meta.reference) m["reference"] = reference_json(*meta.reference);
  ordered_json comps = ordered_json::object();
  for (const auto& [k, v] : component_prefixes()) comps[k] = v;
  m["components"] = comps;

  std::ofstream blob(dir / "tensors.bin", std::ios::binary);
  if (!blob) throw FormatError("cannot write " + (dir / "tensors.bin").string());
  std::size_t offset = 0;
  ordered_json tensors = ordered_json::array();
  auto put = [&](const std::string& name, const std::string& kind, const Shape& shape, const std::string& role,
                 std::span<const double> values) {
    tensors.push_back({{"name", name},
                       {"kind", kind},
                       {"shape", shape},
                       {"role", role},
                       {"offset", offset},
                       {"count", values.size()}});
    write_f64le(blob, values);
    offset += values.size();
  };
  for (const auto& p : model.params().params()) put(p.name, "param", p.shape, to_string(p.role), p.value.data());

  if (optimizer) {
    const auto& c = optimizer->cfg;
    ordered_json o;
    o["lr"] = c.lr;
    o["beta1"] = c.beta1;
    o["beta2"] = c.beta2;
    o["weight_decay"] = c.weight_decay;
    o["eps"] = c.eps;
    o["clip_norm"] = c.clip_norm;
    o["step"] = optimizer->step;
    ordered_json steps = ordered_json::object();
    for (const auto& [name, mom] : optimizer->moments) {
      const auto& p = model.params().param(name);
      put(name, "adam_m", p.shape, to_string(p.role), mom.m);
      put(name, "adam_v", p.shape, to_string(p.role), mom.v);
      steps[name] = mom.steps;
    }
    o["parameter_steps"] = steps;
    m["optimizer"] = o;
  }
  m["tensors"] = tensors;
  blob.close();
  if (!blob) throw FormatError("failed writing " + (dir / "tensors.bin").string());

  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << m.dump(1) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  json m = read_manifest(dir);
  Checkpoint ck;
  try {
    ck.config = config_from_json(m.at("config").dump());
    ck.meta.stage = stage_from_string(m.at("stage"));
    ck.meta.epoch = m.at("epoch");
    ck.meta.seed = m.at("seed");
    ck.meta.val_loss = m.at("val_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                    : m.at("val_loss").get<double>();
    if (m.contains("reference")) ck.meta.reference = reference_from(m.at("reference"));

    ck.model = std::make_unique<Model>(ck.config.model, ck.meta.seed);
    auto& store = ck.model->params();
    std::ifstream blob(dir / "tensors.bin", std::ios::binary);
    if (!blob) throw FormatError("cannot open " + (dir / "tensors.bin").string());

    std::map<std::string, bool> seen;
    for (const auto& e : entries_of(m)) {
      if (!store.contains(e.name)) throw FormatError("checkpoint: unknown tensor '" + e.name + "'");
      const auto& p = store.param(e.name);
      if (p.shape != e.shape)
        throw FormatError("checkpoint: shape of '" + e.name + "' is " + shape_str(e.shape) + ", model expects " +
                          shape_str(p.shape));
      auto values = read_blob(blob, e);
      if (e.kind == "param") {
        Tensor w = p.value;
        std::copy(values.begin(), values.end(), w.mutable_data().begin());
        seen[e.name] = true;
      } else if (e.kind == "adam_m") {
        ck.optimizer.moments[e.name].m = std::move(values);
      } else if (e.kind == "adam_v") {
        ck.optimizer.moments[e.name].v = std::move(values);
      } else {
        throw FormatError("checkpoint: unknown tensor kind '" + e.kind + "'");
      }
    }
    for (const auto& p : store.params())
      if (!seen.count(p.name)) throw FormatError("checkpoint: missing parameter '" + p.name + "'");

    if (m.contains("optimizer")) {
      const auto& o = m.at("optimizer");
      auto& c = ck.optimizer.cfg;
      c.lr = o.at("lr");
      c.beta1 = o.at("beta1");
      c.beta2 = o.at("beta2");
      c.weight_decay = o.at("weight_decay");
      c.eps = o.at("eps");
      c.clip_norm = o.at("clip_norm");
      ck.optimizer.step = o.at("step");
      for (auto& [name, mom] : ck.optimizer.moments) {
        if (mom.m.size() != mom.v.size()) throw FormatError("checkpoint: incomplete moments for '" + name + "'");
        mom.steps = o.at("parameter_steps").at(name);
      }
    } else {
      ck.optimizer.cfg = ck.config.optim;
    }
  } catch (const json::exception& e) {
    throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
  }
  return ck;
}

ImportReport import_parameters(const fs::path& dir, ParameterStore& store) {
  json m = read_manifest(dir);
  std::ifstream blob(dir / "tensors.bin", std::ios::binary);
  if (!blob) throw FormatError("cannot open " + (dir / "tensors.bin").string());
  ImportReport r;
  std::map<std::string, bool> loaded;
  try {
    for (const auto& e : entries_of(m)) {
      if (e.kind != "param") continue;
      if (!store.contains(e.name)) {
        r.unmatched.push_back(e.name);
        continue;
      }
      const auto& p = store.param(e.name);
      if (p.shape != e.shape)
        throw DimensionError("import: shape of '" + e.name + "' is " + shape_str(e.shape) + ", model expects " +
                             shape_str(p.shape));
      auto values = read_blob(blob, e);
      Tensor w = p.value;
      std::copy(values.begin(), values.end(), w.mutable_data().begin());
      r.loaded.push_back(e.name);
      loaded[e.name] = true;
    }
  } catch (const json::exception& e) {
    throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
  }
  for (const auto& p : store.params())
    if (!loaded.count(p.name)) r.missing.push_back(p.name);
  return r;
}

}  // namespace samamba
