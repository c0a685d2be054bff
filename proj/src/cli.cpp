#include "samamba/cli.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <ostream>
#include <sstream>

#include "samamba/checkpoint.hpp"
#include "samamba/config.hpp"
#include "samamba/inference.hpp"
#include "samamba/metrics.hpp"
#include "samamba/model.hpp"
#include "samamba/optim.hpp"
#include "samamba/parallel.hpp"
#include "samamba/phantom.hpp"
#include "samamba/preprocess.hpp"
#include "samamba/trainer.hpp"
#include "samamba/volume.hpp"

namespace samamba {
namespace {

namespace fs = std::filesystem;

Dims parse_dims(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t pos = 0;
    unsigned long n = 0;
    try {
      n = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.empty() || n == 0) throw ConfigError("bad --dims value '" + s + "'");
    v.push_back(n);
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw ConfigError("--dims takes N or D,H,W");
}

Config config_or(const std::string& path, const std::string& preset) {
  if (!path.empty()) return load_config(path);
  if (preset == "paper") return paper_config();
  if (preset == "desk") return desk_config();
  throw ConfigError("unknown preset '" + preset + "' (desk or paper)");
}

fs::path with_suffix(const fs::path& base, const std::string& suffix) {
  fs::path p = base;
  p += suffix;
  return p;
}

std::string pretty_count(std::uint64_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

struct PhantomArgs {
  std::string kind = "sphere-pack";
  std::string dims = "64";
  std::uint64_t seed = 0;
  double porosity = 0.5, oil_fraction = 0.4, blur = 0.7, noise = 0.03, spacing = 1.0;
  std::string out = "phantom";
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  PhantomSpec s;
  s.kind = phantom_kind_from_string(a.kind);
  s.dims = parse_dims(a.dims);
  s.seed = a.seed;
  s.porosity = a.porosity;
  s.oil_fraction = a.oil_fraction;
  s.blur_sigma = a.blur;
  s.noise_sigma = a.noise;
  s.spacing = {a.spacing, a.spacing, a.spacing};
  Phantom p = generate_phantom(s);
  const fs::path image = with_suffix(a.out, "_image"), labels = with_suffix(a.out, "_labels");
  save_volume(image, p.image);
  save_labels(labels, p.truth);
  out << "wrote " << raw_path(image).string() << " and " << raw_path(labels).string() << " (" << to_string(s.dims)
      << ", porosity " << std::fixed << std::setprecision(4) << p.porosity << ", " << p.grains << " grains)\n";
  return 0;
}

struct PreprocessArgs {
  std::vector<std::string> inputs;
  std::string out_dir, stats, config;
  bool no_denoise = false;
};

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out) {
  Config cfg = a.config.empty() ? desk_config() : load_config(a.config);
  if (a.no_denoise) cfg.data.denoise = false;
  std::vector<Volume> raw;
  for (const auto& in : a.inputs) raw.push_back(load_volume(in));
  std::vector<Volume> clean;
  for (const auto& v : raw) clean.push_back(cfg.data.denoise ? nlm_denoise(v, cfg.data.nlm) : v);

  ReferenceStats ref;
  if (!a.stats.empty()) {
    ref = load_stats(a.stats);
  } else {
    std::string provenance;
    for (const auto& in : a.inputs) provenance += (provenance.empty() ? "" : ",") + fs::path(in).stem().string();
    ref = fit_reference(clean, provenance);
  }
  fs::create_directories(a.out_dir);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    fs::path dst = fs::path(a.out_dir) / fs::path(a.inputs[i]).stem();
    save_volume(dst, harmonize(clean[i], ref), VoxelType::f32);
    out << "wrote " << raw_path(dst).string() << "\n";
  }
  if (a.stats.empty()) {
    save_stats(fs::path(a.out_dir) / "reference.json", ref);
    out << "reference: q" << ref.p_low << "=" << ref.q_low << " q" << ref.p_high << "=" << ref.q_high
        << " mean=" << ref.mean << " std=" << ref.std << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string config, preset = "desk", out_dir, import_weights;
  std::vector<std::string> images, labels;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.images.size() != a.labels.size())
    throw ConfigError("--image and --labels must be given the same number of times");
  Config cfg = config_or(a.config, a.preset);
  std::vector<TrainingVolume> data;
  for (std::size_t i = 0; i < a.images.size(); ++i)
    data.push_back({load_volume(a.images[i]), load_labels(a.labels[i]), fs::path(a.images[i]).stem().string()});
  TrainOptions opts;
  opts.output_dir = a.out_dir;
  opts.import_weights = a.import_weights;
  opts.log = !a.quiet;
  TrainResult r = train(cfg, data, opts);
  out << "trained " << r.history.size() << " epochs on " << r.train_patches << " patches"
      << (r.stopped_early ? " (stopped early)" : "") << "; best epoch " << r.best_epoch << " val loss "
      << r.best_val_loss << "\n"
      << "checkpoints in " << (fs::path(a.out_dir) / "best").string() << " and "
      << (fs::path(a.out_dir) / "last").string() << "\n";
  return 0;
}

struct SegmentArgs {
  std::string checkpoint, input, out;
  bool probs = false;
  double overlap = -1.0;
};

int cmd_segment(const SegmentArgs& a, std::ostream& out) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  if (!ck.meta.reference) throw FormatError("checkpoint " + a.checkpoint + " has no reference statistics");
  if (a.overlap >= 0.0) ck.config.inference.overlap = a.overlap;
  Volume v = load_volume(a.input);
  Segmentation seg = segment_volume(*ck.model, v, *ck.meta.reference, ck.config);
  save_labels(a.out, seg.labels);
  out << "wrote " << raw_path(a.out).string() << " (" << seg.plan.origins.size() << " tiles, stride "
      << seg.plan.stride << ")\n";
  if (a.probs) {
    fs::path p = with_suffix(a.out, "_prob");
    save_probabilities(p, seg.probs, v.spacing, seg.labels.class_names);
    out << "wrote " << p.string() << "_{" << seg.labels.class_names.front() << ",...}.raw\n";
  }
  return 0;
}

struct EvalArgs {
  std::string pred, ref;
  bool json = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  LabelVolume pred = load_labels(a.pred), ref = load_labels(a.ref);
  if (pred.dims != ref.dims)
    throw DimensionError("prediction is " + to_string(pred.dims) + " but reference is " + to_string(ref.dims));
  OverlapReport r = overlap(pred, ref);
  if (a.json) {
    out << "{\"dice\":[";
    for (std::size_t c = 0; c < r.dice.size(); ++c) out << (c ? "," : "") << r.dice[c];
    out << "],\"iou\":[";
    for (std::size_t c = 0; c < r.iou.size(); ++c) out << (c ? "," : "") << r.iou[c];
    out << "],\"macro_dice\":" << r.macro_dice << ",\"macro_iou\":" << r.macro_iou << "}\n";
    return 0;
  }
  out << std::fixed << std::setprecision(4) << std::left << std::setw(8) << "class" << std::setw(10) << "dice"
      << "iou\n";
  for (std::size_t c = 0; c < r.dice.size(); ++c)
    out << std::setw(8) << ref.class_names[c] << std::setw(10) << r.dice[c] << r.iou[c] << "\n";
  out << std::setw(8) << "macro" << std::setw(10) << r.macro_dice << r.macro_iou << "\n";
  return 0;
}

int cmd_report(const std::string& labels, bool json, std::ostream& out) {
  PropertyReport r = property_report(load_labels(labels));
  out << (json ? r.json() : r.table()) << "\n";
  return 0;
}

struct SummaryArgs {
  std::string config, preset = "desk";
  std::size_t patch = 0;
};

int cmd_summary(const SummaryArgs& a, std::ostream& out) {
  Config cfg = config_or(a.config, a.preset);
  cfg.validate();
  Model model(cfg.model, 0, /*materialize=*/false);
  const auto& store = model.params();
  auto by_role = [&](Role r) { return store.count([r](const Param& p) { return p.role == r; }); };
  const std::size_t total = store.count();
  const std::size_t stage_a = store.count([](const Param& p) { return StagePlan::trains(p.role, Stage::A); });
  const std::size_t stage_b = store.count([](const Param& p) { return StagePlan::trains(p.role, Stage::B); });
  const std::size_t patch = a.patch ? a.patch : cfg.data.grid.patch;

  out << "model: C=" << cfg.model.sam.embed_dim << " L=" << cfg.model.sam.depth << " Mamba ["
      << cfg.model.mamba.channels[0] << "," << cfg.model.mamba.channels[1] << "," << cfg.model.mamba.channels[2]
      << "," << cfg.model.mamba.channels[3] << "] d=" << cfg.model.mamba.descriptor() << "\n";
  out << "parameters (total): " << pretty_count(total) << "\n";
  for (Role r : {Role::Trainable, Role::FrozenBackbone, Role::SamNorm, Role::SamAdapter, Role::Lora, Role::Reverse})
    out << "  " << std::left << std::setw(16) << to_string(r) << pretty_count(by_role(r)) << "\n";
  out << "trainable parameters, stage A: " << pretty_count(stage_a) << "\n";
  out << "trainable parameters, stage B: " << pretty_count(stage_b) << "\n";
  out << "multiply-accumulates per " << patch << "^3 patch: " << pretty_count(model.estimate_macs({patch, patch, patch}))
      << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-encoder multiphase segmentation of porous-media volumes", "samamba"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: SAMAMBA_THREADS or all cores)");

  PhantomArgs ph;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom and its exact labels");
  phantom->add_option("--kind", ph.kind, "sphere-pack, layered-bed, droplet-field or wetting-film")
      ->capture_default_str();
  phantom->add_option("--dims", ph.dims, "N or D,H,W (each at least 32)")->capture_default_str();
  phantom->add_option("--seed", ph.seed)->capture_default_str();
  phantom->add_option("--porosity", ph.porosity)->capture_default_str();
  phantom->add_option("--oil-fraction", ph.oil_fraction, "Share of pore space filled with oil")->capture_default_str();
  phantom->add_option("--blur", ph.blur, "Gaussian blur sigma in voxels")->capture_default_str();
  phantom->add_option("--noise", ph.noise, "Additive noise sigma")->capture_default_str();
  phantom->add_option("--spacing", ph.spacing, "Isotropic voxel size in micrometres")->capture_default_str();
  phantom->add_option("--out", ph.out, "Output prefix; writes <out>_image and <out>_labels")->capture_default_str();

  PreprocessArgs pp;
  auto* preprocess = app.add_subcommand("preprocess", "Denoise and harmonize volumes against a shared reference");
  preprocess->add_option("--input", pp.inputs, "Input volume (repeatable)")->required();
  preprocess->add_option("--out-dir", pp.out_dir)->required();
  preprocess->add_option("--stats", pp.stats, "Apply an existing reference instead of fitting one");
  preprocess->add_option("--config", pp.config, "Config file for the denoising parameters");
  preprocess->add_flag("--no-denoise", pp.no_denoise);

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Two-stage training on labelled volumes");
  auto* tr_config = trainc->add_option("--config", tr.config, "Config file");
  trainc->add_option("--preset", tr.preset, "desk or paper, when no config file is given")
      ->capture_default_str()
      ->excludes(tr_config);
  trainc->add_option("--image", tr.images, "Training volume (repeatable)")->required();
  trainc->add_option("--labels", tr.labels, "Label volume, paired with --image in order")->required();
  trainc->add_option("--out", tr.out_dir, "Output directory")->required();
  trainc->add_option("--import", tr.import_weights, "Checkpoint whose parameters are imported by name");
  trainc->add_flag("--quiet", tr.quiet);

  SegmentArgs sg;
  auto* segment = app.add_subcommand("segment", "Tiled inference with a trained checkpoint");
  segment->add_option("--checkpoint", sg.checkpoint)->required();
  segment->add_option("--input", sg.input)->required();
  segment->add_option("--out", sg.out)->required();
  segment->add_option("--overlap", sg.overlap, "Override the configured tile overlap");
  segment->add_flag("--probs", sg.probs, "Also write the stitched class probabilities");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Per-class Dice and IoU of a segmentation");
  eval->add_option("--pred", ev.pred)->required();
  eval->add_option("--ref", ev.ref)->required();
  eval->add_flag("--json", ev.json);

  std::string report_labels;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "Porosity, saturation, interfacial areas and Euler numbers");
  report->add_option("--labels", report_labels)->required();
  report->add_flag("--json", report_json);

  SummaryArgs sm;
  auto* summary = app.add_subcommand("summary", "Parameter counts and per-patch cost of a configuration");
  auto* sm_config = summary->add_option("--config", sm.config, "Config file");
  summary->add_option("--preset", sm.preset, "desk or paper")->capture_default_str()->excludes(sm_config);
  summary->add_option("--patch", sm.patch, "Patch edge for the cost estimate (default: training patch)");

  std::vector<std::string> storage{"samamba"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (threads) set_thread_count(threads);
    if (phantom->parsed()) return cmd_phantom(ph, out);
    if (preprocess->parsed()) return cmd_preprocess(pp, out);
    if (trainc->parsed()) return cmd_train(tr, out);
    if (segment->parsed()) return cmd_segment(sg, out);
    if (eval->parsed()) return cmd_eval(ev, out);
    if (report->parsed()) return cmd_report(report_labels, report_json, out);
    if (summary->parsed()) return cmd_summary(sm, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace samamba
