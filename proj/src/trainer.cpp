#include "samamba/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "json.hpp"
#include "samamba/checkpoint.hpp"
#include "samamba/inference.hpp"
#include "samamba/loss.hpp"
#include "samamba/metrics.hpp"

namespace samamba {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double argmax_dice(const Tensor& logits, std::size_t sample, const std::vector<std::uint8_t>& labels,
                   std::size_t classes) {
  const std::size_t n = logits.size() / (logits.dim(0) * classes);
  auto l = logits.data().subspan(sample * classes * n, classes * n);
  std::vector<std::uint8_t> pred(n), truth(labels.begin() + sample * n, labels.begin() + (sample + 1) * n);
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (l[c * n + v] > l[best * n + v]) best = c;
    pred[v] = static_cast<std::uint8_t>(best);
  }
  return overlap(pred, truth, classes).macro_dice;
}

struct Snapshot {
  std::vector<std::vector<double>> values;

  void take(const ParameterStore& ps) {
    values.clear();
    for (const auto& p : ps.params()) values.emplace_back(p.value.data().begin(), p.value.data().end());
  }
  void restore(ParameterStore& ps) const {
    for (std::size_t i = 0; i < values.size(); ++i) {
      Tensor w = ps.params()[i].value;
      std::copy(values[i].begin(), values[i].end(), w.mutable_data().begin());
    }
  }
};

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, const std::string& tag, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(fnv1a(tag) ^ splitmix(seed)) ^ a) ^ b);
}

std::string EpochRecord::json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["stage"] = to_string(stage);
  j["steps"] = steps;
  j["train_loss"] = train_loss;
  j["train_dice"] = train_dice;
  j["val_loss"] = val_loss;
  j["val_dice"] = val_dice;
  j["improved"] = improved;
  j["seconds"] = seconds;
  return j.dump();
}

std::vector<std::size_t> validation_split(std::size_t volumes, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
  std::size_t k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(volumes)));
  if (fraction > 0.0 && volumes >= 2) k = std::max<std::size_t>(k, 1);
  if (volumes > 0) k = std::min(k, volumes - 1);
  std::vector<std::size_t> idx(volumes);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(stream_seed(seed, "split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

EvalResult evaluate_patches(const Model& model, const std::vector<Patch>& patches, const LossConfig& loss,
                            bool reverse) {
  EvalResult r;
  if (patches.empty()) return r;
  NoGradGuard ng;
  const std::size_t K = model.config().num_classes;
  for (const auto& p : patches) {
    const Dims d = p.image.dims;
    ForwardOptions opt;
    opt.reverse = reverse;
    opt.anisotropy = p.image.spacing.anisotropy();
    Tensor logits = model.forward(Tensor::from({1, 1, d.d, d.h, d.w}, p.image.data), opt);
    r.loss += total_loss(logits, p.mask.labels, loss).total.item();
    r.dice += argmax_dice(logits, 0, p.mask.labels, K);
  }
  r.loss /= static_cast<double>(patches.size());
  r.dice /= static_cast<double>(patches.size());
  return r;
}

TrainResult train(const Config& cfg, const std::vector<TrainingVolume>& data, const TrainOptions& opts) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");
  if (cfg.train.batch_size == 0) throw ConfigError("train: batch size must be positive");
  for (const auto& tv : data)
    if (!(tv.image.dims == tv.labels.dims)) throw DimensionError("train: image and labels of '" + tv.name + "' differ in size");

  TrainResult res;
  const std::uint64_t seed = cfg.train.seed;

  // data preparation
  auto val_idx = validation_split(data.size(), cfg.train.val_fraction, seed);
  std::vector<bool> is_val(data.size(), false);
  for (auto i : val_idx) {
    is_val[i] = true;
    res.val_volumes.push_back(data[i].name);
  }
  std::vector<Volume> denoised;
  denoised.reserve(data.size());
  for (const auto& tv : data) denoised.push_back(cfg.data.denoise ? nlm_denoise(tv.image, cfg.data.nlm) : tv.image);
  std::vector<Volume> fit;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!is_val[i]) fit.push_back(denoised[i]);
  res.reference = fit_reference(fit, "fit on " + std::to_string(fit.size()) + " training volumes");

  std::vector<Patch> train_set, val_set;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto ps = extract_patches(harmonize(denoised[i], res.reference), data[i].labels, cfg.data.grid);
    auto& dst = is_val[i] ? val_set : train_set;
    for (auto& p : ps) dst.push_back(std::move(p));
  }
  if (train_set.empty()) throw ConfigError("train: no training patch passes the foreground threshold");
  res.train_patches = train_set.size();
  res.val_patches = val_set.size();

  res.model = std::make_unique<Model>(cfg.model, seed);
  Model& model = *res.model;
  ParameterStore& store = model.params();
  if (!opts.import_weights.empty()) {
    auto rep = import_parameters(opts.import_weights, store);
    if (opts.log)
      spdlog::info("imported {} tensors ({} unmatched, {} left at init)", rep.loaded.size(), rep.unmatched.size(),
                   rep.missing.size());
  }

  const StagePlan plan = stage_plan(cfg.schedule);
  EarlyStopper stopper(cfg.schedule);
  res.optimizer.cfg = cfg.optim;
  const std::size_t K = cfg.model.num_classes;
  const std::size_t per_epoch = cfg.train.steps_per_epoch ? cfg.train.steps_per_epoch : train_set.size();

  std::ofstream metrics;
  if (!opts.output_dir.empty()) {
    std::filesystem::create_directories(opts.output_dir);
    metrics.open(opts.output_dir / "metrics.jsonl");
    save_stats(opts.output_dir / "reference.json", res.reference);
  }
  if (opts.log)
    spdlog::info("training on {} patches, validating on {} ({} volumes held out)", train_set.size(), val_set.size(),
                 val_idx.size());

  Snapshot best;
  best.take(store);
  res.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < plan.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    const Stage stage = plan.stage_at(epoch);
    apply_stage(store, stage);
    store.zero_grad();

    std::vector<std::size_t> order;
    std::mt19937_64 order_rng(stream_seed(seed, "order", epoch));
    while (order.size() < per_epoch) {
      std::vector<std::size_t> perm(train_set.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), order_rng);
      order.insert(order.end(), perm.begin(), perm.end());
    }
    order.resize(per_epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    double dice_sum = 0.0;
    std::size_t dice_n = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.train.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.train.batch_size);
      const Dims d = train_set[order[b0]].image.dims;
      std::vector<double> xs;
      std::vector<std::uint8_t> ys;
      for (std::size_t i = b0; i < b1; ++i) {
        const Patch& p = train_set[order[i]];
        if (!(p.image.dims == d)) throw DimensionError("train: patches in a batch differ in size");
        if (cfg.train.augment) {
          // one stream per (epoch, patch), independent of batch composition
          std::mt19937_64 aug_rng(stream_seed(seed, "augment", epoch, order[i]));
          auto [img, msk] = augment(p.image, p.mask, aug_rng, cfg.train.augmentation);
          xs.insert(xs.end(), img.data.begin(), img.data.end());
          ys.insert(ys.end(), msk.labels.begin(), msk.labels.end());
        } else {
          xs.insert(xs.end(), p.image.data.begin(), p.image.data.end());
          ys.insert(ys.end(), p.mask.labels.begin(), p.mask.labels.end());
        }
      }
      const std::size_t B = b1 - b0;
      std::mt19937_64 drop_rng(stream_seed(seed, "dropout", epoch, step));
      ForwardOptions fo;
      fo.training = true;
      fo.reverse = StagePlan::reverse_enabled(stage);
      fo.anisotropy = train_set[order[b0]].image.spacing.anisotropy();
      fo.rng = &drop_rng;
      Tensor logits = model.forward(Tensor::from({B, 1, d.d, d.h, d.w}, std::move(xs)), fo);
      LossBundle lb = total_loss(logits, ys, cfg.loss);
      backward(lb.total);
      clip_grad_norm(store, cfg.optim.clip_norm);
      adamw_step(store, res.optimizer);
      store.zero_grad();

      const double l = lb.total.item();
      res.step_losses.push_back(l);
      rec.train_loss += l;
      for (std::size_t s = 0; s < B; ++s, ++dice_n) dice_sum += argmax_dice(logits, s, ys, K);
      ++rec.steps;
      ++step;
    }
    rec.train_loss /= static_cast<double>(rec.steps);
    rec.train_dice = dice_sum / static_cast<double>(dice_n);

    if (!val_set.empty()) {
      auto ev = evaluate_patches(model, val_set, cfg.loss, StagePlan::reverse_enabled(stage));
      rec.val_loss = ev.loss;
      rec.val_dice = ev.dice;
    } else {
      rec.val_loss = rec.train_loss;
      rec.val_dice = rec.train_dice;
    }
    const bool stop = stopper.update(rec.val_loss);
    rec.improved = stopper.improved();
    if (rec.improved) {
      best.take(store);
      res.best_epoch = epoch;
      res.best_val_loss = rec.val_loss;
      if (!opts.output_dir.empty())
        save_checkpoint(opts.output_dir / "best", cfg, model, {stage, epoch, seed, rec.val_loss, res.reference},
                        &res.optimizer);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(rec);
    if (metrics.is_open()) metrics << rec.json() << '\n' << std::flush;
    if (opts.log)
      spdlog::info("epoch {:3d} [{}] train loss {:.5f} dice {:.4f} | val loss {:.5f} dice {:.4f}{} ({:.1f}s)", epoch,
                   to_string(stage), rec.train_loss, rec.train_dice, rec.val_loss, rec.val_dice,
                   rec.improved ? " *" : "", rec.seconds);
    if (opts.on_epoch_end) opts.on_epoch_end(rec, model);
    if (stop) {
      res.stopped_early = stopper.stagnant() >= cfg.schedule.patience;
      break;
    }
  }

  if (!opts.output_dir.empty()) {
    const auto& last = res.history.back();
    save_checkpoint(opts.output_dir / "last", cfg, model, {last.stage, last.epoch, seed, last.val_loss, res.reference},
                    &res.optimizer);
  }
  best.restore(store);
  apply_stage(store, plan.stage_at(res.history.back().epoch));
  return res;
}

}  // namespace samamba
