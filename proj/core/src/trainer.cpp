#include "stspot/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "stspot/checkpoint.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace stspot::train {

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] >= iterations)
      throw ConfigError("milestones must lie before the final iteration");
    if (i > 0 && milestones[i] <= milestones[i - 1])
      throw ConfigError("milestones must be strictly increasing");
  }
  if (decay <= 0.0 || decay > 1.0) throw ConfigError("decay must be in (0,1]");
  if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
}

double lr_schedule(long long iteration, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  for (long long m : cfg.milestones)
    if (iteration >= m) lr *= cfg.decay;
  return lr;
}

void adamw_step(nn::ParamStore& params, OptState& state, double lr,
                const TrainConfig& cfg) {
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, t] : params.all()) {
    auto& entry = state.entries[name];
    auto& val = const_cast<ad::Tensor&>(t).values();
    auto& grad = const_cast<ad::Tensor&>(t).grad();
    if (entry.m.size() != val.size()) {
      entry.m.assign(val.size(), 0.0);
      entry.v.assign(val.size(), 0.0);
    }
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double g = grad[i];
      entry.m[i] = b1 * entry.m[i] + (1.0 - b1) * g;
      entry.v[i] = b2 * entry.v[i] + (1.0 - b2) * g * g;
      const double mhat = entry.m[i] / bias1;
      const double vhat = entry.v[i] / bias2;
      val[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                      cfg.weight_decay * val[i]);
    }
  }
}

datagen::SceneSample augment_sample(const datagen::SceneSample& s,
                                    const AugConfig& aug, Rng& rng) {
  datagen::SceneSample out = s;
  if (aug.max_rotate_deg > 0.0) {
    const double angle =
        rng.uniform(-aug.max_rotate_deg, aug.max_rotate_deg) * M_PI / 180.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double cx = s.image.width / 2.0, cy = s.image.height / 2.0;
    Image rotated = Image::create(s.image.height, s.image.width);
    for (int y = 0; y < s.image.height; ++y)
      for (int x = 0; x < s.image.width; ++x) {
        // inverse rotation, nearest neighbor
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const int sx = static_cast<int>(std::floor(cx + dx * ca + dy * sa));
        const int sy = static_cast<int>(std::floor(cy - dx * sa + dy * ca));
        if (sx < 0 || sx >= s.image.width || sy < 0 || sy >= s.image.height)
          continue;
        for (int c = 0; c < 3; ++c) rotated.at(c, y, x) = s.image.at(c, sy, sx);
      }
    out.image = std::move(rotated);
    std::vector<datagen::TextInstanceGT> kept;
    for (auto inst : out.instances) {
      bool inside = true;
      for (auto& p : inst.polygon) {
        const double dx = p.x - cx, dy = p.y - cy;
        p = {cx + dx * ca - dy * sa, cy + dx * sa + dy * ca};
        if (p.x < 0 || p.y < 0 || p.x > s.image.width || p.y > s.image.height)
          inside = false;
      }
      if (inside) kept.push_back(std::move(inst));
    }
    out.instances = std::move(kept);
  }
  if (aug.hflip_prob > 0.0 && rng.uniform() < aug.hflip_prob) {
    Image flipped = Image::create(out.image.height, out.image.width);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < out.image.height; ++y)
        for (int x = 0; x < out.image.width; ++x)
          flipped.at(c, y, x) = out.image.at(c, y, out.image.width - 1 - x);
    out.image = std::move(flipped);
    for (auto& inst : out.instances)
      for (auto& p : inst.polygon) p.x = out.image.width - p.x;
  }
  if (aug.color_jitter > 0.0) {
    const double mulf = 1.0 + rng.uniform(-aug.color_jitter, aug.color_jitter);
    const double addf = rng.uniform(-aug.color_jitter, aug.color_jitter) * 0.5;
    for (auto& v : out.image.data) v = std::clamp(v * mulf + addf, 0.0, 1.0);
  }
  return out;
}

namespace {

double global_grad_norm(const nn::ParamStore& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params.all()) {
    const auto& g = const_cast<ad::Tensor&>(t).grad();
    for (double v : g) sq += v * v;
  }
  return std::sqrt(sq);
}

void scale_grads(const nn::ParamStore& params, double s) {
  for (const auto& [name, t] : params.all()) {
    auto& g = const_cast<ad::Tensor&>(t).grad();
    for (double& v : g) v *= s;
  }
}

json step_record(long long iter, double lr,
                 const model::SpotterModel::StepLosses& losses,
                 const heads::LossWeights& w) {
  json rec;
  rec["iter"] = iter;
  rec["lr"] = lr;
  rec["l_cls"] = losses.l_cls.item();
  rec["l_giou"] = losses.l_giou.item();
  rec["l_l1"] = losses.l_l1.item();
  rec["l_mask"] = losses.l_mask.item();
  rec["l_rec"] = losses.l_rec.item();
  rec["l_det"] = losses.l_det.item();
  rec["l_match"] = losses.l_match.item();
  rec["lambda_giou"] = w.giou;
  rec["lambda_l1"] = w.l1;
  rec["lambda_mask"] = w.mask;
  rec["lambda_rec"] = w.rec;
  rec["mask_min"] = losses.mask_min;
  rec["mask_max"] = losses.mask_max;
  rec["instances"] = losses.instances;
  return rec;
}

}  // namespace

TrainResult train(model::SpotterModel& model, const TrainConfig& cfg,
                  const std::vector<datagen::SceneSample>& dataset,
                  const std::string& out_dir, const StepProbe& probe) {
  cfg.validate();
  if (dataset.empty()) throw Error("train: empty dataset");
  fs::create_directories(out_dir);

  TrainResult result;
  result.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(result.metrics_path, std::ios::binary);
  if (!metrics) throw IoError("cannot write " + result.metrics_path);

  json config_snapshot;
  if (!cfg.config_snapshot_json.empty()) {
    config_snapshot = json::parse(cfg.config_snapshot_json);
  }
  config_snapshot["seed"] = cfg.seed;
  config_snapshot["iterations"] = cfg.iterations;
  config_snapshot["gradient_block"] = cfg.gradient_block;

  Rng rng(cfg.seed);
  auto checkpoint_path = [&](const char* tag) {
    return (fs::path(out_dir) / tag).string();
  };
  save_checkpoint(checkpoint_path("checkpoint_init"), model.params(), 0,
                  nullptr, config_snapshot);
  result.last_checkpoint = checkpoint_path("checkpoint_init");

  OptState opt;
  for (long long iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<datagen::SceneSample> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1));
      batch.push_back(augment_sample(dataset[idx], cfg.aug, rng));
    }

    auto losses = model.forward_train(batch, rng, cfg.weights,
                                      cfg.gradient_block, cfg.gt_jitter,
                                      cfg.strict_t_recognition);
    if (!std::isfinite(losses.l_match.item())) {
      result.aborted = true;
      throw Error(str_cat("non-finite loss at iteration ", iter,
                          "; last good checkpoint: ", result.last_checkpoint));
    }

    model.params().zero_grads();
    ad::backward(losses.l_match);
    if (cfg.grad_clip > 0.0) {
      const double norm = global_grad_norm(model.params());
      if (norm > cfg.grad_clip) scale_grads(model.params(), cfg.grad_clip / norm);
    }
    const double lr = lr_schedule(iter, cfg);
    adamw_step(model.params(), opt, lr, cfg);

    metrics << step_record(iter, lr, losses, cfg.weights).dump() << "\n";
    if (probe) probe(iter, losses);

    if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0) {
      const std::string dir = checkpoint_path("checkpoint_last");
      save_checkpoint(dir, model.params(), iter + 1, &opt, config_snapshot);
      result.last_checkpoint = dir;
    }
    ++result.iterations_run;
  }
  metrics.flush();
  const std::string final_dir = checkpoint_path("checkpoint_final");
  save_checkpoint(final_dir, model.params(), cfg.iterations, &opt,
                  config_snapshot);
  result.last_checkpoint = final_dir;
  return result;
}

}  // namespace stspot::train
