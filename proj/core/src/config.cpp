#include "stspot/config.hpp"

#include <fstream>

using json = nlohmann::json;

namespace stspot::config {

RunConfig profile_config(const std::string& name) {
  RunConfig cfg;
  if (name == "desk") {
    cfg.profile = "desk";
    cfg.gen.height = 64;
    cfg.gen.width = 64;
    cfg.gen.min_instances = 1;
    cfg.gen.max_instances = 2;
    cfg.gen.min_word_len = 1;
    cfg.gen.max_word_len = 5;
    cfg.gen.min_glyph_height = 10;
    cfg.gen.max_glyph_height = 16;
    cfg.gen.max_rotation_deg = 15.0;
    cfg.gen.max_arc_sweep = 0.5;
    cfg.dataset_size = 32;

    cfg.model.backbone.embed_dim = 64;
    cfg.model.backbone.blocks_per_stage = 2;
    cfg.model.backbone.window = 4;
    cfg.model.backbone.heads = 4;
    cfg.model.backbone.fpn_channels = 64;
    cfg.model.encoder.layers = 2;
    cfg.model.encoder.heads = 4;
    cfg.model.encoder.channels = 64;
    cfg.model.encoder.ff_dim = 128;
    cfg.model.same.channels = 64;
    cfg.model.same.roi_size = 8;
    cfg.model.same.tre_layers = 2;
    cfg.model.same.tre_heads = 4;
    cfg.model.same.tre_ff = 128;
    cfg.model.heads.channels = 64;
    cfg.model.heads.roi_size = 8;
    cfg.model.heads.det_hidden = 64;
    cfg.model.heads.mask_hidden = 32;
    cfg.model.heads.max_steps = 8;
    cfg.model.heads.base_w = 40.0;
    cfg.model.heads.base_h = 16.0;

    cfg.train.iterations = 5000;
    cfg.train.base_lr = 1e-3;
    cfg.train.milestones = {3500, 4500};
    cfg.train.batch_size = 2;
    cfg.train.weight_decay = 1e-4;
    cfg.train.checkpoint_every = 1000;
  } else if (name == "paper") {
    cfg.profile = "paper";
    cfg.gen.height = 256;
    cfg.gen.width = 256;
    cfg.gen.min_instances = 2;
    cfg.gen.max_instances = 6;
    cfg.gen.min_word_len = 2;
    cfg.gen.max_word_len = 10;
    cfg.gen.min_glyph_height = 12;
    cfg.gen.max_glyph_height = 40;
    cfg.dataset_size = 256;

    cfg.model.backbone.embed_dim = 64;
    cfg.model.backbone.blocks_per_stage = 2;
    cfg.model.backbone.window = 7;
    cfg.model.backbone.heads = 8;
    cfg.model.backbone.fpn_channels = 256;
    cfg.model.encoder.layers = 6;
    cfg.model.encoder.heads = 8;
    cfg.model.encoder.channels = 256;
    cfg.model.encoder.ff_dim = 1024;
    cfg.model.same.channels = 256;
    cfg.model.same.roi_size = 16;
    cfg.model.same.tre_layers = 2;
    cfg.model.same.tre_heads = 8;
    cfg.model.same.tre_ff = 1024;
    cfg.model.heads.channels = 256;
    cfg.model.heads.roi_size = 16;
    cfg.model.heads.det_hidden = 256;
    cfg.model.heads.mask_hidden = 64;
    cfg.model.heads.max_steps = 32;
    cfg.model.heads.dec_heads = 8;
    cfg.model.heads.dec_ff = 1024;
    cfg.model.heads.base_w = 80.0;
    cfg.model.heads.base_h = 32.0;

    cfg.train.iterations = 450000;
    cfg.train.base_lr = 2.5e-5;
    cfg.train.milestones = {350000, 420000};
    cfg.train.batch_size = 8;
    cfg.train.weight_decay = 1e-4;
    cfg.train.checkpoint_every = 10000;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
  }
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json j;
  j["profile"] = cfg.profile;
  j["dataset"] = {{"size", cfg.dataset_size},
                  {"format", cfg.dataset_format},
                  {"height", cfg.gen.height},
                  {"width", cfg.gen.width},
                  {"min_instances", cfg.gen.min_instances},
                  {"max_instances", cfg.gen.max_instances},
                  {"min_word_len", cfg.gen.min_word_len},
                  {"max_word_len", cfg.gen.max_word_len},
                  {"min_glyph_height", cfg.gen.min_glyph_height},
                  {"max_glyph_height", cfg.gen.max_glyph_height},
                  {"max_rotation_deg", cfg.gen.max_rotation_deg},
                  {"max_arc_sweep", cfg.gen.max_arc_sweep},
                  {"clutter_density", cfg.gen.clutter_density},
                  {"illegible_prob", cfg.gen.illegible_prob},
                  {"alphabet", cfg.gen.alphabet}};
  j["model"] = {{"embed_dim", cfg.model.backbone.embed_dim},
                {"blocks_per_stage", cfg.model.backbone.blocks_per_stage},
                {"window", cfg.model.backbone.window},
                {"backbone_heads", cfg.model.backbone.heads},
                {"channels", cfg.model.backbone.fpn_channels},
                {"encoder_layers", cfg.model.encoder.layers},
                {"encoder_heads", cfg.model.encoder.heads},
                {"encoder_ff", cfg.model.encoder.ff_dim},
                {"encoder_shared", cfg.model.encoder.shared},
                {"roi_size", cfg.model.same.roi_size},
                {"tre_layers", cfg.model.same.tre_layers},
                {"max_steps", cfg.model.heads.max_steps},
                {"dec_layers", cfg.model.heads.dec_layers},
                {"base_w", cfg.model.heads.base_w},
                {"base_h", cfg.model.heads.base_h},
                {"focal_alpha", cfg.model.heads.focal_alpha},
                {"focal_gamma", cfg.model.heads.focal_gamma},
                {"init_seed", cfg.model.init_seed}};
  j["train"] = {{"iterations", cfg.train.iterations},
                {"base_lr", cfg.train.base_lr},
                {"milestones", cfg.train.milestones},
                {"decay", cfg.train.decay},
                {"batch_size", cfg.train.batch_size},
                {"weight_decay", cfg.train.weight_decay},
                {"grad_clip", cfg.train.grad_clip},
                {"lambda_giou", cfg.train.weights.giou},
                {"lambda_l1", cfg.train.weights.l1},
                {"lambda_mask", cfg.train.weights.mask},
                {"lambda_rec", cfg.train.weights.rec},
                {"seed", cfg.train.seed},
                {"gradient_block", cfg.train.gradient_block},
                {"strict_t_recognition", cfg.train.strict_t_recognition},
                {"gt_jitter", cfg.train.gt_jitter},
                {"checkpoint_every", cfg.train.checkpoint_every},
                {"aug_color_jitter", cfg.train.aug.color_jitter},
                {"aug_hflip_prob", cfg.train.aug.hflip_prob},
                {"aug_max_rotate_deg", cfg.train.aug.max_rotate_deg}};
  j["infer"] = {{"topk", cfg.infer.topk},
                {"score_thresh", cfg.infer.score_thresh},
                {"nms_iou", cfg.infer.nms_iou},
                {"mask_thresh", cfg.infer.mask_thresh}};
  return j;
}

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig from_json(const json& j, const RunConfig& base) {
  RunConfig cfg = base;
  for (const auto& [key, val] : j.items()) {
    if (key != "profile" && key != "dataset" && key != "model" &&
        key != "train" && key != "infer")
      throw ConfigError("unknown config section '" + key + "'");
  }
  get_if(j, "profile", cfg.profile);
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    get_if(d, "size", cfg.dataset_size);
    get_if(d, "format", cfg.dataset_format);
    get_if(d, "height", cfg.gen.height);
    get_if(d, "width", cfg.gen.width);
    get_if(d, "min_instances", cfg.gen.min_instances);
    get_if(d, "max_instances", cfg.gen.max_instances);
    get_if(d, "min_word_len", cfg.gen.min_word_len);
    get_if(d, "max_word_len", cfg.gen.max_word_len);
    get_if(d, "min_glyph_height", cfg.gen.min_glyph_height);
    get_if(d, "max_glyph_height", cfg.gen.max_glyph_height);
    get_if(d, "max_rotation_deg", cfg.gen.max_rotation_deg);
    get_if(d, "max_arc_sweep", cfg.gen.max_arc_sweep);
    get_if(d, "clutter_density", cfg.gen.clutter_density);
    get_if(d, "illegible_prob", cfg.gen.illegible_prob);
    get_if(d, "alphabet", cfg.gen.alphabet);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    get_if(m, "embed_dim", cfg.model.backbone.embed_dim);
    get_if(m, "blocks_per_stage", cfg.model.backbone.blocks_per_stage);
    get_if(m, "window", cfg.model.backbone.window);
    get_if(m, "backbone_heads", cfg.model.backbone.heads);
    int channels = cfg.model.backbone.fpn_channels;
    get_if(m, "channels", channels);
    cfg.model.backbone.fpn_channels = channels;
    cfg.model.encoder.channels = channels;
    cfg.model.same.channels = channels;
    cfg.model.heads.channels = channels;
    get_if(m, "encoder_layers", cfg.model.encoder.layers);
    get_if(m, "encoder_heads", cfg.model.encoder.heads);
    get_if(m, "encoder_ff", cfg.model.encoder.ff_dim);
    get_if(m, "encoder_shared", cfg.model.encoder.shared);
    int roi = cfg.model.same.roi_size;
    get_if(m, "roi_size", roi);
    cfg.model.same.roi_size = roi;
    cfg.model.heads.roi_size = roi;
    get_if(m, "tre_layers", cfg.model.same.tre_layers);
    get_if(m, "max_steps", cfg.model.heads.max_steps);
    get_if(m, "dec_layers", cfg.model.heads.dec_layers);
    get_if(m, "base_w", cfg.model.heads.base_w);
    get_if(m, "base_h", cfg.model.heads.base_h);
    get_if(m, "focal_alpha", cfg.model.heads.focal_alpha);
    get_if(m, "focal_gamma", cfg.model.heads.focal_gamma);
    get_if(m, "init_seed", cfg.model.init_seed);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    get_if(t, "iterations", cfg.train.iterations);
    get_if(t, "base_lr", cfg.train.base_lr);
    get_if(t, "milestones", cfg.train.milestones);
    get_if(t, "decay", cfg.train.decay);
    get_if(t, "batch_size", cfg.train.batch_size);
    get_if(t, "weight_decay", cfg.train.weight_decay);
    get_if(t, "grad_clip", cfg.train.grad_clip);
    get_if(t, "lambda_giou", cfg.train.weights.giou);
    get_if(t, "lambda_l1", cfg.train.weights.l1);
    get_if(t, "lambda_mask", cfg.train.weights.mask);
    get_if(t, "lambda_rec", cfg.train.weights.rec);
    get_if(t, "seed", cfg.train.seed);
    get_if(t, "gradient_block", cfg.train.gradient_block);
    get_if(t, "strict_t_recognition", cfg.train.strict_t_recognition);
    get_if(t, "gt_jitter", cfg.train.gt_jitter);
    get_if(t, "checkpoint_every", cfg.train.checkpoint_every);
    get_if(t, "aug_color_jitter", cfg.train.aug.color_jitter);
    get_if(t, "aug_hflip_prob", cfg.train.aug.hflip_prob);
    get_if(t, "aug_max_rotate_deg", cfg.train.aug.max_rotate_deg);
  }
  if (j.contains("infer")) {
    const json& i = j["infer"];
    get_if(i, "topk", cfg.infer.topk);
    get_if(i, "score_thresh", cfg.infer.score_thresh);
    get_if(i, "nms_iou", cfg.infer.nms_iou);
    get_if(i, "mask_thresh", cfg.infer.mask_thresh);
  }
  // The alphabet is shared between the generator and the recognizer.
  cfg.model.heads.alphabet = cfg.gen.alphabet;
  return cfg;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
  std::ifstream f(path);
  if (!f) throw IoError("missing config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ParseError(str_cat("config ", path, ": ", e.what()));
  }
  return from_json(j, base);
}

}  // namespace stspot::config
