#include "stspot/model.hpp"

#include <algorithm>
#include <cmath>

namespace stspot::model {

using namespace ad;

void ModelConfig::validate() const {
  if (backbone.fpn_channels != encoder.channels ||
      encoder.channels != same.channels || same.channels != heads.channels)
    throw ConfigError(str_cat(
        "channel counts must agree across modules: fpn=", backbone.fpn_channels,
        " encoder=", encoder.channels, " same=", same.channels,
        " heads=", heads.channels));
  if (same.roi_size != heads.roi_size)
    throw ConfigError("same.roi_size and heads.roi_size must agree");
  if (encoder.channels % 4 != 0)
    throw ConfigError("channel count must be divisible by 4 for the 2-D"
                      " positional encoding");
  if (heads.max_steps < 2) throw ConfigError("heads.max_steps must be >= 2");
}

SpotterModel SpotterModel::create(const ModelConfig& cfg) {
  cfg.validate();
  SpotterModel m;
  m.cfg_ = cfg;
  Rng rng(cfg.init_seed);
  m.backbone_net = backbone::BackboneNet::create(m.params_, cfg.backbone, rng);
  m.pyramid_encoder = encoder::PyramidEncoder::create(m.params_, cfg.encoder, rng);
  m.same_module = same::SameModule::create(m.params_, cfg.same, rng);
  m.det_head = heads::DetectionHead::create(m.params_, cfg.heads, rng);
  m.mask_head = heads::MaskHead::create(m.params_, cfg.heads, rng);
  m.decoder = heads::RecognitionDecoder::create(m.params_, cfg.heads, rng);
  return m;
}

Tensor batch_images(const std::vector<datagen::SceneSample>& batch) {
  if (batch.empty()) throw Error("empty batch");
  const int h = batch[0].image.height, w = batch[0].image.width;
  std::vector<double> data;
  data.reserve(batch.size() * 3 * static_cast<std::size_t>(h) * w);
  for (const auto& s : batch) {
    if (s.image.height != h || s.image.width != w)
      throw ShapeError("batch samples must share one image size");
    data.insert(data.end(), s.image.data.begin(), s.image.data.end());
  }
  return Tensor::from_data({static_cast<int>(batch.size()), 3, h, w},
                           std::move(data));
}

namespace {

Tensor box_tensor(const geom::Box& b) {
  return Tensor::from_data({4}, {b.x0, b.y0, b.x1, b.y1});
}

Tensor mean_of(std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::constant({1}, 0.0);
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

void track_mask_range(const Tensor& m, double& mn, double& mx) {
  for (double v : m.values()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
}

}  // namespace

SpotterModel::StepLosses SpotterModel::forward_train(
    const std::vector<datagen::SceneSample>& batch, Rng& rng,
    const heads::LossWeights& weights, bool gradient_block, double gt_jitter,
    bool strict_t) {
  const heads::HeadsConfig& hc = cfg_.heads;
  Tensor images = batch_images(batch);
  const double img_w = images.dim(3), img_h = images.dim(2);

  auto stages = backbone_net.extract_features(images);
  backbone::FeaturePyramid pyr =
      backbone_net.fpn_fuse(stages[0], stages[1], stages[2]);
  encoder::SoftAttentionFeatures feats = pyramid_encoder.encode_pyramid(pyr);

  StepLosses out;
  std::vector<Tensor> cls_parts;
  std::vector<char> positives;
  std::vector<Tensor> giou_terms, l1_terms, mask_terms, rec_terms;

  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& sample = batch[n];
    Tensor p3 = nn::batch_slice(pyr.p3, static_cast<int>(n));
    Tensor f1 = nn::batch_slice(feats.f1, static_cast<int>(n));
    Tensor f2 = nn::batch_slice(feats.f2, static_cast<int>(n));
    Tensor f3 = nn::batch_slice(feats.f3, static_cast<int>(n));

    heads::DenseDetections dense = det_head.forward(p3);
    std::vector<geom::Box> gt_boxes;
    for (const auto& inst : sample.instances)
      gt_boxes.push_back(geom::bounding_box(inst.polygon));

    const auto cell_gt =
        heads::assign_cells(gt_boxes, dense.grid_h, dense.grid_w, hc.stride);
    cls_parts.push_back(reshape(dense.cls_logits,
                                {dense.grid_h * dense.grid_w, 1}));
    for (int c = 0; c < dense.grid_h * dense.grid_w; ++c) {
      positives.push_back(cell_gt[c] >= 0 ? 1 : 0);
      if (cell_gt[c] >= 0) {
        ++out.positive_cells;
        Tensor pred_box = heads::decode_box_tensor(dense, c, hc);
        giou_terms.push_back(heads::giou_loss(pred_box, gt_boxes[cell_gt[c]]));
        l1_terms.push_back(
            heads::l1_loss(pred_box, gt_boxes[cell_gt[c]], img_w, img_h));
      }
    }

    // Instance stage on jittered ground-truth proposals.
    auto proposals =
        heads::propose_gt_guided(sample.instances, gt_jitter, rng, img_w, img_h);
    const auto assignment = heads::match_proposals_to_gt(proposals, gt_boxes, 0.3);
    for (std::size_t p = 0; p < proposals.size(); ++p) {
      if (assignment[p] < 0) continue;
      const auto& gt = sample.instances[assignment[p]];
      const geom::Box& box = proposals[p].box;
      Tensor box_t = box_tensor(box);
      Tensor roi = roi_bilinear(p3, box_t, hc.roi_size, hc.roi_size, hc.stride);
      Tensor mask_logits = mask_head.forward(roi);
      mask_terms.push_back(heads::mask_loss(
          mask_logits,
          heads::rasterize_polygon(gt.polygon, box, hc.roi_size)));

      same::RoiAttentionCrop crop =
          same_module.roi_crop_attention(f1, f2, f3, box_t);
      Tensor d1 = same_module.mask_transformer_encode(mask_logits);
      same::RefinedMasks rm = same_module.hierarchical_embed(d1, crop);
      track_mask_range(rm.m1, out.mask_min, out.mask_max);
      track_mask_range(rm.m2, out.mask_min, out.mask_max);
      track_mask_range(rm.m3, out.mask_min, out.mask_max);
      same::FusionMaps fm = same_module.fuse_attention_masks(rm, crop);
      Tensor gated = same::SameModule::stop_gradient_gate(fm.sm3, gradient_block);
      ++out.instances;
      if (gt.legible) {
        heads::RecognitionOutput rec = decoder.decode(gated);
        rec_terms.push_back(heads::recognition_loss(
            rec.step_logits, gt.transcription, hc, strict_t));
      }
    }
  }

  Tensor all_cls = reshape(concat(cls_parts, 0),
                           {static_cast<int>(positives.size())});
  out.l_cls = focal_from_logits(all_cls, positives, hc.focal_alpha,
                                hc.focal_gamma);
  out.l_giou = mean_of(giou_terms);
  out.l_l1 = mean_of(l1_terms);
  out.l_mask = mean_of(mask_terms);
  out.l_rec = mean_of(rec_terms);
  out.l_det =
      heads::detection_loss(out.l_cls, out.l_giou, out.l_l1, out.l_mask, weights);
  out.l_match = heads::joint_loss(out.l_det, out.l_rec, weights);
  return out;
}

geom::Polygon mask_to_polygon(const std::vector<double>& mask_logits, int s,
                              const geom::Box& box, double threshold) {
  // Evaluate mask probabilities on a 4x finer grid by bilinear interpolation
  // of the logits, then hull the corners of the cells above threshold.
  const int fine = 4 * s;
  const double logit_thresh = std::log(threshold / (1.0 - threshold));
  std::vector<geom::Point> corners;
  const double bw = box.width(), bh = box.height();
  for (int i = 0; i < fine; ++i)
    for (int j = 0; j < fine; ++j) {
      const double u = (j + 0.5) * s / fine - 0.5;
      const double v = (i + 0.5) * s / fine - 0.5;
      const int j0 = std::clamp(static_cast<int>(std::floor(u)), 0, s - 1);
      const int j1 = std::clamp(j0 + 1, 0, s - 1);
      const int i0 = std::clamp(static_cast<int>(std::floor(v)), 0, s - 1);
      const int i1 = std::clamp(i0 + 1, 0, s - 1);
      const double au = std::clamp(u - std::floor(u), 0.0, 1.0);
      const double av = std::clamp(v - std::floor(v), 0.0, 1.0);
      const double z =
          (1 - av) * ((1 - au) * mask_logits[i0 * s + j0] +
                      au * mask_logits[i0 * s + j1]) +
          av * ((1 - au) * mask_logits[i1 * s + j0] +
                au * mask_logits[i1 * s + j1]);
      if (z < logit_thresh) continue;
      const double x0 = box.x0 + j * bw / fine, x1 = box.x0 + (j + 1) * bw / fine;
      const double y0 = box.y0 + i * bh / fine, y1 = box.y0 + (i + 1) * bh / fine;
      corners.push_back({x0, y0});
      corners.push_back({x1, y0});
      corners.push_back({x1, y1});
      corners.push_back({x0, y1});
    }
  geom::Polygon hull = geom::convex_hull(std::move(corners));
  if (hull.size() < 3) return geom::box_polygon(box);
  return hull;
}

std::vector<Detection> SpotterModel::infer(const datagen::SceneSample& sample,
                                           const InferParams& ip,
                                           bool with_overlays) const {
  const heads::HeadsConfig& hc = cfg_.heads;
  Tensor images = batch_images({sample});
  const double img_w = images.dim(3), img_h = images.dim(2);

  auto stages = backbone_net.extract_features(images);
  backbone::FeaturePyramid pyr =
      backbone_net.fpn_fuse(stages[0], stages[1], stages[2]);
  encoder::SoftAttentionFeatures feats = pyramid_encoder.encode_pyramid(pyr);
  Tensor p3 = nn::batch_slice(pyr.p3, 0);
  Tensor f1 = nn::batch_slice(feats.f1, 0);
  Tensor f2 = nn::batch_slice(feats.f2, 0);
  Tensor f3 = nn::batch_slice(feats.f3, 0);

  heads::DenseDetections dense = det_head.forward(p3);
  auto proposals = heads::propose_learned(dense, hc, ip.topk, ip.score_thresh,
                                          ip.nms_iou, img_w, img_h);

  auto channel_mean = [](const Tensor& t) {
    const int c = t.dim(0), side = t.dim(1);
    std::vector<double> out(static_cast<std::size_t>(side) * t.dim(2), 0.0);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < out.size(); ++k)
        out[k] += t.values()[static_cast<std::size_t>(ch) * out.size() + k];
    for (auto& v : out) v /= c;
    return out;
  };

  std::vector<Detection> dets;
  for (const auto& prop : proposals) {
    Tensor box_t = box_tensor(prop.box);
    Tensor roi = roi_bilinear(p3, box_t, hc.roi_size, hc.roi_size, hc.stride);
    Tensor mask_logits = mask_head.forward(roi);

    Detection det;
    det.box = prop.box;
    det.score = prop.score;
    det.polygon = mask_to_polygon(mask_logits.values(), hc.roi_size, prop.box,
                                  ip.mask_thresh);

    same::RoiAttentionCrop crop = same_module.roi_crop_attention(f1, f2, f3, box_t);
    Tensor d1 = same_module.mask_transformer_encode(mask_logits);
    same::RefinedMasks rm = same_module.hierarchical_embed(d1, crop);
    same::FusionMaps fm = same_module.fuse_attention_masks(rm, crop);
    heads::RecognitionOutput rec = decoder.decode(fm.sm3);
    det.text = rec.decoded;

    if (with_overlays) {
      Overlays& ov = det.overlays;
      ov.initial_side = hc.roi_size;
      ov.initial.resize(mask_logits.numel());
      for (std::size_t k = 0; k < ov.initial.size(); ++k)
        ov.initial[k] = 1.0 / (1.0 + std::exp(-mask_logits.values()[k]));
      const Tensor* ms[3] = {&rm.m1, &rm.m2, &rm.m3};
      for (int level = 0; level < 3; ++level) {
        ov.m_side[level] = ms[level]->dim(1);
        ov.m[level] = channel_mean(*ms[level]);
      }
      ov.sm3_side = fm.sm3.dim(1);
      ov.sm3 = channel_mean(fm.sm3);
      const double mn = *std::min_element(ov.sm3.begin(), ov.sm3.end());
      const double mx = *std::max_element(ov.sm3.begin(), ov.sm3.end());
      if (mx > mn)
        for (auto& v : ov.sm3) v = (v - mn) / (mx - mn);
    }
    dets.push_back(std::move(det));
  }
  return dets;
}

}  // namespace stspot::model
