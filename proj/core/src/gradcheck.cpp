#include "stspot/gradcheck.hpp"

#include <cmath>

#include "stspot/attn_encoder.hpp"
#include "stspot/backbone.hpp"
#include "stspot/heads.hpp"
#include "stspot/nn.hpp"
#include "stspot/same.hpp"

namespace stspot::train {

using namespace ad;

GradCheckReport finite_difference_gradcheck(
    const std::function<Tensor()>& build, const std::vector<Tensor>& wrt,
    double eps) {
  if (eps < 1e-7 || eps > 1e-3)
    throw ConfigError("gradcheck epsilon must lie in [1e-7, 1e-3]");
  for (const auto& t : wrt)
    if (!t.requires_grad())
      throw ConfigError("gradcheck: every checked tensor needs requires_grad");

  Tensor y0t = build();
  if (y0t.numel() != 1) throw ShapeError("gradcheck objective must be scalar");
  const double y0 = y0t.item();
  for (const auto& t : wrt) const_cast<Tensor&>(t).zero_grad();
  backward(y0t);

  std::vector<std::vector<double>> ad_grads;
  ad_grads.reserve(wrt.size());
  for (const auto& t : wrt) ad_grads.push_back(const_cast<Tensor&>(t).grad());

  GradCheckReport report;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& vals = const_cast<Tensor&>(wrt[ti]).values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double old = vals[i];
      vals[i] = old + eps;
      const double yp = build().item();
      vals[i] = old - eps;
      const double ym = build().item();
      vals[i] = old;

      const double g_fd = (yp - ym) / (2.0 * eps);
      const double g_ad = ad_grads[ti][i];
      const double rel = std::abs(g_ad - g_fd) /
                         std::max({1.0, std::abs(g_ad), std::abs(g_fd)});
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_coordinate = str_cat("wrt[", ti, "][", i, "]");
      }
      // Asymmetric one-sided secants mark a kink at the sample point.
      const double sp = (yp - y0) / eps;
      const double sm = (y0 - ym) / eps;
      const double asym =
          std::abs(sp - sm) / std::max({1.0, std::abs(sp), std::abs(sm)});
      if (asym > 0.3 && rel > 1e-3) report.nondifferentiable_point = true;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// registry
// ---------------------------------------------------------------------------

namespace {

Tensor random_leaf(Shape shape, Rng& rng, double amp = 1.0) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal(0.0, amp);
  Tensor t = Tensor::from_data(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

std::vector<double> probe_weights(std::int64_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& v : w) v = rng.normal(0.0, 1.0);
  return w;
}

std::vector<Tensor> params_with_prefix(const nn::ParamStore& ps,
                                       const std::string& prefix) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : ps.all())
    if (name.rfind(prefix, 0) == 0) out.push_back(t);
  return out;
}

std::vector<Tensor> all_params(const nn::ParamStore& ps) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : ps.all()) out.push_back(t);
  return out;
}

}  // namespace

std::vector<RegisteredCheck> gradcheck_registry(std::uint64_t seed) {
  std::vector<RegisteredCheck> checks;

  // Harness self-tests.
  checks.push_back({"trainer.linear_probe", [seed]() {
    Rng rng(seed + 1);
    Tensor x = random_leaf({5}, rng);
    auto build = [x]() { return sum(scale(x, 3.0)); };
    return finite_difference_gradcheck(build, {x});
  }});
  checks.push_back({"trainer.sigmoid_probe", [seed]() {
    Rng rng(seed + 2);
    Tensor x = Tensor::from_data({1}, {0.0});
    x.set_requires_grad(true);
    auto build = [x]() { return sum(sigmoid(x)); };
    return finite_difference_gradcheck(build, {x});
  }});

  checks.push_back({"backbone.extract_features", [seed]() {
    Rng rng(seed + 10);
    nn::ParamStore ps;
    backbone::BackboneConfig cfg;
    cfg.embed_dim = 4;
    cfg.blocks_per_stage = 2;
    cfg.window = 2;
    cfg.heads = 2;
    cfg.fpn_channels = 8;
    auto net = backbone::BackboneNet::create(ps, cfg, rng);
    Tensor img = random_leaf({1, 3, 32, 32}, rng, 0.5);
    Rng probe_rng(seed + 11);
    auto w3 = probe_weights(1 * 4 * 4 * 4, probe_rng);
    auto w4 = probe_weights(1 * 8 * 2 * 2, probe_rng);
    auto w5 = probe_weights(1 * 16 * 1 * 1, probe_rng);
    auto build = [&net, img, w3, w4, w5]() {
      auto c = net.extract_features(img);
      return add(add(weighted_sum(c[0], w3), weighted_sum(c[1], w4)),
                 weighted_sum(c[2], w5));
    };
    auto wrt = params_with_prefix(ps, "backbone.stage");
    wrt.push_back(img);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"backbone.fpn_fuse", [seed]() {
    Rng rng(seed + 20);
    nn::ParamStore ps;
    backbone::BackboneConfig cfg;
    cfg.embed_dim = 4;
    cfg.blocks_per_stage = 1;
    cfg.window = 2;
    cfg.heads = 2;
    cfg.fpn_channels = 8;
    auto net = backbone::BackboneNet::create(ps, cfg, rng);
    Tensor c3 = random_leaf({1, 4, 8, 8}, rng);
    Tensor c4 = random_leaf({1, 8, 4, 4}, rng);
    Tensor c5 = random_leaf({1, 16, 2, 2}, rng);
    Rng probe_rng(seed + 21);
    auto w3 = probe_weights(8 * 8 * 8, probe_rng);
    auto w4 = probe_weights(8 * 4 * 4, probe_rng);
    auto w5 = probe_weights(8 * 2 * 2, probe_rng);
    auto build = [&net, c3, c4, c5, w3, w4, w5]() {
      auto pyr = net.fpn_fuse(c3, c4, c5);
      return add(add(weighted_sum(pyr.p3, w3), weighted_sum(pyr.p4, w4)),
                 weighted_sum(pyr.p5, w5));
    };
    auto wrt = params_with_prefix(ps, "backbone.fpn");
    wrt.push_back(c3);
    wrt.push_back(c4);
    wrt.push_back(c5);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"attn_encoder.encode_pyramid", [seed]() {
    Rng rng(seed + 30);
    nn::ParamStore ps;
    encoder::EncoderConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.channels = 4;
    cfg.ff_dim = 8;
    auto enc = encoder::PyramidEncoder::create(ps, cfg, rng);
    backbone::FeaturePyramid pyr;
    Tensor p5 = random_leaf({1, 4, 1, 1}, rng);
    Tensor p4 = random_leaf({1, 4, 2, 2}, rng);
    Tensor p3 = random_leaf({1, 4, 4, 4}, rng);
    pyr.p5 = p5;
    pyr.p4 = p4;
    pyr.p3 = p3;
    Rng probe_rng(seed + 31);
    auto w1 = probe_weights(4, probe_rng);
    auto w2 = probe_weights(16, probe_rng);
    auto w3 = probe_weights(64, probe_rng);
    auto build = [&enc, &pyr, w1, w2, w3]() {
      auto f = enc.encode_pyramid(pyr);
      return add(add(weighted_sum(f.f1, w1), weighted_sum(f.f2, w2)),
                 weighted_sum(f.f3, w3));
    };
    auto wrt = all_params(ps);
    wrt.push_back(p5);
    wrt.push_back(p4);
    wrt.push_back(p3);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"same.roi_crop_attention", [seed]() {
    Rng rng(seed + 40);
    nn::ParamStore ps;
    same::SameConfig cfg;
    cfg.channels = 4;
    cfg.roi_size = 4;
    auto sm = same::SameModule::create(ps, cfg, rng);
    Tensor f1 = random_leaf({4, 4, 4}, rng);
    Tensor f2 = random_leaf({4, 8, 8}, rng);
    Tensor f3 = random_leaf({4, 16, 16}, rng);
    Tensor box = Tensor::from_data({4}, {17.0, 23.0, 93.0, 74.0});
    box.set_requires_grad(true);
    Rng probe_rng(seed + 41);
    auto w1 = probe_weights(4 * 4 * 4, probe_rng);
    auto w2 = probe_weights(4 * 8 * 8, probe_rng);
    auto w3 = probe_weights(4 * 16 * 16, probe_rng);
    auto build = [&sm, f1, f2, f3, box, w1, w2, w3]() {
      auto crop = sm.roi_crop_attention(f1, f2, f3, box);
      return add(add(weighted_sum(crop.a1, w1), weighted_sum(crop.a2, w2)),
                 weighted_sum(crop.a3, w3));
    };
    return finite_difference_gradcheck(build, {f1, f2, f3, box});
  }});

  checks.push_back({"same.mask_transformer_encode", [seed]() {
    Rng rng(seed + 50);
    nn::ParamStore ps;
    same::SameConfig cfg;
    cfg.channels = 4;
    cfg.roi_size = 4;
    cfg.tre_layers = 2;
    cfg.tre_heads = 2;
    cfg.tre_ff = 8;
    auto sm = same::SameModule::create(ps, cfg, rng);
    Tensor mask = random_leaf({1, 4, 4}, rng);
    Rng probe_rng(seed + 51);
    auto w = probe_weights(4 * 4 * 4, probe_rng);
    auto build = [&sm, mask, w]() {
      return weighted_sum(sm.mask_transformer_encode(mask), w);
    };
    auto wrt = params_with_prefix(ps, "same.mask_proj");
    for (auto& t : params_with_prefix(ps, "same.tre")) wrt.push_back(t);
    wrt.push_back(mask);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"same.hierarchical_embed", [seed]() {
    Rng rng(seed + 60);
    nn::ParamStore ps;
    same::SameConfig cfg;
    cfg.channels = 4;
    cfg.roi_size = 4;
    auto sm = same::SameModule::create(ps, cfg, rng);
    Tensor d1 = random_leaf({4, 4, 4}, rng);
    same::RoiAttentionCrop crop;
    Tensor a1 = random_leaf({4, 4, 4}, rng);
    Tensor a2 = random_leaf({4, 8, 8}, rng);
    Tensor a3 = random_leaf({4, 16, 16}, rng);
    crop.a1 = a1;
    crop.a2 = a2;
    crop.a3 = a3;
    Rng probe_rng(seed + 61);
    auto wd = probe_weights(4 * 16 * 16, probe_rng);
    auto wm = probe_weights(4 * 16 * 16, probe_rng);
    auto build = [&sm, d1, &crop, wd, wm]() {
      auto rm = sm.hierarchical_embed(d1, crop);
      return add(weighted_sum(rm.d3, wd), weighted_sum(rm.m3, wm));
    };
    auto wrt = params_with_prefix(ps, "same.up_embed");
    wrt.push_back(d1);
    wrt.push_back(a2);
    wrt.push_back(a3);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"same.fuse_attention_masks", [seed]() {
    Rng rng(seed + 70);
    nn::ParamStore ps;
    same::SameConfig cfg;
    cfg.channels = 4;
    cfg.roi_size = 4;
    auto sm = same::SameModule::create(ps, cfg, rng);
    Tensor d1 = random_leaf({4, 4, 4}, rng);
    same::RoiAttentionCrop crop;
    Tensor a1 = random_leaf({4, 4, 4}, rng);
    Tensor a2 = random_leaf({4, 8, 8}, rng);
    Tensor a3 = random_leaf({4, 16, 16}, rng);
    crop.a1 = a1;
    crop.a2 = a2;
    crop.a3 = a3;
    Rng probe_rng(seed + 71);
    auto w = probe_weights(4 * 16 * 16, probe_rng);
    auto build = [&sm, d1, &crop, w]() {
      auto rm = sm.hierarchical_embed(d1, crop);
      auto fm = sm.fuse_attention_masks(rm, crop);
      return weighted_sum(fm.sm3, w);
    };
    auto wrt = params_with_prefix(ps, "same.up_");
    wrt.push_back(d1);
    wrt.push_back(a1);
    wrt.push_back(a2);
    wrt.push_back(a3);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"same.full_chain", [seed]() {
    Rng rng(seed + 80);
    nn::ParamStore ps;
    same::SameConfig cfg;
    cfg.channels = 4;
    cfg.roi_size = 4;
    cfg.tre_layers = 2;
    cfg.tre_heads = 2;
    cfg.tre_ff = 8;
    auto sm = same::SameModule::create(ps, cfg, rng);
    Tensor mask = random_leaf({1, 4, 4}, rng);
    same::RoiAttentionCrop crop;
    Tensor a1 = random_leaf({4, 4, 4}, rng);
    Tensor a2 = random_leaf({4, 8, 8}, rng);
    Tensor a3 = random_leaf({4, 16, 16}, rng);
    crop.a1 = a1;
    crop.a2 = a2;
    crop.a3 = a3;
    Rng probe_rng(seed + 81);
    auto w = probe_weights(4 * 16 * 16, probe_rng);
    auto build = [&sm, mask, &crop, w]() {
      Tensor d1 = sm.mask_transformer_encode(mask);
      auto rm = sm.hierarchical_embed(d1, crop);
      auto fm = sm.fuse_attention_masks(rm, crop);
      return weighted_sum(same::SameModule::stop_gradient_gate(fm.sm3, false), w);
    };
    auto wrt = all_params(ps);
    wrt.push_back(mask);
    wrt.push_back(a1);
    wrt.push_back(a2);
    wrt.push_back(a3);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"heads.detection_head", [seed]() {
    Rng rng(seed + 90);
    nn::ParamStore ps;
    heads::HeadsConfig cfg;
    cfg.channels = 4;
    cfg.det_hidden = 4;
    auto head = heads::DetectionHead::create(ps, cfg, rng);
    Tensor p3 = random_leaf({4, 4, 4}, rng);
    Rng probe_rng(seed + 91);
    auto wc = probe_weights(16, probe_rng);
    auto wr = probe_weights(16 * 4, probe_rng);
    auto build = [&head, p3, wc, wr]() {
      auto d = head.forward(p3);
      return add(weighted_sum(d.cls_logits, wc), weighted_sum(d.reg, wr));
    };
    auto wrt = params_with_prefix(ps, "heads.det");
    wrt.push_back(p3);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"heads.decode_box", [seed]() {
    Rng rng(seed + 95);
    heads::HeadsConfig cfg;
    cfg.channels = 4;
    Tensor reg = random_leaf({4, 4}, rng, 0.3);
    Rng probe_rng(seed + 96);
    auto w = probe_weights(4, probe_rng);
    auto build = [reg, w, cfg]() {
      heads::DenseDetections d;
      d.reg = reg;
      d.cls_logits = Tensor::constant({4});
      d.grid_h = 2;
      d.grid_w = 2;
      return weighted_sum(heads::decode_box_tensor(d, 3, cfg), w);
    };
    return finite_difference_gradcheck(build, {reg});
  }});

  checks.push_back({"heads.mask_head", [seed]() {
    Rng rng(seed + 100);
    nn::ParamStore ps;
    heads::HeadsConfig cfg;
    cfg.channels = 4;
    cfg.mask_hidden = 4;
    cfg.roi_size = 4;
    auto head = heads::MaskHead::create(ps, cfg, rng);
    Tensor roi = random_leaf({4, 4, 4}, rng);
    Rng probe_rng(seed + 101);
    auto w = probe_weights(16, probe_rng);
    auto build = [&head, roi, w]() { return weighted_sum(head.forward(roi), w); };
    auto wrt = params_with_prefix(ps, "heads.mask");
    wrt.push_back(roi);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"heads.focal_loss", [seed]() {
    Rng rng(seed + 110);
    std::vector<double> p(7);
    for (auto& v : p) v = rng.uniform(0.1, 0.9);
    Tensor probs = Tensor::from_data({7}, std::move(p));
    probs.set_requires_grad(true);
    auto build = [probs]() { return heads::focal_loss(probs, 0.25, 2.0); };
    return finite_difference_gradcheck(build, {probs});
  }});

  checks.push_back({"heads.giou_loss", [seed]() {
    Tensor box = Tensor::from_data({4}, {1.0, 1.5, 5.0, 4.0});
    box.set_requires_grad(true);
    const geom::Box gt{2.0, 2.0, 6.0, 5.0};
    auto build = [box, gt]() { return heads::giou_loss(box, gt); };
    return finite_difference_gradcheck(build, {box});
  }});

  checks.push_back({"heads.l1_loss", [seed]() {
    Tensor box = Tensor::from_data({4}, {1.0, 1.5, 5.0, 4.0});
    box.set_requires_grad(true);
    const geom::Box gt{2.0, 2.0, 6.0, 5.0};
    auto build = [box, gt]() { return heads::l1_loss(box, gt, 64.0, 64.0); };
    return finite_difference_gradcheck(build, {box});
  }});

  checks.push_back({"heads.mask_loss", [seed]() {
    Rng rng(seed + 120);
    Tensor logits = random_leaf({1, 4, 4}, rng);
    std::vector<double> target(16);
    for (auto& v : target) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    auto build = [logits, target]() {
      return heads::mask_loss(logits, target);
    };
    return finite_difference_gradcheck(build, {logits});
  }});

  checks.push_back({"heads.recognition_decoder", [seed]() {
    Rng rng(seed + 130);
    nn::ParamStore ps;
    heads::HeadsConfig cfg;
    cfg.channels = 4;
    cfg.max_steps = 3;
    cfg.dec_heads = 2;
    cfg.dec_ff = 8;
    auto dec = heads::RecognitionDecoder::create(ps, cfg, rng);
    Tensor fused = random_leaf({4, 8, 8}, rng);
    Rng probe_rng(seed + 131);
    auto w = probe_weights(3 * heads::vocab_size(cfg), probe_rng);
    auto build = [&dec, fused, w]() {
      return weighted_sum(dec.decode(fused).step_logits, w);
    };
    auto wrt = params_with_prefix(ps, "heads.dec");
    wrt.push_back(fused);
    return finite_difference_gradcheck(build, wrt);
  }});

  checks.push_back({"heads.recognition_loss", [seed]() {
    Rng rng(seed + 140);
    heads::HeadsConfig cfg;
    cfg.max_steps = 4;
    Tensor logits = random_leaf({4, heads::vocab_size(cfg)}, rng);
    auto build = [logits, cfg]() {
      return heads::recognition_loss(logits, "AB", cfg);
    };
    return finite_difference_gradcheck(build, {logits});
  }});

  checks.push_back({"same.stop_gradient_gate_open", [seed]() {
    Rng rng(seed + 150);
    Tensor x = random_leaf({2, 3, 3}, rng);
    Rng probe_rng(seed + 151);
    auto w = probe_weights(18, probe_rng);
    auto build = [x, w]() {
      return weighted_sum(same::SameModule::stop_gradient_gate(x, false), w);
    };
    return finite_difference_gradcheck(build, {x});
  }});

  return checks;
}

}  // namespace stspot::train
