#ifndef STSPOT_MODEL_HPP_
#define STSPOT_MODEL_HPP_

#include "stspot/attn_encoder.hpp"
#include "stspot/backbone.hpp"
#include "stspot/evalkit.hpp"
#include "stspot/heads.hpp"
#include "stspot/same.hpp"

namespace stspot::model {

using ad::Tensor;

struct ModelConfig {
  backbone::BackboneConfig backbone;
  encoder::EncoderConfig encoder;
  same::SameConfig same;
  heads::HeadsConfig heads;
  std::uint64_t init_seed = 12345;

  /// Cross-module consistency: one shared channel count, one RoI size.
  void validate() const;
};

struct InferParams {
  int topk = 10;
  double score_thresh = 0.5;
  double nms_iou = 0.5;
  double mask_thresh = 0.5;
};

/// Grayscale mask grids captured for the visualize command.
struct Overlays {
  int initial_side = 0;
  std::vector<double> initial;  // sigmoid of the mask-proposal logits
  int m_side[3] = {0, 0, 0};
  std::vector<double> m[3];     // channel means of M1..M3
  int sm3_side = 0;
  std::vector<double> sm3;      // channel mean of SM3
};

struct Detection {
  geom::Polygon polygon;
  geom::Box box;
  double score = 0.0;
  std::string text;
  Overlays overlays;  // filled only when requested
};

class SpotterModel {
 public:
  static SpotterModel create(const ModelConfig& cfg);

  struct StepLosses {
    Tensor l_cls, l_giou, l_l1, l_mask, l_rec, l_det, l_match;
    double mask_min = 1.0;  // min over all M1..M3 elements this step
    double mask_max = 0.0;
    int positive_cells = 0;
    int instances = 0;
  };

  /// Full training objective over a batch of same-sized samples. Instance
  /// targets come from ground-truth-guided proposals with jitter.
  StepLosses forward_train(const std::vector<datagen::SceneSample>& batch,
                           Rng& rng, const heads::LossWeights& weights,
                           bool gradient_block, double gt_jitter,
                           bool strict_t = false);

  std::vector<Detection> infer(const datagen::SceneSample& sample,
                               const InferParams& ip,
                               bool with_overlays = false) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  // Submodules are exposed for unit tests and the gradcheck registry.
  backbone::BackboneNet backbone_net;
  encoder::PyramidEncoder pyramid_encoder;
  same::SameModule same_module;
  heads::DetectionHead det_head;
  heads::MaskHead mask_head;
  heads::RecognitionDecoder decoder;

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
};

/// (N,3,H,W) tensor from equally sized samples; values stay in [0,1].
Tensor batch_images(const std::vector<datagen::SceneSample>& batch);

/// Threshold the (upsampled) mask-proposal probabilities inside `box` and
/// return the convex hull of the covered cell corners; falls back to the box
/// rectangle when the mask is empty.
geom::Polygon mask_to_polygon(const std::vector<double>& mask_logits, int s,
                              const geom::Box& box, double threshold);

}  // namespace stspot::model

#endif  // STSPOT_MODEL_HPP_
