#ifndef STSPOT_HEADS_HPP_
#define STSPOT_HEADS_HPP_

#include <string>
#include <vector>

#include "stspot/datagen.hpp"
#include "stspot/geometry.hpp"
#include "stspot/nn.hpp"

namespace stspot::heads {

using ad::Tensor;

struct HeadsConfig {
  int channels = 64;  // FPN channel count
  int det_hidden = 64;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  int roi_size = 16;  // S
  int mask_hidden = 32;
  int mask_channels = 1;
  int max_steps = 8;  // T, includes the EOS step
  int dec_layers = 1;
  int dec_heads = 4;
  int dec_ff = 128;
  std::string alphabet = datagen::kAlphabet;
  int stride = 8;        // P3 stride
  double base_w = 40.0;  // box size priors for the exp() regression
  double base_h = 16.0;
};

inline int vocab_size(const HeadsConfig& c) {
  return static_cast<int>(c.alphabet.size()) + 2;  // + EOS + PAD
}
inline int eos_index(const HeadsConfig& c) {
  return static_cast<int>(c.alphabet.size());
}
inline int pad_index(const HeadsConfig& c) {
  return static_cast<int>(c.alphabet.size()) + 1;
}

struct Proposal {
  geom::Box box;
  double score = 1.0;
};

enum class ProposeMode { Learned, GtGuided };

/// Decoded dense predictions for one image, still graph-linked.
struct DenseDetections {
  Tensor cls_logits;  // (cells,)
  Tensor reg;         // (cells, 4) raw deltas (dx, dy, dw, dh)
  int grid_h = 0;
  int grid_w = 0;
};

class DetectionHead {
 public:
  static DetectionHead create(nn::ParamStore& ps, const HeadsConfig& cfg,
                              Rng& rng);
  DenseDetections forward(const Tensor& p3_image) const;  // (C,H,W)

 private:
  HeadsConfig cfg_;
  Tensor conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b;
};

class MaskHead {
 public:
  static MaskHead create(nn::ParamStore& ps, const HeadsConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& roi_feat) const;  // (C,S,S) -> (C_m,S,S) logits

 private:
  HeadsConfig cfg_;
  Tensor conv1_w, conv1_b, conv2_w, conv2_b, out_w, out_b;
};

struct RecognitionOutput {
  Tensor step_logits;        // (T, V)
  Tensor step_probs;         // (T, V), each row sums to 1
  std::string decoded;       // argmax transcription up to the first EOS
  std::vector<Tensor> attn;  // spatial attention maps, rows sum to 1
};

/// Non-recurrent decoder: T learned step queries self-attend, then attend
/// over the flattened fused features with positional encoding.
class RecognitionDecoder {
 public:
  static RecognitionDecoder create(nn::ParamStore& ps, const HeadsConfig& cfg,
                                   Rng& rng);
  RecognitionOutput decode(const Tensor& fused_features) const;  // (C,4S,4S)

 private:
  HeadsConfig cfg_;
  Tensor queries_;  // (T, C)
  struct Layer {
    nn::LayerNorm ln_self, ln_cross, ln_ff;
    nn::MultiheadAttention self_attn, cross_attn;
    nn::Linear ff1, ff2;
  };
  std::vector<Layer> layers_;
  nn::LayerNorm final_ln_;
  nn::Linear out_;
};

// ---------------------------------------------------------------------------
// proposals and matching
// ---------------------------------------------------------------------------

geom::Box decode_box_value(double dx, double dy, double dw, double dh, int i,
                           int j, const HeadsConfig& cfg);
/// Graph-linked decode of one cell's box as an (4,) tensor (x0,y0,x1,y1).
Tensor decode_box_tensor(const DenseDetections& dets, int cell,
                         const HeadsConfig& cfg);

/// Learned mode: score-descending top-k over thresholded cells (ties broken
/// by row-major cell index) followed by greedy IoU suppression.
std::vector<Proposal> propose_learned(const DenseDetections& dets,
                                      const HeadsConfig& cfg, int topk,
                                      double score_thresh, double nms_iou,
                                      double img_w, double img_h);

/// Training aid: ground-truth boxes with uniform jitter proportional to size.
std::vector<Proposal> propose_gt_guided(
    const std::vector<datagen::TextInstanceGT>& gts, double jitter, Rng& rng,
    double img_w, double img_h);

/// Greedy one-to-one assignment by descending box IoU; unmatched proposals
/// get -1 (background). Deterministic: ties prefer the lower proposal index.
std::vector<int> match_proposals_to_gt(const std::vector<Proposal>& proposals,
                                       const std::vector<geom::Box>& gt_boxes,
                                       double iou_threshold);

/// Dense positive assignment: cell centers inside the central half of a GT
/// box are positive for the smallest such box. Returns cell -> gt (or -1).
std::vector<int> assign_cells(const std::vector<geom::Box>& gt_boxes, int grid_h,
                              int grid_w, int stride);

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// -alpha*(1-p)^gamma*log(p) averaged over entries; p clamped to
/// [1e-7, 1-1e-7].
Tensor focal_loss(const Tensor& prob_true_class, double alpha, double gamma);

/// 1 - GIoU(pred, gt). Degenerate (zero-area) boxes are rejected.
Tensor giou_loss(const Tensor& pred_box, const geom::Box& gt);

/// Mean L1 between boxes with coordinates normalized by the image size.
Tensor l1_loss(const Tensor& pred_box, const geom::Box& gt, double img_w,
               double img_h);

/// Mean binary cross entropy between mask logits and a rasterized target.
Tensor mask_loss(const Tensor& mask_logits, const std::vector<double>& target);

/// GT polygon rasterized over `box` at s x s by cell-center containment.
std::vector<double> rasterize_polygon(const geom::Polygon& poly,
                                      const geom::Box& box, int s);

/// Target layout: characters, EOS, then padding to T. Sequences longer than
/// T-1 are truncated with a warning.
std::vector<int> encode_target(const std::string& transcription,
                               const HeadsConfig& cfg);

/// Negative log-likelihood averaged over the non-padding steps (characters
/// plus EOS); `strict_t` averages over all T steps instead.
Tensor recognition_loss(const Tensor& step_logits,
                        const std::string& transcription,
                        const HeadsConfig& cfg, bool strict_t = false);

struct LossWeights {
  double giou = 2.0;
  double l1 = 5.0;
  double mask = 2.0;
  double rec = 1.0;
};

/// L_det = L_cls + w.giou*L_giou + w.l1*L_l1 + w.mask*L_mask.
/// Non-finite components are hard errors naming the component.
Tensor detection_loss(const Tensor& l_cls, const Tensor& l_giou,
                      const Tensor& l_l1, const Tensor& l_mask,
                      const LossWeights& w);

/// L_match = L_det + w.rec * L_rec.
Tensor joint_loss(const Tensor& l_det, const Tensor& l_rec,
                  const LossWeights& w);

}  // namespace stspot::heads

#endif  // STSPOT_HEADS_HPP_
