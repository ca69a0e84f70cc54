#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "incdet/box.hpp"
#include "incdet/params.hpp"
#include "incdet/synthdata.hpp"
#include "incdet/tensor.hpp"
#include "incdet/vocab.hpp"

namespace incdet {

enum class ClassifierMode { kLinear, kCosine };
enum class RegressorMode { kAgnostic, kSpecific };
enum class RunMode { kTrain, kEval };
enum class Branch { kBase, kNovel };

const char* classifier_mode_name(ClassifierMode m);
const char* regressor_mode_name(RegressorMode m);
ClassifierMode parse_classifier_mode(const std::string& s);
RegressorMode parse_regressor_mode(const std::string& s);

// Miniature two-stage detector: 4-block conv backbone at stride 8, one
// anchor level, RoI max-pool to a PxP grid, two fc layers per branch.
struct DetectorConfig {
    int canvas_h = 64;
    int canvas_w = 64;
    std::vector<int> backbone_channels = {16, 24, 32, 48};
    std::vector<double> anchor_scales = {12.0, 20.0, 28.0};
    std::vector<double> anchor_ratios = {1.0, 1.5};  // height/width
    int roi_pool_size = 4;      // P
    int roi_feature_dim = 128;  // d, output width of fc1/fc2
    ClassifierMode classifier = ClassifierMode::kLinear;
    double cosine_scale = 20.0;
    double cosine_eps = 1e-8;
    RegressorMode regressor = RegressorMode::kAgnostic;
    int pre_nms_topn = 192;
    int post_nms_train = 64;
    int post_nms_eval = 64;
    double proposal_nms_iou = 0.7;
    double proposal_min_size = 1.0;
    double detection_nms_iou = 0.5;
    double score_threshold = 0.05;
    int max_detections = 100;
    int num_base = 6;
    int num_novel = 3;

    void validate() const;
    int stride() const { return 8; }
    int feature_h() const { return canvas_h / stride(); }
    int feature_w() const { return canvas_w / stride(); }
    int feature_channels() const { return backbone_channels.back(); }
    int anchors_per_cell() const {
        return static_cast<int>(anchor_scales.size() * anchor_ratios.size());
    }
    int roi_flat_dim() const { return roi_pool_size * roi_pool_size * feature_channels(); }
    int base_ways() const { return num_base + 1; }
    int regressor_width() const {
        return regressor == RegressorMode::kAgnostic ? 4 : 4 * base_ways();
    }
};

struct Proposal {
    Box box;
    double objectness = 0.0;  // sigmoid of the RPN logit
};

struct BranchOutputs {
    std::vector<std::vector<double>> base_logits;   // per RoI, width |base|+1
    std::vector<std::vector<double>> novel_logits;  // per RoI, width |novel| (branched)
    std::vector<std::vector<double>> joint_probs;   // per RoI, softmax over concatenation
    std::vector<std::vector<double>> box_deltas;    // per RoI, width 4 or 4*(|base|+1)
};

// Fresh base-stage parameter store, seeded.
ParameterStore init_parameters(const DetectorConfig& cfg, uint64_t seed);

// All anchors in (y, x, anchor) order over the feature grid.
std::vector<Box> generate_anchors(const DetectorConfig& cfg);

Tensor image_to_tensor(const AnnotatedImage& img);

// ---- forward passes (with optional traces kept for backprop) ----

struct BackboneTrace {
    Tensor input;
    Tensor act1, act2, act3, act4;  // post-ReLU
    Tensor pool1, pool2, pool3;
    std::vector<int64_t> arg1, arg2, arg3;
};

Tensor backbone_forward(const Tensor& image_chw, const ParameterStore& params,
                        const DetectorConfig& cfg, BackboneTrace* trace = nullptr);

struct RpnRawOutputs {
    Tensor hidden;      // post-ReLU rpn conv output
    Tensor obj_logits;  // [A, Hf, Wf]
    Tensor deltas;      // [4A, Hf, Wf]
};

RpnRawOutputs rpn_raw_forward(const Tensor& z, const ParameterStore& params);

std::vector<Proposal> rpn_propose(const RpnRawOutputs& raw, const std::vector<Box>& anchors,
                                  const DetectorConfig& cfg, RunMode mode);

std::vector<Proposal> rpn_forward(const Tensor& z, const ParameterStore& params,
                                  const std::vector<Box>& anchors, const DetectorConfig& cfg,
                                  RunMode mode);

struct RoiPoolTrace {
    std::vector<int64_t> argmax;  // flat index into z per pooled cell
};

Tensor roi_pool(const Tensor& z, const Box& box, const DetectorConfig& cfg,
                RoiPoolTrace* trace = nullptr);

struct RoiHeadTrace {
    std::vector<double> flat;
    std::vector<double> act1;  // post-ReLU fc1
    std::vector<double> feat;  // post-ReLU fc2
};

// f = ReLU(fc2(ReLU(fc1(flatten(pooled))))) through the requested branch.
std::vector<double> roi_feature_forward(const Tensor& pooled, Branch branch,
                                        const ParameterStore& params, const DetectorConfig& cfg,
                                        RoiHeadTrace* trace = nullptr);

// Classifier head. Linear: W f + b. Cosine: s * cos(w_j, f), no bias,
// epsilon-guarded so an all-zero feature yields all-zero logits.
std::vector<double> classify(const std::vector<double>& f, Branch head, const ParameterStore& params,
                             const DetectorConfig& cfg);

// Box-delta head on the base-branch feature. Agnostic mode ignores the class
// hint entirely; specific mode requires one and indexes its per-class slice.
std::array<double, 4> regress_boxes(const std::vector<double>& f, const ParameterStore& params,
                                    const DetectorConfig& cfg,
                                    std::optional<int> class_hint = std::nullopt);

// Raw regressor output (width 4 or 4*(|base|+1)).
std::vector<double> regress_raw(const std::vector<double>& f, const ParameterStore& params);

// Per-RoI concatenated prediction [p_base, p_novel] with one softmax.
// Requires stage=branched.
BranchOutputs joint_predict(const Tensor& z, const std::vector<Proposal>& proposals,
                            const ParameterStore& params, const DetectorConfig& cfg);

// ---- backward passes ----
// Gradients accumulate into name-keyed tensors. Backward routines write an
// entry only for parameters flagged trainable in the store, so frozen-tensor
// gradients are never materialized.
using GradientMap = std::map<std::string, Tensor>;

Tensor& grad_slot(GradientMap& grads, const std::string& name, const std::vector<int>& shape);

void backbone_backward(const BackboneTrace& trace, const ParameterStore& params,
                       const Tensor& grad_z, GradientMap& grads);

// Accumulates into grad_z (which must already match z's shape).
void rpn_backward(const Tensor& z, const RpnRawOutputs& raw, const ParameterStore& params,
                  const Tensor& grad_obj, const Tensor& grad_delta, GradientMap& grads,
                  Tensor& grad_z);

void roi_pool_backward(const Tensor& grad_pooled, const RoiPoolTrace& trace, Tensor& grad_z);

// grad_flat (layout of the flattened pooled tensor) is produced only when the
// pointer is non-null.
void roi_head_backward(const RoiHeadTrace& trace, Branch branch, const ParameterStore& params,
                       const std::vector<double>& grad_f, GradientMap& grads,
                       std::vector<double>* grad_flat);

void classify_backward(const std::vector<double>& f, Branch head, const ParameterStore& params,
                       const DetectorConfig& cfg, const std::vector<double>& grad_logits,
                       GradientMap& grads, std::vector<double>* grad_f);

void regress_backward(const std::vector<double>& f, const ParameterStore& params,
                      const std::vector<double>& grad_raw, GradientMap& grads,
                      std::vector<double>* grad_f);

// ---- serialization ----
std::string detector_config_to_json(const DetectorConfig& cfg);
DetectorConfig detector_config_from_json_text(const std::string& text);
std::string config_digest(const DetectorConfig& cfg);

}  // namespace incdet
