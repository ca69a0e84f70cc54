#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "incdet/detector.hpp"
#include "incdet/params.hpp"
#include "incdet/synthdata.hpp"
#include "incdet/vocab.hpp"

namespace incdet {

// Which novel-branch fc layers unfreeze during fine-tuning. The novel
// classifier is always trainable; backbone, RPN, regressor and the whole base
// branch are always frozen.
enum class FreezePolicy { kNone, kFc2, kFc1Fc2 };

const char* freeze_policy_name(FreezePolicy p);
FreezePolicy parse_freeze_policy(const std::string& s);

struct TrainConfig {
    double learning_rate = 1e-2;
    std::vector<int> decay_steps = {1400, 1800};  // rate multiplies by decay_factor at each
    double decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int steps = 2000;
    uint64_t seed = 1;

    void validate() const;
    double rate_at(int step) const;

    static TrainConfig base_defaults() { return TrainConfig{}; }
    static TrainConfig finetune_defaults() {
        TrainConfig c;
        c.decay_steps = {150, 200};
        c.steps = 300;
        return c;
    }
};

struct Checkpoint {
    ParameterStore params;
    DetectorConfig config;
    int step = 0;
    uint64_t seed = 0;
};

struct LossBreakdown {
    double rpn = 0.0, cls = 0.0, loc = 0.0;
    double total() const { return rpn + cls + loc; }
};

// ---- target assignment ----

// Per-anchor training labels: 1 positive, 0 negative, -1 ignored/unsampled.
struct AnchorAssignment {
    std::vector<int> labels;
    std::vector<int> matched_gt;  // GT index for positives, -1 otherwise
};

// IoU >= 0.7 (or best anchor per GT) -> positive, best IoU < 0.3 -> negative,
// else ignored; then a seeded subsample of at most 64 anchors at most half
// positive keeps the objectness loss balanced.
AnchorAssignment assign_anchors(const std::vector<Box>& anchors, const std::vector<Instance>& gts,
                                uint64_t seed);

struct RoiSample {
    Box box;
    int target;  // base stage: [0, |base|]; fine-tune: background or novel joint index
    std::array<double, 4> reg_target = {0, 0, 0, 0};
    bool positive = false;
};

// Base stage: IoU >= 0.5 -> the GT's class, else background. Up to 32 RoIs at
// a 1:3 positive:negative ratio.
std::vector<RoiSample> sample_rois_base(const std::vector<Box>& candidates,
                                        const std::vector<Instance>& gts,
                                        const ClassVocabulary& vocab, uint64_t seed);

// Fine-tune: IoU >= 0.5 -> the novel class's joint index, IoU < 0.3 ->
// background, in between ignored.
std::vector<RoiSample> sample_rois_finetune(const std::vector<Box>& candidates,
                                            const std::vector<Instance>& gts,
                                            const ClassVocabulary& vocab, uint64_t seed);

// ---- losses ----

struct RpnLossParts {
    double objectness = 0.0;
    double regression = 0.0;
    double total() const { return objectness + regression; }
};

// Binary objectness cross-entropy over sampled anchors plus per-coordinate
// mean L1 on positive-anchor deltas. Optional gradients accumulate into
// grad_obj/grad_delta (scaled by `grad_scale`).
RpnLossParts rpn_loss(const RpnRawOutputs& raw, const std::vector<Box>& anchors,
                      const AnchorAssignment& assign, const std::vector<Instance>& gts,
                      const DetectorConfig& cfg, Tensor* grad_obj = nullptr,
                      Tensor* grad_delta = nullptr, double grad_scale = 1.0);

// Mean softmax cross-entropy; targets index into each logit row.
double classification_loss(const std::vector<std::vector<double>>& logits,
                           const std::vector<int>& targets);
// dL/dlogits = (softmax - onehot) / M, times grad_scale.
void classification_loss_backward(const std::vector<std::vector<double>>& logits,
                                  const std::vector<int>& targets,
                                  std::vector<std::vector<double>>& grad_logits,
                                  double grad_scale = 1.0);

// Per-coordinate mean absolute error over positive rows; 0 without positives.
double box_regression_loss(const std::vector<std::array<double, 4>>& pred,
                           const std::vector<std::array<double, 4>>& target,
                           const std::vector<bool>& positive);

// ---- optimization ----

struct TrainerState {
    GradientMap velocity;
};

// One SGD-with-momentum update of every parameter against
// L = L_rpn + L_cls + L_loc on the batch (mean of per-image losses).
LossBreakdown base_train_step(const std::vector<const AnnotatedImage*>& batch,
                              ParameterStore& store, TrainerState& opt, const TrainConfig& tcfg,
                              const DetectorConfig& dcfg, const ClassVocabulary& vocab, int step);

// Duplicates the RoI feature extractor into the novel branch (bit-exact) and
// attaches a freshly initialized novel classifier; flips the stage tag.
void branch_surgery(ParameterStore& store, const DetectorConfig& cfg, uint64_t seed);

void apply_freeze_policy(ParameterStore& store, FreezePolicy policy);

// One update of the trainable (novel-branch) tensors against the joint
// softmax cross-entropy; no RPN or box-regression terms.
double finetune_step(const std::vector<const AnnotatedImage*>& batch, ParameterStore& store,
                     TrainerState& opt, const TrainConfig& tcfg, const DetectorConfig& dcfg,
                     const ClassVocabulary& vocab, int step);

void sgd_update(ParameterStore& store, TrainerState& opt, const GradientMap& grads, double lr,
                double momentum, double weight_decay);

// ---- checkpoint I/O ----
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace incdet
