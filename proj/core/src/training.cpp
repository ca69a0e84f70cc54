#include "incdet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "incdet/nn.hpp"
#include "incdet/rng.hpp"
#include "json.hpp"

namespace incdet {

const char* freeze_policy_name(FreezePolicy p) {
    switch (p) {
        case FreezePolicy::kNone: return "none";
        case FreezePolicy::kFc2: return "fc2";
        case FreezePolicy::kFc1Fc2: return "fc1_fc2";
    }
    return "?";
}

FreezePolicy parse_freeze_policy(const std::string& s) {
    if (s == "none") return FreezePolicy::kNone;
    if (s == "fc2") return FreezePolicy::kFc2;
    if (s == "fc1_fc2") return FreezePolicy::kFc1Fc2;
    throw ConfigError("unknown freeze policy '" + s + "' (expected none|fc2|fc1_fc2)");
}

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw ConfigError("learning rate must be > 0");
    if (decay_factor <= 0) throw ConfigError("decay factor must be > 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight decay must be >= 0");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (steps < 1) throw ConfigError("step count must be >= 1");
    for (size_t i = 1; i < decay_steps.size(); ++i)
        if (decay_steps[i] <= decay_steps[i - 1])
            throw ConfigError("decay steps must be strictly increasing");
}

double TrainConfig::rate_at(int step) const {
    double r = learning_rate;
    for (int d : decay_steps)
        if (step >= d) r *= decay_factor;
    return r;
}

// ---- target assignment ----

namespace {
constexpr double kAnchorPosIou = 0.7;
constexpr double kAnchorNegIou = 0.3;
constexpr int kAnchorSample = 64;
constexpr int kAnchorMaxPos = 32;
constexpr double kRoiPosIou = 0.5;
constexpr double kRoiFinetuneNegIou = 0.3;
constexpr int kRoiSample = 32;
constexpr int kRoiMaxPos = 8;  // 1:3 positive:negative

void subsample(std::vector<int>& keep, int quota, Rng& rng) {
    if (static_cast<int>(keep.size()) <= quota) return;
    std::vector<int> pick;
    rng.sample_without_replacement(static_cast<int>(keep.size()), quota, pick);
    std::sort(pick.begin(), pick.end());
    std::vector<int> out;
    out.reserve(static_cast<size_t>(quota));
    for (int i : pick) out.push_back(keep[static_cast<size_t>(i)]);
    keep = std::move(out);
}
}  // namespace

AnchorAssignment assign_anchors(const std::vector<Box>& anchors, const std::vector<Instance>& gts,
                                uint64_t seed) {
    const int n = static_cast<int>(anchors.size());
    const int g = static_cast<int>(gts.size());
    AnchorAssignment out;
    out.labels.assign(static_cast<size_t>(n), -1);
    out.matched_gt.assign(static_cast<size_t>(n), -1);

    std::vector<double> best_iou(static_cast<size_t>(n), 0.0);
    std::vector<double> gt_best(static_cast<size_t>(g), 0.0);
    for (int a = 0; a < n; ++a) {
        for (int j = 0; j < g; ++j) {
            double v = iou(anchors[static_cast<size_t>(a)], gts[static_cast<size_t>(j)].box);
            if (v > best_iou[static_cast<size_t>(a)]) {
                best_iou[static_cast<size_t>(a)] = v;
                out.matched_gt[static_cast<size_t>(a)] = j;
            }
            if (v > gt_best[static_cast<size_t>(j)]) gt_best[static_cast<size_t>(j)] = v;
        }
    }

    for (int a = 0; a < n; ++a) {
        if (best_iou[static_cast<size_t>(a)] < kAnchorNegIou) out.labels[static_cast<size_t>(a)] = 0;
        if (best_iou[static_cast<size_t>(a)] >= kAnchorPosIou) out.labels[static_cast<size_t>(a)] = 1;
    }
    // every GT claims its best-overlapping anchors even below the positive bar
    for (int j = 0; j < g; ++j) {
        if (gt_best[static_cast<size_t>(j)] <= 0.0) continue;
        for (int a = 0; a < n; ++a) {
            if (out.matched_gt[static_cast<size_t>(a)] == j &&
                best_iou[static_cast<size_t>(a)] == gt_best[static_cast<size_t>(j)])
                out.labels[static_cast<size_t>(a)] = 1;
        }
    }

    std::vector<int> pos, neg;
    for (int a = 0; a < n; ++a) {
        if (out.labels[static_cast<size_t>(a)] == 1) pos.push_back(a);
        else if (out.labels[static_cast<size_t>(a)] == 0) neg.push_back(a);
    }
    Rng rng(derive_seed(seed, "anchor.sample"));
    subsample(pos, kAnchorMaxPos, rng);
    subsample(neg, kAnchorSample - static_cast<int>(pos.size()), rng);

    std::vector<int> labels(static_cast<size_t>(n), -1);
    for (int a : pos) labels[static_cast<size_t>(a)] = 1;
    for (int a : neg) labels[static_cast<size_t>(a)] = 0;
    out.labels = std::move(labels);
    for (int a = 0; a < n; ++a)
        if (out.labels[static_cast<size_t>(a)] != 1) out.matched_gt[static_cast<size_t>(a)] = -1;
    return out;
}

namespace {
std::vector<RoiSample> sample_rois(const std::vector<Box>& candidates,
                                   const std::vector<Instance>& gts, const ClassVocabulary& vocab,
                                   uint64_t seed, bool finetune) {
    std::vector<RoiSample> pos, neg;
    for (const Box& b : candidates) {
        if (!b.valid()) continue;
        double best = 0.0;
        int best_gt = -1;
        for (size_t j = 0; j < gts.size(); ++j) {
            double v = iou(b, gts[j].box);
            if (v > best) {
                best = v;
                best_gt = static_cast<int>(j);
            }
        }
        if (best >= kRoiPosIou) {
            const Instance& gt = gts[static_cast<size_t>(best_gt)];
            if (finetune) {
                if (!vocab.is_novel(gt.class_index))
                    throw DataContractError("fine-tune RoI matched non-novel label '" +
                                            vocab.name_of(gt.class_index) + "'");
            } else {
                if (!vocab.is_base(gt.class_index))
                    throw DataContractError("base-stage RoI matched non-base label '" +
                                            vocab.name_of(gt.class_index) + "'");
            }
            RoiSample s;
            s.box = b;
            s.target = gt.class_index;
            s.reg_target = encode_delta(b, gt.box);
            s.positive = true;
            pos.push_back(std::move(s));
        } else if (!finetune || best < kRoiFinetuneNegIou) {
            RoiSample s;
            s.box = b;
            s.target = vocab.background_index();
            neg.push_back(std::move(s));
        }
        // fine-tune candidates between the thresholds are ignored
    }

    Rng rng(derive_seed(seed, "roi.sample"));
    std::vector<int> pidx(pos.size()), nidx(neg.size());
    for (size_t i = 0; i < pos.size(); ++i) pidx[i] = static_cast<int>(i);
    for (size_t i = 0; i < neg.size(); ++i) nidx[i] = static_cast<int>(i);
    subsample(pidx, kRoiMaxPos, rng);
    subsample(nidx, kRoiSample - static_cast<int>(pidx.size()), rng);

    std::vector<RoiSample> out;
    out.reserve(pidx.size() + nidx.size());
    for (int i : pidx) out.push_back(pos[static_cast<size_t>(i)]);
    for (int i : nidx) out.push_back(neg[static_cast<size_t>(i)]);
    return out;
}
}  // namespace

std::vector<RoiSample> sample_rois_base(const std::vector<Box>& candidates,
                                        const std::vector<Instance>& gts,
                                        const ClassVocabulary& vocab, uint64_t seed) {
    return sample_rois(candidates, gts, vocab, seed, false);
}

std::vector<RoiSample> sample_rois_finetune(const std::vector<Box>& candidates,
                                            const std::vector<Instance>& gts,
                                            const ClassVocabulary& vocab, uint64_t seed) {
    return sample_rois(candidates, gts, vocab, seed, true);
}

// ---- losses ----

RpnLossParts rpn_loss(const RpnRawOutputs& raw, const std::vector<Box>& anchors,
                      const AnchorAssignment& assign, const std::vector<Instance>& gts,
                      const DetectorConfig& cfg, Tensor* grad_obj, Tensor* grad_delta,
                      double grad_scale) {
    const int Hf = cfg.feature_h(), Wf = cfg.feature_w(), A = cfg.anchors_per_cell();
    if (static_cast<int>(assign.labels.size()) != Hf * Wf * A)
        throw ShapeError("anchor assignment does not match the feature grid");
    if (grad_obj && !grad_obj->same_shape(raw.obj_logits)) *grad_obj = Tensor(raw.obj_logits.shape());
    if (grad_delta && !grad_delta->same_shape(raw.deltas)) *grad_delta = Tensor(raw.deltas.shape());

    int sampled = 0, positives = 0;
    for (int lbl : assign.labels) {
        if (lbl >= 0) ++sampled;
        if (lbl == 1) ++positives;
    }

    RpnLossParts parts;
    if (sampled == 0) return parts;
    const double inv_s = 1.0 / sampled;
    const double inv_p = positives > 0 ? 1.0 / (4.0 * positives) : 0.0;

    int idx = 0;
    for (int y = 0; y < Hf; ++y) {
        for (int x = 0; x < Wf; ++x) {
            for (int k = 0; k < A; ++k, ++idx) {
                int lbl = assign.labels[static_cast<size_t>(idx)];
                if (lbl < 0) continue;
                double l = raw.obj_logits.at3(k, y, x);
                // stable BCE with logits
                parts.objectness +=
                    (std::max(l, 0.0) - l * lbl + std::log1p(std::exp(-std::abs(l)))) * inv_s;
                if (grad_obj) {
                    double p = 1.0 / (1.0 + std::exp(-l));
                    grad_obj->at3(k, y, x) += grad_scale * (p - lbl) * inv_s;
                }
                if (lbl == 1) {
                    const Instance& gt =
                        gts[static_cast<size_t>(assign.matched_gt[static_cast<size_t>(idx)])];
                    std::array<double, 4> t = encode_delta(anchors[static_cast<size_t>(idx)], gt.box);
                    for (int j = 0; j < 4; ++j) {
                        double p = raw.deltas.at3(4 * k + j, y, x);
                        parts.regression += std::abs(p - t[static_cast<size_t>(j)]) * inv_p;
                        if (grad_delta) {
                            double s = p > t[static_cast<size_t>(j)]   ? 1.0
                                       : p < t[static_cast<size_t>(j)] ? -1.0
                                                                       : 0.0;
                            grad_delta->at3(4 * k + j, y, x) += grad_scale * s * inv_p;
                        }
                    }
                }
            }
        }
    }
    return parts;
}

double classification_loss(const std::vector<std::vector<double>>& logits,
                           const std::vector<int>& targets) {
    if (logits.size() != targets.size())
        throw ShapeError("classification loss: logits/target count mismatch");
    if (logits.empty()) return 0.0;
    double total = 0.0;
    for (size_t m = 0; m < logits.size(); ++m) {
        const auto& row = logits[m];
        int t = targets[m];
        if (t < 0 || t >= static_cast<int>(row.size()))
            throw DataContractError("classification target " + std::to_string(t) +
                                    " outside the " + std::to_string(row.size()) + "-way label space");
        double mx = *std::max_element(row.begin(), row.end());
        double lse = 0.0;
        for (double v : row) lse += std::exp(v - mx);
        total += std::log(lse) - (row[static_cast<size_t>(t)] - mx);
    }
    return total / static_cast<double>(logits.size());
}

void classification_loss_backward(const std::vector<std::vector<double>>& logits,
                                  const std::vector<int>& targets,
                                  std::vector<std::vector<double>>& grad_logits,
                                  double grad_scale) {
    grad_logits.assign(logits.size(), {});
    if (logits.empty()) return;
    const double scale = grad_scale / static_cast<double>(logits.size());
    for (size_t m = 0; m < logits.size(); ++m) {
        const auto& row = logits[m];
        std::vector<double> p(row.size());
        nn::softmax(row.data(), static_cast<int>(row.size()), p.data());
        for (double& v : p) v *= scale;
        p[static_cast<size_t>(targets[m])] -= scale;
        grad_logits[m] = std::move(p);
    }
}

double box_regression_loss(const std::vector<std::array<double, 4>>& pred,
                           const std::vector<std::array<double, 4>>& target,
                           const std::vector<bool>& positive) {
    if (pred.size() != target.size() || pred.size() != positive.size())
        throw ShapeError("box regression loss: length mismatch");
    double total = 0.0;
    int64_t n = 0;
    for (size_t m = 0; m < pred.size(); ++m) {
        if (!positive[m]) continue;
        for (int j = 0; j < 4; ++j)
            total += std::abs(pred[m][static_cast<size_t>(j)] - target[m][static_cast<size_t>(j)]);
        n += 4;
    }
    return n > 0 ? total / static_cast<double>(n) : 0.0;
}

// ---- optimization ----

void sgd_update(ParameterStore& store, TrainerState& opt, const GradientMap& grads, double lr,
                double momentum, double weight_decay) {
    for (const auto& [name, g] : grads) {
        if (!store.trainable(name)) continue;
        Tensor& w = store.at(name);
        if (!w.same_shape(g)) throw ShapeError("gradient/parameter shape mismatch for " + name);
        auto it = opt.velocity.find(name);
        if (it == opt.velocity.end()) it = opt.velocity.emplace(name, Tensor(w.shape())).first;
        Tensor& v = it->second;
        for (int64_t i = 0; i < w.size(); ++i) {
            double gi = g[i] + weight_decay * w[i];
            v[i] = momentum * v[i] + gi;
            w[i] -= lr * v[i];
        }
    }
}

namespace {
int regressor_slot(const DetectorConfig& cfg, int target) {
    return cfg.regressor == RegressorMode::kAgnostic ? 0 : 4 * target;
}
}  // namespace

LossBreakdown base_train_step(const std::vector<const AnnotatedImage*>& batch,
                              ParameterStore& store, TrainerState& opt, const TrainConfig& tcfg,
                              const DetectorConfig& dcfg, const ClassVocabulary& vocab, int step) {
    store.require_stage(Stage::kBase, "base training step");
    if (batch.empty()) throw ConfigError("empty training batch");

    const std::vector<Box> anchors = generate_anchors(dcfg);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const int C = dcfg.feature_channels(), P = dcfg.roi_pool_size;

    GradientMap grads;
    LossBreakdown lb;

    for (size_t bi = 0; bi < batch.size(); ++bi) {
        const AnnotatedImage& img = *batch[bi];

        BackboneTrace btrace;
        Tensor z = backbone_forward(image_to_tensor(img), store, dcfg, &btrace);
        RpnRawOutputs raw = rpn_raw_forward(z, store);

        AnchorAssignment assign =
            assign_anchors(anchors, img.instances, derive_seed(tcfg.seed, "anchors", step, bi));
        Tensor grad_obj, grad_delta;
        RpnLossParts rp =
            rpn_loss(raw, anchors, assign, img.instances, dcfg, &grad_obj, &grad_delta, inv_b);
        lb.rpn += rp.total() * inv_b;

        std::vector<Proposal> proposals = rpn_propose(raw, anchors, dcfg, RunMode::kTrain);
        std::vector<Box> cands;
        cands.reserve(proposals.size() + img.instances.size());
        for (const Proposal& p : proposals) cands.push_back(p.box);
        // ground-truth boxes join the pool so positives exist from step one
        for (const Instance& gt : img.instances) cands.push_back(gt.box);

        std::vector<RoiSample> rois =
            sample_rois_base(cands, img.instances, vocab, derive_seed(tcfg.seed, "rois", step, bi));
        const size_t M = rois.size();
        if (M == 0) continue;

        std::vector<RoiPoolTrace> ptraces(M);
        std::vector<RoiHeadTrace> htraces(M);
        std::vector<std::vector<double>> logits(M), feats(M), raw_regs(M);
        std::vector<int> targets(M);
        std::vector<std::array<double, 4>> reg_pred(M), reg_tgt(M);
        std::vector<bool> reg_pos(M);
        int n_pos = 0;

        for (size_t m = 0; m < M; ++m) {
            Tensor pooled = roi_pool(z, rois[m].box, dcfg, &ptraces[m]);
            feats[m] = roi_feature_forward(pooled, Branch::kBase, store, dcfg, &htraces[m]);
            logits[m] = classify(feats[m], Branch::kBase, store, dcfg);
            targets[m] = rois[m].target;
            raw_regs[m] = regress_raw(feats[m], store);
            reg_pos[m] = rois[m].positive;
            if (rois[m].positive) {
                ++n_pos;
                int o = regressor_slot(dcfg, rois[m].target);
                for (int j = 0; j < 4; ++j)
                    reg_pred[m][static_cast<size_t>(j)] = raw_regs[m][static_cast<size_t>(o + j)];
                reg_tgt[m] = rois[m].reg_target;
            }
        }

        lb.cls += classification_loss(logits, targets) * inv_b;
        lb.loc += box_regression_loss(reg_pred, reg_tgt, reg_pos) * inv_b;

        // fail before spending a backward pass on poisoned values
        if (!std::isfinite(lb.rpn)) throw NonFiniteLossError("rpn");
        if (!std::isfinite(lb.cls)) throw NonFiniteLossError("cls");
        if (!std::isfinite(lb.loc)) throw NonFiniteLossError("loc");

        std::vector<std::vector<double>> glogits;
        classification_loss_backward(logits, targets, glogits, inv_b);

        Tensor grad_z(z.shape());
        const double reg_grad = n_pos > 0 ? inv_b / (4.0 * n_pos) : 0.0;
        for (size_t m = 0; m < M; ++m) {
            std::vector<double> gf;
            classify_backward(feats[m], Branch::kBase, store, dcfg, glogits[m], grads, &gf);
            if (rois[m].positive) {
                std::vector<double> graw(raw_regs[m].size(), 0.0);
                int o = regressor_slot(dcfg, rois[m].target);
                for (int j = 0; j < 4; ++j) {
                    double d = reg_pred[m][static_cast<size_t>(j)] - reg_tgt[m][static_cast<size_t>(j)];
                    graw[static_cast<size_t>(o + j)] = (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) * reg_grad;
                }
                std::vector<double> gf2;
                regress_backward(feats[m], store, graw, grads, &gf2);
                for (size_t i = 0; i < gf.size(); ++i) gf[i] += gf2[i];
            }
            std::vector<double> gflat;
            roi_head_backward(htraces[m], Branch::kBase, store, gf, grads, &gflat);
            Tensor gp({C, P, P});
            std::memcpy(gp.data(), gflat.data(), gflat.size() * sizeof(double));
            roi_pool_backward(gp, ptraces[m], grad_z);
        }

        rpn_backward(z, raw, store, grad_obj, grad_delta, grads, grad_z);
        backbone_backward(btrace, store, grad_z, grads);
    }

    if (!std::isfinite(lb.rpn)) throw NonFiniteLossError("rpn");
    if (!std::isfinite(lb.cls)) throw NonFiniteLossError("cls");
    if (!std::isfinite(lb.loc)) throw NonFiniteLossError("loc");

    sgd_update(store, opt, grads, tcfg.rate_at(step), tcfg.momentum, tcfg.weight_decay);
    return lb;
}

void branch_surgery(ParameterStore& store, const DetectorConfig& cfg, uint64_t seed) {
    store.require_stage(Stage::kBase, "branch surgery");
    store.add("roi.novel.fc1.w", store.at("roi.base.fc1.w"));
    store.add("roi.novel.fc1.b", store.at("roi.base.fc1.b"));
    store.add("roi.novel.fc2.w", store.at("roi.base.fc2.w"));
    store.add("roi.novel.fc2.b", store.at("roi.base.fc2.b"));

    Tensor w({cfg.num_novel, cfg.roi_feature_dim});
    Rng rng(derive_seed(seed, "surgery.cls.novel"));
    for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, 0.01);
    store.add("cls.novel.w", std::move(w));
    store.add("cls.novel.b", Tensor({cfg.num_novel}));

    store.set_stage(Stage::kBranched);
    store.validate();
}

void apply_freeze_policy(ParameterStore& store, FreezePolicy policy) {
    store.require_stage(Stage::kBranched, "freeze policy");
    for (const std::string& name : store.names()) store.set_trainable(name, false);
    store.set_trainable("cls.novel.w", true);
    store.set_trainable("cls.novel.b", true);
    if (policy == FreezePolicy::kFc2 || policy == FreezePolicy::kFc1Fc2) {
        store.set_trainable("roi.novel.fc2.w", true);
        store.set_trainable("roi.novel.fc2.b", true);
    }
    if (policy == FreezePolicy::kFc1Fc2) {
        store.set_trainable("roi.novel.fc1.w", true);
        store.set_trainable("roi.novel.fc1.b", true);
    }
}

double finetune_step(const std::vector<const AnnotatedImage*>& batch, ParameterStore& store,
                     TrainerState& opt, const TrainConfig& tcfg, const DetectorConfig& dcfg,
                     const ClassVocabulary& vocab, int step) {
    store.require_stage(Stage::kBranched, "fine-tune step");
    if (batch.empty()) throw ConfigError("empty fine-tune batch");
    for (const AnnotatedImage* img : batch)
        for (const Instance& inst : img->instances)
            if (!vocab.is_novel(inst.class_index))
                throw DataContractError("fine-tune batch contains non-novel label '" +
                                        vocab.name_of(inst.class_index) + "'");

    const std::vector<Box> anchors = generate_anchors(dcfg);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const bool need_feature_grad =
        store.trainable("roi.novel.fc2.w") || store.trainable("roi.novel.fc1.w");

    GradientMap grads;
    double loss = 0.0;

    for (size_t bi = 0; bi < batch.size(); ++bi) {
        const AnnotatedImage& img = *batch[bi];
        Tensor z = backbone_forward(image_to_tensor(img), store, dcfg);
        std::vector<Proposal> proposals = rpn_forward(z, store, anchors, dcfg, RunMode::kTrain);

        std::vector<Box> cands;
        cands.reserve(proposals.size() + img.instances.size());
        for (const Proposal& p : proposals) cands.push_back(p.box);
        for (const Instance& gt : img.instances) cands.push_back(gt.box);

        std::vector<RoiSample> rois = sample_rois_finetune(
            cands, img.instances, vocab, derive_seed(tcfg.seed, "ft.rois", step, bi));
        const size_t M = rois.size();
        if (M == 0) continue;

        std::vector<RoiHeadTrace> htraces(M);
        std::vector<std::vector<double>> joint(M), novel_feats(M);
        std::vector<int> targets(M);

        for (size_t m = 0; m < M; ++m) {
            Tensor pooled = roi_pool(z, rois[m].box, dcfg);
            std::vector<double> fb = roi_feature_forward(pooled, Branch::kBase, store, dcfg);
            novel_feats[m] = roi_feature_forward(pooled, Branch::kNovel, store, dcfg, &htraces[m]);
            std::vector<double> lb = classify(fb, Branch::kBase, store, dcfg);
            std::vector<double> ln = classify(novel_feats[m], Branch::kNovel, store, dcfg);
            joint[m] = std::move(lb);
            joint[m].insert(joint[m].end(), ln.begin(), ln.end());
            targets[m] = rois[m].target;
        }

        loss += classification_loss(joint, targets) * inv_b;

        std::vector<std::vector<double>> gjoint;
        classification_loss_backward(joint, targets, gjoint, inv_b);
        const size_t novel_off = static_cast<size_t>(vocab.num_base() + 1);
        for (size_t m = 0; m < M; ++m) {
            // base-branch logits sit in a frozen path; only the novel slice
            // backpropagates
            std::vector<double> gnovel(gjoint[m].begin() + static_cast<long>(novel_off),
                                       gjoint[m].end());
            std::vector<double> gf;
            classify_backward(novel_feats[m], Branch::kNovel, store, dcfg, gnovel, grads,
                              need_feature_grad ? &gf : nullptr);
            if (need_feature_grad)
                roi_head_backward(htraces[m], Branch::kNovel, store, gf, grads, nullptr);
        }
    }

    if (!std::isfinite(loss)) throw NonFiniteLossError("cls");
    sgd_update(store, opt, grads, tcfg.rate_at(step), tcfg.momentum, tcfg.weight_decay);
    return loss;
}

// ---- checkpoint I/O ----

namespace {
constexpr char kMagic[8] = {'I', 'N', 'C', 'D', 'E', 'T', 'C', '1'};
constexpr int kFormatVersion = 1;

uint64_t fnv1a(const unsigned char* data, size_t n) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["stage"] = stage_name(ckpt.params.stage());
    manifest["step"] = ckpt.step;
    manifest["seed"] = ckpt.seed;
    manifest["config"] = nlohmann::json::parse(detector_config_to_json(ckpt.config));
    manifest["config_digest"] = config_digest(ckpt.config);

    std::vector<unsigned char> payload;
    nlohmann::json table = nlohmann::json::array();
    for (const std::string& name : ckpt.params.names()) {
        const Tensor& t = ckpt.params.at(name);
        nlohmann::json row;
        row["name"] = name;
        row["shape"] = t.shape();
        row["trainable"] = ckpt.params.trainable(name);
        row["count"] = t.size();
        table.push_back(std::move(row));
        size_t off = payload.size();
        payload.resize(off + static_cast<size_t>(t.size()) * sizeof(double));
        std::memcpy(payload.data() + off, t.data(), static_cast<size_t>(t.size()) * sizeof(double));
    }
    manifest["tensors"] = std::move(table);
    manifest["payload_digest"] = hex64(fnv1a(payload.data(), payload.size()));

    std::string mtext = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint path for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    uint32_t mlen = static_cast<uint32_t>(mtext.size());
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);

    uint32_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!in) throw IoError("truncated checkpoint header: " + path);
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw IoError("truncated checkpoint manifest: " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("corrupt checkpoint manifest: ") + e.what());
    }

    if (manifest.value("format_version", -1) != kFormatVersion)
        throw IoError("unsupported checkpoint format version in " + path);

    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
    if (manifest.value("payload_digest", std::string()) != hex64(fnv1a(payload.data(), payload.size())))
        throw IoError("checkpoint payload digest mismatch (corrupt file): " + path);

    Checkpoint ckpt;
    ckpt.config = detector_config_from_json_text(manifest.at("config").dump());
    if (manifest.value("config_digest", std::string()) != config_digest(ckpt.config))
        throw IoError("checkpoint config digest mismatch: " + path);
    ckpt.step = manifest.value("step", 0);
    ckpt.seed = manifest.value("seed", static_cast<uint64_t>(0));

    std::string stage = manifest.value("stage", std::string("base"));
    ckpt.params.set_stage(stage == "branched" ? Stage::kBranched : Stage::kBase);

    size_t off = 0;
    for (const auto& row : manifest.at("tensors")) {
        std::string name = row.at("name").get<std::string>();
        std::vector<int> shape = row.at("shape").get<std::vector<int>>();
        int64_t count = row.at("count").get<int64_t>();
        Tensor t(shape);
        if (t.size() != count) throw IoError("tensor shape/count mismatch for " + name);
        size_t bytes = static_cast<size_t>(count) * sizeof(double);
        if (off + bytes > payload.size()) throw IoError("checkpoint payload too short: " + path);
        std::memcpy(t.data(), payload.data() + off, bytes);
        off += bytes;
        ckpt.params.add(name, std::move(t), row.at("trainable").get<bool>());
    }
    if (off != payload.size()) throw IoError("checkpoint payload has trailing bytes: " + path);

    ckpt.params.validate();
    return ckpt;
}

}  // namespace incdet
