#include "incdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "incdet/nms.hpp"
#include "incdet/nn.hpp"
#include "incdet/rng.hpp"
#include "json.hpp"

namespace incdet {

const char* classifier_mode_name(ClassifierMode m) {
    return m == ClassifierMode::kLinear ? "linear" : "cosine";
}
const char* regressor_mode_name(RegressorMode m) {
    return m == RegressorMode::kAgnostic ? "agnostic" : "specific";
}
ClassifierMode parse_classifier_mode(const std::string& s) {
    if (s == "linear") return ClassifierMode::kLinear;
    if (s == "cosine") return ClassifierMode::kCosine;
    throw ConfigError("unknown classifier mode '" + s + "' (expected linear|cosine)");
}
RegressorMode parse_regressor_mode(const std::string& s) {
    if (s == "agnostic") return RegressorMode::kAgnostic;
    if (s == "specific") return RegressorMode::kSpecific;
    throw ConfigError("unknown regressor mode '" + s + "' (expected agnostic|specific)");
}

void DetectorConfig::validate() const {
    if (cosine_scale <= 0) throw ConfigError("cosine scale must be > 0");
    if (roi_pool_size < 2) throw ConfigError("roi pool size must be >= 2");
    if (roi_feature_dim < 8) throw ConfigError("roi feature width must be >= 8");
    if (backbone_channels.size() != 4) throw ConfigError("backbone needs exactly 4 channel widths");
    for (int c : backbone_channels)
        if (c < 1) throw ConfigError("backbone channel widths must be positive");
    if (anchor_scales.empty() || anchor_ratios.empty())
        throw ConfigError("need at least one anchor scale and ratio");
    if (canvas_h % stride() != 0 || canvas_w % stride() != 0)
        throw ConfigError("canvas dimensions must be multiples of the backbone stride");
    if (canvas_h < 32 || canvas_w < 32) throw ConfigError("canvas must be at least 32x32");
    if (pre_nms_topn < 1 || post_nms_train < 1 || post_nms_eval < 1)
        throw ConfigError("proposal counts must be positive");
    if (proposal_nms_iou <= 0 || proposal_nms_iou > 1 || detection_nms_iou <= 0 ||
        detection_nms_iou > 1)
        throw ConfigError("NMS IoU thresholds must lie in (0, 1]");
    if (score_threshold < 0 || score_threshold >= 1)
        throw ConfigError("score threshold must lie in [0, 1)");
    if (max_detections < 1) throw ConfigError("max detections must be positive");
    if (num_base < 1 || num_novel < 0) throw ConfigError("bad class counts");
}

ParameterStore init_parameters(const DetectorConfig& cfg, uint64_t seed) {
    cfg.validate();
    const auto& ch = cfg.backbone_channels;
    const int A = cfg.anchors_per_cell();
    const int d = cfg.roi_feature_dim;

    ParameterStore store;
    store.set_stage(Stage::kBase);

    auto add_gaussian = [&](const std::string& name, std::vector<int> shape, double stddev) {
        Tensor t(std::move(shape));
        Rng rng(derive_seed(seed, "init." + name));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
        store.add(name, std::move(t));
    };
    auto add_zeros = [&](const std::string& name, std::vector<int> shape) {
        store.add(name, Tensor(std::move(shape)));
    };
    auto he_conv = [](int in_ch) { return std::sqrt(2.0 / (in_ch * 9.0)); };
    auto he_fc = [](int fan_in) { return std::sqrt(2.0 / fan_in); };

    add_gaussian("backbone.conv1.w", {ch[0], 3, 3, 3}, he_conv(3));
    add_zeros("backbone.conv1.b", {ch[0]});
    add_gaussian("backbone.conv2.w", {ch[1], ch[0], 3, 3}, he_conv(ch[0]));
    add_zeros("backbone.conv2.b", {ch[1]});
    add_gaussian("backbone.conv3.w", {ch[2], ch[1], 3, 3}, he_conv(ch[1]));
    add_zeros("backbone.conv3.b", {ch[2]});
    add_gaussian("backbone.conv4.w", {ch[3], ch[2], 3, 3}, he_conv(ch[2]));
    add_zeros("backbone.conv4.b", {ch[3]});

    add_gaussian("rpn.conv.w", {ch[3], ch[3], 3, 3}, he_conv(ch[3]));
    add_zeros("rpn.conv.b", {ch[3]});
    add_gaussian("rpn.obj.w", {A, ch[3]}, 0.01);
    add_zeros("rpn.obj.b", {A});
    add_gaussian("rpn.delta.w", {4 * A, ch[3]}, 0.01);
    add_zeros("rpn.delta.b", {4 * A});

    add_gaussian("roi.base.fc1.w", {d, cfg.roi_flat_dim()}, he_fc(cfg.roi_flat_dim()));
    add_zeros("roi.base.fc1.b", {d});
    add_gaussian("roi.base.fc2.w", {d, d}, he_fc(d));
    add_zeros("roi.base.fc2.b", {d});

    add_gaussian("cls.base.w", {cfg.base_ways(), d}, 0.01);
    add_zeros("cls.base.b", {cfg.base_ways()});
    add_gaussian("reg.w", {cfg.regressor_width(), d}, 0.001);
    add_zeros("reg.b", {cfg.regressor_width()});

    store.validate();
    return store;
}

std::vector<Box> generate_anchors(const DetectorConfig& cfg) {
    std::vector<Box> anchors;
    anchors.reserve(static_cast<size_t>(cfg.feature_h() * cfg.feature_w() * cfg.anchors_per_cell()));
    const double stride = cfg.stride();
    for (int y = 0; y < cfg.feature_h(); ++y) {
        for (int x = 0; x < cfg.feature_w(); ++x) {
            double cx = (x + 0.5) * stride;
            double cy = (y + 0.5) * stride;
            for (double scale : cfg.anchor_scales) {
                for (double ratio : cfg.anchor_ratios) {
                    double h = scale * std::sqrt(ratio);
                    double w = scale / std::sqrt(ratio);
                    anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
                }
            }
        }
    }
    return anchors;
}

Tensor image_to_tensor(const AnnotatedImage& img) {
    Tensor t({3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) t.at3(c, y, x) = img.px(y, x, c);
    return t;
}

Tensor backbone_forward(const Tensor& image_chw, const ParameterStore& params,
                        const DetectorConfig& cfg, BackboneTrace* trace) {
    if (image_chw.ndim() != 3 || image_chw.dim(0) != 3 || image_chw.dim(1) != cfg.canvas_h ||
        image_chw.dim(2) != cfg.canvas_w)
        throw ShapeError("backbone input must be [3," + std::to_string(cfg.canvas_h) + "," +
                         std::to_string(cfg.canvas_w) + "]");

    Tensor act1, act2, act3, act4, pool1, pool2, pool3;
    std::vector<int64_t> arg1, arg2, arg3;

    nn::conv3x3_forward(image_chw, params.at("backbone.conv1.w"), params.at("backbone.conv1.b"),
                        act1);
    nn::relu_forward(act1);
    nn::maxpool2x2_forward(act1, pool1, arg1);

    nn::conv3x3_forward(pool1, params.at("backbone.conv2.w"), params.at("backbone.conv2.b"), act2);
    nn::relu_forward(act2);
    nn::maxpool2x2_forward(act2, pool2, arg2);

    nn::conv3x3_forward(pool2, params.at("backbone.conv3.w"), params.at("backbone.conv3.b"), act3);
    nn::relu_forward(act3);
    nn::maxpool2x2_forward(act3, pool3, arg3);

    nn::conv3x3_forward(pool3, params.at("backbone.conv4.w"), params.at("backbone.conv4.b"), act4);
    nn::relu_forward(act4);

    if (trace) {
        trace->input = image_chw;
        trace->act1 = act1;
        trace->act2 = act2;
        trace->act3 = act3;
        trace->act4 = act4;
        trace->pool1 = std::move(pool1);
        trace->pool2 = std::move(pool2);
        trace->pool3 = std::move(pool3);
        trace->arg1 = std::move(arg1);
        trace->arg2 = std::move(arg2);
        trace->arg3 = std::move(arg3);
    }
    return act4;
}

RpnRawOutputs rpn_raw_forward(const Tensor& z, const ParameterStore& params) {
    RpnRawOutputs raw;
    nn::conv3x3_forward(z, params.at("rpn.conv.w"), params.at("rpn.conv.b"), raw.hidden);
    nn::relu_forward(raw.hidden);
    nn::conv1x1_forward(raw.hidden, params.at("rpn.obj.w"), params.at("rpn.obj.b"), raw.obj_logits);
    nn::conv1x1_forward(raw.hidden, params.at("rpn.delta.w"), params.at("rpn.delta.b"), raw.deltas);
    return raw;
}

std::vector<Proposal> rpn_propose(const RpnRawOutputs& raw, const std::vector<Box>& anchors,
                                  const DetectorConfig& cfg, RunMode mode) {
    const int Hf = cfg.feature_h(), Wf = cfg.feature_w(), A = cfg.anchors_per_cell();
    if (static_cast<int>(anchors.size()) != Hf * Wf * A)
        throw ShapeError("anchor list does not match the feature grid");
    if (raw.obj_logits.ndim() != 3 || raw.obj_logits.dim(0) != A)
        throw ShapeError("RPN objectness tensor has wrong channel count");

    struct Cand {
        Box box;
        double logit;
        int index;
    };
    std::vector<Cand> cands;
    cands.reserve(anchors.size());
    int idx = 0;
    for (int y = 0; y < Hf; ++y) {
        for (int x = 0; x < Wf; ++x) {
            for (int k = 0; k < A; ++k, ++idx) {
                std::array<double, 4> d = {
                    raw.deltas.at3(4 * k + 0, y, x), raw.deltas.at3(4 * k + 1, y, x),
                    raw.deltas.at3(4 * k + 2, y, x), raw.deltas.at3(4 * k + 3, y, x)};
                for (double v : d)
                    if (!std::isfinite(v)) throw NonFiniteLossError("rpn.deltas");
                Box b = decode_delta(anchors[static_cast<size_t>(idx)], d)
                            .clipped(cfg.canvas_w, cfg.canvas_h);
                if (b.width() < cfg.proposal_min_size || b.height() < cfg.proposal_min_size)
                    continue;
                double logit = raw.obj_logits.at3(k, y, x);
                // a non-finite score would poison the ordering below
                if (!std::isfinite(logit)) throw NonFiniteLossError("rpn.objectness");
                cands.push_back({b, logit, idx});
            }
        }
    }

    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.logit != b.logit) return a.logit > b.logit;
        if (!(a.box == b.box)) return box_less(a.box, b.box);
        return a.index < b.index;
    });
    if (static_cast<int>(cands.size()) > cfg.pre_nms_topn)
        cands.resize(static_cast<size_t>(cfg.pre_nms_topn));

    std::vector<Box> boxes(cands.size());
    std::vector<double> scores(cands.size());
    for (size_t i = 0; i < cands.size(); ++i) {
        boxes[i] = cands[i].box;
        scores[i] = cands[i].logit;
    }
    std::vector<int> kept = nms(boxes, scores, cfg.proposal_nms_iou);

    const int topn = mode == RunMode::kTrain ? cfg.post_nms_train : cfg.post_nms_eval;
    if (static_cast<int>(kept.size()) > topn) kept.resize(static_cast<size_t>(topn));

    std::vector<Proposal> out;
    out.reserve(kept.size());
    for (int k : kept) {
        const Cand& c = cands[static_cast<size_t>(k)];
        out.push_back({c.box, 1.0 / (1.0 + std::exp(-c.logit))});
    }
    return out;
}

std::vector<Proposal> rpn_forward(const Tensor& z, const ParameterStore& params,
                                  const std::vector<Box>& anchors, const DetectorConfig& cfg,
                                  RunMode mode) {
    return rpn_propose(rpn_raw_forward(z, params), anchors, cfg, mode);
}

Tensor roi_pool(const Tensor& z, const Box& box, const DetectorConfig& cfg, RoiPoolTrace* trace) {
    const int C = z.dim(0), Hf = z.dim(1), Wf = z.dim(2), P = cfg.roi_pool_size;
    const double stride = cfg.stride();

    int x0 = std::clamp(static_cast<int>(std::floor(box.x1 / stride)), 0, Wf - 1);
    int y0 = std::clamp(static_cast<int>(std::floor(box.y1 / stride)), 0, Hf - 1);
    int x1 = std::clamp(static_cast<int>(std::ceil(box.x2 / stride)), x0 + 1, Wf);
    int y1 = std::clamp(static_cast<int>(std::ceil(box.y2 / stride)), y0 + 1, Hf);

    Tensor out({C, P, P});
    if (trace) trace->argmax.assign(static_cast<size_t>(C) * P * P, 0);

    const int spanx = x1 - x0, spany = y1 - y0;
    for (int c = 0; c < C; ++c) {
        for (int py = 0; py < P; ++py) {
            int by0 = y0 + py * spany / P;
            int by1 = std::max(by0 + 1, y0 + ((py + 1) * spany + P - 1) / P);
            for (int px = 0; px < P; ++px) {
                int bx0 = x0 + px * spanx / P;
                int bx1 = std::max(bx0 + 1, x0 + ((px + 1) * spanx + P - 1) / P);
                // seed with the first covered cell so NaN windows propagate
                // instead of collapsing to a sentinel
                double best = z.at3(c, by0, bx0);
                int64_t best_idx = (static_cast<int64_t>(c) * Hf + by0) * Wf + bx0;
                for (int y = by0; y < by1; ++y) {
                    for (int x = bx0; x < bx1; ++x) {
                        double v = z.at3(c, y, x);
                        if (v > best) {
                            best = v;
                            best_idx = (static_cast<int64_t>(c) * Hf + y) * Wf + x;
                        }
                    }
                }
                out.at3(c, py, px) = best;
                if (trace) trace->argmax[(static_cast<size_t>(c) * P + py) * P + px] = best_idx;
            }
        }
    }
    return out;
}

static const char* branch_prefix(Branch b) { return b == Branch::kBase ? "roi.base" : "roi.novel"; }
static const char* head_prefix(Branch b) { return b == Branch::kBase ? "cls.base" : "cls.novel"; }

std::vector<double> roi_feature_forward(const Tensor& pooled, Branch branch,
                                        const ParameterStore& params, const DetectorConfig& cfg,
                                        RoiHeadTrace* trace) {
    if (branch == Branch::kNovel) params.require_stage(Stage::kBranched, "novel RoI branch");
    if (pooled.size() != cfg.roi_flat_dim())
        throw ShapeError("pooled tensor does not match the configured RoI grid");

    const std::string p = branch_prefix(branch);
    const Tensor& w1 = params.at(p + ".fc1.w");
    const Tensor& b1 = params.at(p + ".fc1.b");
    const Tensor& w2 = params.at(p + ".fc2.w");
    const Tensor& b2 = params.at(p + ".fc2.b");
    const int d = cfg.roi_feature_dim;

    std::vector<double> flat(pooled.data(), pooled.data() + pooled.size());
    std::vector<double> a1(static_cast<size_t>(d));
    nn::linear_forward(flat.data(), w1, b1, a1.data());
    for (double& v : a1) v = std::max(0.0, v);
    std::vector<double> f(static_cast<size_t>(d));
    nn::linear_forward(a1.data(), w2, b2, f.data());
    for (double& v : f) v = std::max(0.0, v);

    if (trace) {
        trace->flat = std::move(flat);
        trace->act1 = std::move(a1);
        trace->feat = f;
    }
    return f;
}

std::vector<double> classify(const std::vector<double>& f, Branch head, const ParameterStore& params,
                             const DetectorConfig& cfg) {
    if (head == Branch::kNovel) params.require_stage(Stage::kBranched, "novel classifier head");
    const std::string p = head_prefix(head);
    const Tensor& w = params.at(p + ".w");
    const int rows = w.dim(0), d = w.dim(1);
    if (static_cast<int>(f.size()) != d) throw ShapeError("classifier feature width mismatch");

    std::vector<double> logits(static_cast<size_t>(rows));
    if (cfg.classifier == ClassifierMode::kLinear) {
        nn::linear_forward(f.data(), w, params.at(p + ".b"), logits.data());
    } else {
        double nf = 0.0;
        for (double v : f) nf += v * v;
        nf = std::sqrt(nf);
        for (int j = 0; j < rows; ++j) {
            double u = 0.0, nw = 0.0;
            const double* wj = w.data() + static_cast<size_t>(j) * d;
            for (int i = 0; i < d; ++i) {
                u += wj[i] * f[static_cast<size_t>(i)];
                nw += wj[i] * wj[i];
            }
            logits[static_cast<size_t>(j)] = cfg.cosine_scale * u / (std::sqrt(nw) * nf + cfg.cosine_eps);
        }
    }
    return logits;
}

std::vector<double> regress_raw(const std::vector<double>& f, const ParameterStore& params) {
    const Tensor& w = params.at("reg.w");
    if (static_cast<int>(f.size()) != w.dim(1)) throw ShapeError("regressor feature width mismatch");
    std::vector<double> out(static_cast<size_t>(w.dim(0)));
    nn::linear_forward(f.data(), w, params.at("reg.b"), out.data());
    return out;
}

std::array<double, 4> regress_boxes(const std::vector<double>& f, const ParameterStore& params,
                                    const DetectorConfig& cfg, std::optional<int> class_hint) {
    std::vector<double> raw = regress_raw(f, params);
    if (cfg.regressor == RegressorMode::kAgnostic) {
        (void)class_hint;  // agnostic head is shared by every class
        return {raw[0], raw[1], raw[2], raw[3]};
    }
    if (!class_hint)
        throw std::invalid_argument("class-specific regressor requires a class hint");
    int h = *class_hint;
    if (h < 0 || h >= cfg.base_ways())
        throw std::invalid_argument("class hint " + std::to_string(h) +
                                    " outside the regressor's per-class slots");
    size_t o = static_cast<size_t>(4 * h);
    return {raw[o], raw[o + 1], raw[o + 2], raw[o + 3]};
}

BranchOutputs joint_predict(const Tensor& z, const std::vector<Proposal>& proposals,
                            const ParameterStore& params, const DetectorConfig& cfg) {
    params.require_stage(Stage::kBranched, "joint prediction");
    BranchOutputs out;
    out.base_logits.reserve(proposals.size());
    out.novel_logits.reserve(proposals.size());
    out.joint_probs.reserve(proposals.size());
    out.box_deltas.reserve(proposals.size());

    for (const Proposal& pr : proposals) {
        Tensor pooled = roi_pool(z, pr.box, cfg);
        std::vector<double> fb = roi_feature_forward(pooled, Branch::kBase, params, cfg);
        std::vector<double> fn = roi_feature_forward(pooled, Branch::kNovel, params, cfg);
        std::vector<double> lb = classify(fb, Branch::kBase, params, cfg);
        std::vector<double> ln = classify(fn, Branch::kNovel, params, cfg);

        std::vector<double> joint(lb);
        joint.insert(joint.end(), ln.begin(), ln.end());
        std::vector<double> probs(joint.size());
        nn::softmax(joint.data(), static_cast<int>(joint.size()), probs.data());

        out.base_logits.push_back(std::move(lb));
        out.novel_logits.push_back(std::move(ln));
        out.joint_probs.push_back(std::move(probs));
        out.box_deltas.push_back(regress_raw(fb, params));
    }
    return out;
}

// ---- backward ----

Tensor& grad_slot(GradientMap& grads, const std::string& name, const std::vector<int>& shape) {
    auto it = grads.find(name);
    if (it == grads.end()) it = grads.emplace(name, Tensor(shape)).first;
    else if (it->second.shape() != shape)
        throw ShapeError("gradient shape mismatch for " + name);
    return it->second;
}

void backbone_backward(const BackboneTrace& trace, const ParameterStore& params,
                       const Tensor& grad_z, GradientMap& grads) {
    Tensor g4 = grad_z;
    nn::relu_backward(trace.act4, g4);
    Tensor g_pool3;
    nn::conv3x3_backward(trace.pool3, params.at("backbone.conv4.w"), g4, &g_pool3,
                         grad_slot(grads, "backbone.conv4.w", params.at("backbone.conv4.w").shape()),
                         grad_slot(grads, "backbone.conv4.b", params.at("backbone.conv4.b").shape()));

    Tensor g3(trace.act3.shape());
    nn::maxpool2x2_backward(g_pool3, trace.arg3, g3);
    nn::relu_backward(trace.act3, g3);
    Tensor g_pool2;
    nn::conv3x3_backward(trace.pool2, params.at("backbone.conv3.w"), g3, &g_pool2,
                         grad_slot(grads, "backbone.conv3.w", params.at("backbone.conv3.w").shape()),
                         grad_slot(grads, "backbone.conv3.b", params.at("backbone.conv3.b").shape()));

    Tensor g2(trace.act2.shape());
    nn::maxpool2x2_backward(g_pool2, trace.arg2, g2);
    nn::relu_backward(trace.act2, g2);
    Tensor g_pool1;
    nn::conv3x3_backward(trace.pool1, params.at("backbone.conv2.w"), g2, &g_pool1,
                         grad_slot(grads, "backbone.conv2.w", params.at("backbone.conv2.w").shape()),
                         grad_slot(grads, "backbone.conv2.b", params.at("backbone.conv2.b").shape()));

    Tensor g1(trace.act1.shape());
    nn::maxpool2x2_backward(g_pool1, trace.arg1, g1);
    nn::relu_backward(trace.act1, g1);
    nn::conv3x3_backward(trace.input, params.at("backbone.conv1.w"), g1, nullptr,
                         grad_slot(grads, "backbone.conv1.w", params.at("backbone.conv1.w").shape()),
                         grad_slot(grads, "backbone.conv1.b", params.at("backbone.conv1.b").shape()));
}

void rpn_backward(const Tensor& z, const RpnRawOutputs& raw, const ParameterStore& params,
                  const Tensor& grad_obj, const Tensor& grad_delta, GradientMap& grads,
                  Tensor& grad_z) {
    Tensor g_hidden(raw.hidden.shape());
    Tensor tmp;
    nn::conv1x1_backward(raw.hidden, params.at("rpn.obj.w"), grad_obj, &g_hidden,
                         grad_slot(grads, "rpn.obj.w", params.at("rpn.obj.w").shape()),
                         grad_slot(grads, "rpn.obj.b", params.at("rpn.obj.b").shape()));
    nn::conv1x1_backward(raw.hidden, params.at("rpn.delta.w"), grad_delta, &tmp,
                         grad_slot(grads, "rpn.delta.w", params.at("rpn.delta.w").shape()),
                         grad_slot(grads, "rpn.delta.b", params.at("rpn.delta.b").shape()));
    for (int64_t i = 0; i < g_hidden.size(); ++i) g_hidden[i] += tmp[i];
    nn::relu_backward(raw.hidden, g_hidden);

    Tensor g_z_local;
    nn::conv3x3_backward(z, params.at("rpn.conv.w"), g_hidden, &g_z_local,
                         grad_slot(grads, "rpn.conv.w", params.at("rpn.conv.w").shape()),
                         grad_slot(grads, "rpn.conv.b", params.at("rpn.conv.b").shape()));
    for (int64_t i = 0; i < grad_z.size(); ++i) grad_z[i] += g_z_local[i];
}

void roi_pool_backward(const Tensor& grad_pooled, const RoiPoolTrace& trace, Tensor& grad_z) {
    for (int64_t i = 0; i < grad_pooled.size(); ++i)
        grad_z[trace.argmax[static_cast<size_t>(i)]] += grad_pooled[i];
}

void roi_head_backward(const RoiHeadTrace& trace, Branch branch, const ParameterStore& params,
                       const std::vector<double>& grad_f, GradientMap& grads,
                       std::vector<double>* grad_flat) {
    const std::string p = branch_prefix(branch);
    const Tensor& w1 = params.at(p + ".fc1.w");
    const Tensor& w2 = params.at(p + ".fc2.w");
    const int d = w2.dim(0);

    std::vector<double> g2(grad_f);
    for (int i = 0; i < d; ++i)
        if (trace.feat[static_cast<size_t>(i)] <= 0.0) g2[static_cast<size_t>(i)] = 0.0;

    const bool fc2_train = params.trainable(p + ".fc2.w");
    const bool fc1_train = params.trainable(p + ".fc1.w");
    const bool need_g1 = fc1_train || grad_flat != nullptr;

    std::vector<double> g1;
    if (fc2_train && need_g1) {
        g1.assign(static_cast<size_t>(w2.dim(1)), 0.0);
        nn::linear_backward(trace.act1.data(), w2, g2.data(), g1.data(),
                            grad_slot(grads, p + ".fc2.w", w2.shape()),
                            grad_slot(grads, p + ".fc2.b", params.at(p + ".fc2.b").shape()));
    } else if (fc2_train) {
        nn::linear_backward(trace.act1.data(), w2, g2.data(), nullptr,
                            grad_slot(grads, p + ".fc2.w", w2.shape()),
                            grad_slot(grads, p + ".fc2.b", params.at(p + ".fc2.b").shape()));
    } else if (need_g1) {
        // frozen fc2 still propagates the gradient downstream
        g1.assign(static_cast<size_t>(w2.dim(1)), 0.0);
        for (int o = 0; o < w2.dim(0); ++o) {
            double g = g2[static_cast<size_t>(o)];
            if (g == 0.0) continue;
            const double* row = w2.data() + static_cast<size_t>(o) * w2.dim(1);
            for (int i = 0; i < w2.dim(1); ++i) g1[static_cast<size_t>(i)] += g * row[i];
        }
    }
    if (!need_g1) return;

    for (size_t i = 0; i < g1.size(); ++i)
        if (trace.act1[i] <= 0.0) g1[i] = 0.0;

    if (fc1_train && grad_flat) {
        grad_flat->assign(trace.flat.size(), 0.0);
        nn::linear_backward(trace.flat.data(), w1, g1.data(), grad_flat->data(),
                            grad_slot(grads, p + ".fc1.w", w1.shape()),
                            grad_slot(grads, p + ".fc1.b", params.at(p + ".fc1.b").shape()));
    } else if (fc1_train) {
        nn::linear_backward(trace.flat.data(), w1, g1.data(), nullptr,
                            grad_slot(grads, p + ".fc1.w", w1.shape()),
                            grad_slot(grads, p + ".fc1.b", params.at(p + ".fc1.b").shape()));
    } else if (grad_flat) {
        grad_flat->assign(trace.flat.size(), 0.0);
        for (int o = 0; o < w1.dim(0); ++o) {
            double g = g1[static_cast<size_t>(o)];
            if (g == 0.0) continue;
            const double* row = w1.data() + static_cast<size_t>(o) * w1.dim(1);
            for (int i = 0; i < w1.dim(1); ++i) (*grad_flat)[static_cast<size_t>(i)] += g * row[i];
        }
    }
}

void classify_backward(const std::vector<double>& f, Branch head, const ParameterStore& params,
                       const DetectorConfig& cfg, const std::vector<double>& grad_logits,
                       GradientMap& grads, std::vector<double>* grad_f) {
    const std::string p = head_prefix(head);
    const Tensor& w = params.at(p + ".w");
    const int rows = w.dim(0), d = w.dim(1);
    const bool w_train = params.trainable(p + ".w");

    if (grad_f) grad_f->assign(static_cast<size_t>(d), 0.0);

    if (cfg.classifier == ClassifierMode::kLinear) {
        if (w_train) {
            nn::linear_backward(f.data(), w, grad_logits.data(), grad_f ? grad_f->data() : nullptr,
                                grad_slot(grads, p + ".w", w.shape()),
                                grad_slot(grads, p + ".b", params.at(p + ".b").shape()));
        } else if (grad_f) {
            for (int j = 0; j < rows; ++j) {
                double g = grad_logits[static_cast<size_t>(j)];
                if (g == 0.0) continue;
                const double* wj = w.data() + static_cast<size_t>(j) * d;
                for (int i = 0; i < d; ++i) (*grad_f)[static_cast<size_t>(i)] += g * wj[i];
            }
        }
        return;
    }

    // cosine head: logit_j = s * (w_j . f) / (|w_j| |f| + eps), no bias
    double nf2 = 0.0;
    for (double v : f) nf2 += v * v;
    double nf = std::sqrt(nf2);
    const double s = cfg.cosine_scale, eps = cfg.cosine_eps;
    Tensor* gw = w_train ? &grad_slot(grads, p + ".w", w.shape()) : nullptr;

    for (int j = 0; j < rows; ++j) {
        double g = grad_logits[static_cast<size_t>(j)];
        if (g == 0.0) continue;
        const double* wj = w.data() + static_cast<size_t>(j) * d;
        double u = 0.0, nw2 = 0.0;
        for (int i = 0; i < d; ++i) {
            u += wj[i] * f[static_cast<size_t>(i)];
            nw2 += wj[i] * wj[i];
        }
        double nw = std::sqrt(nw2);
        double D = nw * nf + eps;
        double gD = g * s;

        if (grad_f && nf > 1e-12) {
            double coef = gD * u * nw / (nf * D * D);
            for (int i = 0; i < d; ++i)
                (*grad_f)[static_cast<size_t>(i)] += gD * wj[i] / D - coef * f[static_cast<size_t>(i)];
        }
        if (gw && nw > 1e-12) {
            double coef = gD * u * nf / (nw * D * D);
            double* gwj = gw->data() + static_cast<size_t>(j) * d;
            for (int i = 0; i < d; ++i)
                gwj[i] += gD * f[static_cast<size_t>(i)] / D - coef * wj[i];
        }
    }
}

void regress_backward(const std::vector<double>& f, const ParameterStore& params,
                      const std::vector<double>& grad_raw, GradientMap& grads,
                      std::vector<double>* grad_f) {
    const Tensor& w = params.at("reg.w");
    if (grad_f) grad_f->assign(f.size(), 0.0);
    if (params.trainable("reg.w")) {
        nn::linear_backward(f.data(), w, grad_raw.data(), grad_f ? grad_f->data() : nullptr,
                            grad_slot(grads, "reg.w", w.shape()),
                            grad_slot(grads, "reg.b", params.at("reg.b").shape()));
    } else if (grad_f) {
        for (int o = 0; o < w.dim(0); ++o) {
            double g = grad_raw[static_cast<size_t>(o)];
            if (g == 0.0) continue;
            const double* row = w.data() + static_cast<size_t>(o) * w.dim(1);
            for (int i = 0; i < w.dim(1); ++i) (*grad_f)[static_cast<size_t>(i)] += g * row[i];
        }
    }
}

// ---- serialization ----

std::string detector_config_to_json(const DetectorConfig& cfg) {
    nlohmann::json j;
    j["canvas_h"] = cfg.canvas_h;
    j["canvas_w"] = cfg.canvas_w;
    j["backbone_channels"] = cfg.backbone_channels;
    j["anchor_scales"] = cfg.anchor_scales;
    j["anchor_ratios"] = cfg.anchor_ratios;
    j["roi_pool_size"] = cfg.roi_pool_size;
    j["roi_feature_dim"] = cfg.roi_feature_dim;
    j["classifier"] = classifier_mode_name(cfg.classifier);
    j["cosine_scale"] = cfg.cosine_scale;
    j["cosine_eps"] = cfg.cosine_eps;
    j["regressor"] = regressor_mode_name(cfg.regressor);
    j["pre_nms_topn"] = cfg.pre_nms_topn;
    j["post_nms_train"] = cfg.post_nms_train;
    j["post_nms_eval"] = cfg.post_nms_eval;
    j["proposal_nms_iou"] = cfg.proposal_nms_iou;
    j["proposal_min_size"] = cfg.proposal_min_size;
    j["detection_nms_iou"] = cfg.detection_nms_iou;
    j["score_threshold"] = cfg.score_threshold;
    j["max_detections"] = cfg.max_detections;
    j["num_base"] = cfg.num_base;
    j["num_novel"] = cfg.num_novel;
    return j.dump(2);
}

DetectorConfig detector_config_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("detector config parse failure: ") + e.what());
    }
    DetectorConfig cfg;
    try {
        cfg.canvas_h = j.value("canvas_h", cfg.canvas_h);
        cfg.canvas_w = j.value("canvas_w", cfg.canvas_w);
        cfg.backbone_channels = j.value("backbone_channels", cfg.backbone_channels);
        cfg.anchor_scales = j.value("anchor_scales", cfg.anchor_scales);
        cfg.anchor_ratios = j.value("anchor_ratios", cfg.anchor_ratios);
        cfg.roi_pool_size = j.value("roi_pool_size", cfg.roi_pool_size);
        cfg.roi_feature_dim = j.value("roi_feature_dim", cfg.roi_feature_dim);
        cfg.classifier = parse_classifier_mode(
            j.value("classifier", std::string(classifier_mode_name(cfg.classifier))));
        cfg.cosine_scale = j.value("cosine_scale", cfg.cosine_scale);
        cfg.cosine_eps = j.value("cosine_eps", cfg.cosine_eps);
        cfg.regressor = parse_regressor_mode(
            j.value("regressor", std::string(regressor_mode_name(cfg.regressor))));
        cfg.pre_nms_topn = j.value("pre_nms_topn", cfg.pre_nms_topn);
        cfg.post_nms_train = j.value("post_nms_train", cfg.post_nms_train);
        cfg.post_nms_eval = j.value("post_nms_eval", cfg.post_nms_eval);
        cfg.proposal_nms_iou = j.value("proposal_nms_iou", cfg.proposal_nms_iou);
        cfg.proposal_min_size = j.value("proposal_min_size", cfg.proposal_min_size);
        cfg.detection_nms_iou = j.value("detection_nms_iou", cfg.detection_nms_iou);
        cfg.score_threshold = j.value("score_threshold", cfg.score_threshold);
        cfg.max_detections = j.value("max_detections", cfg.max_detections);
        cfg.num_base = j.value("num_base", cfg.num_base);
        cfg.num_novel = j.value("num_novel", cfg.num_novel);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("detector config field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string config_digest(const DetectorConfig& cfg) {
    std::string text = detector_config_to_json(cfg);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace incdet
