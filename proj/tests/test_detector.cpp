#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <set>

#include "doctest.h"
#include "incdet/detector.hpp"
#include "incdet/errors.hpp"
#include "incdet/nn.hpp"
#include "incdet/rng.hpp"
#include "incdet/synthdata.hpp"

using namespace incdet;

namespace {

DetectorConfig tiny_config() {
    DetectorConfig cfg;
    cfg.canvas_h = 32;
    cfg.canvas_w = 32;
    cfg.backbone_channels = {4, 6, 8, 8};
    cfg.anchor_scales = {8.0, 14.0};
    cfg.anchor_ratios = {1.0};
    cfg.roi_pool_size = 2;
    cfg.roi_feature_dim = 16;
    cfg.num_base = 3;
    cfg.num_novel = 2;
    cfg.validate();
    return cfg;
}

std::vector<double> random_vec(int n, uint64_t seed) {
    Rng r(seed);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = r.normal(0.0, 1.0);
    return v;
}

// |a - n| <= tol * max(1, |a|, |n|)
bool close_rel(double a, double n, double tol) {
    return std::abs(a - n) <= tol * std::max({1.0, std::abs(a), std::abs(n)});
}

}  // namespace

TEST_CASE("config validation accepts defaults and rejects bad geometry") {
    DetectorConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.canvas_h = 63;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DetectorConfig{};
    cfg.backbone_channels = {8, 8};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DetectorConfig{};
    cfg.roi_feature_dim = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DetectorConfig{};
    cfg.score_threshold = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("derived dimensions follow the stride-8 layout") {
    DetectorConfig cfg;
    CHECK(cfg.stride() == 8);
    CHECK(cfg.feature_h() == 8);
    CHECK(cfg.feature_w() == 8);
    CHECK(cfg.feature_channels() == 48);
    CHECK(cfg.anchors_per_cell() == 6);
    CHECK(cfg.roi_flat_dim() == 4 * 4 * 48);
    CHECK(cfg.base_ways() == 7);
    CHECK(cfg.regressor_width() == 4);
    cfg.regressor = RegressorMode::kSpecific;
    CHECK(cfg.regressor_width() == 28);
}

TEST_CASE("fresh parameter stores are deterministic and stage-tagged") {
    DetectorConfig cfg = tiny_config();
    ParameterStore a = init_parameters(cfg, 5);
    ParameterStore b = init_parameters(cfg, 5);
    CHECK(a.bit_equal(b));
    ParameterStore c = init_parameters(cfg, 6);
    CHECK(!a.bit_equal(c));
    CHECK(a.stage() == Stage::kBase);
    CHECK_NOTHROW(a.validate());
    // no novel-branch tensors exist yet
    for (const auto& name : a.names()) {
        CHECK(name.find("novel") == std::string::npos);
        CHECK(a.at(name).all_finite());
    }
}

TEST_CASE("per-tensor init streams are independent of name enumeration order") {
    // initializing with the same seed must give every tensor the same values
    // regardless of other tensors' sizes: check a weight against a fresh
    // store built from a config that differs elsewhere
    DetectorConfig cfg = tiny_config();
    ParameterStore a = init_parameters(cfg, 42);
    DetectorConfig cfg2 = cfg;
    cfg2.anchor_scales = {8.0, 14.0, 20.0};  // grows the RPN heads only
    ParameterStore b = init_parameters(cfg2, 42);
    CHECK(a.at("backbone.conv1.w").bit_equal(b.at("backbone.conv1.w")));
    CHECK(a.at("roi.base.fc1.w").bit_equal(b.at("roi.base.fc1.w")));
    CHECK(a.at("cls.base.w").bit_equal(b.at("cls.base.w")));
}

TEST_CASE("classifier bias tensors exist in both scoring modes") {
    DetectorConfig cfg = tiny_config();
    cfg.classifier = ClassifierMode::kCosine;
    ParameterStore store = init_parameters(cfg, 1);
    CHECK_NOTHROW(store.at("cls.base.b"));
    CHECK(store.at("cls.base.b").size() == cfg.base_ways());
}

TEST_CASE("anchor grid covers every cell with every shape") {
    DetectorConfig cfg = tiny_config();
    auto anchors = generate_anchors(cfg);
    const int hf = cfg.feature_h(), wf = cfg.feature_w(), a = cfg.anchors_per_cell();
    REQUIRE(static_cast<int>(anchors.size()) == hf * wf * a);
    // first anchor: cell (0,0), scale 8, ratio 1 -> 8x8 centered at (4,4)
    CHECK(anchors[0].cx() == doctest::Approx(4.0));
    CHECK(anchors[0].cy() == doctest::Approx(4.0));
    CHECK(anchors[0].width() == doctest::Approx(8.0));
    CHECK(anchors[0].height() == doctest::Approx(8.0));
    // second anchor in the same cell uses the next scale
    CHECK(anchors[1].width() == doctest::Approx(14.0));
    // anchors advance along x first
    CHECK(anchors[static_cast<size_t>(a)].cx() == doctest::Approx(12.0));
    CHECK(anchors[static_cast<size_t>(a)].cy() == doctest::Approx(4.0));
}

TEST_CASE("anchor aspect ratios scale height up and width down") {
    DetectorConfig cfg;
    cfg.anchor_scales = {20.0};
    cfg.anchor_ratios = {2.0};
    auto anchors = generate_anchors(cfg);
    // h = s * sqrt(r), w = s / sqrt(r) keeps the area at s^2
    CHECK(anchors[0].height() == doctest::Approx(20.0 * std::sqrt(2.0)));
    CHECK(anchors[0].width() == doctest::Approx(20.0 / std::sqrt(2.0)));
    CHECK(anchors[0].height() * anchors[0].width() == doctest::Approx(400.0));
}

TEST_CASE("backbone output is finite with the documented shape") {
    DetectorConfig cfg = tiny_config();
    ParameterStore store = init_parameters(cfg, 3);
    auto vocab = ClassVocabulary({"a", "b", "c"}, {"x", "y"});
    auto img = generate_scene(1, vocab, 32, 32, {0, 1, 2}, 2);
    Tensor z = backbone_forward(image_to_tensor(img), store, cfg);
    REQUIRE(z.shape() == std::vector<int>{8, 4, 4});
    CHECK(z.all_finite());

    BackboneTrace trace;
    Tensor z2 = backbone_forward(image_to_tensor(img), store, cfg, &trace);
    CHECK(z.bit_equal(z2));
    CHECK(trace.act1.shape() == std::vector<int>{4, 32, 32});
    CHECK(trace.pool1.shape() == std::vector<int>{4, 16, 16});
    CHECK(trace.act4.bit_equal(z));
}

TEST_CASE("proposals are clipped, sized, deterministic and capped") {
    DetectorConfig cfg = tiny_config();
    ParameterStore store = init_parameters(cfg, 3);
    auto vocab = ClassVocabulary({"a", "b", "c"}, {"x", "y"});
    auto img = generate_scene(2, vocab, 32, 32, {0, 1, 2}, 2);
    Tensor z = backbone_forward(image_to_tensor(img), store, cfg);
    auto anchors = generate_anchors(cfg);

    auto train_props = rpn_forward(z, store, anchors, cfg, RunMode::kTrain);
    auto eval_props = rpn_forward(z, store, anchors, cfg, RunMode::kEval);
    CHECK(static_cast<int>(train_props.size()) <= cfg.post_nms_train);
    CHECK(static_cast<int>(eval_props.size()) <= cfg.post_nms_eval);
    CHECK(!eval_props.empty());
    for (const auto& p : eval_props) {
        CHECK(p.box.x1 >= 0.0);
        CHECK(p.box.y1 >= 0.0);
        CHECK(p.box.x2 <= cfg.canvas_w);
        CHECK(p.box.y2 <= cfg.canvas_h);
        CHECK(p.box.width() >= cfg.proposal_min_size);
        CHECK(p.box.height() >= cfg.proposal_min_size);
        CHECK(p.objectness > 0.0);
        CHECK(p.objectness < 1.0);
    }
    for (size_t i = 1; i < eval_props.size(); ++i)
        CHECK(eval_props[i - 1].objectness >= eval_props[i].objectness);
    // surviving proposals respect the overlap cap pairwise
    for (size_t i = 0; i < eval_props.size(); ++i)
        for (size_t j = i + 1; j < eval_props.size(); ++j)
            CHECK(iou(eval_props[i].box, eval_props[j].box) <= cfg.proposal_nms_iou + 1e-12);

    auto again = rpn_forward(z, store, anchors, cfg, RunMode::kEval);
    REQUIRE(again.size() == eval_props.size());
    for (size_t i = 0; i < again.size(); ++i) {
        CHECK(again[i].box == eval_props[i].box);
        CHECK(again[i].objectness == eval_props[i].objectness);
    }
}

TEST_CASE("roi pooling takes bin-wise maxima with argmax bookkeeping") {
    DetectorConfig cfg = tiny_config();
    Tensor z({1, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) z.at3(0, y, x) = y * 4 + x;

    RoiPoolTrace trace;
    Tensor pooled = roi_pool(z, Box{0, 0, 32, 32}, cfg, &trace);
    REQUIRE(pooled.shape() == std::vector<int>{1, 2, 2});
    CHECK(pooled.at3(0, 0, 0) == 5.0);
    CHECK(pooled.at3(0, 0, 1) == 7.0);
    CHECK(pooled.at3(0, 1, 0) == 13.0);
    CHECK(pooled.at3(0, 1, 1) == 15.0);
    REQUIRE(trace.argmax.size() == 4);
    CHECK(trace.argmax[0] == 5);
    CHECK(trace.argmax[1] == 7);
    CHECK(trace.argmax[2] == 13);
    CHECK(trace.argmax[3] == 15);
}

TEST_CASE("tiny rois still pool from at least one cell") {
    DetectorConfig cfg = tiny_config();
    Tensor z({1, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) z.at3(0, y, x) = y * 4 + x + 1;
    Tensor pooled = roi_pool(z, Box{1, 1, 3, 3}, cfg);  // sub-cell box
    REQUIRE(pooled.shape() == std::vector<int>{1, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(pooled.data()[i] == 1.0);
}

TEST_CASE("novel-branch features require a branched store") {
    DetectorConfig cfg = tiny_config();
    ParameterStore store = init_parameters(cfg, 3);
    Tensor pooled({cfg.feature_channels(), 2, 2});
    CHECK_THROWS_AS(roi_feature_forward(pooled, Branch::kNovel, store, cfg), StageError);
    CHECK_NOTHROW(roi_feature_forward(pooled, Branch::kBase, store, cfg));
}

TEST_CASE("joint prediction requires a branched store") {
    DetectorConfig cfg = tiny_config();
    ParameterStore store = init_parameters(cfg, 3);
    Tensor z({cfg.feature_channels(), cfg.feature_h(), cfg.feature_w()});
    std::vector<Proposal> props = {{Box{0, 0, 16, 16}, 0.5}};
    CHECK_THROWS_AS(joint_predict(z, props, store, cfg), StageError);
}

TEST_CASE("linear scoring matches a hand computation") {
    DetectorConfig cfg = tiny_config();
    ParameterStore store = init_parameters(cfg, 9);
    std::vector<double> f = random_vec(cfg.roi_feature_dim, 1);
    auto logits = classify(f, Branch::kBase, store, cfg);
    REQUIRE(static_cast<int>(logits.size()) == cfg.base_ways());
    const Tensor& w = store.at("cls.base.w");
    const Tensor& b = store.at("cls.base.b");
    for (int j = 0; j < cfg.base_ways(); ++j) {
        double expect = b.data()[j];
        for (int i = 0; i < cfg.roi_feature_dim; ++i) expect += w.at2(j, i) * f[static_cast<size_t>(i)];
        CHECK(logits[static_cast<size_t>(j)] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("cosine scoring is invariant to feature magnitude") {
    DetectorConfig cfg = tiny_config();
    cfg.classifier = ClassifierMode::kCosine;
    ParameterStore store = init_parameters(cfg, 9);
    std::vector<double> f = random_vec(cfg.roi_feature_dim, 2);
    auto base = classify(f, Branch::kBase, store, cfg);
    for (double alpha : {0.1, 10.0, 1000.0}) {
        std::vector<double> scaled = f;
        for (auto& x : scaled) x *= alpha;
        auto logits = classify(scaled, Branch::kBase, store, cfg);
        for (size_t j = 0; j < logits.size(); ++j)
            CHECK(std::abs(logits[j] - base[j]) < 1e-5);
    }
}

TEST_CASE("cosine logits are bounded by the scale") {
    DetectorConfig cfg = tiny_config();
    cfg.classifier = ClassifierMode::kCosine;
    ParameterStore store = init_parameters(cfg, 11);
    for (uint64_t s = 0; s < 50; ++s) {
        auto logits = classify(random_vec(cfg.roi_feature_dim, 100 + s), Branch::kBase, store, cfg);
        for (double l : logits) {
            CHECK(l <= cfg.cosine_scale + 1e-9);
            CHECK(l >= -cfg.cosine_scale - 1e-9);
        }
    }
}

TEST_CASE("cosine scoring of an all-zero feature yields all-zero logits") {
    DetectorConfig cfg = tiny_config();
    cfg.classifier = ClassifierMode::kCosine;
    ParameterStore store = init_parameters(cfg, 9);
    std::vector<double> zero(static_cast<size_t>(cfg.roi_feature_dim), 0.0);
    auto logits = classify(zero, Branch::kBase, store, cfg);
    for (double l : logits) CHECK(l == 0.0);
}

TEST_CASE("cosine scoring ignores the bias tensor") {
    DetectorConfig cfg = tiny_config();
    cfg.classifier = ClassifierMode::kCosine;
    ParameterStore store = init_parameters(cfg, 9);
    std::vector<double> f = random_vec(cfg.roi_feature_dim, 3);
    auto before = classify(f, Branch::kBase, store, cfg);
    for (int j = 0; j < cfg.base_ways(); ++j) store.at("cls.base.b").data()[j] = 1e6;
    auto after = classify(f, Branch::kBase, store, cfg);
    for (size_t j = 0; j < before.size(); ++j) CHECK(before[j] == after[j]);
}

TEST_CASE("agnostic regression ignores the class hint entirely") {
    DetectorConfig cfg = tiny_config();
    ParameterStore store = init_parameters(cfg, 21);
    for (uint64_t s = 0; s < 100; ++s) {
        std::vector<double> f = random_vec(cfg.roi_feature_dim, 500 + s);
        auto plain = regress_boxes(f, store, cfg);
        for (int hint = 0; hint < cfg.base_ways(); ++hint) {
            auto hinted = regress_boxes(f, store, cfg, hint);
            for (int i = 0; i < 4; ++i) {
                // bitwise identity, not approximate agreement
                CHECK(std::memcmp(&plain[static_cast<size_t>(i)], &hinted[static_cast<size_t>(i)],
                                  sizeof(double)) == 0);
            }
        }
    }
}

TEST_CASE("class-specific regression selects the hinted slice") {
    DetectorConfig cfg = tiny_config();
    cfg.regressor = RegressorMode::kSpecific;
    ParameterStore store = init_parameters(cfg, 21);
    std::vector<double> f = random_vec(cfg.roi_feature_dim, 7);
    auto raw = regress_raw(f, store);
    REQUIRE(static_cast<int>(raw.size()) == 4 * cfg.base_ways());
    for (int hint = 0; hint < cfg.base_ways(); ++hint) {
        auto d = regress_boxes(f, store, cfg, hint);
        for (int i = 0; i < 4; ++i)
            CHECK(d[static_cast<size_t>(i)] == raw[static_cast<size_t>(4 * hint + i)]);
    }
    CHECK_THROWS_AS(regress_boxes(f, store, cfg), std::invalid_argument);
    CHECK_THROWS_AS(regress_boxes(f, store, cfg, cfg.base_ways()), std::invalid_argument);
    CHECK_THROWS_AS(regress_boxes(f, store, cfg, -1), std::invalid_argument);
}

TEST_CASE("detector config survives a json round-trip") {
    DetectorConfig cfg = tiny_config();
    cfg.classifier = ClassifierMode::kCosine;
    cfg.regressor = RegressorMode::kSpecific;
    cfg.cosine_scale = 12.5;
    cfg.pre_nms_topn = 99;
    DetectorConfig back = detector_config_from_json_text(detector_config_to_json(cfg));
    CHECK(back.canvas_h == cfg.canvas_h);
    CHECK(back.backbone_channels == cfg.backbone_channels);
    CHECK(back.anchor_scales == cfg.anchor_scales);
    CHECK(back.classifier == ClassifierMode::kCosine);
    CHECK(back.regressor == RegressorMode::kSpecific);
    CHECK(back.cosine_scale == 12.5);
    CHECK(back.pre_nms_topn == 99);
    CHECK(config_digest(back) == config_digest(cfg));
}

TEST_CASE("config digests separate differing configurations") {
    DetectorConfig a = tiny_config();
    DetectorConfig b = a;
    CHECK(config_digest(a) == config_digest(b));
    b.cosine_scale = 21.0;
    CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("mode names parse back to themselves") {
    CHECK(parse_classifier_mode(classifier_mode_name(ClassifierMode::kCosine)) ==
          ClassifierMode::kCosine);
    CHECK(parse_regressor_mode(regressor_mode_name(RegressorMode::kSpecific)) ==
          RegressorMode::kSpecific);
    CHECK_THROWS_AS(parse_classifier_mode("nope"), ConfigError);
    CHECK_THROWS_AS(parse_regressor_mode("nope"), ConfigError);
}

// ---- numeric gradient checks on the differentiable pieces ----

namespace {

// numeric derivative of `loss()` wrt one scalar
template <typename F>
double central_diff(double& x, F loss, double h) {
    const double orig = x;
    x = orig + h;
    double up = loss();
    x = orig - h;
    double down = loss();
    x = orig;
    return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("dense layer gradients match central differences") {
    const int in = 7, out = 5;
    Rng r(3);
    Tensor w({out, in}), b({out});
    for (int i = 0; i < w.size(); ++i) w.data()[i] = r.normal(0, 0.5);
    for (int i = 0; i < out; ++i) b.data()[i] = r.normal(0, 0.5);
    std::vector<double> x = random_vec(in, 4), c = random_vec(out, 5);

    auto loss = [&] {
        std::vector<double> y(out);
        nn::linear_forward(x.data(), w, b, y.data());
        double l = 0;
        for (int i = 0; i < out; ++i) l += c[static_cast<size_t>(i)] * y[static_cast<size_t>(i)];
        return l;
    };
    Tensor gw({out, in}), gb({out});
    std::vector<double> gx(in, 0.0);
    nn::linear_backward(x.data(), w, c.data(), gx.data(), gw, gb);

    for (int i = 0; i < w.size(); ++i)
        CHECK(close_rel(gw.data()[i], central_diff(w.data()[i], loss, 1e-5), 1e-6));
    for (int i = 0; i < out; ++i)
        CHECK(close_rel(gb.data()[i], central_diff(b.data()[i], loss, 1e-5), 1e-6));
    for (int i = 0; i < in; ++i)
        CHECK(close_rel(gx[static_cast<size_t>(i)], central_diff(x[static_cast<size_t>(i)], loss, 1e-5), 1e-6));
}

TEST_CASE("3x3 convolution gradients match central differences") {
    const int ic = 2, oc = 3, H = 4, W = 5;
    Rng r(6);
    Tensor in({ic, H, W}), w({oc, ic, 3, 3}), b({oc}), cvec({oc, H, W});
    for (int i = 0; i < in.size(); ++i) in.data()[i] = r.normal(0, 1);
    for (int i = 0; i < w.size(); ++i) w.data()[i] = r.normal(0, 0.4);
    for (int i = 0; i < b.size(); ++i) b.data()[i] = r.normal(0, 0.4);
    for (int i = 0; i < cvec.size(); ++i) cvec.data()[i] = r.normal(0, 1);

    auto loss = [&] {
        Tensor out_t;
        nn::conv3x3_forward(in, w, b, out_t);
        double l = 0;
        for (int i = 0; i < out_t.size(); ++i) l += cvec.data()[i] * out_t.data()[i];
        return l;
    };
    Tensor gin({ic, H, W}), gw({oc, ic, 3, 3}), gb({oc});
    nn::conv3x3_backward(in, w, cvec, &gin, gw, gb);

    for (int i = 0; i < w.size(); ++i)
        CHECK(close_rel(gw.data()[i], central_diff(w.data()[i], loss, 1e-5), 1e-5));
    for (int i = 0; i < b.size(); ++i)
        CHECK(close_rel(gb.data()[i], central_diff(b.data()[i], loss, 1e-5), 1e-5));
    for (int i = 0; i < in.size(); ++i)
        CHECK(close_rel(gin.data()[i], central_diff(in.data()[i], loss, 1e-5), 1e-5));
}

TEST_CASE("1x1 convolution gradients match central differences") {
    const int ic = 3, oc = 2, H = 3, W = 4;
    Rng r(8);
    Tensor in({ic, H, W}), w({oc, ic}), b({oc}), cvec({oc, H, W});
    for (int i = 0; i < in.size(); ++i) in.data()[i] = r.normal(0, 1);
    for (int i = 0; i < w.size(); ++i) w.data()[i] = r.normal(0, 0.4);
    for (int i = 0; i < b.size(); ++i) b.data()[i] = r.normal(0, 0.4);
    for (int i = 0; i < cvec.size(); ++i) cvec.data()[i] = r.normal(0, 1);

    auto loss = [&] {
        Tensor out_t;
        nn::conv1x1_forward(in, w, b, out_t);
        double l = 0;
        for (int i = 0; i < out_t.size(); ++i) l += cvec.data()[i] * out_t.data()[i];
        return l;
    };
    Tensor gin({ic, H, W}), gw({oc, ic}), gb({oc});
    nn::conv1x1_backward(in, w, cvec, &gin, gw, gb);
    for (int i = 0; i < w.size(); ++i)
        CHECK(close_rel(gw.data()[i], central_diff(w.data()[i], loss, 1e-5), 1e-5));
    for (int i = 0; i < in.size(); ++i)
        CHECK(close_rel(gin.data()[i], central_diff(in.data()[i], loss, 1e-5), 1e-5));
}

TEST_CASE("max pooling routes gradient to the argmax cell only") {
    Tensor in({1, 4, 4});
    Rng r(12);
    for (int i = 0; i < in.size(); ++i) in.data()[i] = r.normal(0, 1);
    Tensor out;
    std::vector<int64_t> argmax;
    nn::maxpool2x2_forward(in, out, argmax);
    REQUIRE(out.shape() == std::vector<int>{1, 2, 2});

    Tensor gout({1, 2, 2});
    for (int i = 0; i < 4; ++i) gout.data()[i] = static_cast<double>(i + 1);
    Tensor gin(in.shape());
    nn::maxpool2x2_backward(gout, argmax, gin);
    double total = 0;
    int nonzero = 0;
    for (int i = 0; i < gin.size(); ++i) {
        total += gin.data()[i];
        nonzero += gin.data()[i] != 0.0;
    }
    CHECK(nonzero == 4);
    CHECK(total == doctest::Approx(10.0));
    for (int i = 0; i < 4; ++i) CHECK(gin.data()[argmax[static_cast<size_t>(i)]] == gout.data()[i]);
}

TEST_CASE("softmax is shift-invariant and sums to one") {
    std::vector<double> logits = {1e3, 1e3 + 1, 1e3 - 2};
    std::vector<double> p(3);
    nn::softmax(logits.data(), 3, p.data());
    double sum = p[0] + p[1] + p[2];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> shifted = {0, 1, -2}, q(3);
    nn::softmax(shifted.data(), 3, q.data());
    for (int i = 0; i < 3; ++i) CHECK(p[static_cast<size_t>(i)] == doctest::Approx(q[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("classifier-head gradients match central differences in both modes") {
    for (ClassifierMode mode : {ClassifierMode::kLinear, ClassifierMode::kCosine}) {
        CAPTURE(classifier_mode_name(mode));
        DetectorConfig cfg = tiny_config();
        cfg.classifier = mode;
        ParameterStore store = init_parameters(cfg, 31);
        std::vector<double> f = random_vec(cfg.roi_feature_dim, 77);
        std::vector<double> c = random_vec(cfg.base_ways(), 78);

        auto loss = [&] {
            auto logits = classify(f, Branch::kBase, store, cfg);
            double l = 0;
            for (size_t i = 0; i < logits.size(); ++i) l += c[i] * logits[i];
            return l;
        };

        GradientMap grads;
        std::vector<double> gf(f.size(), 0.0);
        classify_backward(f, Branch::kBase, store, cfg, c, grads, &gf);

        Tensor& w = store.at("cls.base.w");
        REQUIRE(grads.count("cls.base.w") == 1);
        for (int i = 0; i < w.size(); ++i)
            CHECK(close_rel(grads.at("cls.base.w").data()[i], central_diff(w.data()[i], loss, 1e-4),
                            1e-4));
        for (size_t i = 0; i < f.size(); ++i)
            CHECK(close_rel(gf[i], central_diff(f[i], loss, 1e-4), 1e-4));
        if (mode == ClassifierMode::kLinear) {
            REQUIRE(grads.count("cls.base.b") == 1);
            Tensor& b = store.at("cls.base.b");
            for (int i = 0; i < b.size(); ++i)
                CHECK(close_rel(grads.at("cls.base.b").data()[i],
                                central_diff(b.data()[i], loss, 1e-4), 1e-4));
        } else {
            // no bias participates in cosine scoring, so no gradient appears
            CHECK(grads.count("cls.base.b") == 0);
        }
    }
}

TEST_CASE("roi-head gradients match central differences") {
    DetectorConfig cfg = tiny_config();
    ParameterStore store = init_parameters(cfg, 41);
    Tensor pooled({cfg.feature_channels(), cfg.roi_pool_size, cfg.roi_pool_size});
    Rng r(42);
    for (int i = 0; i < pooled.size(); ++i) pooled.data()[i] = r.normal(0.5, 1.0);
    std::vector<double> c = random_vec(cfg.roi_feature_dim, 43);

    RoiHeadTrace trace;
    (void)roi_feature_forward(pooled, Branch::kBase, store, cfg, &trace);
    auto loss = [&] {
        auto f = roi_feature_forward(pooled, Branch::kBase, store, cfg);
        double l = 0;
        for (size_t i = 0; i < f.size(); ++i) l += c[i] * f[i];
        return l;
    };

    GradientMap grads;
    std::vector<double> grad_flat(trace.flat.size(), 0.0);
    roi_head_backward(trace, Branch::kBase, store, c, grads, &grad_flat);

    for (const char* name : {"roi.base.fc1.w", "roi.base.fc2.w", "roi.base.fc1.b", "roi.base.fc2.b"}) {
        REQUIRE(grads.count(name) == 1);
        Tensor& w = store.at(name);
        for (int i = 0; i < w.size(); ++i)
            CHECK(close_rel(grads.at(name).data()[i], central_diff(w.data()[i], loss, 1e-5), 1e-4));
    }
    // gradient wrt the flattened input feeds the pooling backward pass
    for (size_t i = 0; i < grad_flat.size(); ++i)
        CHECK(close_rel(grad_flat[i], central_diff(pooled.data()[static_cast<int>(i)], loss, 1e-5), 1e-4));
}

TEST_CASE("regressor gradients match central differences") {
    for (RegressorMode mode : {RegressorMode::kAgnostic, RegressorMode::kSpecific}) {
        CAPTURE(regressor_mode_name(mode));
        DetectorConfig cfg = tiny_config();
        cfg.regressor = mode;
        ParameterStore store = init_parameters(cfg, 51);
        std::vector<double> f = random_vec(cfg.roi_feature_dim, 52);
        std::vector<double> c = random_vec(cfg.regressor_width(), 53);

        auto loss = [&] {
            auto raw = regress_raw(f, store);
            double l = 0;
            for (size_t i = 0; i < raw.size(); ++i) l += c[i] * raw[i];
            return l;
        };
        GradientMap grads;
        std::vector<double> gf(f.size(), 0.0);
        regress_backward(f, store, c, grads, &gf);
        Tensor& w = store.at("reg.w");
        REQUIRE(grads.count("reg.w") == 1);
        for (int i = 0; i < w.size(); ++i)
            CHECK(close_rel(grads.at("reg.w").data()[i], central_diff(w.data()[i], loss, 1e-5), 1e-4));
        for (size_t i = 0; i < f.size(); ++i)
            CHECK(close_rel(gf[i], central_diff(f[i], loss, 1e-5), 1e-4));
    }
}

TEST_CASE("backward passes skip parameters flagged frozen") {
    DetectorConfig cfg = tiny_config();
    ParameterStore store = init_parameters(cfg, 61);
    store.set_trainable("cls.base.w", false);
    store.set_trainable("cls.base.b", false);
    std::vector<double> f = random_vec(cfg.roi_feature_dim, 62);
    std::vector<double> c = random_vec(cfg.base_ways(), 63);
    GradientMap grads;
    std::vector<double> gf(f.size(), 0.0);
    classify_backward(f, Branch::kBase, store, cfg, c, grads, &gf);
    CHECK(grads.count("cls.base.w") == 0);
    CHECK(grads.count("cls.base.b") == 0);
    // gradient wrt the feature still flows through the frozen layer
    double mag = 0;
    for (double g : gf) mag += std::abs(g);
    CHECK(mag > 0.0);
}
