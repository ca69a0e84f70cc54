#include <benchmark/benchmark.h>

#include <vector>

#include "incdet/detector.hpp"
#include "incdet/evalmetrics.hpp"
#include "incdet/nms.hpp"
#include "incdet/rng.hpp"
#include "incdet/synthdata.hpp"

namespace {

using namespace incdet;

const DetectorConfig& cfg() {
    static const DetectorConfig c;
    return c;
}

const ClassVocabulary& vocab() {
    static const ClassVocabulary v = DatasetConfig{}.vocabulary();
    return v;
}

const AnnotatedImage& scene() {
    static const AnnotatedImage img =
        generate_scene(42, vocab(), cfg().canvas_h, cfg().canvas_w, vocab().base_indices(), 3);
    return img;
}

const ParameterStore& params() {
    static const ParameterStore store = init_parameters(cfg(), 7);
    return store;
}

void bm_scene_generation(benchmark::State& state) {
    uint64_t seed = 1;
    for (auto _ : state) {
        AnnotatedImage img =
            generate_scene(seed++, vocab(), cfg().canvas_h, cfg().canvas_w, vocab().base_indices(), 3);
        benchmark::DoNotOptimize(img.pixels.data());
    }
}
BENCHMARK(bm_scene_generation);

void bm_backbone_forward(benchmark::State& state) {
    Tensor image = image_to_tensor(scene());
    for (auto _ : state) {
        Tensor f = backbone_forward(image, params(), cfg());
        benchmark::DoNotOptimize(f.data());
    }
}
BENCHMARK(bm_backbone_forward);

void bm_proposals(benchmark::State& state) {
    Tensor z = backbone_forward(image_to_tensor(scene()), params(), cfg());
    std::vector<Box> anchors = generate_anchors(cfg());
    for (auto _ : state) {
        auto props = rpn_forward(z, params(), anchors, cfg(), RunMode::kEval);
        benchmark::DoNotOptimize(props.data());
    }
}
BENCHMARK(bm_proposals);

void bm_nms_256(benchmark::State& state) {
    Rng rng(3);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < 256; ++i) {
        double x = rng.uniform() * 48.0, y = rng.uniform() * 48.0;
        boxes.push_back({x, y, x + 8.0 + rng.uniform() * 8.0, y + 8.0 + rng.uniform() * 8.0});
        scores.push_back(rng.uniform());
    }
    for (auto _ : state) {
        auto kept = nms(boxes, scores, 0.5);
        benchmark::DoNotOptimize(kept.data());
    }
}
BENCHMARK(bm_nms_256);

void bm_average_precision(benchmark::State& state) {
    Rng rng(9);
    std::vector<int> labels(2048);
    for (auto& l : labels) l = rng.uniform() < 0.4 ? 1 : 0;
    for (auto _ : state) {
        double ap = average_precision(labels, 900);
        benchmark::DoNotOptimize(ap);
    }
}
BENCHMARK(bm_average_precision);

}  // namespace

BENCHMARK_MAIN();
