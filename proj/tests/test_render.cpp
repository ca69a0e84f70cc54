#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "incdet/errors.hpp"
#include "incdet/evalmetrics.hpp"
#include "incdet/experiment.hpp"
#include "incdet/render.hpp"

using namespace incdet;

namespace {

std::string temp_path(const std::string& name) {
    return std::string("/tmp/incdet_render_") + name + "_" + std::to_string(::getpid());
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

uint32_t read_u32_be(const std::string& bytes, size_t at) {
    return (static_cast<uint32_t>(static_cast<unsigned char>(bytes[at])) << 24) |
           (static_cast<uint32_t>(static_cast<unsigned char>(bytes[at + 1])) << 16) |
           (static_cast<uint32_t>(static_cast<unsigned char>(bytes[at + 2])) << 8) |
           static_cast<uint32_t>(static_cast<unsigned char>(bytes[at + 3]));
}

}  // namespace

TEST_CASE("rasters clamp out-of-bounds writes instead of corrupting memory") {
    Raster r(8, 4);
    r.set(-5, 2, 255, 0, 0);
    r.set(8, 2, 255, 0, 0);
    r.set(3, 4, 255, 0, 0);
    for (unsigned char b : r.rgb) CHECK(b == 0);
    r.set(7, 3, 10, 20, 30);
    CHECK(r.rgb[(3 * 8 + 7) * 3 + 0] == 10);
    CHECK(r.rgb[(3 * 8 + 7) * 3 + 2] == 30);
}

TEST_CASE("encoded images are genuine fixed-size truecolor files") {
    Raster r(11, 7);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 11; ++x)
            r.set(x, y, static_cast<unsigned char>(x * 20), static_cast<unsigned char>(y * 30),
                  128);
    std::vector<unsigned char> raw = encode_png(r);
    std::string bytes(raw.begin(), raw.end());
    // signature, then IHDR length/type with the right geometry
    REQUIRE(bytes.size() > 33);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    for (int i = 0; i < 8; ++i)
        CHECK(static_cast<unsigned char>(bytes[i]) == sig[i]);
    CHECK(bytes.substr(12, 4) == "IHDR");
    CHECK(read_u32_be(bytes, 16) == 11);  // width
    CHECK(read_u32_be(bytes, 20) == 7);   // height
    CHECK(static_cast<unsigned char>(bytes[24]) == 8);  // bit depth
    CHECK(static_cast<unsigned char>(bytes[25]) == 2);  // truecolor
    CHECK(bytes.substr(bytes.size() - 8, 4) == "IEND");
    // deterministic encoding
    CHECK(encode_png(r) == raw);
}

TEST_CASE("detection overlays write a decodable file with upscaled geometry") {
    ClassVocabulary vocab({"circle", "square", "triangle"}, {"pentagon", "diamond"});
    AnnotatedImage img = generate_scene(3, vocab, 32, 32, vocab.base_indices(), 2);
    std::vector<Detection> dets = {
        {Box{4, 4, 16, 16}, 0, 0.93},
        {Box{18, 18, 30, 30}, 4, 0.71},
        {Box{1, 1, 10, 10}, 1, 0.2},  // below the rendering threshold
    };
    std::string path = temp_path("overlay.png");
    render_detections(img, dets, vocab, path, 0.5, 4);
    std::string bytes = slurp(path);
    CHECK(bytes.substr(12, 4) == "IHDR");
    CHECK(read_u32_be(bytes, 16) == 128);  // 32 x 4
    CHECK(read_u32_be(bytes, 20) == 128);
    std::remove(path.c_str());
}

TEST_CASE("loss curves render as deterministic standalone vector files") {
    std::vector<LossBreakdown> log;
    for (int i = 0; i < 50; ++i) {
        LossBreakdown l;
        l.rpn = 2.0 / (1 + i);
        l.cls = 1.5 / (1 + i);
        l.loc = 0.5 / (1 + i);
        log.push_back(l);
    }
    std::string svg = plot_loss_curves_svg(log);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);
    CHECK(svg.find("total") != std::string::npos);
    CHECK(plot_loss_curves_svg(log) == svg);

    std::string ft = plot_finetune_loss_svg({1.0, 0.5, 0.25, 0.12});
    CHECK(ft.find("<svg") != std::string::npos);
    CHECK(plot_finetune_loss_svg({1.0, 0.5, 0.25, 0.12}) == ft);
}

TEST_CASE("the shots curve plots one point per k") {
    EvalReport a, b;
    a.nap = 0.1;
    a.nap50 = 0.2;
    b.nap = 0.3;
    b.nap50 = 0.5;
    std::string svg = plot_ap_vs_k_svg({{1, a}, {10, b}});
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("<rect") != std::string::npos);  // one bar group per K
    CHECK(svg.find("K=1") != std::string::npos);
    CHECK(svg.find("K=10") != std::string::npos);
    CHECK(plot_ap_vs_k_svg({{1, a}, {10, b}}) == svg);
}

TEST_CASE("ablation tables render every row and column") {
    AblationResult r;
    r.shots = {1, 5};
    r.seeds = {1, 2};
    r.rows = {{FreezePolicy::kNone, RegressorMode::kAgnostic, ClassifierMode::kLinear},
              {FreezePolicy::kFc2, RegressorMode::kAgnostic, ClassifierMode::kCosine}};
    for (const auto& row : r.rows)
        for (int k : r.shots) {
            AblationCell c;
            c.row = row;
            c.k = k;
            c.nap_per_seed = {0.1, 0.2};
            c.mean_nap = 0.15;
            r.cells.push_back(c);
        }
    r.directional_k = 5;
    r.directional_status = "pass";
    std::string svg = plot_ablation_table_svg(r);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("none / linear / agnostic") != std::string::npos);
    CHECK(svg.find("fc2 / cosine / agnostic") != std::string::npos);
    CHECK(svg.find("K=1") != std::string::npos);
    CHECK(svg.find("K=5") != std::string::npos);
}

TEST_CASE("text files land on disk verbatim") {
    std::string path = temp_path("note.txt");
    write_text_file("alpha\nbeta\n", path);
    CHECK(slurp(path) == "alpha\nbeta\n");
    std::remove(path.c_str());
    CHECK_THROWS_AS(write_text_file("x", "/nonexistent-dir-xyz/file.txt"), IoError);
}
