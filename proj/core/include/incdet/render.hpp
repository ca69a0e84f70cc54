#pragma once

#include <string>
#include <vector>

#include "incdet/experiment.hpp"
#include "incdet/inference.hpp"
#include "incdet/synthdata.hpp"

namespace incdet {

// Minimal RGB8 canvas with direct pixel access.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<unsigned char> rgb;  // HWC, 3 bytes per pixel

    Raster(int w, int h, unsigned char fill = 0)
        : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, fill) {}

    void set(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        size_t i = (static_cast<size_t>(y) * width + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }
};

// Deterministic PNG encoder (8-bit RGB, one zlib stream, filter 0 rows).
void write_png(const Raster& img, const std::string& path);
std::vector<unsigned char> encode_png(const Raster& img);

// 5x7 bitmap text; uppercases letters, unknown glyphs render as blanks.
void draw_text(Raster& img, int x, int y, const std::string& text, unsigned char r,
               unsigned char g, unsigned char b);
void draw_rect_outline(Raster& img, int x0, int y0, int x1, int y1, int thickness,
                       unsigned char r, unsigned char g, unsigned char b);

// Upscaled scene with detection overlays: cool-toned boxes for base classes,
// warm-toned for novel, each labeled with class name and score.
void render_detections(const AnnotatedImage& image, const std::vector<Detection>& detections,
                       const ClassVocabulary& vocab, const std::string& path,
                       double score_threshold = 0.5, int scale = 4);

// ---- deterministic SVG plots (byte-identical for identical inputs) ----
std::string plot_loss_curves_svg(const std::vector<LossBreakdown>& log);
std::string plot_finetune_loss_svg(const std::vector<double>& losses);
std::string plot_ap_vs_k_svg(const std::vector<std::pair<int, EvalReport>>& by_k);
std::string plot_ablation_table_svg(const AblationResult& table);

void write_text_file(const std::string& text, const std::string& path);

}  // namespace incdet
