#include "incdet/render.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "incdet/errors.hpp"

namespace incdet {

namespace {

// ---- PNG plumbing ----

void put_u32_be(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>(v & 0xFF));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& data) {
    put_u32_be(out, static_cast<uint32_t>(data.size()));
    std::vector<unsigned char> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    uLong crc = crc32(0L, body.data(), static_cast<uInt>(body.size()));
    put_u32_be(out, static_cast<uint32_t>(crc));
}

// ---- 5x7 bitmap font (bit 4 = leftmost column) ----

const std::map<char, std::array<unsigned char, 7>>& font_table() {
    static const std::map<char, std::array<unsigned char, 7>> table = {
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {'%', {0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13}},
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F}},
        {'3', {0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
        {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
        {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E}},
        {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
        {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
        {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
        {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
        {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    };
    return table;
}

unsigned char to_byte(double v) {
    double s = std::max(0.0, std::min(1.0, v));
    return static_cast<unsigned char>(std::lround(s * 255.0));
}

std::string fmt(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

// shared SVG scaffolding
std::string svg_open(int w, int h) {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
      << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"#ffffff\"/>\n";
    return s.str();
}

void svg_text(std::ostringstream& s, double x, double y, const std::string& text,
              const std::string& fill = "#333333", int size = 12,
              const std::string& anchor = "start") {
    s << "<text x=\"" << fmt(x, 1) << "\" y=\"" << fmt(y, 1) << "\" font-family=\"monospace\" "
      << "font-size=\"" << size << "\" fill=\"" << fill << "\" text-anchor=\"" << anchor << "\">"
      << text << "</text>\n";
}

void svg_line(std::ostringstream& s, double x1, double y1, double x2, double y2,
              const std::string& stroke, double width = 1.0) {
    s << "<line x1=\"" << fmt(x1, 1) << "\" y1=\"" << fmt(y1, 1) << "\" x2=\"" << fmt(x2, 1)
      << "\" y2=\"" << fmt(y2, 1) << "\" stroke=\"" << stroke << "\" stroke-width=\""
      << fmt(width, 1) << "\"/>\n";
}

void svg_polyline(std::ostringstream& s, const std::vector<std::pair<double, double>>& pts,
                  const std::string& stroke) {
    s << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < pts.size(); ++i) {
        if (i) s << " ";
        s << fmt(pts[i].first, 1) << "," << fmt(pts[i].second, 1);
    }
    s << "\"/>\n";
}

struct PlotFrame {
    double x0, y0, x1, y1;  // pixel corners of the data region (y0 = top)
    double xmin, xmax, ymin, ymax;
    double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0); }
    double py(double y) const { return y1 - (y - ymin) / (ymax - ymin) * (y1 - y0); }
};

void svg_axes(std::ostringstream& s, const PlotFrame& f, const std::string& xlabel,
              const std::string& ylabel) {
    svg_line(s, f.x0, f.y1, f.x1, f.y1, "#333333");
    svg_line(s, f.x0, f.y0, f.x0, f.y1, "#333333");
    for (int i = 0; i <= 4; ++i) {
        double ty = f.ymin + (f.ymax - f.ymin) * i / 4.0;
        double py = f.py(ty);
        svg_line(s, f.x0 - 4, py, f.x0, py, "#333333");
        svg_text(s, f.x0 - 8, py + 4, fmt(ty, 2), "#333333", 10, "end");
        double tx = f.xmin + (f.xmax - f.xmin) * i / 4.0;
        double px = f.px(tx);
        svg_line(s, px, f.y1, px, f.y1 + 4, "#333333");
        svg_text(s, px, f.y1 + 16, fmt(tx, 0), "#333333", 10, "middle");
    }
    svg_text(s, (f.x0 + f.x1) / 2, f.y1 + 32, xlabel, "#333333", 11, "middle");
    svg_text(s, f.x0, f.y0 - 8, ylabel, "#333333", 11);
}

}  // namespace

std::vector<unsigned char> encode_png(const Raster& img) {
    if (img.width <= 0 || img.height <= 0)
        throw ShapeError("raster must be non-empty to encode");
    const size_t row = static_cast<size_t>(img.width) * 3;
    std::vector<unsigned char> raw;
    raw.reserve((row + 1) * static_cast<size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        const unsigned char* p = img.rgb.data() + static_cast<size_t>(y) * row;
        raw.insert(raw.end(), p, p + row);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> z(bound);
    if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw IoError("zlib compression failed");
    z.resize(bound);

    std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<unsigned char> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(img.width));
    put_u32_be(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});
    return out;
}

void write_png(const Raster& img, const std::string& path) {
    std::vector<unsigned char> bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void draw_text(Raster& img, int x, int y, const std::string& text, unsigned char r,
               unsigned char g, unsigned char b) {
    const auto& table = font_table();
    int cx = x;
    for (char raw : text) {
        char c = raw;
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
        auto it = table.find(c);
        if (it != table.end()) {
            for (int gy = 0; gy < 7; ++gy)
                for (int gx = 0; gx < 5; ++gx)
                    if ((it->second[static_cast<size_t>(gy)] >> (4 - gx)) & 1)
                        img.set(cx + gx, y + gy, r, g, b);
        }
        cx += 6;
    }
}

void draw_rect_outline(Raster& img, int x0, int y0, int x1, int y1, int thickness,
                       unsigned char r, unsigned char g, unsigned char b) {
    for (int t = 0; t < thickness; ++t) {
        for (int x = x0; x <= x1; ++x) {
            img.set(x, y0 + t, r, g, b);
            img.set(x, y1 - t, r, g, b);
        }
        for (int y = y0; y <= y1; ++y) {
            img.set(x0 + t, y, r, g, b);
            img.set(x1 - t, y, r, g, b);
        }
    }
}

void render_detections(const AnnotatedImage& image, const std::vector<Detection>& detections,
                       const ClassVocabulary& vocab, const std::string& path,
                       double score_threshold, int scale) {
    if (scale < 1) throw ConfigError("render scale must be at least 1");
    if (image.pixels.empty()) throw ConfigError("image has no pixel data to render");
    Raster canvas(image.width * scale, image.height * scale);
    for (int y = 0; y < canvas.height; ++y)
        for (int x = 0; x < canvas.width; ++x) {
            int sy = y / scale, sx = x / scale;
            canvas.set(x, y, to_byte(image.px(sy, sx, 0)), to_byte(image.px(sy, sx, 1)),
                       to_byte(image.px(sy, sx, 2)));
        }
    for (const Detection& d : detections) {
        if (d.score < score_threshold) continue;
        const bool novel = vocab.is_novel(d.class_index);
        unsigned char r = novel ? 235 : 70;
        unsigned char g = novel ? 85 : 140;
        unsigned char b = novel ? 50 : 235;
        int x0 = static_cast<int>(std::lround(d.box.x1 * scale));
        int y0 = static_cast<int>(std::lround(d.box.y1 * scale));
        int x1 = static_cast<int>(std::lround(d.box.x2 * scale)) - 1;
        int y1 = static_cast<int>(std::lround(d.box.y2 * scale)) - 1;
        draw_rect_outline(canvas, x0, y0, x1, y1, 1, r, g, b);
        char label[64];
        std::snprintf(label, sizeof(label), "%s %.2f", vocab.name_of(d.class_index).c_str(),
                      d.score);
        int ty = y0 - 9;
        if (ty < 0) ty = y0 + 2;
        draw_text(canvas, std::max(0, x0), ty, label, r, g, b);
    }
    write_png(canvas, path);
}

// ---- SVG plots ----

std::string plot_loss_curves_svg(const std::vector<LossBreakdown>& log) {
    const int W = 720, H = 420;
    std::ostringstream s;
    s << svg_open(W, H);
    svg_text(s, W / 2.0, 24, "training loss", "#111111", 14, "middle");
    if (log.empty()) {
        svg_text(s, W / 2.0, H / 2.0, "no steps recorded", "#777777", 12, "middle");
        s << "</svg>\n";
        return s.str();
    }
    double ymax = 1e-9;
    for (const auto& lb : log) ymax = std::max(ymax, lb.total());
    PlotFrame f{64, 48, W - 24.0, H - 56.0, 0, std::max(1.0, double(log.size() - 1)), 0, ymax};
    svg_axes(s, f, "step", "loss");
    struct Series {
        const char* name;
        const char* color;
        double LossBreakdown::* field;
    };
    const Series series[] = {{"rpn", "#4472c4", &LossBreakdown::rpn},
                             {"cls", "#ed7d31", &LossBreakdown::cls},
                             {"loc", "#70ad47", &LossBreakdown::loc}};
    for (size_t si = 0; si < 3; ++si) {
        std::vector<std::pair<double, double>> pts;
        pts.reserve(log.size());
        for (size_t i = 0; i < log.size(); ++i)
            pts.emplace_back(f.px(double(i)), f.py(log[i].*series[si].field));
        svg_polyline(s, pts, series[si].color);
        svg_text(s, W - 130.0, 52.0 + 16.0 * double(si), series[si].name, series[si].color, 11);
    }
    std::vector<std::pair<double, double>> tot;
    tot.reserve(log.size());
    for (size_t i = 0; i < log.size(); ++i) tot.emplace_back(f.px(double(i)), f.py(log[i].total()));
    svg_polyline(s, tot, "#111111");
    svg_text(s, W - 130.0, 52.0 + 16.0 * 3, "total", "#111111", 11);
    s << "</svg>\n";
    return s.str();
}

std::string plot_finetune_loss_svg(const std::vector<double>& losses) {
    const int W = 720, H = 420;
    std::ostringstream s;
    s << svg_open(W, H);
    svg_text(s, W / 2.0, 24, "fine-tune classification loss", "#111111", 14, "middle");
    if (losses.empty()) {
        svg_text(s, W / 2.0, H / 2.0, "no steps recorded", "#777777", 12, "middle");
        s << "</svg>\n";
        return s.str();
    }
    double ymax = 1e-9;
    for (double v : losses) ymax = std::max(ymax, v);
    PlotFrame f{64, 48, W - 24.0, H - 56.0, 0, std::max(1.0, double(losses.size() - 1)), 0, ymax};
    svg_axes(s, f, "step", "loss");
    std::vector<std::pair<double, double>> pts;
    pts.reserve(losses.size());
    for (size_t i = 0; i < losses.size(); ++i) pts.emplace_back(f.px(double(i)), f.py(losses[i]));
    svg_polyline(s, pts, "#4472c4");
    s << "</svg>\n";
    return s.str();
}

std::string plot_ap_vs_k_svg(const std::vector<std::pair<int, EvalReport>>& by_k) {
    const int W = 720, H = 420;
    std::ostringstream s;
    s << svg_open(W, H);
    svg_text(s, W / 2.0, 24, "AP by shot count", "#111111", 14, "middle");
    if (by_k.empty()) {
        svg_text(s, W / 2.0, H / 2.0, "no reports", "#777777", 12, "middle");
        s << "</svg>\n";
        return s.str();
    }
    struct Bar {
        const char* name;
        const char* color;
    };
    const Bar bars[] = {{"bAP", "#4472c4"}, {"nAP", "#ed7d31"}, {"hAP", "#70ad47"}};
    PlotFrame f{64, 48, W - 24.0, H - 56.0, 0, double(by_k.size()), 0, 100};
    svg_axes(s, f, "K", "AP x100");
    const double group_w = (f.x1 - f.x0) / double(by_k.size());
    const double bar_w = group_w / 4.5;
    for (size_t gi = 0; gi < by_k.size(); ++gi) {
        const EvalReport& r = by_k[gi].second;
        const double vals[3] = {r.bap.value_or(0) * 100, r.nap.value_or(0) * 100,
                                r.hap.value_or(0) * 100};
        for (int bi = 0; bi < 3; ++bi) {
            double x = f.x0 + group_w * double(gi) + bar_w * (0.5 + double(bi));
            double y = f.py(vals[bi]);
            s << "<rect x=\"" << fmt(x, 1) << "\" y=\"" << fmt(y, 1) << "\" width=\""
              << fmt(bar_w * 0.9, 1) << "\" height=\"" << fmt(f.y1 - y, 1) << "\" fill=\""
              << bars[bi].color << "\"/>\n";
            svg_text(s, x + bar_w * 0.45, y - 4, fmt(vals[bi], 1), "#333333", 9, "middle");
        }
        svg_text(s, f.x0 + group_w * (double(gi) + 0.5), f.y1 + 30,
                 "K=" + std::to_string(by_k[gi].first), "#111111", 11, "middle");
    }
    for (int bi = 0; bi < 3; ++bi)
        svg_text(s, W - 130.0, 52.0 + 16.0 * bi, bars[bi].name, bars[bi].color, 11);
    s << "</svg>\n";
    return s.str();
}

std::string plot_ablation_table_svg(const AblationResult& table) {
    const int cell_w = 86, cell_h = 30, left = 280, top = 64;
    const int W = left + cell_w * std::max<int>(1, int(table.shots.size())) + 24;
    const int H = top + cell_h * std::max<int>(1, int(table.rows.size())) + 24;
    std::ostringstream s;
    s << svg_open(W, H);
    svg_text(s, W / 2.0, 24, "mean novel AP x100 by configuration", "#111111", 14, "middle");
    double max_nap = 1e-9;
    for (const auto& c : table.cells) max_nap = std::max(max_nap, c.mean_nap);
    for (size_t si = 0; si < table.shots.size(); ++si)
        svg_text(s, left + cell_w * (double(si) + 0.5), top - 10,
                 "K=" + std::to_string(table.shots[si]), "#111111", 11, "middle");
    for (size_t ri = 0; ri < table.rows.size(); ++ri) {
        const AblationRow& row = table.rows[ri];
        std::string label = std::string(freeze_policy_name(row.policy)) + " / " +
                            classifier_mode_name(row.classifier) + " / " +
                            regressor_mode_name(row.regressor);
        svg_text(s, left - 10.0, top + cell_h * (double(ri) + 0.65), label, "#111111", 11, "end");
        for (size_t si = 0; si < table.shots.size(); ++si) {
            size_t idx = ri * table.shots.size() + si;
            if (idx >= table.cells.size()) continue;
            double v = table.cells[idx].mean_nap;
            int shade = 255 - static_cast<int>(std::lround(150.0 * v / max_nap));
            double x = left + cell_w * double(si);
            double y = top + cell_h * double(ri);
            s << "<rect x=\"" << fmt(x, 1) << "\" y=\"" << fmt(y, 1) << "\" width=\"" << cell_w - 2
              << "\" height=\"" << cell_h - 2 << "\" fill=\"rgb(" << shade << "," << shade
              << ",255)\" stroke=\"#cccccc\"/>\n";
            svg_text(s, x + cell_w / 2.0 - 1, y + cell_h / 2.0 + 4, fmt(v * 100.0, 1), "#111111",
                     11, "middle");
        }
    }
    if (!table.directional_status.empty() && table.directional_status != "n/a")
        svg_text(s, left - 10.0, H - 8.0,
                 "fc2 vs none at K=" + std::to_string(table.directional_k) + ": " +
                     table.directional_status,
                 "#111111", 11, "end");
    s << "</svg>\n";
    return s.str();
}

void write_text_file(const std::string& text, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << text;
}

}  // namespace incdet
