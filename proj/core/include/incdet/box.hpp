#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace incdet {

// Axis-aligned box, (x1,y1) top-left inclusive, (x2,y2) exclusive edge, in
// continuous pixel coordinates.
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
    bool valid() const { return x1 < x2 && y1 < y2; }

    Box clipped(double w, double h) const {
        return {std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h),
                std::clamp(x2, 0.0, w), std::clamp(y2, 0.0, h)};
    }

    bool operator==(const Box& o) const {
        return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
    }
};

// Intersection over union. Degenerate (zero-area) boxes score 0 against
// anything.
inline double iou(const Box& a, const Box& b) {
    double aa = a.area(), ab = b.area();
    if (aa <= 0.0 || ab <= 0.0) return 0.0;
    double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    double inter = ix * iy;
    return inter / (aa + ab - inter);
}

// (dx,dy,dw,dh) parameterization of `target` relative to `anchor`:
// dx = (cx_t - cx_a) / w_a, dw = log(w_t / w_a), likewise for y/h.
inline std::array<double, 4> encode_delta(const Box& anchor, const Box& target) {
    double wa = anchor.width(), ha = anchor.height();
    return {(target.cx() - anchor.cx()) / wa, (target.cy() - anchor.cy()) / ha,
            std::log(target.width() / wa), std::log(target.height() / ha)};
}

// Inverse of encode_delta. dw/dh are clamped so exp stays bounded for wild
// untrained predictions.
inline Box decode_delta(const Box& anchor, const std::array<double, 4>& d) {
    constexpr double kMaxLogScale = 4.135166556742356;  // log(1000/16)
    double wa = anchor.width(), ha = anchor.height();
    double cx = anchor.cx() + d[0] * wa;
    double cy = anchor.cy() + d[1] * ha;
    double w = wa * std::exp(std::min(d[2], kMaxLogScale));
    double h = ha * std::exp(std::min(d[3], kMaxLogScale));
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// Canonical ordering used for deterministic tie-breaks.
inline bool box_less(const Box& a, const Box& b) {
    if (a.x1 != b.x1) return a.x1 < b.x1;
    if (a.y1 != b.y1) return a.y1 < b.y1;
    if (a.x2 != b.x2) return a.x2 < b.x2;
    return a.y2 < b.y2;
}

}  // namespace incdet
