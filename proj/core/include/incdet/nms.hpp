#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "incdet/box.hpp"
#include "incdet/errors.hpp"

namespace incdet {

// Greedy non-maximum suppression. Returns kept indices into `boxes`, ordered
// by descending score; a candidate is suppressed when its IoU with an
// already-kept box exceeds `iou_threshold`. Ties break by score, then by the
// canonical box ordering, then by lower original index, so the kept set does
// not depend on input order.
inline std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                            double iou_threshold) {
    if (boxes.size() != scores.size()) throw ShapeError("nms: boxes/scores length mismatch");
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        const Box& ba = boxes[static_cast<size_t>(a)];
        const Box& bb = boxes[static_cast<size_t>(b)];
        if (!(ba == bb)) return box_less(ba, bb);
        return a < b;
    });
    std::vector<int> kept;
    for (int idx : order) {
        bool suppressed = false;
        for (int k : kept) {
            if (iou(boxes[static_cast<size_t>(idx)], boxes[static_cast<size_t>(k)]) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

}  // namespace incdet
