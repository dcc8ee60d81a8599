#pragma once

// Normalized center/size boxes and plain (non-differentiable) box geometry.

#include "bare/common.hpp"

#include <algorithm>
#include <cmath>

namespace bare {

struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    double x1() const { return cx - w / 2; }
    double y1() const { return cy - h / 2; }
    double x2() const { return cx + w / 2; }
    double y2() const { return cy + h / 2; }

    static Box from_corners(double x1, double y1, double x2, double y2) {
        return Box{(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
    }

    bool valid() const { return w > 0 && h > 0; }
};

inline void require_valid(const Box& b, const char* what) {
    if (!b.valid())
        throw ValueError(std::string(what) + ": degenerate box (w=" + std::to_string(b.w) +
                         ", h=" + std::to_string(b.h) + ")");
}

inline double box_intersection(const Box& a, const Box& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    return std::max(iw, 0.0) * std::max(ih, 0.0);
}

inline double box_iou(const Box& a, const Box& b) {
    require_valid(a, "iou");
    require_valid(b, "iou");
    const double inter = box_intersection(a, b);
    const double uni = a.w * a.h + b.w * b.h - inter;
    return inter / uni;
}

// IoU minus the fraction of the smallest enclosing box not covered by the
// union; in (-1, 1].
inline double box_giou(const Box& a, const Box& b) {
    require_valid(a, "giou");
    require_valid(b, "giou");
    const double inter = box_intersection(a, b);
    const double uni = a.w * a.h + b.w * b.h - inter;
    const double ex1 = std::min(a.x1(), b.x1());
    const double ey1 = std::min(a.y1(), b.y1());
    const double ex2 = std::max(a.x2(), b.x2());
    const double ey2 = std::max(a.y2(), b.y2());
    const double enclose = (ex2 - ex1) * (ey2 - ey1);
    return inter / uni - (enclose - uni) / enclose;
}

}  // namespace bare
