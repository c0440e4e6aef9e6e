#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace semseg {

// Dense H x W x C grid of doubles, row-major with channels innermost.
// Used for images (c == 3), softmax score maps and score-space gradients.
struct Volume {
    int h = 0, w = 0, c = 0;
    std::vector<double> v;

    Volume() = default;
    Volume(int h_, int w_, int c_, double init = 0.0)
        : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, init) {}

    double& at(int r, int col, int ch) { return v[(static_cast<size_t>(r) * w + col) * c + ch]; }
    double at(int r, int col, int ch) const { return v[(static_cast<size_t>(r) * w + col) * c + ch]; }

    double* pixel(int r, int col) { return &v[(static_cast<size_t>(r) * w + col) * c]; }
    const double* pixel(int r, int col) const { return &v[(static_cast<size_t>(r) * w + col) * c]; }

    size_t size() const { return v.size(); }
    int pixels() const { return h * w; }
    bool same_shape(const Volume& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Score maps share the Volume layout; the softmax invariants are checked
// where the contract requires them (forward postcondition, tests).
using ScoreMap = Volume;
using Image = Volume;  // c == 3, values in [0,1]

// H x W map of class indices.
struct LabelMap {
    int h = 0, w = 0;
    std::vector<int> v;

    LabelMap() = default;
    LabelMap(int h_, int w_, int init = 0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, init) {}

    int& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
    int at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }

    int pixels() const { return h * w; }
    bool operator==(const LabelMap& o) const { return h == o.h && w == o.w && v == o.v; }
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// ScoreMap invariant: strictly positive entries, per-pixel sums within 1e-9 of 1.
inline bool is_valid_scoremap(const ScoreMap& s, double tol = 1e-9) {
    if (s.h <= 0 || s.w <= 0 || s.c < 2) return false;
    for (int p = 0; p < s.pixels(); ++p) {
        const double* px = s.v.data() + static_cast<size_t>(p) * s.c;
        double sum = 0.0;
        for (int ch = 0; ch < s.c; ++ch) {
            if (!(px[ch] > 0.0) || !std::isfinite(px[ch])) return false;
            sum += px[ch];
        }
        if (std::fabs(sum - 1.0) > tol) return false;
    }
    return true;
}

}  // namespace semseg
