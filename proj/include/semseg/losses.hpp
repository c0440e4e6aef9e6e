#pragma once

#include <vector>

#include "semseg/grid.hpp"

namespace semseg {

struct Click {
    int row = 0;
    int col = 0;
    int cls = 0;

    bool operator==(const Click& o) const = default;
};

// Sparse click annotations for one image. n << N; enforced n <= N/10.
struct ClickSet {
    int h = 0, w = 0, classes = 0;
    std::vector<Click> entries;

    int count() const { return static_cast<int>(entries.size()); }
    void validate() const;  // throws on out-of-range, duplicate or n > N/10
};

// Dense symmetric pixel-pair affinity, zero diagonal, entries in [0,1].
struct PairwiseKernel {
    int h = 0, w = 0;
    double sigma_xy = 0.0, sigma_rgb = 0.0;
    std::vector<double> values;  // N x N row-major

    int pixels() const { return h * w; }
    double at(int i, int j) const { return values[static_cast<size_t>(i) * pixels() + j]; }
};

struct PseudoLabelMap {
    LabelMap labels;
};

struct LossResult {
    double value = 0.0;
    Volume grad;  // dvalue / dscores, same shape as the student ScoreMap
};

// L_pCE: mean negative log-score over clicked pixels only.
LossResult partial_cross_entropy(const ScoreMap& scores, const ClickSet& clicks);

// L_pCons, approximate form: mean over all pixels of the squared
// teacher-student score difference. No gradient flows to the teacher.
LossResult pixel_consistency_approx(const ScoreMap& teacher, const ScoreMap& student);

// L_pCons, exact form: mean over unlabeled pixels only.
LossResult pixel_consistency_exact(const ScoreMap& teacher, const ScoreMap& student,
                                   const ClickSet& clicks);

// Bilateral Gaussian affinity: exp(-|dp|^2/(2 sxy^2) - |dI|^2/(2 srgb^2)).
// Exact dense build; images larger than 64x64 (N > 4096) are rejected.
PairwiseKernel build_kernel(const Image& image, double sigma_xy, double sigma_rgb);

// L_CRF = (1/N) sum_c (Y^c)' W (1 - Y^c), kernel treated as a constant.
LossResult crf_loss(const ScoreMap& scores, const PairwiseKernel& kernel);

// Same value and gradient as build_kernel + crf_loss, evaluated in a single
// fused pass without materializing the N x N kernel. Training hot path.
LossResult crf_loss_direct(const ScoreMap& scores, const Image& image, double sigma_xy,
                           double sigma_rgb);

// L_pseudo: dense cross-entropy against per-pixel pseudo-labels.
LossResult pseudo_label_loss(const ScoreMap& scores, const PseudoLabelMap& pseudo);

// L* = L_pCE + lambda_pcons * L_pCons + lambda_crf * L_CRF
LossResult combine_ancillary(const LossResult& pce, const LossResult& pcons,
                             const LossResult& crf, double lambda_pcons, double lambda_crf);

// L = L* + lambda_pseudo * L_pseudo
LossResult combine_primary(const LossResult& lstar, const LossResult& pseudo,
                           double lambda_pseudo);

}  // namespace semseg
