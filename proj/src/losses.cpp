#include "semseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace semseg {

namespace {
constexpr double kLogClamp = 1e-12;  // inside log terms only, never in stored scores
constexpr int kMaxKernelPixels = 4096;

void check_same_shape(const Volume& a, const Volume& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}
}  // namespace

void ClickSet::validate() const {
    if (h <= 0 || w <= 0) throw std::invalid_argument("clicks: empty image dims");
    if (classes < 2) throw std::invalid_argument("clicks: class count must be >= 2");
    const int n = count();
    if (n > (h * w + 9) / 10)  // ceil(N/10): keeps n << N while admitting small test maps
        throw std::invalid_argument("clicks: too many clicks (n must be <= N/10)");
    std::vector<int> seen;
    seen.reserve(entries.size());
    for (const Click& c : entries) {
        if (c.row < 0 || c.row >= h || c.col < 0 || c.col >= w)
            throw std::invalid_argument("clicks: click position out of range");
        if (c.cls < 0 || c.cls >= classes)
            throw std::invalid_argument("clicks: click class out of range");
        seen.push_back(c.row * w + c.col);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
        throw std::invalid_argument("clicks: duplicate pixel");
}

LossResult partial_cross_entropy(const ScoreMap& scores, const ClickSet& clicks) {
    clicks.validate();
    if (clicks.h != scores.h || clicks.w != scores.w || clicks.classes != scores.c)
        throw std::invalid_argument("partial_cross_entropy: dimension mismatch");
    if (clicks.entries.empty())
        throw std::invalid_argument("partial_cross_entropy: empty click set");

    const double inv_n = 1.0 / clicks.count();
    LossResult out;
    out.grad = Volume(scores.h, scores.w, scores.c, 0.0);
    double sum = 0.0;
    for (const Click& c : clicks.entries) {
        const double s = scores.at(c.row, c.col, c.cls);
        if (s < kLogClamp) {
            sum += std::log(kLogClamp);  // clamped: locally flat, zero gradient
        } else {
            sum += std::log(s);
            out.grad.at(c.row, c.col, c.cls) = -inv_n / s;
        }
    }
    out.value = -inv_n * sum;
    return out;
}

LossResult pixel_consistency_approx(const ScoreMap& teacher, const ScoreMap& student) {
    check_same_shape(teacher, student, "pixel_consistency_approx");
    const double inv_n = 1.0 / student.pixels();
    LossResult out;
    out.grad = Volume(student.h, student.w, student.c);
    double sum = 0.0;
    for (size_t i = 0; i < student.v.size(); ++i) {
        const double d = teacher.v[i] - student.v[i];
        sum += d * d;
        out.grad.v[i] = -2.0 * inv_n * d;
    }
    out.value = inv_n * sum;
    return out;
}

LossResult pixel_consistency_exact(const ScoreMap& teacher, const ScoreMap& student,
                                   const ClickSet& clicks) {
    check_same_shape(teacher, student, "pixel_consistency_exact");
    clicks.validate();
    if (clicks.h != student.h || clicks.w != student.w || clicks.classes != student.c)
        throw std::invalid_argument("pixel_consistency_exact: dimension mismatch");
    const int total = student.pixels();
    const int n = clicks.count();
    if (n >= total) throw std::invalid_argument("pixel_consistency_exact: no unlabeled pixels");

    std::vector<char> clicked(static_cast<size_t>(total), 0);
    for (const Click& c : clicks.entries) clicked[static_cast<size_t>(c.row) * student.w + c.col] = 1;

    const double inv = 1.0 / (total - n);
    LossResult out;
    out.grad = Volume(student.h, student.w, student.c, 0.0);
    double sum = 0.0;
    for (int p = 0; p < total; ++p) {
        if (clicked[p]) continue;
        const size_t base = static_cast<size_t>(p) * student.c;
        for (int ch = 0; ch < student.c; ++ch) {
            const double d = teacher.v[base + ch] - student.v[base + ch];
            sum += d * d;
            out.grad.v[base + ch] = -2.0 * inv * d;
        }
    }
    out.value = inv * sum;
    return out;
}

PairwiseKernel build_kernel(const Image& image, double sigma_xy, double sigma_rgb) {
    if (!(sigma_xy > 0.0) || !(sigma_rgb > 0.0))
        throw std::invalid_argument("build_kernel: bandwidths must be positive");
    if (image.c != 3) throw std::invalid_argument("build_kernel: image must be H x W x 3");
    const int N = image.pixels();
    if (N > kMaxKernelPixels)
        throw std::invalid_argument("build_kernel: image exceeds the 64x64 dense-kernel limit");

    PairwiseKernel k;
    k.h = image.h;
    k.w = image.w;
    k.sigma_xy = sigma_xy;
    k.sigma_rgb = sigma_rgb;
    k.values.assign(static_cast<size_t>(N) * N, 0.0);

    const double inv_xy = 1.0 / (2.0 * sigma_xy * sigma_xy);
    const double inv_rgb = 1.0 / (2.0 * sigma_rgb * sigma_rgb);
    for (int i = 0; i < N; ++i) {
        const int ri = i / image.w, ci = i % image.w;
        const double* pi = image.v.data() + static_cast<size_t>(i) * 3;
        for (int j = i + 1; j < N; ++j) {
            const int rj = j / image.w, cj = j % image.w;
            const double* pj = image.v.data() + static_cast<size_t>(j) * 3;
            const double dr = ri - rj, dc = ci - cj;
            const double d0 = pi[0] - pj[0], d1 = pi[1] - pj[1], d2 = pi[2] - pj[2];
            const double wij = std::exp(-(dr * dr + dc * dc) * inv_xy -
                                        (d0 * d0 + d1 * d1 + d2 * d2) * inv_rgb);
            k.values[static_cast<size_t>(i) * N + j] = wij;
            k.values[static_cast<size_t>(j) * N + i] = wij;
        }
    }
    return k;
}

LossResult crf_loss(const ScoreMap& scores, const PairwiseKernel& kernel) {
    if (kernel.h != scores.h || kernel.w != scores.w)
        throw std::invalid_argument("crf_loss: kernel dimensions do not match scores");
    const int N = scores.pixels(), C = scores.c;
    const double inv_n = 1.0 / N;

    // row sums and both matvecs, W taken as written (no symmetry assumption)
    std::vector<double> rowsum(N, 0.0), wy(static_cast<size_t>(N) * C, 0.0),
        wty(static_cast<size_t>(N) * C, 0.0);
    for (int i = 0; i < N; ++i) {
        const double* wrow = kernel.values.data() + static_cast<size_t>(i) * N;
        double rs = 0.0;
        double* wyi = wy.data() + static_cast<size_t>(i) * C;
        for (int j = 0; j < N; ++j) {
            const double w = wrow[j];
            rs += w;
            const double* yj = scores.v.data() + static_cast<size_t>(j) * C;
            for (int ch = 0; ch < C; ++ch) wyi[ch] += w * yj[ch];
            double* wtyj = wty.data() + static_cast<size_t>(j) * C;
            const double* yi = scores.v.data() + static_cast<size_t>(i) * C;
            for (int ch = 0; ch < C; ++ch) wtyj[ch] += w * yi[ch];
        }
        rowsum[i] = rs;
    }

    LossResult out;
    out.grad = Volume(scores.h, scores.w, scores.c);
    double value = 0.0;
    for (int i = 0; i < N; ++i) {
        const double* yi = scores.v.data() + static_cast<size_t>(i) * C;
        const double* wyi = wy.data() + static_cast<size_t>(i) * C;
        const double* wtyi = wty.data() + static_cast<size_t>(i) * C;
        double* g = out.grad.v.data() + static_cast<size_t>(i) * C;
        for (int ch = 0; ch < C; ++ch) {
            value += yi[ch] * (rowsum[i] - wyi[ch]);
            g[ch] = inv_n * (rowsum[i] - wyi[ch] - wtyi[ch]);
        }
    }
    out.value = inv_n * value;
    return out;
}

LossResult pseudo_label_loss(const ScoreMap& scores, const PseudoLabelMap& pseudo) {
    if (pseudo.labels.h != scores.h || pseudo.labels.w != scores.w)
        throw std::invalid_argument("pseudo_label_loss: dimension mismatch");
    const int N = scores.pixels(), C = scores.c;
    const double inv_n = 1.0 / N;
    LossResult out;
    out.grad = Volume(scores.h, scores.w, scores.c, 0.0);
    double sum = 0.0;
    for (int p = 0; p < N; ++p) {
        const int cls = pseudo.labels.v[p];
        if (cls < 0 || cls >= C)
            throw std::invalid_argument("pseudo_label_loss: label out of class range");
        const double s = scores.v[static_cast<size_t>(p) * C + cls];
        if (s < kLogClamp) {
            sum += std::log(kLogClamp);
        } else {
            sum += std::log(s);
            out.grad.v[static_cast<size_t>(p) * C + cls] = -inv_n / s;
        }
    }
    out.value = -inv_n * sum;
    return out;
}

LossResult combine_ancillary(const LossResult& pce, const LossResult& pcons,
                             const LossResult& crf, double lambda_pcons, double lambda_crf) {
    if (lambda_pcons < 0.0 || lambda_crf < 0.0)
        throw std::invalid_argument("combine_ancillary: negative loss weight");
    check_same_shape(pce.grad, pcons.grad, "combine_ancillary");
    check_same_shape(pce.grad, crf.grad, "combine_ancillary");
    LossResult out;
    out.value = pce.value + lambda_pcons * pcons.value + lambda_crf * crf.value;
    out.grad = Volume(pce.grad.h, pce.grad.w, pce.grad.c);
    for (size_t i = 0; i < out.grad.v.size(); ++i)
        out.grad.v[i] =
            pce.grad.v[i] + lambda_pcons * pcons.grad.v[i] + lambda_crf * crf.grad.v[i];
    return out;
}

LossResult combine_primary(const LossResult& lstar, const LossResult& pseudo,
                           double lambda_pseudo) {
    if (lambda_pseudo < 0.0) throw std::invalid_argument("combine_primary: negative loss weight");
    check_same_shape(lstar.grad, pseudo.grad, "combine_primary");
    LossResult out;
    out.value = lstar.value + lambda_pseudo * pseudo.value;
    out.grad = Volume(lstar.grad.h, lstar.grad.w, lstar.grad.c);
    for (size_t i = 0; i < out.grad.v.size(); ++i)
        out.grad.v[i] = lstar.grad.v[i] + lambda_pseudo * pseudo.grad.v[i];
    return out;
}

}  // namespace semseg
