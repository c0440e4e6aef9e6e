// Fused evaluation of build_kernel + crf_loss without materializing the
// N x N kernel. This TU is compiled with -ffast-math so the exp over each
// pair row vectorizes (libmvec); everything stays in double.
#include <cmath>
#include <stdexcept>
#include <vector>

#include "semseg/losses.hpp"

namespace semseg {

namespace {

// Accumulates, for every pixel i, the kernel row sum r_i and the matvec
// m_i^c = sum_j W_ij y_j^c over the symmetric upper half (each pair visited
// once, contributions written to both endpoints).
template <int C>
void fused_accumulate(const ScoreMap& scores, const Image& image, double inv_xy, double inv_rgb,
                      std::vector<double>& rowsum, std::vector<double>& matvec) {
    const int H = image.h, W = image.w, N = H * W;
    std::vector<double> spat(static_cast<size_t>(2 * H - 1) * (2 * W - 1));
    for (int dr = -(H - 1); dr <= H - 1; ++dr)
        for (int dc = -(W - 1); dc <= W - 1; ++dc)
            spat[static_cast<size_t>(dr + H - 1) * (2 * W - 1) + (dc + W - 1)] =
                -(static_cast<double>(dr) * dr + static_cast<double>(dc) * dc) * inv_xy;

    std::vector<double> arg(N), wbuf(N);
    const double* img = image.v.data();
    const double* y = scores.v.data();

    for (int i = 0; i < N; ++i) {
        const int ri = i / W, ci = i % W;
        const double i0 = img[i * 3], i1 = img[i * 3 + 1], i2 = img[i * 3 + 2];

        // exponent for each j > i, spatial term via table lookup
        for (int rj = ri; rj < H; ++rj) {
            const int j_lo = (rj == ri) ? i + 1 : rj * W;
            const double* srow =
                spat.data() + static_cast<size_t>(rj - ri + H - 1) * (2 * W - 1) + (W - 1 - ci);
            const double* ip = img + static_cast<size_t>(j_lo) * 3;
            const int c_lo = j_lo - rj * W;
            for (int j = j_lo, cj = c_lo; j < rj * W + W; ++j, ++cj) {
                const double d0 = ip[0] - i0, d1 = ip[1] - i1, d2 = ip[2] - i2;
                ip += 3;
                arg[j] = srow[cj] - (d0 * d0 + d1 * d1 + d2 * d2) * inv_rgb;
            }
        }
        const int j_begin = i + 1;
        for (int j = j_begin; j < N; ++j) wbuf[j] = std::exp(arg[j]);

        double r_i = 0.0;
        double m_i[C] = {};
        const double* yi = y + static_cast<size_t>(i) * C;
        for (int j = j_begin; j < N; ++j) {
            const double w = wbuf[j];
            r_i += w;
            rowsum[j] += w;
            const double* yj = y + static_cast<size_t>(j) * C;
            double* mj = matvec.data() + static_cast<size_t>(j) * C;
            for (int ch = 0; ch < C; ++ch) {
                m_i[ch] += w * yj[ch];
                mj[ch] += w * yi[ch];
            }
        }
        rowsum[i] += r_i;
        double* mi = matvec.data() + static_cast<size_t>(i) * C;
        for (int ch = 0; ch < C; ++ch) mi[ch] += m_i[ch];
    }
}

void fused_accumulate_generic(const ScoreMap& scores, const Image& image, double inv_xy,
                              double inv_rgb, std::vector<double>& rowsum,
                              std::vector<double>& matvec) {
    const int H = image.h, W = image.w, N = H * W, C = scores.c;
    const double* img = image.v.data();
    const double* y = scores.v.data();
    for (int i = 0; i < N; ++i) {
        const int ri = i / W, ci = i % W;
        for (int j = i + 1; j < N; ++j) {
            const int rj = j / W, cj = j % W;
            const double dr = ri - rj, dc = ci - cj;
            const double d0 = img[i * 3] - img[j * 3], d1 = img[i * 3 + 1] - img[j * 3 + 1],
                         d2 = img[i * 3 + 2] - img[j * 3 + 2];
            const double w =
                std::exp(-(dr * dr + dc * dc) * inv_xy - (d0 * d0 + d1 * d1 + d2 * d2) * inv_rgb);
            rowsum[i] += w;
            rowsum[j] += w;
            for (int ch = 0; ch < C; ++ch) {
                matvec[static_cast<size_t>(i) * C + ch] += w * y[static_cast<size_t>(j) * C + ch];
                matvec[static_cast<size_t>(j) * C + ch] += w * y[static_cast<size_t>(i) * C + ch];
            }
        }
    }
}

}  // namespace

LossResult crf_loss_direct(const ScoreMap& scores, const Image& image, double sigma_xy,
                           double sigma_rgb) {
    if (!(sigma_xy > 0.0) || !(sigma_rgb > 0.0))
        throw std::invalid_argument("crf_loss_direct: bandwidths must be positive");
    if (image.c != 3) throw std::invalid_argument("crf_loss_direct: image must be H x W x 3");
    if (image.h != scores.h || image.w != scores.w)
        throw std::invalid_argument("crf_loss_direct: image/score dimension mismatch");
    const int N = image.pixels(), C = scores.c;
    if (N > 4096)
        throw std::invalid_argument("crf_loss_direct: image exceeds the 64x64 dense-kernel limit");

    const double inv_xy = 1.0 / (2.0 * sigma_xy * sigma_xy);
    const double inv_rgb = 1.0 / (2.0 * sigma_rgb * sigma_rgb);
    std::vector<double> rowsum(N, 0.0), matvec(static_cast<size_t>(N) * C, 0.0);
    switch (C) {
        case 2: fused_accumulate<2>(scores, image, inv_xy, inv_rgb, rowsum, matvec); break;
        case 3: fused_accumulate<3>(scores, image, inv_xy, inv_rgb, rowsum, matvec); break;
        case 4: fused_accumulate<4>(scores, image, inv_xy, inv_rgb, rowsum, matvec); break;
        case 5: fused_accumulate<5>(scores, image, inv_xy, inv_rgb, rowsum, matvec); break;
        case 6: fused_accumulate<6>(scores, image, inv_xy, inv_rgb, rowsum, matvec); break;
        default: fused_accumulate_generic(scores, image, inv_xy, inv_rgb, rowsum, matvec); break;
    }

    const double inv_n = 1.0 / N;
    LossResult out;
    out.grad = Volume(scores.h, scores.w, C);
    double value = 0.0;
    for (int i = 0; i < N; ++i) {
        const double* yi = scores.v.data() + static_cast<size_t>(i) * C;
        const double* mi = matvec.data() + static_cast<size_t>(i) * C;
        double* g = out.grad.v.data() + static_cast<size_t>(i) * C;
        for (int ch = 0; ch < C; ++ch) {
            value += yi[ch] * (rowsum[i] - mi[ch]);
            g[ch] = inv_n * (rowsum[i] - 2.0 * mi[ch]);  // W symmetric: W'y == Wy
        }
    }
    out.value = inv_n * value;
    return out;
}

}  // namespace semseg
