#include "semseg/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "semseg/rng.hpp"

namespace semseg {

namespace {

struct ConvSpec {
    const char* name;
    int k;  // kernel size (k x k)
    int cin;
    int cout;
};

std::vector<ConvSpec> conv_specs(const NetConfig& cfg) {
    return {
        {"enc1", 3, cfg.in_channels, cfg.enc_channels},
        {"enc2", 3, cfg.enc_channels, cfg.enc_channels},
        {"enc3", 3, cfg.enc_channels, cfg.enc_channels},
        {"mid1", 3, cfg.enc_channels, cfg.mid_channels},
        {"mid2", 3, cfg.mid_channels, cfg.mid_channels},
        {"head", 1, cfg.mid_channels, cfg.classes},
    };
}

std::shared_ptr<const Layout> make_layout(const NetConfig& cfg) {
    auto layout = std::make_shared<Layout>();
    size_t off = 0;
    for (const ConvSpec& s : conv_specs(cfg)) {
        size_t wcount = static_cast<size_t>(s.k) * s.k * s.cin * s.cout;
        layout->entries.push_back({std::string(s.name) + ".weight", off, wcount});
        off += wcount;
        layout->entries.push_back({std::string(s.name) + ".bias", off, static_cast<size_t>(s.cout)});
        off += static_cast<size_t>(s.cout);
    }
    layout->total = off;
    return layout;
}

// mirror about the last valid index, no edge duplication (size-1 dims clamp)
inline int mirror_index(int i, int n) {
    if (i < n) return i;
    int m = 2 * n - 2 - i;
    return m < 0 ? 0 : m;
}

// ---------------------------------------------------------------
// conv primitives; weights laid out [kr][kc][cin][cout]
// ---------------------------------------------------------------

void conv3x3_forward(const Volume& in, const double* w, const double* b, Volume& out) {
    const int H = in.h, W = in.w, CI = in.c, CO = out.c;
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double* o = out.pixel(r, c);
            for (int oc = 0; oc < CO; ++oc) o[oc] = b[oc];
            for (int kr = -1; kr <= 1; ++kr) {
                const int rr = r + kr;
                if (rr < 0 || rr >= H) continue;
                for (int kc = -1; kc <= 1; ++kc) {
                    const int cc = c + kc;
                    if (cc < 0 || cc >= W) continue;
                    const double* ip = in.pixel(rr, cc);
                    const double* wp = w + static_cast<size_t>(((kr + 1) * 3 + (kc + 1))) * CI * CO;
                    for (int ic = 0; ic < CI; ++ic) {
                        const double x = ip[ic];
                        const double* wrow = wp + static_cast<size_t>(ic) * CO;
                        for (int oc = 0; oc < CO; ++oc) o[oc] += x * wrow[oc];
                    }
                }
            }
        }
    }
}

// Accumulates dW/db; writes dIn when non-null.
void conv3x3_backward(const Volume& in, const double* w, const Volume& dout, double* dw,
                      double* db, Volume* din) {
    const int H = in.h, W = in.w, CI = in.c, CO = dout.c;
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const double* do_ = dout.pixel(r, c);
            for (int oc = 0; oc < CO; ++oc) db[oc] += do_[oc];
            for (int kr = -1; kr <= 1; ++kr) {
                const int rr = r + kr;
                if (rr < 0 || rr >= H) continue;
                for (int kc = -1; kc <= 1; ++kc) {
                    const int cc = c + kc;
                    if (cc < 0 || cc >= W) continue;
                    const double* ip = in.pixel(rr, cc);
                    double* dip = din ? din->pixel(rr, cc) : nullptr;
                    const size_t tap = static_cast<size_t>((kr + 1) * 3 + (kc + 1)) * CI * CO;
                    const double* wp = w + tap;
                    double* dwp = dw + tap;
                    for (int ic = 0; ic < CI; ++ic) {
                        const double x = ip[ic];
                        const double* wrow = wp + static_cast<size_t>(ic) * CO;
                        double* dwrow = dwp + static_cast<size_t>(ic) * CO;
                        double acc = 0.0;
                        for (int oc = 0; oc < CO; ++oc) {
                            dwrow[oc] += x * do_[oc];
                            acc += wrow[oc] * do_[oc];
                        }
                        if (dip) dip[ic] += acc;
                    }
                }
            }
        }
    }
}

void conv1x1_forward(const Volume& in, const double* w, const double* b, Volume& out) {
    const int N = in.pixels(), CI = in.c, CO = out.c;
    for (int p = 0; p < N; ++p) {
        const double* ip = in.v.data() + static_cast<size_t>(p) * CI;
        double* o = out.v.data() + static_cast<size_t>(p) * CO;
        for (int oc = 0; oc < CO; ++oc) o[oc] = b[oc];
        for (int ic = 0; ic < CI; ++ic) {
            const double x = ip[ic];
            const double* wrow = w + static_cast<size_t>(ic) * CO;
            for (int oc = 0; oc < CO; ++oc) o[oc] += x * wrow[oc];
        }
    }
}

void conv1x1_backward(const Volume& in, const double* w, const Volume& dout, double* dw,
                      double* db, Volume& din) {
    const int N = in.pixels(), CI = in.c, CO = dout.c;
    for (int p = 0; p < N; ++p) {
        const double* ip = in.v.data() + static_cast<size_t>(p) * CI;
        const double* dov = dout.v.data() + static_cast<size_t>(p) * CO;
        double* dip = din.v.data() + static_cast<size_t>(p) * CI;
        for (int oc = 0; oc < CO; ++oc) db[oc] += dov[oc];
        for (int ic = 0; ic < CI; ++ic) {
            const double x = ip[ic];
            const double* wrow = w + static_cast<size_t>(ic) * CO;
            double* dwrow = dw + static_cast<size_t>(ic) * CO;
            double acc = 0.0;
            for (int oc = 0; oc < CO; ++oc) {
                dwrow[oc] += x * dov[oc];
                acc += wrow[oc] * dov[oc];
            }
            dip[ic] = acc;
        }
    }
}

void relu_inplace(Volume& a) {
    for (double& x : a.v)
        if (x < 0.0) x = 0.0;
}

// dz = da where the stored post-activation is positive, else 0
void relu_backward_inplace(Volume& da, const Volume& act) {
    for (size_t i = 0; i < da.v.size(); ++i)
        if (!(act.v[i] > 0.0)) da.v[i] = 0.0;
}

void avgpool2_forward(const Volume& in, Volume& out) {
    const int C = in.c;
    for (int r = 0; r < out.h; ++r) {
        for (int c = 0; c < out.w; ++c) {
            const double* p00 = in.pixel(2 * r, 2 * c);
            const double* p01 = in.pixel(2 * r, 2 * c + 1);
            const double* p10 = in.pixel(2 * r + 1, 2 * c);
            const double* p11 = in.pixel(2 * r + 1, 2 * c + 1);
            double* o = out.pixel(r, c);
            for (int ch = 0; ch < C; ++ch) o[ch] = 0.25 * (p00[ch] + p01[ch] + p10[ch] + p11[ch]);
        }
    }
}

void avgpool2_backward(const Volume& dout, Volume& din) {
    const int C = dout.c;
    for (int r = 0; r < dout.h; ++r) {
        for (int c = 0; c < dout.w; ++c) {
            const double* g = dout.pixel(r, c);
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    double* d = din.pixel(2 * r + i, 2 * c + j);
                    for (int ch = 0; ch < C; ++ch) d[ch] = 0.25 * g[ch];
                }
        }
    }
}

// 2x bilinear resize, half-pixel centers, border clamped
struct LerpTap {
    int i0, i1;
    double t;
};

std::vector<LerpTap> lerp_taps(int n_out, int n_in) {
    std::vector<LerpTap> taps(n_out);
    for (int i = 0; i < n_out; ++i) {
        double src = (i + 0.5) / 2.0 - 0.5;
        int i0 = static_cast<int>(std::floor(src));
        double t = src - i0;
        int i1 = i0 + 1;
        taps[i] = {std::clamp(i0, 0, n_in - 1), std::clamp(i1, 0, n_in - 1), t};
    }
    return taps;
}

void upsample2_forward(const Volume& in, Volume& out) {
    const int C = in.c;
    auto rt = lerp_taps(out.h, in.h);
    auto ct = lerp_taps(out.w, in.w);
    for (int r = 0; r < out.h; ++r) {
        for (int c = 0; c < out.w; ++c) {
            const double* p00 = in.pixel(rt[r].i0, ct[c].i0);
            const double* p01 = in.pixel(rt[r].i0, ct[c].i1);
            const double* p10 = in.pixel(rt[r].i1, ct[c].i0);
            const double* p11 = in.pixel(rt[r].i1, ct[c].i1);
            const double tr = rt[r].t, tc = ct[c].t;
            double* o = out.pixel(r, c);
            for (int ch = 0; ch < C; ++ch) {
                double top = p00[ch] + tc * (p01[ch] - p00[ch]);
                double bot = p10[ch] + tc * (p11[ch] - p10[ch]);
                o[ch] = top + tr * (bot - top);
            }
        }
    }
}

void upsample2_backward(const Volume& dout, Volume& din) {
    const int C = dout.c;
    auto rt = lerp_taps(dout.h, din.h);
    auto ct = lerp_taps(dout.w, din.w);
    for (int r = 0; r < dout.h; ++r) {
        for (int c = 0; c < dout.w; ++c) {
            const double* g = dout.pixel(r, c);
            const double tr = rt[r].t, tc = ct[c].t;
            double* d00 = din.pixel(rt[r].i0, ct[c].i0);
            double* d01 = din.pixel(rt[r].i0, ct[c].i1);
            double* d10 = din.pixel(rt[r].i1, ct[c].i0);
            double* d11 = din.pixel(rt[r].i1, ct[c].i1);
            for (int ch = 0; ch < C; ++ch) {
                d00[ch] += (1 - tr) * (1 - tc) * g[ch];
                d01[ch] += (1 - tr) * tc * g[ch];
                d10[ch] += tr * (1 - tc) * g[ch];
                d11[ch] += tr * tc * g[ch];
            }
        }
    }
}

void softmax_inplace(Volume& logits) {
    const int C = logits.c;
    for (int p = 0; p < logits.pixels(); ++p) {
        double* px = logits.v.data() + static_cast<size_t>(p) * C;
        double m = px[0];
        for (int ch = 1; ch < C; ++ch) m = std::max(m, px[ch]);
        double sum = 0.0;
        for (int ch = 0; ch < C; ++ch) {
            px[ch] = std::exp(px[ch] - m);
            sum += px[ch];
        }
        const double inv = 1.0 / sum;
        for (int ch = 0; ch < C; ++ch) px[ch] *= inv;
    }
}

}  // namespace

// ---------------------------------------------------------------
// Layout / SegNet
// ---------------------------------------------------------------

const Layout::Entry& Layout::find(const std::string& name) const {
    for (const Entry& e : entries)
        if (e.name == name) return e;
    throw std::invalid_argument("layout: no entry named '" + name + "'");
}

bool Layout::operator==(const Layout& o) const {
    if (total != o.total || entries.size() != o.entries.size()) return false;
    for (size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name != o.entries[i].name || entries[i].offset != o.entries[i].offset ||
            entries[i].count != o.entries[i].count)
            return false;
    }
    return true;
}

SegNet::SegNet(NetConfig cfg) : cfg_(cfg) {
    if (cfg_.classes < 2) throw std::invalid_argument("net: class count must be >= 2");
    if (cfg_.in_channels <= 0 || cfg_.enc_channels <= 0 || cfg_.mid_channels <= 0)
        throw std::invalid_argument("net: layer sizes must be positive");
    layout_ = make_layout(cfg_);
}

SegNet::~SegNet() = default;

ParameterVector SegNet::init_params(uint64_t seed) const {
    ParameterVector p;
    p.layout = layout_;
    p.values.assign(layout_->total, 0.0);
    Rng rng(seed);
    for (const ConvSpec& s : conv_specs(cfg_)) {
        const Layout::Entry& we = layout_->find(std::string(s.name) + ".weight");
        const double fan_in = static_cast<double>(s.k) * s.k * s.cin;
        const double bound = std::sqrt(3.0 / fan_in);
        for (size_t i = 0; i < we.count; ++i)
            p.values[we.offset + i] = rng.uniform(-bound, bound);
        // biases stay zero
    }
    return p;
}

static void check_params(const SegNet& net, const ParameterVector& params) {
    if (params.values.size() != net.param_count())
        throw std::invalid_argument("net: parameter vector length mismatch");
}

static void check_image(const Image& image) {
    if (image.c != 3 || image.h <= 0 || image.w <= 0)
        throw std::invalid_argument("net: image must be H x W x 3");
    if (!all_finite(image.v)) throw std::invalid_argument("net: non-finite image values");
}

std::unique_ptr<ForwardCache> SegNet::forward_cached(const Image& image,
                                                     const ParameterVector& params) const {
    check_image(image);
    check_params(*this, params);

    auto cache = std::make_unique<ForwardCache>();
    cache->orig_h = image.h;
    cache->orig_w = image.w;
    const int H = image.h + (image.h % 2);
    const int W = image.w + (image.w % 2);
    if (H == image.h && W == image.w) {
        cache->padded = image;
    } else {
        cache->padded = Image(H, W, 3);
        for (int r = 0; r < H; ++r) {
            const int sr = mirror_index(r, image.h);
            for (int c = 0; c < W; ++c) {
                const int sc = mirror_index(c, image.w);
                const double* src = image.pixel(sr, sc);
                double* dst = cache->padded.pixel(r, c);
                dst[0] = src[0];
                dst[1] = src[1];
                dst[2] = src[2];
            }
        }
    }

    const double* pv = params.values.data();
    const Layout& lay = *layout_;
    auto wptr = [&](const char* n) { return pv + lay.find(std::string(n) + ".weight").offset; };
    auto bptr = [&](const char* n) { return pv + lay.find(std::string(n) + ".bias").offset; };

    const int E = cfg_.enc_channels, M = cfg_.mid_channels, C = cfg_.classes;
    cache->a1 = Volume(H, W, E);
    conv3x3_forward(cache->padded, wptr("enc1"), bptr("enc1"), cache->a1);
    relu_inplace(cache->a1);
    cache->a2 = Volume(H, W, E);
    conv3x3_forward(cache->a1, wptr("enc2"), bptr("enc2"), cache->a2);
    relu_inplace(cache->a2);
    cache->a3 = Volume(H, W, E);
    conv3x3_forward(cache->a2, wptr("enc3"), bptr("enc3"), cache->a3);
    relu_inplace(cache->a3);

    cache->pooled = Volume(H / 2, W / 2, E);
    avgpool2_forward(cache->a3, cache->pooled);

    cache->a4 = Volume(H / 2, W / 2, M);
    conv3x3_forward(cache->pooled, wptr("mid1"), bptr("mid1"), cache->a4);
    relu_inplace(cache->a4);
    cache->a5 = Volume(H / 2, W / 2, M);
    conv3x3_forward(cache->a4, wptr("mid2"), bptr("mid2"), cache->a5);
    relu_inplace(cache->a5);

    cache->up = Volume(H, W, M);
    upsample2_forward(cache->a5, cache->up);

    cache->scores_padded = Volume(H, W, C);
    conv1x1_forward(cache->up, wptr("head"), bptr("head"), cache->scores_padded);
    softmax_inplace(cache->scores_padded);

    if (H == cache->orig_h && W == cache->orig_w) {
        cache->scores = cache->scores_padded;
    } else {
        cache->scores = Volume(cache->orig_h, cache->orig_w, C);
        for (int r = 0; r < cache->orig_h; ++r)
            std::memcpy(cache->scores.pixel(r, 0), cache->scores_padded.pixel(r, 0),
                        sizeof(double) * static_cast<size_t>(cache->orig_w) * C);
    }
    return cache;
}

const ScoreMap& SegNet::scores(const ForwardCache& cache) const { return cache.scores; }

ScoreMap SegNet::forward(const Image& image, const ParameterVector& params) const {
    return forward_cached(image, params)->scores;
}

GradientVector SegNet::backward_from_cache(const ForwardCache& cache, const ParameterVector& params,
                                           const Volume& upstream) const {
    check_params(*this, params);
    if (upstream.h != cache.orig_h || upstream.w != cache.orig_w || upstream.c != cfg_.classes)
        throw std::invalid_argument("net: upstream shape mismatch");

    const int H = cache.padded.h, W = cache.padded.w;
    const int E = cfg_.enc_channels, M = cfg_.mid_channels, C = cfg_.classes;

    // softmax backward, with upstream zero on cropped-away padding
    Volume dlogits(H, W, C);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double* dl = dlogits.pixel(r, c);
            const double* s = cache.scores_padded.pixel(r, c);
            if (r >= cache.orig_h || c >= cache.orig_w) {
                for (int ch = 0; ch < C; ++ch) dl[ch] = 0.0;
                continue;
            }
            const double* up = upstream.pixel(r, c);
            double dot = 0.0;
            for (int ch = 0; ch < C; ++ch) dot += up[ch] * s[ch];
            for (int ch = 0; ch < C; ++ch) dl[ch] = s[ch] * (up[ch] - dot);
        }
    }

    GradientVector grad;
    grad.values.assign(layout_->total, 0.0);
    double* gv = grad.values.data();
    const double* pv = params.values.data();
    const Layout& lay = *layout_;
    auto wptr = [&](const char* n) { return pv + lay.find(std::string(n) + ".weight").offset; };
    auto gw = [&](const char* n) { return gv + lay.find(std::string(n) + ".weight").offset; };
    auto gb = [&](const char* n) { return gv + lay.find(std::string(n) + ".bias").offset; };

    Volume dup(H, W, M);
    conv1x1_backward(cache.up, wptr("head"), dlogits, gw("head"), gb("head"), dup);

    Volume da5(H / 2, W / 2, M, 0.0);
    upsample2_backward(dup, da5);
    relu_backward_inplace(da5, cache.a5);

    Volume da4(H / 2, W / 2, M, 0.0);
    conv3x3_backward(cache.a4, wptr("mid2"), da5, gw("mid2"), gb("mid2"), &da4);
    relu_backward_inplace(da4, cache.a4);

    Volume dpool(H / 2, W / 2, E, 0.0);
    conv3x3_backward(cache.pooled, wptr("mid1"), da4, gw("mid1"), gb("mid1"), &dpool);

    Volume da3(H, W, E);
    avgpool2_backward(dpool, da3);
    relu_backward_inplace(da3, cache.a3);

    Volume da2(H, W, E, 0.0);
    conv3x3_backward(cache.a2, wptr("enc3"), da3, gw("enc3"), gb("enc3"), &da2);
    relu_backward_inplace(da2, cache.a2);

    Volume da1(H, W, E, 0.0);
    conv3x3_backward(cache.a1, wptr("enc2"), da2, gw("enc2"), gb("enc2"), &da1);
    relu_backward_inplace(da1, cache.a1);

    // input gradient not needed
    conv3x3_backward(cache.padded, wptr("enc1"), da1, gw("enc1"), gb("enc1"), nullptr);

    return grad;
}

GradientVector SegNet::backward(const Image& image, const ParameterVector& params,
                                const Volume& upstream) const {
    auto cache = forward_cached(image, params);
    return backward_from_cache(*cache, params, upstream);
}

// ---------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------

void save_checkpoint(const std::string& path, const ParameterVector& params,
                     const NetConfig& cfg) {
    SegNet net(cfg);
    if (params.values.size() != net.param_count())
        throw std::invalid_argument("checkpoint: parameter count does not match config");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");

    std::ostringstream hdr;
    hdr << "SEMSEG-CKPT 1\n";
    hdr << "in_channels " << cfg.in_channels << "\n";
    hdr << "classes " << cfg.classes << "\n";
    hdr << "enc_channels " << cfg.enc_channels << "\n";
    hdr << "mid_channels " << cfg.mid_channels << "\n";
    hdr << "param_count " << params.values.size() << "\n";
    hdr << "layout " << net.layout().entries.size() << "\n";
    for (const auto& e : net.layout().entries)
        hdr << e.name << " " << e.offset << " " << e.count << "\n";
    hdr << "DATA\n";
    f << hdr.str();

    std::vector<unsigned char> buf(params.values.size() * 8);
    for (size_t i = 0; i < params.values.size(); ++i) {
        uint64_t bits = std::bit_cast<uint64_t>(params.values[i]);
        for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");

    auto fail = [&](const std::string& why) -> std::runtime_error {
        return std::runtime_error("checkpoint '" + path + "': " + why);
    };

    std::string line;
    if (!std::getline(f, line) || line != "SEMSEG-CKPT 1") throw fail("bad magic line");

    NetConfig cfg;
    size_t param_count = 0, layout_count = 0;
    auto read_kv = [&](const char* key) -> int64_t {
        if (!std::getline(f, line)) throw fail(std::string("truncated header at ") + key);
        std::istringstream is(line);
        std::string k;
        int64_t v = 0;
        if (!(is >> k >> v) || k != key) throw fail(std::string("expected '") + key + "' line");
        return v;
    };
    cfg.in_channels = static_cast<int>(read_kv("in_channels"));
    cfg.classes = static_cast<int>(read_kv("classes"));
    cfg.enc_channels = static_cast<int>(read_kv("enc_channels"));
    cfg.mid_channels = static_cast<int>(read_kv("mid_channels"));
    param_count = static_cast<size_t>(read_kv("param_count"));
    layout_count = static_cast<size_t>(read_kv("layout"));

    SegNet net(cfg);
    if (net.layout().entries.size() != layout_count) throw fail("layout entry count mismatch");
    for (const auto& e : net.layout().entries) {
        if (!std::getline(f, line)) throw fail("truncated layout");
        std::istringstream is(line);
        std::string name;
        size_t off = 0, cnt = 0;
        if (!(is >> name >> off >> cnt) || name != e.name || off != e.offset || cnt != e.count)
            throw fail("layout entry mismatch at '" + e.name + "'");
    }
    if (!std::getline(f, line) || line != "DATA") throw fail("missing DATA marker");
    if (param_count != net.param_count()) throw fail("param_count does not match config");

    std::vector<unsigned char> buf(param_count * 8);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size())) throw fail("truncated data");

    Checkpoint ck;
    ck.config = cfg;
    ck.params.layout = std::make_shared<Layout>(net.layout());
    ck.params.values.resize(param_count);
    for (size_t i = 0; i < param_count; ++i) {
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(buf[i * 8 + b]) << (8 * b);
        ck.params.values[i] = std::bit_cast<double>(bits);
    }
    if (!all_finite(ck.params.values)) throw fail("non-finite parameter values");
    return ck;
}

}  // namespace semseg
