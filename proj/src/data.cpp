#include "semseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "semseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace semseg {

void SceneSpec::validate() const {
    if (h <= 0 || w <= 0 || h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("scene: H and W must be positive and even");
    if (classes < 2) throw std::invalid_argument("scene: classes must be >= 2");
    if (min_objects < 1 || max_objects < min_objects)
        throw std::invalid_argument("scene: objects range must be nonempty with minimum 1");
    if (color_jitter < 0.0 || bg_texture < 0.0)
        throw std::invalid_argument("scene: amplitudes must be nonnegative");
    if (bg_clicks < 0) throw std::invalid_argument("scene: bg_clicks must be nonnegative");
}

namespace {

// ---------------------------------------------------------------
// scene rendering
// ---------------------------------------------------------------

// bilinear value noise from a coarse random grid
std::vector<double> value_noise(Rng& rng, int h, int w, int grid, double amp) {
    const int gh = grid + 1, gw = grid + 1;
    std::vector<double> g(static_cast<size_t>(gh) * gw);
    for (double& x : g) x = rng.uniform(-amp, amp);
    std::vector<double> out(static_cast<size_t>(h) * w);
    for (int r = 0; r < h; ++r) {
        const double fr = static_cast<double>(r) / h * grid;
        const int r0 = static_cast<int>(fr);
        const double tr = fr - r0;
        for (int c = 0; c < w; ++c) {
            const double fc = static_cast<double>(c) / w * grid;
            const int c0 = static_cast<int>(fc);
            const double tc = fc - c0;
            const double v00 = g[static_cast<size_t>(r0) * gw + c0];
            const double v01 = g[static_cast<size_t>(r0) * gw + c0 + 1];
            const double v10 = g[static_cast<size_t>(r0 + 1) * gw + c0];
            const double v11 = g[static_cast<size_t>(r0 + 1) * gw + c0 + 1];
            const double top = v00 + tc * (v01 - v00);
            const double bot = v10 + tc * (v11 - v10);
            out[static_cast<size_t>(r) * w + c] = top + tr * (bot - top);
        }
    }
    return out;
}

struct Shape {
    int kind = 0;  // 0 disc, 1 rectangle, 2 triangle
    int cls = 1;
    double cy = 0, cx = 0;
    double size = 0;    // radius / half-extent scale
    double aspect = 1;  // rectangle: hx = size * aspect
    double color[3] = {0, 0, 0};

    double bounding_radius() const {
        if (kind == 1) return std::sqrt(size * size + (size * aspect) * (size * aspect));
        return size * 1.2;
    }

    bool contains(int r, int c) const {
        const double dr = r - cy, dc = c - cx;
        switch (kind) {
            case 0: return dr * dr + dc * dc <= size * size;
            case 1: return std::fabs(dr) <= size && std::fabs(dc) <= size * aspect;
            default: {
                // upright isoceles triangle, apex at cy - size
                if (dr < -size || dr > size) return false;
                const double halfw = (dr + size) / 2.0;
                return std::fabs(dc) <= halfw;
            }
        }
    }
};

// distinct per-class base color from a fixed hue wheel; class 0 is background
void class_base_color(int cls, int classes, double out[3]) {
    const double angle = 2.0 * 3.14159265358979323846 * (cls - 1) / std::max(1, classes - 1);
    out[0] = 0.5 + 0.32 * std::cos(angle);
    out[1] = 0.5 + 0.32 * std::cos(angle - 2.0943951023931953);
    out[2] = 0.5 + 0.32 * std::cos(angle + 2.0943951023931953);
}

// 4-connected components of equal mask value, foreground only; returns
// component id per pixel (-1 background) and the component count
int label_components(const LabelMap& mask, std::vector<int>& comp) {
    const int h = mask.h, w = mask.w;
    comp.assign(static_cast<size_t>(h) * w, -1);
    int next = 0;
    std::vector<int> stack;
    for (int start = 0; start < h * w; ++start) {
        if (mask.v[start] == 0 || comp[start] != -1) continue;
        const int cls = mask.v[start];
        comp[start] = next;
        stack.assign(1, start);
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int r = p / w, c = p % w;
            const int nb[4] = {p - w, p + w, p - 1, p + 1};
            const bool ok[4] = {r > 0, r < h - 1, c > 0, c < w - 1};
            for (int k = 0; k < 4; ++k) {
                if (!ok[k]) continue;
                if (mask.v[nb[k]] == cls && comp[nb[k]] == -1) {
                    comp[nb[k]] = next;
                    stack.push_back(nb[k]);
                }
            }
        }
        ++next;
    }
    return next;
}

}  // namespace

LabeledImage gen_scene(uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    const int H = spec.h, W = spec.w;

    Rng rng(mix_seed(seed, 1));

    // textured background: broad luminance noise plus a mild per-channel tint
    Image img(H, W, 3);
    {
        auto lum = value_noise(rng, H, W, 8, spec.bg_texture);
        std::vector<double> tint[3];
        for (int ch = 0; ch < 3; ++ch) tint[ch] = value_noise(rng, H, W, 4, spec.bg_texture * 0.4);
        for (int p = 0; p < H * W; ++p)
            for (int ch = 0; ch < 3; ++ch)
                img.v[static_cast<size_t>(p) * 3 + ch] =
                    std::clamp(0.5 + lum[p] + tint[ch][p], 0.0, 1.0);
    }

    const int n_objects = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));

    // resample layouts until every drawn instance survives as its own
    // connected, non-adjacent component
    LabelMap mask;
    std::vector<Shape> shapes;
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
        shapes.clear();
        bool placed_all = true;
        for (int k = 0; k < n_objects; ++k) {
            bool placed = false;
            for (int tries = 0; tries < 60 && !placed; ++tries) {
                Shape s;
                s.kind = static_cast<int>(rng.uniform_int(0, 2));
                s.cls = static_cast<int>(rng.uniform_int(1, spec.classes - 1));
                s.size = rng.uniform(6.0, 12.0);
                s.aspect = (s.kind == 1) ? rng.uniform(0.6, 1.6) : 1.0;
                const double br = s.bounding_radius();
                const double margin = br + 2.0;
                if (2.0 * margin >= std::min(H, W)) continue;
                s.cy = rng.uniform(margin, H - 1 - margin);
                s.cx = rng.uniform(margin, W - 1 - margin);
                bool clash = false;
                for (const Shape& o : shapes) {
                    const double dy = s.cy - o.cy, dx = s.cx - o.cx;
                    if (std::sqrt(dy * dy + dx * dx) < br + o.bounding_radius() + 3.0) {
                        clash = true;
                        break;
                    }
                }
                if (clash) continue;
                class_base_color(s.cls, spec.classes, s.color);
                for (int ch = 0; ch < 3; ++ch)
                    s.color[ch] = std::clamp(
                        s.color[ch] + rng.uniform(-spec.color_jitter, spec.color_jitter), 0.05,
                        0.95);
                shapes.push_back(s);
                placed = true;
            }
            if (!placed) {
                placed_all = false;
                break;
            }
        }
        if (!placed_all) continue;

        mask = LabelMap(H, W, 0);
        for (const Shape& s : shapes)  // later shapes occlude earlier ones
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    if (s.contains(r, c)) mask.at(r, c) = s.cls;

        std::vector<int> comp;
        const int ncomp = label_components(mask, comp);
        if (ncomp != n_objects) continue;
        int min_pixels = H * W;
        std::vector<int> sizes(ncomp, 0);
        for (int v : comp)
            if (v >= 0) ++sizes[v];
        for (int sz : sizes) min_pixels = std::min(min_pixels, sz);
        if (min_pixels < 16) continue;
        accepted = true;
    }
    if (!accepted)
        throw std::runtime_error("gen_scene: could not place objects; spec too crowded for canvas");

    // paint shapes with a touch of per-pixel noise
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            if (mask.at(r, c) == 0) continue;
            // topmost shape owns the pixel: scan in reverse draw order
            for (int k = static_cast<int>(shapes.size()) - 1; k >= 0; --k) {
                if (!shapes[k].contains(r, c)) continue;
                double* px = img.pixel(r, c);
                for (int ch = 0; ch < 3; ++ch)
                    px[ch] = std::clamp(shapes[k].color[ch] + rng.uniform(-0.02, 0.02), 0.0, 1.0);
                break;
            }
        }
    }

    LabeledImage item;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "scene_%016llx", static_cast<unsigned long long>(seed));
        item.id = buf;
    }
    item.image = std::move(img);
    item.mask = std::move(mask);
    item.clicks = sample_clicks(item.mask, mix_seed(seed, 2), spec.bg_clicks);
    item.clicks.classes = spec.classes;
    item.clicks.validate();
    return item;
}

ClickSet sample_clicks(const LabelMap& mask, uint64_t seed, int k_bg) {
    const int h = mask.h, w = mask.w;
    if (h <= 0 || w <= 0) throw std::invalid_argument("sample_clicks: empty mask");

    std::vector<int> comp;
    const int ncomp = label_components(mask, comp);
    if (ncomp < 1) throw std::invalid_argument("sample_clicks: mask has no foreground instance");

    Rng rng(seed);
    ClickSet clicks;
    clicks.h = h;
    clicks.w = w;
    clicks.classes = *std::max_element(mask.v.begin(), mask.v.end()) + 1;

    // one click per instance, interior-biased
    std::vector<std::vector<int>> members(ncomp), interior(ncomp);
    for (int p = 0; p < h * w; ++p) {
        const int k = comp[p];
        if (k < 0) continue;
        members[k].push_back(p);
        const int r = p / w, c = p % w;
        const bool inside = r > 0 && r < h - 1 && c > 0 && c < w - 1 && comp[p - w] == k &&
                            comp[p + w] == k && comp[p - 1] == k && comp[p + 1] == k;
        if (inside) interior[k].push_back(p);
    }
    for (int k = 0; k < ncomp; ++k) {
        const std::vector<int>& pool = interior[k].empty() ? members[k] : interior[k];
        const int p = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        clicks.entries.push_back({p / w, p % w, mask.v[p]});
    }

    if (k_bg > 0) {
        std::vector<int> bg;
        for (int p = 0; p < h * w; ++p)
            if (mask.v[p] == 0) bg.push_back(p);
        if (static_cast<int>(bg.size()) < k_bg)
            throw std::invalid_argument("sample_clicks: insufficient background pixels");
        // partial Fisher-Yates, without replacement
        for (int k = 0; k < k_bg; ++k) {
            const int j = static_cast<int>(rng.uniform_int(k, static_cast<int>(bg.size()) - 1));
            std::swap(bg[k], bg[j]);
            clicks.entries.push_back({bg[k] / w, bg[k] % w, 0});
        }
    }
    return clicks;
}

// ---------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------

namespace {

double sample_bilinear(const Image& img, double r, double c, int ch) {
    const int r0 = std::clamp(static_cast<int>(std::floor(r)), 0, img.h - 1);
    const int r1 = std::clamp(r0 + 1, 0, img.h - 1);
    const int c0 = std::clamp(static_cast<int>(std::floor(c)), 0, img.w - 1);
    const int c1 = std::clamp(c0 + 1, 0, img.w - 1);
    const double tr = std::clamp(r - std::floor(r), 0.0, 1.0);
    const double tc = std::clamp(c - std::floor(c), 0.0, 1.0);
    const double v00 = img.at(r0, c0, ch), v01 = img.at(r0, c1, ch);
    const double v10 = img.at(r1, c0, ch), v11 = img.at(r1, c1, ch);
    const double top = v00 + tc * (v01 - v00);
    const double bot = v10 + tc * (v11 - v10);
    return top + tr * (bot - top);
}

}  // namespace

Augmented augment(const Image& image, const LabelMap& mask, const ClickSet& clicks, uint64_t seed,
                  const AugmentOptions& opt) {
    if (image.h != mask.h || image.w != mask.w)
        throw std::invalid_argument("augment: image/mask dimension mismatch");
    const int H = image.h, W = image.w;
    const double ctr_r = (H - 1) / 2.0, ctr_c = (W - 1) / 2.0;

    Rng rng(seed);
    for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
        const double scale = rng.uniform(opt.min_scale, opt.max_scale);
        const bool flip = rng.uniform() < opt.flip_prob;

        Augmented out;
        out.image = Image(H, W, 3);
        out.mask = LabelMap(H, W, 0);
        for (int r = 0; r < H; ++r) {
            const double in_r = ctr_r + (r - ctr_r) / scale;
            for (int c = 0; c < W; ++c) {
                const int oc = flip ? (W - 1 - c) : c;
                const double in_c = ctr_c + (oc - ctr_c) / scale;
                // nearest-neighbour for the mask, border clamped
                const int mr = std::clamp(static_cast<int>(std::lround(in_r)), 0, H - 1);
                const int mc = std::clamp(static_cast<int>(std::lround(in_c)), 0, W - 1);
                out.mask.at(r, c) = mask.at(mr, mc);
                for (int ch = 0; ch < 3; ++ch)
                    out.image.at(r, c, ch) = sample_bilinear(image, in_r, in_c, ch);
            }
        }

        // clicks follow the same geometric map; drop any that leave the frame
        // or land across a class boundary after rounding
        out.clicks.h = H;
        out.clicks.w = W;
        out.clicks.classes = clicks.classes;
        for (const Click& k : clicks.entries) {
            const double fr = ctr_r + (k.row - ctr_r) * scale;
            double fc = ctr_c + (k.col - ctr_c) * scale;
            if (flip) fc = (W - 1) - fc;
            const int nr = static_cast<int>(std::lround(fr));
            const int nc = static_cast<int>(std::lround(fc));
            if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
            if (out.mask.at(nr, nc) != k.cls) continue;
            bool dup = false;
            for (const Click& e : out.clicks.entries)
                if (e.row == nr && e.col == nc) dup = true;
            if (dup) continue;
            out.clicks.entries.push_back({nr, nc, k.cls});
        }
        if (out.clicks.entries.empty() && !clicks.entries.empty()) continue;  // resample transform

        if (opt.noise_sigma > 0.0) {
            for (double& x : out.image.v)
                x = std::clamp(x + rng.normal(0.0, opt.noise_sigma), 0.0, 1.0);
        }
        return out;
    }
    return {image, mask, clicks};  // bounded retries exhausted
}

// ---------------------------------------------------------------
// persistence
// ---------------------------------------------------------------

namespace {

void write_file(const fs::path& p, const std::string& data) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot open '" + p.string() + "' for writing");
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw std::runtime_error("dataset: write failed for '" + p.string() + "'");
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json spec_to_json(const SceneSpec& s) {
    return json{{"h", s.h},
                {"w", s.w},
                {"classes", s.classes},
                {"min_objects", s.min_objects},
                {"max_objects", s.max_objects},
                {"color_jitter", s.color_jitter},
                {"bg_texture", s.bg_texture},
                {"bg_clicks", s.bg_clicks}};
}

SceneSpec spec_from_json(const json& j) {
    SceneSpec s;
    s.h = j.at("h").get<int>();
    s.w = j.at("w").get<int>();
    s.classes = j.at("classes").get<int>();
    s.min_objects = j.at("min_objects").get<int>();
    s.max_objects = j.at("max_objects").get<int>();
    s.color_jitter = j.at("color_jitter").get<double>();
    s.bg_texture = j.at("bg_texture").get<double>();
    s.bg_clicks = j.at("bg_clicks").get<int>();
    return s;
}

}  // namespace

void save_dataset(const std::vector<LabeledImage>& items, const std::string& dir,
                  const SceneSpec& spec) {
    fs::create_directories(dir);
    for (const LabeledImage& item : items) {
        const fs::path base = fs::path(dir) / item.id;

        // raw float32 image + dims sidecar (lossless mode)
        std::string raw(static_cast<size_t>(item.image.v.size()) * 4, '\0');
        for (size_t i = 0; i < item.image.v.size(); ++i) {
            const float f = static_cast<float>(item.image.v[i]);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int b = 0; b < 4; ++b) raw[i * 4 + b] = static_cast<char>(bits >> (8 * b));
        }
        write_file(base.string() + ".f32", raw);
        write_file(base.string() + ".json",
                   json{{"h", item.image.h}, {"w", item.image.w}}.dump() + "\n");

        // mask as binary P5
        std::ostringstream pgm;
        pgm << "P5\n" << item.mask.w << " " << item.mask.h << "\n255\n";
        for (int v : item.mask.v) pgm << static_cast<char>(v);
        write_file(base.string() + ".mask.pgm", pgm.str());

        json clicks = json::array();
        for (const Click& c : item.clicks.entries)
            clicks.push_back({{"row", c.row}, {"col", c.col}, {"class", c.cls}});
        write_file(base.string() + ".clicks.json", clicks.dump() + "\n");
    }
    json meta{{"count", items.size()},
              {"h", spec.h},
              {"w", spec.w},
              {"classes", spec.classes},
              {"spec", spec_to_json(spec)}};
    write_file(fs::path(dir) / "meta.json", meta.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
    if (!fs::exists(dir)) throw std::runtime_error("dataset: directory '" + dir + "' does not exist");
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset: '" + dir + "' is not a directory");

    Dataset ds;
    if (fs::exists(fs::path(dir) / "meta.json")) {
        json meta = json::parse(read_file(fs::path(dir) / "meta.json"));
        DatasetMeta m;
        m.spec = spec_from_json(meta.at("spec"));
        m.count = meta.at("count").get<int>();
        ds.meta = m;
    }

    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.size() > 4 && name.substr(name.size() - 4) == ".f32")
            ids.push_back(name.substr(0, name.size() - 4));
    }
    std::sort(ids.begin(), ids.end());

    for (const std::string& id : ids) {
        const fs::path base = fs::path(dir) / id;
        auto need = [&](const std::string& suffix) -> fs::path {
            fs::path p = base.string() + suffix;
            if (!fs::exists(p))
                throw std::runtime_error("dataset: item '" + id + "' is missing '" + p.string() +
                                         "'");
            return p;
        };

        LabeledImage item;
        item.id = id;

        json side = json::parse(read_file(need(".json")));
        const int h = side.at("h").get<int>(), w = side.at("w").get<int>();
        if (h <= 0 || w <= 0)
            throw std::runtime_error("dataset: item '" + id + "' has invalid dims sidecar");

        const std::string raw = read_file(need(".f32"));
        if (raw.size() != static_cast<size_t>(h) * w * 3 * 4)
            throw std::runtime_error("dataset: item '" + id + "' raw image has wrong size");
        item.image = Image(h, w, 3);
        for (size_t i = 0; i < item.image.v.size(); ++i) {
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<uint32_t>(static_cast<unsigned char>(raw[i * 4 + b])) << (8 * b);
            float f;
            std::memcpy(&f, &bits, 4);
            item.image.v[i] = static_cast<double>(f);
        }
        if (!all_finite(item.image.v))
            throw std::runtime_error("dataset: item '" + id + "' has non-finite image values");

        const std::string pgm = read_file(need(".mask.pgm"));
        std::istringstream ps(pgm);
        std::string magic;
        int mw = 0, mh = 0, maxval = 0;
        ps >> magic >> mw >> mh >> maxval;
        if (magic != "P5" || mw != w || mh != h || maxval != 255)
            throw std::runtime_error("dataset: item '" + id + "' has a malformed mask header");
        ps.get();  // single whitespace after maxval
        item.mask = LabelMap(h, w);
        for (int p = 0; p < h * w; ++p) {
            const int ch = ps.get();
            if (ch == EOF)
                throw std::runtime_error("dataset: item '" + id + "' mask data truncated");
            if (ds.meta && ch >= ds.meta->spec.classes)
                throw std::runtime_error("dataset: item '" + id + "' mask class out of range");
            item.mask.v[p] = ch;
        }

        json clicks = json::parse(read_file(need(".clicks.json")));
        item.clicks.h = h;
        item.clicks.w = w;
        item.clicks.classes =
            ds.meta ? ds.meta->spec.classes
                    : *std::max_element(item.mask.v.begin(), item.mask.v.end()) + 1;
        for (const json& c : clicks)
            item.clicks.entries.push_back(
                {c.at("row").get<int>(), c.at("col").get<int>(), c.at("class").get<int>()});
        item.clicks.validate();
        for (const Click& c : item.clicks.entries)
            if (item.mask.at(c.row, c.col) != c.cls)
                throw std::runtime_error("dataset: item '" + id +
                                         "' click/mask class mismatch at (" +
                                         std::to_string(c.row) + "," + std::to_string(c.col) + ")");
        ds.items.push_back(std::move(item));
    }
    return ds;
}

void write_ppm(const std::string& path, const Image& img) {
    std::ostringstream out;
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    for (double v : img.v) {
        const int q = std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255);
        out << static_cast<char>(q);
    }
    write_file(path, out.str());
}

Image read_ppm(const std::string& path) {
    const std::string data = read_file(path);
    std::istringstream ps(data);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    ps >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("ppm: malformed header in '" + path + "'");
    ps.get();
    Image img(h, w, 3);
    for (size_t i = 0; i < img.v.size(); ++i) {
        const int ch = ps.get();
        if (ch == EOF) throw std::runtime_error("ppm: truncated data in '" + path + "'");
        img.v[i] = ch / 255.0;
    }
    return img;
}

}  // namespace semseg
