// Acceptance suite: one pass/fail line per criterion. Heavyweight training
// criteria share stages where the runs are mathematically identical (the K=2
// chain contains the K=0 and K=1 results; the self-generation baseline starts
// from the same fully trained ancillary).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "semseg/config.hpp"
#include "semseg/data.hpp"
#include "semseg/ema.hpp"
#include "semseg/evalrep.hpp"
#include "semseg/losses.hpp"
#include "semseg/net.hpp"
#include "semseg/rng.hpp"
#include "semseg/trainer.hpp"

using namespace semseg;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

double rel_err(double a, double b, double floor = 1e-5) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

ScoreMap random_scores(Rng& rng, int h, int w, int c) {
    ScoreMap s(h, w, c);
    for (int p = 0; p < h * w; ++p) {
        double sum = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const double v = 0.05 + rng.uniform();
            s.v[static_cast<size_t>(p) * c + ch] = v;
            sum += v;
        }
        for (int ch = 0; ch < c; ++ch) s.v[static_cast<size_t>(p) * c + ch] /= sum;
    }
    return s;
}

Image random_image(Rng& rng, int h, int w) {
    Image img(h, w, 3);
    for (double& v : img.v) v = rng.uniform();
    return img;
}

ClickSet random_clicks(Rng& rng, int h, int w, int classes, int n) {
    std::vector<int> pix(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < pix.size(); ++i) pix[i] = static_cast<int>(i);
    ClickSet c;
    c.h = h;
    c.w = w;
    c.classes = classes;
    for (int k = 0; k < n; ++k) {
        const int j = static_cast<int>(rng.uniform_int(k, static_cast<int>(pix.size()) - 1));
        std::swap(pix[k], pix[j]);
        c.entries.push_back(
            {pix[k] / w, pix[k] % w, static_cast<int>(rng.uniform_int(0, classes - 1))});
    }
    return c;
}

// central-difference sweep over score coordinates; returns worst relative error
template <typename F>
double fd_scores(const F& f, const ScoreMap& at, const Volume& analytic, double step = 1e-6) {
    double worst = 0.0;
    ScoreMap probe = at;
    for (size_t i = 0; i < probe.v.size(); ++i) {
        const double saved = probe.v[i];
        probe.v[i] = saved + step;
        const double hi = f(probe);
        probe.v[i] = saved - step;
        const double lo = f(probe);
        probe.v[i] = saved;
        worst = std::max(worst, rel_err(analytic.v[i], (hi - lo) / (2.0 * step)));
    }
    return worst;
}

// ---------------------------------------------------------------
// criterion 1: gradient oracle suite
// ---------------------------------------------------------------

void criterion_1() {
    const auto t0 = clock_type::now();
    double worst = 0.0;
    std::string worst_site = "none";
    auto track = [&](double err, const char* site) {
        if (err > worst) {
            worst = err;
            worst_site = site;
        }
    };

    for (int inst = 0; inst < 20; ++inst) {
        Rng rng(7000 + inst);
        const int h = 4 + static_cast<int>(rng.uniform_int(0, 4));  // up to 8x8
        const int w = 4 + static_cast<int>(rng.uniform_int(0, 4));
        const int C = 4;
        ScoreMap teacher = random_scores(rng, h, w, C);
        ScoreMap student = random_scores(rng, h, w, C);
        Image img = random_image(rng, h, w);
        ClickSet clicks = random_clicks(rng, h, w, C, 1 + static_cast<int>(rng.uniform_int(0, 2)));

        LossResult pce = partial_cross_entropy(student, clicks);
        track(fd_scores([&](const ScoreMap& p) { return partial_cross_entropy(p, clicks).value; },
                        student, pce.grad),
              "partial_cross_entropy");

        LossResult pc = pixel_consistency_approx(teacher, student);
        track(fd_scores(
                  [&](const ScoreMap& p) { return pixel_consistency_approx(teacher, p).value; },
                  student, pc.grad),
              "pixel_consistency");

        PairwiseKernel k = build_kernel(img, 5.0, 0.1);
        LossResult crf = crf_loss(student, k);
        track(fd_scores([&](const ScoreMap& p) { return crf_loss(p, k).value; }, student,
                        crf.grad),
              "crf_loss");

        PseudoLabelMap pl;
        pl.labels = LabelMap(h, w);
        for (int& v : pl.labels.v) v = static_cast<int>(rng.uniform_int(0, C - 1));
        LossResult ps = pseudo_label_loss(student, pl);
        track(fd_scores([&](const ScoreMap& p) { return pseudo_label_loss(p, pl).value; },
                        student, ps.grad),
              "pseudo_label_loss");
    }

    // network backward: 20 instances, stratified random parameter coordinates
    const NetConfig net_cfg{.classes = 4};
    const SegNet net(net_cfg);
    for (int inst = 0; inst < 20; ++inst) {
        Rng rng(7500 + inst);
        const int h = 4 + static_cast<int>(rng.uniform_int(0, 4));
        const int w = 4 + static_cast<int>(rng.uniform_int(0, 4));
        Image img = random_image(rng, h, w);
        ParameterVector params = net.init_params(rng.next_u64());
        Volume up(h, w, 4);
        for (double& v : up.v) v = rng.uniform(-1.0, 1.0);

        GradientVector analytic = net.backward(img, params, up);
        auto loss_at = [&](const ParameterVector& p) {
            const ScoreMap s = net.forward(img, p);
            double l = 0.0;
            for (size_t i = 0; i < s.v.size(); ++i) l += up.v[i] * s.v[i];
            return l;
        };

        // ~40 coordinates from every layer's range
        std::vector<size_t> coords;
        for (const Layout::Entry& e : net.layout().entries)
            for (int j = 0; j < 40; ++j)
                coords.push_back(e.offset +
                                 static_cast<size_t>(rng.uniform_int(
                                     0, static_cast<int64_t>(e.count) - 1)));
        const double step = 1e-5;
        double inst_worst = 0.0;
#pragma omp parallel for schedule(static) reduction(max : inst_worst)
        for (int ci = 0; ci < static_cast<int>(coords.size()); ++ci) {
            ParameterVector probe = params;
            probe.values[coords[ci]] += step;
            const double hi = loss_at(probe);
            probe.values[coords[ci]] -= 2.0 * step;
            const double lo = loss_at(probe);
            inst_worst = std::max(
                inst_worst, rel_err(analytic.values[coords[ci]], (hi - lo) / (2.0 * step)));
        }
        track(inst_worst, "net_backward");
    }

    const double secs = seconds_since(t0);
    char detail[160];
    std::snprintf(detail, sizeof(detail), "max rel err %.3g at %s, tol 1e-5; %.1fs (limit 60s)",
                  worst, worst_site.c_str(), secs);
    report(1, "gradient oracle suite", worst < 1e-5 && secs < 60.0, detail);
}

// ---------------------------------------------------------------
// criterion 2: EMA algebra
// ---------------------------------------------------------------

void criterion_2() {
    bool ok = true;
    std::string why = "branch at t=1000, running mean to 1e-12, convexity on 100 updates";

    // branch predicate for alpha = 0.999 flips exactly at t = 1000
    if (!(1.0 - 1.0 / 999.0 < 0.999)) { ok = false; why = "predicate wrong at t=999"; }
    if (1.0 - 1.0 / 1000.0 < 0.999) { ok = false; why = "predicate wrong at t=1000"; }

    // absolute-average phase equals the running arithmetic mean
    Rng rng(81);
    TeacherState st;
    st.alpha = 0.999;
    st.t = 1;
    st.params.values = {0.0};
    double mean = 0.0;
    for (int t = 1; t <= 999 && ok; ++t) {
        const double x = rng.uniform(-5.0, 5.0);
        mean += (x - mean) / t;
        ParameterVector s;
        s.values = {x};
        ema_update(st, s);
        if (std::fabs(st.params.values[0] - mean) > 1e-12) {
            ok = false;
            why = "running mean deviates at t=" + std::to_string(t);
        }
    }

    // convexity per coordinate on 100 random updates crossing the branch
    TeacherState conv;
    conv.alpha = 0.999;
    conv.t = 950;
    conv.params.values.assign(16, 0.0);
    for (double& v : conv.params.values) v = rng.uniform(-3.0, 3.0);
    for (int step = 0; step < 100 && ok; ++step) {
        ParameterVector s;
        s.values.assign(16, 0.0);
        for (double& v : s.values) v = rng.uniform(-3.0, 3.0);
        std::vector<double> before = conv.params.values;
        ema_update(conv, s);
        for (size_t i = 0; i < before.size(); ++i) {
            const double lo = std::min(before[i], s.values[i]);
            const double hi = std::max(before[i], s.values[i]);
            if (conv.params.values[i] < lo - 1e-15 || conv.params.values[i] > hi + 1e-15) {
                ok = false;
                why = "convexity violated";
            }
        }
    }
    report(2, "EMA algebra suite", ok, why);
}

// ---------------------------------------------------------------
// criterion 3: consistency-loss equivalence
// ---------------------------------------------------------------

void criterion_3() {
    bool bound_ok = true;
    double worst_rel = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(8200 + inst);
        const int h = 32, w = 32, C = 4, N = h * w;
        ScoreMap t = random_scores(rng, h, w, C);
        ScoreMap s = random_scores(rng, h, w, C);
        const int n = 1 + static_cast<int>(rng.uniform_int(0, 9));  // n/N <= 0.01
        ClickSet clicks = random_clicks(rng, h, w, C, n);

        const double exact = pixel_consistency_exact(t, s, clicks).value;
        const double approx = pixel_consistency_approx(t, s).value;
        double max_d = 0.0;
        for (int p = 0; p < N; ++p) {
            double d = 0.0;
            for (int ch = 0; ch < C; ++ch) {
                const double q = t.v[p * C + ch] - s.v[p * C + ch];
                d += q * q;
            }
            max_d = std::max(max_d, d);
        }
        if (std::fabs(exact - approx) > 2.0 * n * max_d / (N - n) + 1e-15) bound_ok = false;
    }

    // n/N <= 0.001: agreement within 2% relative
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(8400 + inst);
        const int h = 64, w = 64, C = 4;
        ScoreMap t = random_scores(rng, h, w, C);
        ScoreMap s = random_scores(rng, h, w, C);
        const int n = 1 + static_cast<int>(rng.uniform_int(0, 3));  // n/N <= 0.001 at N=4096
        ClickSet clicks = random_clicks(rng, h, w, C, n);
        const double exact = pixel_consistency_exact(t, s, clicks).value;
        const double approx = pixel_consistency_approx(t, s).value;
        worst_rel = std::max(worst_rel, std::fabs(exact - approx) / exact);
    }

    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "bound held on 100 instances; worst relative gap %.4f%% at n/N<=0.001",
                  worst_rel * 100.0);
    report(3, "consistency-loss equivalence", bound_ok && worst_rel < 0.02, detail);
}

// ---------------------------------------------------------------
// criterion 4: CRF-loss oracle
// ---------------------------------------------------------------

void criterion_4() {
    double worst = 0.0;
    bool onehot_zero = true;
    for (int inst = 0; inst < 20; ++inst) {
        Rng rng(8600 + inst);
        const int h = 3, w = 3, N = 9, C = 4;
        Image img = random_image(rng, h, w);
        ScoreMap s = random_scores(rng, h, w, C);
        const double sxy = 5.0, srgb = 0.1;

        // independent brute-force kernel and bilinear evaluation
        auto wref = [&](int i, int j) {
            if (i == j) return 0.0;
            const int ri = i / w, ci = i % w, rj = j / w, cj = j % w;
            double dp = (ri - rj) * (ri - rj) + (ci - cj) * (ci - cj);
            double dc = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                const double d = img.v[i * 3 + ch] - img.v[j * 3 + ch];
                dc += d * d;
            }
            return std::exp(-dp / (2 * sxy * sxy) - dc / (2 * srgb * srgb));
        };
        double value_ref = 0.0;
        Volume grad_ref(h, w, C, 0.0);
        for (int ch = 0; ch < C; ++ch)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < N; ++j) {
                    const double yi = s.v[static_cast<size_t>(i) * C + ch];
                    const double yj = s.v[static_cast<size_t>(j) * C + ch];
                    value_ref += yi * wref(i, j) * (1.0 - yj);
                    grad_ref.v[static_cast<size_t>(i) * C + ch] += wref(i, j) * (1.0 - yj) / N;
                    grad_ref.v[static_cast<size_t>(j) * C + ch] -= yi * wref(i, j) / N;
                }
        value_ref /= N;

        for (const LossResult& res :
             {crf_loss(s, build_kernel(img, sxy, srgb)), crf_loss_direct(s, img, sxy, srgb)}) {
            worst = std::max(worst, std::fabs(res.value - value_ref));
            for (size_t i = 0; i < grad_ref.v.size(); ++i)
                worst = std::max(worst, std::fabs(res.grad.v[i] - grad_ref.v[i]));
        }
    }

    // all pixels one-hot on one class: exactly zero
    Image img(3, 3, 3, 0.4);
    ScoreMap onehot(3, 3, 4, 0.0);
    for (int p = 0; p < 9; ++p) onehot.v[p * 4 + 2] = 1.0;
    if (crf_loss(onehot, build_kernel(img, 5.0, 0.1)).value != 0.0) onehot_zero = false;
    if (crf_loss_direct(onehot, img, 5.0, 0.1).value != 0.0) onehot_zero = false;

    char detail[128];
    std::snprintf(detail, sizeof(detail), "max |dev| %.3g (tol 1e-10); one-hot gives exact 0: %s",
                  worst, onehot_zero ? "yes" : "no");
    report(4, "CRF-loss brute-force oracle", worst < 1e-10 && onehot_zero, detail);
}

// ---------------------------------------------------------------
// criteria 5-7: directional training reproductions
// ---------------------------------------------------------------

struct TrendResults {
    // means over seed triples
    double pce_only = 0.0;
    double k0 = 0.0, k1 = 0.0, k2 = 0.0;
    double self_gen = 0.0;
    double minutes = 0.0;
};

TrainConfig accept_config() {
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 12;
    cfg.base_lr = 0.12;
    cfg.ramp_epochs = 40;
    cfg.lambda_pcons = 200.0;
    cfg.lambda_crf = 1.0;
    cfg.lambda_pseudo = 1.0;
    cfg.net.classes = 4;
    return cfg;
}

TrendResults run_trends(const std::vector<LabeledImage>& train,
                        const std::vector<LabeledImage>& val) {
    const auto t0 = clock_type::now();
    const SegNet net(NetConfig{.classes = 4});
    const std::vector<std::pair<uint64_t, uint64_t>> seeds = {{101, 201}, {102, 202}, {103, 203}};

    TrendResults res;
    for (const auto& [anc, pri] : seeds) {
        std::fprintf(stderr, "[trend] seeds (%llu, %llu)\n",
                     static_cast<unsigned long long>(anc), static_cast<unsigned long long>(pri));

        // pCE-only baseline
        TrainConfig pce_cfg = accept_config();
        pce_cfg.ancillary_seed = anc;
        pce_cfg.primary_seed = pri;
        pce_cfg.losses = LossFlags{true, false, false, false};
        pce_cfg.num_student_student = 0;
        SeminarResult pce_run = run_seminar(pce_cfg, train, val);
        res.pce_only += evaluate_dataset(net, pce_run.model, val).mean;

        // full seminar chain with K=2: stages give the K=0, K=1, K=2 results
        TrainConfig full = accept_config();
        full.ancillary_seed = anc;
        full.primary_seed = pri;
        full.num_student_student = 2;
        SeminarResult chain = run_seminar(full, train, val);
        const double m0 = evaluate_dataset(net, chain.stage_students[0], val).mean;
        const double m1 = evaluate_dataset(net, chain.stage_students[1], val).mean;
        const double m2 = evaluate_dataset(net, chain.stage_students[2], val).mean;
        res.k0 += m0;
        res.k1 += m1;
        res.k2 += m2;
        std::fprintf(stderr, "[trend]   pce %.4f | k0 %.4f k1 %.4f k2 %.4f\n",
                     res.pce_only, m0, m1, m2);

        // self-generation-reset baseline: continues the same ancillary student
        // (identical stage-1 computation, so the trained stage-1 is reused)
        TrainConfig sg = accept_config();
        sg.ancillary_seed = anc;
        sg.primary_seed = pri;
        StageOptions opt;
        opt.stage = Stage::primary;
        opt.stage_id = 2;
        opt.seed = pri;
        opt.flags = sg.losses;
        const ParameterVector frozen = chain.stage_students[0];
        opt.frozen_ancillary = &frozen;
        opt.init_from = &chain.stage_students[0];
        StageResult sg_res = train_stage(sg, train, val, opt);
        res.self_gen += evaluate_dataset(net, sg_res.student, val).mean;
    }
    res.pce_only /= seeds.size();
    res.k0 /= seeds.size();
    res.k1 /= seeds.size();
    res.k2 /= seeds.size();
    res.self_gen /= seeds.size();
    res.minutes = seconds_since(t0) / 60.0;
    return res;
}

void criteria_5_to_7(const TrendResults& r) {
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "mIoU: pCE %.4f, pCE+CRF+pCons %.4f, full seminar %.4f; runtime %.1f min "
                  "(desktop target 45)",
                  r.pce_only, r.k0, r.k1, r.minutes);
    report(5, "loss-combination ordering", r.k0 >= r.pce_only + 0.05 && r.k1 >= r.k0 - 0.01,
           detail);

    std::snprintf(detail, sizeof(detail),
                  "K=0 %.4f, K=1 %.4f (gain %.4f, need >= 0.01), K=2 %.4f (gain %.4f, need < "
                  "0.01)",
                  r.k0, r.k1, r.k1 - r.k0, r.k2, r.k2 - r.k1);
    report(6, "student-student module count trend", (r.k1 - r.k0 >= 0.01) && (r.k2 - r.k1 < 0.01),
           detail);

    std::snprintf(detail, sizeof(detail),
                  "student-student %.4f vs self-generation-reset %.4f", r.k1, r.self_gen);
    report(7, "heterogeneous vs self-generated pseudo-labels", r.k1 >= r.self_gen, detail);
}

// ---------------------------------------------------------------
// criterion 8: byte-identical cli_train runs
// ---------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int shell(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

void criterion_8() {
    const fs::path root = fs::temp_directory_path() / "semseg_accept_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string cli = SEMSEG_CLI_PATH;

    std::ofstream(root / "config.toml")
        << "[scene]\nh = 16\nw = 16\nclasses = 3\nbg_clicks = 2\n"
        << "[train]\nepochs = 2\nbatch_size = 2\nramp_epochs = 2\nk = 1\n";

    bool ok = true;
    std::string why = "trainlog.csv and all checkpoints byte-identical across two runs";
    ok &= shell(cli + " gen-data --config " + (root / "config.toml").string() + " --out " +
                (root / "data/train").string() + " --count 6 --seed 1") == 0;
    ok &= shell(cli + " gen-data --config " + (root / "config.toml").string() + " --out " +
                (root / "data/val").string() + " --count 2 --seed 2") == 0;
    for (const char* run : {"runA", "runB"})
        ok &= shell(cli + " train --config " + (root / "config.toml").string() + " --data " +
                    (root / "data").string() + " --out " + (root / run).string()) == 0;
    if (!ok) {
        why = "cli invocations failed";
    } else {
        for (const char* f : {"trainlog.csv", "model.ckpt", "stage1_student.ckpt",
                              "stage1_teacher.ckpt", "stage2_student.ckpt",
                              "stage2_teacher.ckpt"}) {
            if (slurp(root / "runA" / f) != slurp(root / "runB" / f)) {
                ok = false;
                why = std::string("mismatch in ") + f;
            }
        }
    }
    fs::remove_all(root);
    report(8, "end-to-end determinism", ok, why);
}

// ---------------------------------------------------------------
// criterion 9: dataset integrity at scale
// ---------------------------------------------------------------

void criterion_9() {
    const SceneSpec spec;  // default 64x64, C=4
    const fs::path dir = fs::temp_directory_path() / "semseg_accept_integrity";
    fs::remove_all(dir);

    int bad = 0;
    std::vector<LabeledImage> items;
    items.reserve(1000);
    for (int i = 0; i < 1000; ++i) {
        LabeledImage item = gen_scene(mix_seed(4242, static_cast<uint64_t>(i)), spec);
        char id[16];
        std::snprintf(id, sizeof(id), "img%05d", i);
        item.id = id;

        // click/mask consistency and sparsity
        if (item.clicks.entries.empty()) ++bad;
        for (const Click& c : item.clicks.entries)
            if (item.mask.at(c.row, c.col) != c.cls) ++bad;
        if (item.clicks.count() > spec.h * spec.w / 100) ++bad;
        std::set<int> mask_classes, click_classes;
        for (int v : item.mask.v)
            if (v > 0) mask_classes.insert(v);
        for (const Click& c : item.clicks.entries)
            if (c.cls > 0) click_classes.insert(c.cls);
        if (mask_classes != click_classes) ++bad;
        items.push_back(std::move(item));
    }

    save_dataset(items, dir.string(), spec);
    Dataset loaded = load_dataset(dir.string());
    if (loaded.items.size() != items.size()) ++bad;
    for (size_t i = 0; i < items.size() && i < loaded.items.size(); ++i) {
        if (!(loaded.items[i].mask == items[i].mask)) ++bad;
        if (!(loaded.items[i].clicks.entries == items[i].clicks.entries)) ++bad;
        for (size_t j = 0; j < items[i].image.v.size(); ++j)
            if (std::fabs(loaded.items[i].image.v[j] - items[i].image.v[j]) > 1e-7) {
                ++bad;
                break;
            }
    }
    fs::remove_all(dir);

    char detail[96];
    std::snprintf(detail, sizeof(detail), "1000 scenes, %d violations", bad);
    report(9, "dataset integrity and round-trip", bad == 0, detail);
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto wanted = [&](int id) { return only.empty() || only.count(id); };

    if (wanted(1)) criterion_1();
    if (wanted(2)) criterion_2();
    if (wanted(3)) criterion_3();
    if (wanted(4)) criterion_4();

    if (wanted(5) || wanted(6) || wanted(7)) {
        // shared toy dataset: 200 train / 50 val at 64x64, C=4
        const SceneSpec spec;
        std::vector<LabeledImage> train, val;
        for (int i = 0; i < 200; ++i)
            train.push_back(gen_scene(mix_seed(31337, static_cast<uint64_t>(i)), spec));
        for (int i = 0; i < 50; ++i)
            val.push_back(gen_scene(mix_seed(71771, static_cast<uint64_t>(i)), spec));
        const TrendResults r = run_trends(train, val);
        criteria_5_to_7(r);
    }

    if (wanted(8)) criterion_8();
    if (wanted(9)) criterion_9();

    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
