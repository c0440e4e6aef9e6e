#include "semseg/evalrep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <sys/wait.h>
#include <unistd.h>

#include "semseg/config.hpp"
#include "semseg/log.hpp"

namespace fs = std::filesystem;

namespace semseg {

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("confusion: prediction/ground-truth dimension mismatch");
    for (int p = 0; p < pred.pixels(); ++p) {
        const int g = gt.v[p], q = pred.v[p];
        if (g < 0 || g >= classes || q < 0 || q >= classes)
            throw std::invalid_argument("confusion: class index out of range");
        ++at(g, q);
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes != classes) throw std::invalid_argument("confusion: class count mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (int64_t c : counts) t += c;
    return t;
}

IouReport iou_from_confusion(const ConfusionMatrix& cm) {
    IouReport rep;
    rep.per_class.assign(cm.classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < cm.classes; ++c) {
        const int64_t tp = cm.at(c, c);
        int64_t fp = 0, fn = 0;
        for (int o = 0; o < cm.classes; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const int64_t denom = tp + fp + fn;
        if (denom == 0) continue;  // absent from both gt and pred: excluded from the mean
        rep.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
        sum += rep.per_class[c];
        ++present;
    }
    rep.mean = present > 0 ? sum / present : std::numeric_limits<double>::quiet_NaN();
    return rep;
}

IouReport miou(const LabelMap& pred, const LabelMap& gt, int classes) {
    ConfusionMatrix cm(classes);
    cm.add(pred, gt);
    return iou_from_confusion(cm);
}

LabelMap predict(const SegNet& net, const ParameterVector& params, const Image& image) {
    const ScoreMap scores = net.forward(image, params);
    LabelMap out(scores.h, scores.w);
    for (int p = 0; p < scores.pixels(); ++p) {
        const double* px = scores.v.data() + static_cast<size_t>(p) * scores.c;
        int best = 0;
        for (int ch = 1; ch < scores.c; ++ch)
            if (px[ch] > px[best]) best = ch;
        out.v[p] = best;
    }
    return out;
}

IouReport evaluate_dataset(const SegNet& net, const ParameterVector& params,
                           const std::vector<LabeledImage>& items) {
    const int n = static_cast<int>(items.size());
    std::vector<ConfusionMatrix> partial(n, ConfusionMatrix(net.config().classes));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
        partial[i].add(predict(net, params, items[i].image), items[i].mask);
    ConfusionMatrix cm(net.config().classes);
    for (const ConfusionMatrix& p : partial) cm.merge(p);
    return iou_from_confusion(cm);
}

namespace {

// fixed class palette; indices beyond the table cycle with dimming
constexpr int kPalette[][3] = {
    {40, 40, 40},  {220, 60, 50},  {70, 180, 80},  {60, 90, 220},
    {230, 200, 60}, {200, 70, 200}, {70, 200, 200}, {240, 240, 240},
};
constexpr int kPaletteSize = 8;

void palette_color(int cls, double out[3]) {
    const int base = cls % kPaletteSize;
    const double dim = 1.0 / (1 + cls / kPaletteSize);
    for (int ch = 0; ch < 3; ++ch) out[ch] = kPalette[base][ch] / 255.0 * dim;
}

Image colorize(const LabelMap& m) {
    Image img(m.h, m.w, 3);
    for (int p = 0; p < m.pixels(); ++p) {
        double col[3];
        palette_color(m.v[p], col);
        for (int ch = 0; ch < 3; ++ch) img.v[static_cast<size_t>(p) * 3 + ch] = col[ch];
    }
    return img;
}

}  // namespace

void render_grid(const std::vector<Image>& images, const std::vector<LabelMap>& gt,
                 const std::vector<LabelMap>& pred, const std::string& path) {
    if (images.empty()) throw std::invalid_argument("render_grid: empty item list");
    if (gt.size() != images.size() || pred.size() != images.size())
        throw std::invalid_argument("render_grid: mismatched list lengths");
    const int h = images[0].h, w = images[0].w;
    for (size_t i = 0; i < images.size(); ++i)
        if (images[i].h != h || images[i].w != w || gt[i].h != h || gt[i].w != w ||
            pred[i].h != h || pred[i].w != w)
            throw std::invalid_argument("render_grid: items have differing dimensions");

    Image grid(static_cast<int>(images.size()) * h, 3 * w, 3);
    for (size_t i = 0; i < images.size(); ++i) {
        const Image cols[3] = {images[i], colorize(gt[i]), colorize(pred[i])};
        for (int k = 0; k < 3; ++k)
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    for (int ch = 0; ch < 3; ++ch)
                        grid.at(static_cast<int>(i) * h + r, k * w + c, ch) = cols[k].at(r, c, ch);
    }
    write_ppm(path, grid);
}

// ---------------------------------------------------------------
// ablation runner
// ---------------------------------------------------------------

void AblationGrid::validate() const {
    if (configs.empty()) throw std::invalid_argument("ablation: no configurations");
    if (seeds.empty()) throw std::invalid_argument("ablation: at least one seed pair required");
    for (size_t i = 0; i < configs.size(); ++i) {
        if (configs[i].name.empty()) throw std::invalid_argument("ablation: empty config name");
        for (size_t j = i + 1; j < configs.size(); ++j)
            if (configs[i].name == configs[j].name)
                throw std::invalid_argument("ablation: duplicate config name '" + configs[i].name +
                                            "'");
    }
}

namespace {

std::string run_dir_name(const std::string& config, uint64_t anc, uint64_t pri) {
    std::ostringstream ss;
    ss << config << "_s" << anc << "_" << pri;
    return ss.str();
}

}  // namespace

AblationResult run_ablation(const AblationGrid& grid, const std::vector<LabeledImage>& train,
                            const std::vector<LabeledImage>& val, const std::string& out_dir,
                            int jobs, const std::string& exe_path, const std::string& data_dir) {
    grid.validate();
    if (jobs < 1) jobs = 1;
    if (jobs > 1 && (exe_path.empty() || data_dir.empty()))
        throw std::invalid_argument("ablation: --jobs > 1 requires the executable and data paths");
    fs::create_directories(out_dir);

    struct Pending {
        AblationRow row;
        TrainConfig cfg;
        std::string dir;
    };
    std::vector<Pending> runs;
    for (const AblationEntry& entry : grid.configs) {
        for (const auto& [anc, pri] : grid.seeds) {
            Pending p;
            p.cfg = entry.config;
            p.cfg.ancillary_seed = anc;
            p.cfg.primary_seed = pri;
            p.dir = (fs::path(out_dir) / run_dir_name(entry.name, anc, pri)).string();
            p.cfg.dataset_path = data_dir;
            p.cfg.output_path = p.dir;
            p.row.config = entry.name;
            p.row.ancillary_seed = anc;
            p.row.primary_seed = pri;
            runs.push_back(std::move(p));
        }
    }

    auto finish_row = [&](Pending& p) {
        // mIoU from the run's final checkpoint against the validation set
        try {
            Checkpoint ck = load_checkpoint((fs::path(p.dir) / "model.ckpt").string());
            SegNet net(ck.config);
            p.row.miou = evaluate_dataset(net, ck.params, val).mean;
            p.row.ok = true;
        } catch (const std::exception& e) {
            p.row.ok = false;
            p.row.error = e.what();
        }
    };

    if (jobs == 1) {
        for (Pending& p : runs) {
            log_info("ablation run: " + p.dir);
            try {
                fs::create_directories(p.dir);
                SeminarResult result = run_seminar(p.cfg, train, val);
                write_run_artifacts(p.dir, p.cfg, result);
                FileConfig fc;
                fc.train = p.cfg;
                std::ofstream(fs::path(p.dir) / "resolved_config.toml") << render_config(fc);
                finish_row(p);
            } catch (const std::exception& e) {
                p.row.ok = false;
                p.row.error = e.what();
                log_error("ablation run failed: " + p.dir + ": " + e.what());
            }
        }
    } else {
        // worker processes: each run is a plain `semseg train` invocation
        struct Child {
            pid_t pid;
            size_t run_index;
        };
        std::vector<Child> active;
        size_t next = 0;
        std::vector<int> exit_codes(runs.size(), -1);
        auto reap = [&]() {
            int status = 0;
            pid_t pid = waitpid(-1, &status, 0);
            for (size_t i = 0; i < active.size(); ++i) {
                if (active[i].pid == pid) {
                    exit_codes[active[i].run_index] =
                        WIFEXITED(status) ? WEXITSTATUS(status) : 128;
                    active.erase(active.begin() + static_cast<long>(i));
                    return;
                }
            }
        };
        for (next = 0; next < runs.size(); ++next) {
            while (static_cast<int>(active.size()) >= jobs) reap();
            Pending& p = runs[next];
            fs::create_directories(p.dir);
            // config file for the child
            FileConfig fc;
            fc.train = p.cfg;
            const std::string cfg_path = (fs::path(p.dir) / "config.toml").string();
            std::ofstream(cfg_path) << render_config(fc);
            log_info("ablation spawn: " + p.dir);
            pid_t pid = fork();
            if (pid == 0) {
                execl(exe_path.c_str(), exe_path.c_str(), "train", "--config", cfg_path.c_str(),
                      "--data", data_dir.c_str(), "--out", p.dir.c_str(),
                      static_cast<char*>(nullptr));
                _exit(127);
            }
            if (pid < 0) throw std::runtime_error("ablation: fork failed");
            active.push_back({pid, next});
        }
        while (!active.empty()) reap();
        for (size_t i = 0; i < runs.size(); ++i) {
            if (exit_codes[i] != 0) {
                runs[i].row.ok = false;
                runs[i].row.error = "worker exited with code " + std::to_string(exit_codes[i]);
            } else {
                finish_row(runs[i]);
            }
        }
    }

    AblationResult result;
    for (Pending& p : runs) {
        result.rows.push_back(p.row);
        if (!p.row.ok) result.all_ok = false;
    }

    // csv: one row per run, then one aggregate row per config (mean + stddev
    // over its successful runs)
    std::ostringstream csv;
    csv << "config,ancillary_seed,primary_seed,status,val_miou,stddev\n";
    char buf[64];
    for (const AblationRow& r : result.rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.miou);
        csv << r.config << "," << r.ancillary_seed << "," << r.primary_seed << ","
            << (r.ok ? "ok" : "failed") << "," << (r.ok ? buf : "") << ",\n";
    }
    for (const AblationEntry& entry : grid.configs) {
        std::vector<double> vals;
        for (const AblationRow& r : result.rows)
            if (r.config == entry.name && r.ok) vals.push_back(r.miou);
        double mean = std::numeric_limits<double>::quiet_NaN(), sd = 0.0;
        if (!vals.empty()) {
            mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            if (vals.size() > 1) {
                double ss = 0.0;
                for (double v : vals) ss += (v - mean) * (v - mean);
                sd = std::sqrt(ss / static_cast<double>(vals.size() - 1));
            }
        }
        csv << entry.name << ",,,aggregate,";
        std::snprintf(buf, sizeof(buf), "%.17g", mean);
        csv << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", sd);
        csv << buf << "\n";
    }
    std::ofstream f(fs::path(out_dir) / "ablation.csv");
    f << csv.str();
    if (!f) throw std::runtime_error("ablation: cannot write ablation.csv");
    return result;
}

}  // namespace semseg
