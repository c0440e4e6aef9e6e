#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "semseg/config.hpp"
#include "semseg/data.hpp"
#include "semseg/evalrep.hpp"
#include "semseg/log.hpp"
#include "semseg/net.hpp"
#include "semseg/rng.hpp"
#include "semseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace semseg;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[64];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// timestamps live here and nowhere else, so every other output is reproducible
void write_run_meta(const std::string& dir, const std::string& command) {
    std::ofstream f(fs::path(dir) / "run_meta.json");
    f << "{\"command\": \"" << command << "\", \"timestamp\": \"" << iso_timestamp() << "\"}\n";
}

int dataset_classes(const Dataset& ds, const std::string& what) {
    if (ds.meta) return ds.meta->spec.classes;
    int maxc = 0;
    for (const LabeledImage& item : ds.items)
        for (int v : item.mask.v) maxc = std::max(maxc, v);
    if (ds.items.empty()) throw UsageError(what + ": dataset is empty and has no meta.json");
    return maxc + 1;
}

struct SplitData {
    Dataset train, val;
    int classes = 0;
};

SplitData load_split(const std::string& data_dir) {
    if (!fs::exists(data_dir)) throw UsageError("data directory '" + data_dir + "' does not exist");
    const fs::path tr = fs::path(data_dir) / "train";
    const fs::path va = fs::path(data_dir) / "val";
    if (!fs::exists(tr) || !fs::exists(va))
        throw UsageError("data directory '" + data_dir + "' must contain train/ and val/ subsets");
    SplitData out;
    out.train = load_dataset(tr.string());
    out.val = load_dataset(va.string());
    if (out.train.items.empty()) throw UsageError("training split in '" + data_dir + "' is empty");
    out.classes = dataset_classes(out.train, "train split");
    const int val_classes = out.val.items.empty() ? out.classes : dataset_classes(out.val, "val");
    if (val_classes != out.classes)
        throw UsageError("train and val splits disagree on class count");
    return out;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, int count,
                 uint64_t seed) {
    FileConfig fc = load_config_file(config_path);
    fc.scene.validate();
    if (count <= 0) throw UsageError("--count must be positive");

    std::vector<LabeledImage> items;
    items.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        LabeledImage item = gen_scene(mix_seed(seed, static_cast<uint64_t>(i)), fc.scene);
        char id[32];
        std::snprintf(id, sizeof(id), "img%05d", i);
        item.id = id;
        items.push_back(std::move(item));
    }
    save_dataset(items, out_dir, fc.scene);
    std::ofstream(fs::path(out_dir) / "resolved_config.toml") << render_config(fc);
    std::printf("generated %d scenes (C=%d, %dx%d) into %s\n", count, fc.scene.classes, fc.scene.h,
                fc.scene.w, out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
    FileConfig fc = load_config_file(config_path);
    SplitData data = load_split(data_dir);
    fc.train.net.classes = data.classes;
    fc.train.dataset_path = data_dir;
    fc.train.output_path = out_dir;
    fc.train.validate();

    fs::create_directories(out_dir);
    SeminarResult result = run_seminar(fc.train, data.train.items, data.val.items);
    write_run_artifacts(out_dir, fc.train, result);
    std::ofstream(fs::path(out_dir) / "resolved_config.toml") << render_config(fc);
    write_run_meta(out_dir, "train");

    const double final_miou = result.log.records.empty()
                                  ? std::numeric_limits<double>::quiet_NaN()
                                  : result.log.records.back().val_miou;
    std::printf("training complete: %zu stages, final val mIoU %.4f\n",
                result.stage_students.size(), final_miou);
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, std::string out_csv) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    Dataset ds = load_dataset(data_dir);
    if (ds.items.empty()) throw UsageError("dataset '" + data_dir + "' is empty");
    const int classes = dataset_classes(ds, "eval");
    if (classes != ck.config.classes)
        throw UsageError("checkpoint classes=" + std::to_string(ck.config.classes) +
                         " does not match dataset classes=" + std::to_string(classes));

    SegNet net(ck.config);
    IouReport rep = evaluate_dataset(net, ck.params, ds.items);
    for (int c = 0; c < classes; ++c) {
        if (std::isnan(rep.per_class[c]))
            std::printf("class %d IoU   absent\n", c);
        else
            std::printf("class %d IoU %.4f\n", c, rep.per_class[c]);
    }
    std::printf("mIoU %.4f\n", rep.mean);

    if (out_csv.empty()) out_csv = ckpt_path + ".eval.csv";
    std::ofstream f(out_csv);
    if (!f) throw std::runtime_error("cannot write '" + out_csv + "'");
    f << "class,iou\n";
    char buf[64];
    for (int c = 0; c < classes; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", rep.per_class[c]);
        f << c << "," << buf << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", rep.mean);
    f << "mean," << buf << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, int jobs) {
    FileConfig fc = load_config_file(config_path);
    if (!fc.ablation) throw UsageError("config has no [ablation] section");
    SplitData data = load_split(data_dir);

    AblationGrid grid = *fc.ablation;
    for (AblationEntry& e : grid.configs) e.config.net.classes = data.classes;

    std::string exe;
    if (jobs > 1) {
        char buf[4096];
        const ssize_t n = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
        if (n <= 0) throw std::runtime_error("cannot resolve own executable path for --jobs");
        buf[n] = '\0';
        exe = buf;
    }

    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "resolved_config.toml") << render_config(fc);
    AblationResult res =
        run_ablation(grid, data.train.items, data.val.items, out_dir, jobs, exe, data_dir);
    write_run_meta(out_dir, "ablate");
    std::printf("ablation finished: %zu runs, %s\n", res.rows.size(),
                res.all_ok ? "all ok" : "with failures");
    return res.all_ok ? 0 : 2;
}

int cmd_report(const std::string& run_dir, const std::string& out_dir) {
    const fs::path cfg_path = fs::path(run_dir) / "resolved_config.toml";
    if (!fs::exists(cfg_path))
        throw UsageError("run directory '" + run_dir + "' has no resolved_config.toml");
    FileConfig fc = load_config_file(cfg_path.string());

    Checkpoint ck = load_checkpoint((fs::path(run_dir) / "model.ckpt").string());
    SegNet net(ck.config);

    const fs::path val_dir = fs::path(fc.train.dataset_path) / "val";
    Dataset val = load_dataset(val_dir.string());
    if (val.items.empty()) throw UsageError("validation split '" + val_dir.string() + "' is empty");

    fs::create_directories(out_dir);

    const size_t n = std::min<size_t>(val.items.size(), 8);
    std::vector<Image> images;
    std::vector<LabelMap> gts, preds;
    for (size_t i = 0; i < n; ++i) {
        images.push_back(val.items[i].image);
        gts.push_back(val.items[i].mask);
        preds.push_back(predict(net, ck.params, val.items[i].image));
    }
    render_grid(images, gts, preds, (fs::path(out_dir) / "grid.ppm").string());

    // per-epoch mIoU curve from the run's trainlog
    std::ifstream log(fs::path(run_dir) / "trainlog.csv");
    if (!log) throw UsageError("run directory '" + run_dir + "' has no trainlog.csv");
    std::ofstream curve(fs::path(out_dir) / "miou_curve.csv");
    curve << "stage,epoch,val_miou\n";
    std::string line;
    std::getline(log, line);  // header
    while (std::getline(log, line)) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() >= 9) curve << cols[0] << "," << cols[1] << "," << cols[8] << "\n";
    }
    std::printf("report written to %s\n", out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"seminar-learning trainer for click-supervised segmentation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, ckpt_path, run_dir, eval_csv;
    int count = 0, jobs = 1;
    uint64_t seed = 0;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "config file (scene section)")->required();
    gen->add_option("--out", out_path, "output dataset directory")->required();
    gen->add_option("--count", count, "number of scenes")->required();
    gen->add_option("--seed", seed, "dataset seed")->required();

    CLI::App* train = app.add_subcommand("train", "run the seminar training pipeline");
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--data", data_dir, "dataset directory with train/ and val/")->required();
    train->add_option("--out", out_path, "run output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--out", eval_csv, "per-class IoU csv (default: <checkpoint>.eval.csv)");

    CLI::App* ablate = app.add_subcommand("ablate", "run an ablation grid");
    ablate->add_option("--config", config_path, "config file with [ablation]")->required();
    ablate->add_option("--data", data_dir, "dataset directory with train/ and val/")->required();
    ablate->add_option("--out", out_path, "grid output directory")->required();
    ablate->add_option("--jobs", jobs, "parallel worker processes (default 1)");

    CLI::App* report = app.add_subcommand("report", "render grids and curves for a finished run");
    report->add_option("--run", run_dir, "finished training run directory")->required();
    report->add_option("--out", out_path, "report output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_path, count, seed);
        if (train->parsed()) return cmd_train(config_path, data_dir, out_path);
        if (eval->parsed()) return cmd_eval(ckpt_path, data_dir, eval_csv);
        if (ablate->parsed()) return cmd_ablate(config_path, data_dir, out_path, jobs);
        if (report->parsed()) return cmd_report(run_dir, out_path);
    } catch (const UsageError& e) {
        log_error(e.what());
        return 1;
    } catch (const ConfigError& e) {
        log_error(e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        log_error(e.what());
        return 1;
    } catch (const std::exception& e) {
        log_error(e.what());
        return 2;
    }
    return 1;
}
