#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semseg/data.hpp"
#include "semseg/net.hpp"
#include "semseg/trainer.hpp"

namespace semseg {

// Rows = ground truth, cols = prediction.
struct ConfusionMatrix {
    int classes = 0;
    std::vector<int64_t> counts;  // classes x classes

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int c) : classes(c), counts(static_cast<size_t>(c) * c, 0) {}

    int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * classes + pred]; }
    int64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * classes + pred]; }

    void add(const LabelMap& pred, const LabelMap& gt);
    void merge(const ConfusionMatrix& other);
    int64_t total() const;
};

struct IouReport {
    std::vector<double> per_class;  // NaN for classes absent from both gt and pred
    double mean = 0.0;              // over present classes only
};

IouReport iou_from_confusion(const ConfusionMatrix& cm);
IouReport miou(const LabelMap& pred, const LabelMap& gt, int classes);

// Forward + per-pixel max-score decode.
LabelMap predict(const SegNet& net, const ParameterVector& params, const Image& image);

// Dataset-level mIoU by confusion-matrix accumulation across items.
IouReport evaluate_dataset(const SegNet& net, const ParameterVector& params,
                           const std::vector<LabeledImage>& items);

// Tiled PPM: one row per item, columns input | gt | prediction, classes
// mapped to a fixed palette.
void render_grid(const std::vector<Image>& images, const std::vector<LabelMap>& gt,
                 const std::vector<LabelMap>& pred, const std::string& path);

struct AblationEntry {
    std::string name;
    TrainConfig config;
};

struct AblationGrid {
    std::vector<AblationEntry> configs;
    // each run uses one (ancillary_seed, primary_seed) pair from this list
    std::vector<std::pair<uint64_t, uint64_t>> seeds;

    void validate() const;  // unique names, >= 1 seed
};

struct AblationRow {
    std::string config;
    uint64_t ancillary_seed = 0, primary_seed = 0;
    bool ok = false;
    std::string error;
    double miou = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    bool all_ok = true;
};

// Runs run_seminar per (config, seed), one isolated subdirectory per run
// under out_dir, and writes ablation.csv (one row per run plus per-config
// mean/stddev aggregate rows). Individual run failures are recorded and the
// grid continues. jobs > 1 fans runs out to worker processes via exe_path.
AblationResult run_ablation(const AblationGrid& grid, const std::vector<LabeledImage>& train,
                            const std::vector<LabeledImage>& val, const std::string& out_dir,
                            int jobs = 1, const std::string& exe_path = "",
                            const std::string& data_dir = "");

}  // namespace semseg
