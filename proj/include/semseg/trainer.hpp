#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semseg/data.hpp"
#include "semseg/ema.hpp"
#include "semseg/losses.hpp"
#include "semseg/net.hpp"
#include "semseg/optim.hpp"

namespace semseg {

struct LossFlags {
    bool pce = true;
    bool crf = true;
    bool pcons = true;
    bool pseudo = true;
};

// How the pseudo-label source for post-ancillary stages is chosen.
// student_student: fresh-seeded student trained against the previous stage's
// student (the seminar path). The self_gen modes are ablation baselines that
// continue training the same student on its own pseudo-labels, with the
// learning-rate schedule either reset or pinned at its final stage-1 value.
enum class PseudoMode { student_student, self_gen_reset, self_gen_unchanged };

struct TrainConfig {
    uint64_t ancillary_seed = 1;
    uint64_t primary_seed = 2;  // must differ from ancillary_seed
    int epochs = 60;            // per stage
    int batch_size = 12;
    double base_lr = 0.1;
    double alpha = 0.999;
    double lambda_crf = 1.0;
    double lambda_pseudo = 1.0;
    double lambda_pcons = 200.0;  // final value after ramp-up
    int ramp_epochs = 40;
    int num_student_student = 1;  // K
    LossFlags losses;
    bool augment = true;
    double sigma_xy = 5.0;
    double sigma_rgb = 0.1;
    PseudoMode pseudo_mode = PseudoMode::student_student;
    NetConfig net;
    std::string dataset_path;
    std::string output_path;

    void validate() const;  // throws on violated invariants
};

struct EpochRecord {
    int stage = 0;  // 1-based
    int epoch = 0;  // 0-based within the stage
    double mean_pce = 0.0;
    double mean_pcons = 0.0;
    double mean_crf = 0.0;
    double mean_pseudo = 0.0;
    double lambda_pcons = 0.0;
    double learning_rate = 0.0;  // lr of the last optimizer step of the epoch
    double val_miou = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> records;

    void append(const TrainLog& other);
};

// CSV with exactly the EpochRecord columns, header row included.
void write_trainlog_csv(const std::string& path, const TrainLog& log);

// Linear ramp: final * min(epoch / ramp_epochs, 1).
double rampup_weight(int epoch, double final_value, int ramp_epochs);

// Per-pixel argmax; ties break toward the lowest class index.
PseudoLabelMap generate_pseudo_labels(const ScoreMap& scores);

enum class Stage { ancillary, primary };

// Per-iteration details captured only when StageOptions::trace is set
// (test instrumentation; keep runs tiny).
struct IterationTrace {
    int epoch = 0, iteration = 0;
    double pce = 0.0, pcons = 0.0, crf = 0.0, pseudo = 0.0;
    double combined = 0.0;
    double lambda_pcons = 0.0, learning_rate = 0.0;
    std::vector<double> student_params;
    std::vector<double> teacher_params;
};

struct StageOptions {
    Stage stage = Stage::ancillary;
    int stage_id = 1;
    uint64_t seed = 1;
    LossFlags flags;
    const ParameterVector* frozen_ancillary = nullptr;  // pseudo-label source
    const ParameterVector* init_from = nullptr;         // continue training (self-gen)
    enum class LrMode { poly, constant } lr_mode = LrMode::poly;
    double constant_lr = 0.0;
    bool trace = false;
};

struct StageResult {
    ParameterVector student;
    ParameterVector teacher;
    TrainLog log;
    std::vector<IterationTrace> trace;
};

// One teacher-student stage. Ancillary stages forbid a frozen ancillary and
// the pseudo loss; primary stages require both.
StageResult train_stage(const TrainConfig& cfg, const std::vector<LabeledImage>& train,
                        const std::vector<LabeledImage>& val, const StageOptions& opt);

// Spec-shaped convenience overload: seed and flags derived from cfg and stage.
StageResult train_stage(const TrainConfig& cfg, const std::vector<LabeledImage>& train,
                        const std::vector<LabeledImage>& val, Stage stage,
                        const ParameterVector* frozen_ancillary);

struct SeminarResult {
    ParameterVector model;  // final student
    TrainLog log;
    std::vector<ParameterVector> stage_students;  // one per executed stage
    std::vector<ParameterVector> stage_teachers;
};

// Full pipeline: ancillary stage, then K chained student-student stages (or
// one self-generation stage for the ablation modes). K = 0 returns the
// ancillary student. Stage k >= 1 uses seed primary_seed + (k-1)*1000.
SeminarResult run_seminar(const TrainConfig& cfg, const std::vector<LabeledImage>& train,
                          const std::vector<LabeledImage>& val);

// Stage checkpoints (stage<k>_{student,teacher}.ckpt), the final model.ckpt
// and trainlog.csv under out_dir. The resolved-config echo is the caller's.
void write_run_artifacts(const std::string& out_dir, const TrainConfig& cfg,
                         const SeminarResult& result);

}  // namespace semseg
