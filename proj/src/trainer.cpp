#include "semseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "semseg/evalrep.hpp"
#include "semseg/log.hpp"
#include "semseg/rng.hpp"

namespace fs = std::filesystem;

namespace semseg {

void TrainConfig::validate() const {
    if (ancillary_seed == primary_seed)
        throw std::invalid_argument("config: ancillary_seed and primary_seed must differ");
    if (epochs <= 0) throw std::invalid_argument("config: epochs must be positive");
    if (batch_size <= 0) throw std::invalid_argument("config: batch_size must be positive");
    if (base_lr <= 0.0) throw std::invalid_argument("config: base_lr must be positive");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("config: alpha must lie in (0, 1)");
    if (lambda_crf < 0.0 || lambda_pseudo < 0.0 || lambda_pcons < 0.0)
        throw std::invalid_argument("config: loss weights must be nonnegative");
    if (ramp_epochs <= 0 || ramp_epochs > epochs)
        throw std::invalid_argument("config: ramp_epochs must lie in [1, epochs]");
    if (num_student_student < 0) throw std::invalid_argument("config: K must be nonnegative");
    if (num_student_student > 0 && !losses.pseudo)
        throw std::invalid_argument(
            "config: student-student stages require the pseudo loss enabled");
    if (sigma_xy <= 0.0 || sigma_rgb <= 0.0)
        throw std::invalid_argument("config: kernel bandwidths must be positive");
    if (pseudo_mode != PseudoMode::student_student && !losses.pseudo)
        throw std::invalid_argument("config: self-generation modes require the pseudo loss");
}

void TrainLog::append(const TrainLog& other) {
    records.insert(records.end(), other.records.begin(), other.records.end());
}

void write_trainlog_csv(const std::string& path, const TrainLog& log) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("trainlog: cannot open '" + path + "' for writing");
    f << "stage,epoch,mean_l_pce,mean_l_pcons,mean_l_crf,mean_l_pseudo,lambda_pcons,"
         "learning_rate,val_miou\n";
    char buf[512];
    for (const EpochRecord& r : log.records) {
        std::snprintf(buf, sizeof(buf),
                      "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.stage, r.epoch,
                      r.mean_pce, r.mean_pcons, r.mean_crf, r.mean_pseudo, r.lambda_pcons,
                      r.learning_rate, r.val_miou);
        f << buf;
    }
    if (!f) throw std::runtime_error("trainlog: write failed for '" + path + "'");
}

double rampup_weight(int epoch, double final_value, int ramp_epochs) {
    if (ramp_epochs <= 0) throw std::invalid_argument("rampup_weight: ramp_epochs must be positive");
    if (epoch < 0) throw std::invalid_argument("rampup_weight: epoch must be nonnegative");
    const double f = std::min(static_cast<double>(epoch) / ramp_epochs, 1.0);
    return final_value * f;
}

PseudoLabelMap generate_pseudo_labels(const ScoreMap& scores) {
    if (scores.h <= 0 || scores.w <= 0 || scores.c < 2)
        throw std::invalid_argument("generate_pseudo_labels: invalid score map");
    PseudoLabelMap out;
    out.labels = LabelMap(scores.h, scores.w);
    for (int p = 0; p < scores.pixels(); ++p) {
        const double* px = scores.v.data() + static_cast<size_t>(p) * scores.c;
        int best = 0;
        for (int ch = 1; ch < scores.c; ++ch)
            if (px[ch] > px[best]) best = ch;  // ties keep the lowest class
        out.labels.v[p] = best;
    }
    return out;
}

namespace {

LossResult zero_loss(int h, int w, int c) {
    LossResult r;
    r.value = 0.0;
    r.grad = Volume(h, w, c, 0.0);
    return r;
}

struct SlotOutput {
    double pce = 0.0, pcons = 0.0, crf = 0.0, pseudo = 0.0, combined = 0.0;
    GradientVector grad;
};

}  // namespace

StageResult train_stage(const TrainConfig& cfg, const std::vector<LabeledImage>& train,
                        const std::vector<LabeledImage>& val, const StageOptions& opt) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("train_stage: dataset is empty");
    if (opt.stage == Stage::ancillary) {
        if (opt.frozen_ancillary != nullptr)
            throw std::invalid_argument("train_stage: ancillary stage takes no frozen ancillary");
        if (opt.flags.pseudo)
            throw std::invalid_argument(
                "train_stage: the ancillary loss has no pseudo-label term");
        if (opt.init_from != nullptr)
            throw std::invalid_argument("train_stage: ancillary stage starts from its own seed");
    } else {
        if (opt.frozen_ancillary == nullptr)
            throw std::invalid_argument("train_stage: primary stage requires a frozen ancillary");
        if (!opt.flags.pseudo)
            throw std::invalid_argument("train_stage: primary stage requires the pseudo loss");
    }

    const SegNet net(cfg.net);
    ParameterVector student =
        opt.init_from != nullptr ? *opt.init_from : net.init_params(opt.seed);
    if (student.values.size() != net.param_count())
        throw std::invalid_argument("train_stage: init parameter vector does not fit the net");

    // teacher starts as an exact copy of the student
    TeacherState teacher;
    teacher.params = student;
    teacher.t = 1;
    teacher.alpha = cfg.alpha;

    const int n = static_cast<int>(train.size());
    const int bsz = std::min(cfg.batch_size, n);
    const int iters_per_epoch = (n + bsz - 1) / bsz;
    const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * iters_per_epoch;
    OptimizerState optstate(net.param_count(), total_steps);

    StageResult result;

    std::vector<int> order(train.size());
    for (int i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lambda_pcons_e =
            opt.flags.pcons ? rampup_weight(epoch, cfg.lambda_pcons, cfg.ramp_epochs) : 0.0;

        {
            Rng shuffle_rng(mix_seed(mix_seed(opt.seed, 0xA11CE), epoch));
            for (int i = n - 1; i > 0; --i) {
                const int j = static_cast<int>(shuffle_rng.uniform_int(0, i));
                std::swap(order[i], order[j]);
            }
        }

        double sum_pce = 0.0, sum_pcons = 0.0, sum_crf = 0.0, sum_pseudo = 0.0;
        double last_lr = 0.0;

        for (int it = 0; it < iters_per_epoch; ++it) {
            const int lo = it * bsz;
            const int hi = std::min(lo + bsz, n);
            const int count = hi - lo;
            const double inv_count = 1.0 / count;

            std::vector<SlotOutput> slots(count);
#pragma omp parallel for schedule(dynamic, 1)
            for (int k = 0; k < count; ++k) {
                const LabeledImage& item = train[order[lo + k]];
                Augmented aug;
                if (cfg.augment) {
                    const uint64_t aug_seed = mix_seed(
                        mix_seed(opt.seed ^ 0xAB5EED, static_cast<uint64_t>(epoch) * 1000003ull +
                                                          static_cast<uint64_t>(it)),
                        static_cast<uint64_t>(order[lo + k]));
                    aug = augment(item.image, item.mask, item.clicks, aug_seed);
                } else {
                    aug = {item.image, item.mask, item.clicks};
                }

                auto cache = net.forward_cached(aug.image, student);
                const ScoreMap& sscores = net.scores(*cache);
                const int H = sscores.h, W = sscores.w, C = sscores.c;

                LossResult pce = opt.flags.pce ? partial_cross_entropy(sscores, aug.clicks)
                                               : zero_loss(H, W, C);
                LossResult pcons = zero_loss(H, W, C);
                if (opt.flags.pcons) {
                    const ScoreMap tscores = net.forward(aug.image, teacher.params);
                    pcons = pixel_consistency_approx(tscores, sscores);
                }
                LossResult crf = opt.flags.crf
                                     ? crf_loss_direct(sscores, aug.image, cfg.sigma_xy,
                                                       cfg.sigma_rgb)
                                     : zero_loss(H, W, C);
                LossResult lstar = combine_ancillary(pce, pcons, crf, lambda_pcons_e,
                                                     opt.flags.crf ? cfg.lambda_crf : 0.0);

                LossResult combined;
                double pseudo_value = 0.0;
                if (opt.stage == Stage::primary) {
                    const ScoreMap anc_scores = net.forward(aug.image, *opt.frozen_ancillary);
                    const PseudoLabelMap plabels = generate_pseudo_labels(anc_scores);
                    LossResult pseudo = pseudo_label_loss(sscores, plabels);
                    pseudo_value = pseudo.value;
                    combined = combine_primary(lstar, pseudo, cfg.lambda_pseudo);
                } else {
                    combined = std::move(lstar);
                }

                SlotOutput& out = slots[k];
                out.pce = pce.value;
                out.pcons = pcons.value;
                out.crf = crf.value;
                out.pseudo = pseudo_value;
                out.combined = combined.value;

                // batch-mean loss: scale this image's upstream by 1/count
                for (double& g : combined.grad.v) g *= inv_count;
                out.grad = net.backward_from_cache(*cache, student, combined.grad);
            }

            // fixed-order merge keeps runs bit-identical regardless of threads
            GradientVector grad;
            grad.values.assign(net.param_count(), 0.0);
            double it_pce = 0.0, it_pcons = 0.0, it_crf = 0.0, it_pseudo = 0.0, it_comb = 0.0;
            for (const SlotOutput& s : slots) {
                for (size_t i = 0; i < grad.values.size(); ++i) grad.values[i] += s.grad.values[i];
                it_pce += s.pce;
                it_pcons += s.pcons;
                it_crf += s.crf;
                it_pseudo += s.pseudo;
                it_comb += s.combined;
            }
            it_pce *= inv_count;
            it_pcons *= inv_count;
            it_crf *= inv_count;
            it_pseudo *= inv_count;
            it_comb *= inv_count;

            if (opt.lr_mode == StageOptions::LrMode::constant) {
                last_lr = opt.constant_lr;
                sgd_step_fixed_lr(student, grad, optstate, opt.constant_lr);
            } else {
                last_lr = poly_lr(cfg.base_lr, optstate.t, total_steps);
                sgd_step(student, grad, optstate, cfg.base_lr);
            }
            ema_update(teacher, student);

            sum_pce += it_pce;
            sum_pcons += it_pcons;
            sum_crf += it_crf;
            sum_pseudo += it_pseudo;

            if (opt.trace) {
                IterationTrace tr;
                tr.epoch = epoch;
                tr.iteration = it;
                tr.pce = it_pce;
                tr.pcons = it_pcons;
                tr.crf = it_crf;
                tr.pseudo = it_pseudo;
                tr.combined = it_comb;
                tr.lambda_pcons = lambda_pcons_e;
                tr.learning_rate = last_lr;
                tr.student_params = student.values;
                tr.teacher_params = teacher.params.values;
                result.trace.push_back(std::move(tr));
            }
        }

        EpochRecord rec;
        rec.stage = opt.stage_id;
        rec.epoch = epoch;
        rec.mean_pce = sum_pce / iters_per_epoch;
        rec.mean_pcons = sum_pcons / iters_per_epoch;
        rec.mean_crf = sum_crf / iters_per_epoch;
        rec.mean_pseudo = sum_pseudo / iters_per_epoch;
        rec.lambda_pcons = lambda_pcons_e;
        rec.learning_rate = last_lr;
        rec.val_miou = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : evaluate_dataset(net, student, val).mean;
        result.log.records.push_back(rec);

        {
            char buf[256];
            std::snprintf(buf, sizeof(buf),
                          "stage %d epoch %3d: pce %.4f pcons %.5f crf %.4f pseudo %.4f "
                          "lambda %.1f lr %.5f val_miou %.4f",
                          opt.stage_id, epoch, rec.mean_pce, rec.mean_pcons, rec.mean_crf,
                          rec.mean_pseudo, rec.lambda_pcons, rec.learning_rate, rec.val_miou);
            log_debug(buf);
        }
    }

    result.student = std::move(student);
    result.teacher = std::move(teacher.params);
    return result;
}

StageResult train_stage(const TrainConfig& cfg, const std::vector<LabeledImage>& train,
                        const std::vector<LabeledImage>& val, Stage stage,
                        const ParameterVector* frozen_ancillary) {
    StageOptions opt;
    opt.stage = stage;
    opt.stage_id = stage == Stage::ancillary ? 1 : 2;
    opt.seed = stage == Stage::ancillary ? cfg.ancillary_seed : cfg.primary_seed;
    opt.flags = cfg.losses;
    opt.frozen_ancillary = frozen_ancillary;
    return train_stage(cfg, train, val, opt);
}

SeminarResult run_seminar(const TrainConfig& cfg, const std::vector<LabeledImage>& train,
                          const std::vector<LabeledImage>& val) {
    cfg.validate();

    SeminarResult result;

    LossFlags ancillary_flags = cfg.losses;
    ancillary_flags.pseudo = false;
    StageOptions anc;
    anc.stage = Stage::ancillary;
    anc.stage_id = 1;
    anc.seed = cfg.ancillary_seed;
    anc.flags = ancillary_flags;
    log_info("seminar: training ancillary stage (seed " + std::to_string(cfg.ancillary_seed) +
             ")");
    StageResult stage = train_stage(cfg, train, val, anc);
    result.log.append(stage.log);
    result.stage_students.push_back(stage.student);
    result.stage_teachers.push_back(stage.teacher);

    if (cfg.pseudo_mode == PseudoMode::student_student) {
        ParameterVector previous = stage.student;
        for (int k = 1; k <= cfg.num_student_student; ++k) {
            StageOptions pri;
            pri.stage = Stage::primary;
            pri.stage_id = k + 1;
            pri.seed = cfg.primary_seed + static_cast<uint64_t>(k - 1) * 1000ull;
            pri.flags = cfg.losses;
            pri.frozen_ancillary = &previous;
            log_info("seminar: training primary stage " + std::to_string(k) + " (seed " +
                     std::to_string(pri.seed) + ")");
            StageResult sres = train_stage(cfg, train, val, pri);
            result.log.append(sres.log);
            result.stage_students.push_back(sres.student);
            result.stage_teachers.push_back(sres.teacher);
            previous = result.stage_students.back();
        }
    } else {
        // self-generation ablation: same student continues on its own labels
        const ParameterVector frozen = stage.student;
        StageOptions sg;
        sg.stage = Stage::primary;
        sg.stage_id = 2;
        sg.seed = cfg.primary_seed;
        sg.flags = cfg.losses;
        sg.frozen_ancillary = &frozen;
        sg.init_from = &stage.student;
        if (cfg.pseudo_mode == PseudoMode::self_gen_unchanged) {
            const int n = static_cast<int>(train.size());
            const int bsz = std::min(cfg.batch_size, n);
            const int64_t t1 = static_cast<int64_t>(cfg.epochs) * ((n + bsz - 1) / bsz);
            sg.lr_mode = StageOptions::LrMode::constant;
            sg.constant_lr = poly_lr(cfg.base_lr, t1 - 1, t1);  // schedule left where it ended
        }
        log_info(std::string("seminar: training self-generation stage (") +
                 (cfg.pseudo_mode == PseudoMode::self_gen_reset ? "reset lr" : "unchanged lr") +
                 ")");
        StageResult sres = train_stage(cfg, train, val, sg);
        result.log.append(sres.log);
        result.stage_students.push_back(sres.student);
        result.stage_teachers.push_back(sres.teacher);
    }

    result.model = result.stage_students.back();
    return result;
}

void write_run_artifacts(const std::string& out_dir, const TrainConfig& cfg,
                         const SeminarResult& result) {
    fs::create_directories(out_dir);
    for (size_t k = 0; k < result.stage_students.size(); ++k) {
        const std::string idx = std::to_string(k + 1);
        save_checkpoint((fs::path(out_dir) / ("stage" + idx + "_student.ckpt")).string(),
                        result.stage_students[k], cfg.net);
        save_checkpoint((fs::path(out_dir) / ("stage" + idx + "_teacher.ckpt")).string(),
                        result.stage_teachers[k], cfg.net);
    }
    save_checkpoint((fs::path(out_dir) / "model.ckpt").string(), result.model, cfg.net);
    write_trainlog_csv((fs::path(out_dir) / "trainlog.csv").string(), result.log);
}

}  // namespace semseg
