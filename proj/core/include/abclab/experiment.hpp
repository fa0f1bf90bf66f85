#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "abclab/calibration.hpp"
#include "abclab/model.hpp"
#include "abclab/task.hpp"
#include "abclab/window_bias.hpp"

namespace abclab {

struct AbsSettings {
    int w = 1;
    int cpi_period = 0;  // 0 = off
    bool operator_column_open = true;
};

struct AbcSettings {
    std::vector<Direction> directions = default_directions();
    float threshold_multiplier = 4.0f;
    ThresholdScope scope = ThresholdScope::Site;
    int M = 0, N = 0;  // 0 = derived from the largest eval length
    int sample_budget = 256;
    int min_correct = 32;
    bool softmax_normalize = true;
    int min_line_support = 3;
    int line_halo = 0;
    bool include_self = true;
    bool include_cross = true;
    PEKind retrain_pe = PEKind::NoPE;
    int retrain_cpi_period = 0;
    float retrain_lr = 0.0f;        // 0 = the model's learning rate
    float retrain_dropout = -1.0f;  // < 0 = the model's dropout
    bool warm_start = false;         // default trains the re-stage from scratch
    int retrain_budget_divisor = 5;  // retrain budget = interp steps / divisor
};

struct ExperimentConfig {
    TaskKind task = TaskKind::Successor;
    int base = 10;
    int train_digit_limit = 6;         // L_int
    std::uint64_t range_max = 0;       // 0 = base^train_digit_limit (2^20 at full scale)
    std::uint64_t train_pairs = 0;     // binary tasks: tuples to draw; 0 = range_max
    PEKind pe = PEKind::Sinusoidal;
    std::optional<AbsSettings> abs;
    std::optional<AbcSettings> abc;
    std::uint64_t seed = 1;
    std::int64_t interp_budget = 200000;
    std::int64_t interp_min_steps = 0;  // keep polishing even after the threshold is met
    std::int64_t retrain_budget = 0;    // 0 = interp steps used / divisor
    std::vector<int> eval_lengths;
    std::uint64_t eval_cap = 10000;
    ModelConfig model;
    int batch_size = 128;
    int eval_every = 250;
    int retrain_eval_every = 50;
    double interpolation_threshold = 0.995;  // two consecutive validation evals
    double retrain_threshold = 0.995;        // the interpolation criterion for the re-stage
    int val_cap = 2048;
    std::string out_dir;  // resolved via --out-dir / ABC_LAB_OUT / ./runs
    std::string scale = "custom";

    void validate() const;
    std::string canonical_text() const;  // key=value form, also the hash input
    std::uint64_t hash() const;
};

ExperimentConfig make_preset(TaskKind task, const std::string& scale);
// ABC defaults per scale and task: smoke dims carry too few lines per
// direction for the 4-sigma rule to fire, so the smoke preset drops the
// multiplier; the N x 1 smoke retrain keeps ALiBi so the encoder can pair the
// single-digit operand with its neighbors by locality.
AbcSettings make_abc_settings(TaskKind task, const std::string& scale);
void parse_config_line(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig load_config_file(const std::string& path);
std::string resolve_out_dir(const std::string& flag_value);

struct EvalEntry {
    int length = 0;
    double accuracy = 0.0;
    std::uint64_t count = 0;
};

struct EvalReport {
    std::vector<EvalEntry> entries;
    std::string config_hash;
    std::string checkpoint_id;
    std::string task;
    std::string model_label;  // "vanilla" / "abc" / "abs" / pe name
};

struct TrainOutcome {
    std::int64_t steps_used = 0;
    double best_val_accuracy = 0.0;
    bool interpolated = false;
};

// Exact-match accuracy over the interpolation validation split (used by the
// stopping rule and as the "accuracy at training length" reference).
double validation_accuracy(Transformer& model, const std::vector<Sample>& val, TaskKind task,
                           int base, const ExperimentConfig& cfg, const BiasSet* fixed_bias,
                           int cap);

// Vanilla interpolation stage: train until two consecutive validation evals
// reach the threshold, or throw BudgetExhausted (carrying the best accuracy).
struct InterpolationResult {
    std::unique_ptr<Transformer> model;
    TrainOutcome outcome;
    DatasetSplit split;
    std::string checkpoint_path;
};
InterpolationResult run_interpolation(const ExperimentConfig& cfg);

// Greedy-decode evaluation at each requested length on freshly sampled
// extrapolation sets (min(base^L - base^(L-1), cap) samples, seeds fixed per
// length).
EvalReport run_eval(Transformer& model, const ExperimentConfig& cfg, const std::vector<int>& lengths,
                    const BiasSet* fixed_bias);

// ABS: train with windowed attention biases (+ optional CPI via the model
// config) and evaluate with the scaffold rebuilt at each live size.
struct AbsResult {
    std::unique_ptr<Transformer> model;
    TrainOutcome outcome;
    EvalReport report;
};
AbsResult run_abs(const ExperimentConfig& cfg);

// Full ABC pipeline: interpolate -> calibrate -> retrain -> evaluate.
struct AbcResult {
    std::unique_ptr<Transformer> interpolated;
    std::unique_ptr<Transformer> retrained;
    BiasSet bias;
    CalibrationResult calibration;
    EvalReport report;
    std::int64_t interp_steps = 0;
    std::int64_t retrain_steps = 0;
};
AbcResult run_abc_pipeline(const ExperimentConfig& cfg);

// spec op: fresh model trained on `split` with the calibrated biases.
struct RetrainResult {
    std::unique_ptr<Transformer> model;
    TrainOutcome outcome;
};
RetrainResult retrain_with_bias(const ExperimentConfig& cfg, const DatasetSplit& split,
                                const BiasSet& bias, std::int64_t budget,
                                Transformer* warm_start_from = nullptr);

void write_eval_report(const EvalReport& report, const std::string& dir);
EvalReport read_eval_csv(const std::string& path);

}  // namespace abclab
