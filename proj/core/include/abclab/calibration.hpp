#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "abclab/model.hpp"
#include "abclab/task.hpp"

namespace abclab {

// A (1, delta) search direction: delta 1 = diagonal, -1 = anti-diagonal,
// 0 = vertical.
struct Direction {
    int delta = 1;
};

inline std::vector<Direction> default_directions() { return {{1}, {-1}, {0}}; }

// Line index, constant along a (1,delta)-line and unique across lines.
// 0-based element indices; the returned index follows the 1-based convention
//   delta= 1: l = j - i            in [-(m-1), n-1]
//   delta= 0: l = j                in [1, n]
//   delta=-1: l = (n+1) - (i+j)    in [(n+1)-(m+n), n-1]
inline int line_index(int i, int j, int delta, int n) {
    switch (delta) {
        case 1: return j - i;
        case 0: return j + 1;
        case -1: return n - 1 - i - j;
        default: throw std::invalid_argument("line_index: delta must be in {-1,0,1}");
    }
}

// Per-direction line averages d_l of a source matrix.
struct LineMap {
    Direction dir;
    std::map<int, float> d;      // line index -> mean over its elements
    std::map<int, int> support;  // line index -> element count in the source
    int m = 0, n = 0;            // source dims
};

LineMap line_average(const Eigen::MatrixXf& abar, Direction dir);

// Column anchoring when a source pattern is extended to a larger matrix.
// Right places the source at the top-right corner of the target (the paper's
// translation for anti-diagonals); Left keeps the top-left corner.
enum class Anchor { Left, Right };

inline Anchor paper_anchor(int delta) { return delta < 0 ? Anchor::Right : Anchor::Left; }

struct ThresholdStat {
    float mu = 0.0f;
    float sigma = 0.0f;
    float multiplier = 4.0f;
    bool enabled = true;  // disabled = pass-all (used by unit fixtures)

    float value() const { return mu + multiplier * sigma; }
};

// Population mean/stddev over the d_l of the given line maps, ignoring lines
// with fewer than `min_support` source elements (short corner lines track a
// single matrix cell and only add selection noise).
ThresholdStat pooled_stats(const std::vector<const LineMap*>& maps, float multiplier,
                           int min_support = 1);

struct ExtendedBias {
    Eigen::MatrixXf matrix;  // M x N, entries are d_l - d_max or -inf
    Direction dir;
    Anchor anchor = Anchor::Left;
    float d_max = 0.0f;
    float threshold = 0.0f;
    bool threshold_enabled = true;
    int surviving_lines = 0;
};

// Extension of surviving lines to an M x N bias (the dropoff of the bias
// matrix computation): target elements on the extension of a source line l
// with d_l strictly above the threshold get d_l - d_max, everything else
// -inf. Lines with support below min_support neither survive nor enter d_max.
// halo > 0 additionally opens the halo nearest neighbor lines of each
// survivor at their own (sub-threshold) averages, the calibrated counterpart
// of the w-wide scaffold window.
ExtendedBias extend_bias(const LineMap& lm, int M, int N, const ThresholdStat& stat, Anchor anchor,
                         int min_support = 1, int halo = 0);

// Element-wise max across per-direction extensions; an all -inf result turns
// into the transparent all-zero bias.
Eigen::MatrixXf merge_directions(const std::vector<ExtendedBias>& parts);

// Element-wise mean of same-shape attention tensors (correct decodes only;
// the caller filters).
AttentionTensor average_attention(const std::vector<AttentionTensor>& tensors);

enum class ThresholdScope {
    Direction,  // mu/sigma per (head, site, direction)
    Head,       // pooled across directions within a head/site
    Site,       // pooled across heads and directions within a site
};

struct CalibrationOptions {
    std::vector<Direction> directions = default_directions();
    float threshold_multiplier = 4.0f;
    ThresholdScope scope = ThresholdScope::Site;
    int sample_budget = 256;  // |S_gen|
    int min_correct = 32;
    bool include_self = true;
    bool include_cross = true;
    // Cross-attention verticals track the right end of the input (operator
    // and single-digit operand sit there), so the vertical direction is
    // right-anchored on the cross site; self keeps the paper's defaults.
    bool cross_vertical_right_anchored = true;
    // Row-normalize extracted scores into the model's actual attention
    // distribution before averaging (softmax over keys; causal for the self
    // site). Raw QK^T magnitudes carry per-row additive shifts that softmax
    // ignores, which otherwise swamp the line statistics.
    bool softmax_normalize = true;
    int min_line_support = 3;
    int line_halo = 0;
    std::uint64_t seed = 0;
};

struct LineStatRecord {
    std::string site;  // "self" | "cross"
    int head = 0;
    int delta = 0;
    float mu = 0.0f, sigma = 0.0f, threshold = 0.0f, d_max = 0.0f;
    int surviving = 0;
};

struct CalibrationResult {
    BiasSet bias;
    int samples_used = 0;    // correct decodes that entered the average
    int samples_tried = 0;
    std::vector<LineStatRecord> stats;
    int M = 0, N = 0;
};

Anchor site_anchor(AttentionTensor::Site site, int delta, const CalibrationOptions& opts);

// Softmax of scale * scores per row, restricted to j <= i when causal.
Eigen::MatrixXf attention_distribution(const Eigen::MatrixXf& scores, float scale, bool causal);

// Per-head bias construction from averaged attention of one site:
// line averages per direction -> threshold -> extension -> merge.
// `stats_by_dir` supplies the per-direction threshold stats (already resolved
// for the configured scope).
Eigen::MatrixXf calibrate_head(const Eigen::MatrixXf& abar, AttentionTensor::Site site, int M,
                               int N, const CalibrationOptions& opts,
                               const std::vector<ThresholdStat>& stats_by_dir,
                               std::vector<LineStatRecord>* records, int head_index);

// Tensor-level ABC: average the per-sample tensors of one site and build the
// per-head bias matrices. The entry point the brute-force transcription
// checks against.
std::vector<Eigen::MatrixXf> calibrate_site(const std::vector<AttentionTensor>& tensors,
                                            AttentionTensor::Site site, int M, int N,
                                            const CalibrationOptions& opts,
                                            std::vector<LineStatRecord>* records);

// Full ABC bias computation: decode a random subset of `pool` with the
// interpolated model, average attention over correct decodes, and extend per
// head and site to [M x M] (self) and [M x N] (cross).
CalibrationResult calibrate(Transformer& model, const std::vector<Sample>& pool, int M, int N,
                            const CalibrationOptions& opts);

}  // namespace abclab
