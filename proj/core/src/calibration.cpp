#include "abclab/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "abclab/errors.hpp"
#include "abclab/rng.hpp"

namespace abclab {

namespace {
constexpr float kNegInf = -std::numeric_limits<float>::infinity();
}

LineMap line_average(const Eigen::MatrixXf& abar, Direction dir) {
    LineMap lm;
    lm.dir = dir;
    lm.m = static_cast<int>(abar.rows());
    lm.n = static_cast<int>(abar.cols());
    std::map<int, std::pair<float, int>> acc;  // l -> (sum, count), summed in row order
    for (int i = 0; i < lm.m; ++i) {
        for (int j = 0; j < lm.n; ++j) {
            auto& slot = acc[line_index(i, j, dir.delta, lm.n)];
            slot.first += abar(i, j);
            slot.second += 1;
        }
    }
    for (const auto& [l, sc] : acc) {
        lm.d[l] = sc.first / static_cast<float>(sc.second);
        lm.support[l] = sc.second;
    }
    return lm;
}

ThresholdStat pooled_stats(const std::vector<const LineMap*>& maps, float multiplier,
                           int min_support) {
    std::vector<float> values;
    for (const LineMap* lm : maps) {
        for (const auto& [l, v] : lm->d) {
            if (lm->support.at(l) >= min_support) values.push_back(v);
        }
    }
    ThresholdStat stat;
    stat.multiplier = multiplier;
    if (values.empty()) return stat;
    double sum = 0.0;
    for (float v : values) sum += v;
    const double mu = sum / static_cast<double>(values.size());
    double var = 0.0;
    for (float v : values) var += (v - mu) * (v - mu);
    var /= static_cast<double>(values.size());
    stat.mu = static_cast<float>(mu);
    stat.sigma = static_cast<float>(std::sqrt(var));
    return stat;
}

ExtendedBias extend_bias(const LineMap& lm, int M, int N, const ThresholdStat& stat, Anchor anchor,
                         int min_support, int halo) {
    if (M < lm.m || N < lm.n) {
        throw DimensionError("extend_bias: target dims must dominate the source dims");
    }
    ExtendedBias out;
    out.dir = lm.dir;
    out.anchor = anchor;
    out.threshold = stat.value();
    out.threshold_enabled = stat.enabled;
    out.matrix = Eigen::MatrixXf::Constant(M, N, kNegInf);

    float d_max = kNegInf;
    for (const auto& [l, v] : lm.d) {
        if (lm.support.at(l) >= min_support) d_max = std::max(d_max, v);
    }
    out.d_max = d_max;

    std::map<int, float> surviving;
    for (const auto& [l, v] : lm.d) {
        if (lm.support.at(l) < min_support) continue;
        if (!stat.enabled || v > out.threshold) surviving[l] = v - d_max;
    }
    out.surviving_lines = static_cast<int>(surviving.size());
    if (halo > 0 && !surviving.empty()) {
        std::map<int, float> widened = surviving;
        for (const auto& [l, v] : surviving) {
            for (int off = -halo; off <= halo; ++off) {
                auto it = lm.d.find(l + off);
                if (it == lm.d.end() || widened.count(l + off)) continue;
                if (lm.support.at(l + off) < min_support) continue;
                widened[l + off] = it->second - d_max;
            }
        }
        surviving = std::move(widened);
    }
    if (surviving.empty()) return out;

    const int shift = anchor == Anchor::Right ? N - lm.n : 0;
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            const int l = line_index(i, j - shift, lm.dir.delta, lm.n);
            auto it = surviving.find(l);
            if (it != surviving.end()) out.matrix(i, j) = it->second;
        }
    }
    return out;
}

Eigen::MatrixXf merge_directions(const std::vector<ExtendedBias>& parts) {
    if (parts.empty()) throw EmptySetError("merge_directions: no parts");
    Eigen::MatrixXf merged = parts[0].matrix;
    for (std::size_t k = 1; k < parts.size(); ++k) {
        if (parts[k].matrix.rows() != merged.rows() || parts[k].matrix.cols() != merged.cols()) {
            throw DimensionMismatch("merge_directions: mismatched part dims");
        }
        merged = merged.cwiseMax(parts[k].matrix);
    }
    if (!merged.array().isFinite().any()) {
        merged.setZero();  // transparent: no pattern picked up
    }
    return merged;
}

AttentionTensor average_attention(const std::vector<AttentionTensor>& tensors) {
    if (tensors.empty()) throw EmptySetError("average_attention: empty sample set");
    AttentionTensor mean;
    mean.site = tensors[0].site;
    mean.layer = tensors[0].layer;
    const std::size_t heads = tensors[0].heads.size();
    for (std::size_t h = 0; h < heads; ++h) {
        Eigen::MatrixXf acc = tensors[0].heads[h];
        for (std::size_t k = 1; k < tensors.size(); ++k) {
            if (tensors[k].heads.size() != heads || tensors[k].heads[h].rows() != acc.rows() ||
                tensors[k].heads[h].cols() != acc.cols()) {
                throw DimensionMismatch("average_attention: tensor dims differ");
            }
            acc += tensors[k].heads[h];
        }
        mean.heads.push_back(acc / static_cast<float>(tensors.size()));
    }
    return mean;
}

Anchor site_anchor(AttentionTensor::Site site, int delta, const CalibrationOptions& opts) {
    if (site == AttentionTensor::Site::Cross && delta == 0 && opts.cross_vertical_right_anchored) {
        return Anchor::Right;
    }
    return paper_anchor(delta);
}

Eigen::MatrixXf attention_distribution(const Eigen::MatrixXf& scores, float scale, bool causal) {
    Eigen::MatrixXf p = Eigen::MatrixXf::Zero(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const Eigen::Index jmax = causal ? std::min<Eigen::Index>(i, scores.cols() - 1)
                                         : scores.cols() - 1;
        float mx = -std::numeric_limits<float>::infinity();
        for (Eigen::Index j = 0; j <= jmax; ++j) mx = std::max(mx, scores(i, j) * scale);
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= jmax; ++j) {
            const double e = std::exp(static_cast<double>(scores(i, j) * scale - mx));
            p(i, j) = static_cast<float>(e);
            sum += e;
        }
        for (Eigen::Index j = 0; j <= jmax; ++j) {
            p(i, j) = static_cast<float>(p(i, j) / sum);
        }
    }
    return p;
}

Eigen::MatrixXf calibrate_head(const Eigen::MatrixXf& abar, AttentionTensor::Site site, int M,
                               int N, const CalibrationOptions& opts,
                               const std::vector<ThresholdStat>& stats_by_dir,
                               std::vector<LineStatRecord>* records, int head_index) {
    std::vector<ExtendedBias> parts;
    for (std::size_t di = 0; di < opts.directions.size(); ++di) {
        const Direction dir = opts.directions[di];
        LineMap lm = line_average(abar, dir);
        ExtendedBias part = extend_bias(lm, M, N, stats_by_dir[di],
                                        site_anchor(site, dir.delta, opts), opts.min_line_support,
                                        opts.line_halo);
        if (records) {
            LineStatRecord rec;
            rec.site = site == AttentionTensor::Site::Self ? "self" : "cross";
            rec.head = head_index;
            rec.delta = dir.delta;
            rec.mu = stats_by_dir[di].mu;
            rec.sigma = stats_by_dir[di].sigma;
            rec.threshold = part.threshold;
            rec.d_max = part.d_max;
            rec.surviving = part.surviving_lines;
            records->push_back(rec);
        }
        parts.push_back(std::move(part));
    }
    return merge_directions(parts);
}

namespace {

// Threshold stats per (head, direction) honoring the configured pooling scope.
std::vector<std::vector<ThresholdStat>> site_threshold_stats(
    const std::vector<std::vector<LineMap>>& maps_by_head, const CalibrationOptions& opts) {
    const std::size_t H = maps_by_head.size();
    const std::size_t D = opts.directions.size();
    std::vector<std::vector<ThresholdStat>> stats(H, std::vector<ThresholdStat>(D));
    switch (opts.scope) {
        case ThresholdScope::Direction: {
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t d = 0; d < D; ++d) {
                    stats[h][d] = pooled_stats({&maps_by_head[h][d]}, opts.threshold_multiplier,
                                               opts.min_line_support);
                }
            }
            break;
        }
        case ThresholdScope::Head: {
            for (std::size_t h = 0; h < H; ++h) {
                std::vector<const LineMap*> pool;
                for (std::size_t d = 0; d < D; ++d) pool.push_back(&maps_by_head[h][d]);
                const ThresholdStat s =
                    pooled_stats(pool, opts.threshold_multiplier, opts.min_line_support);
                for (std::size_t d = 0; d < D; ++d) stats[h][d] = s;
            }
            break;
        }
        case ThresholdScope::Site: {
            std::vector<const LineMap*> pool;
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t d = 0; d < D; ++d) pool.push_back(&maps_by_head[h][d]);
            }
            const ThresholdStat s =
                pooled_stats(pool, opts.threshold_multiplier, opts.min_line_support);
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t d = 0; d < D; ++d) stats[h][d] = s;
            }
            break;
        }
    }
    return stats;
}

}  // namespace

std::vector<Eigen::MatrixXf> calibrate_site(const std::vector<AttentionTensor>& tensors,
                                            AttentionTensor::Site site, int M, int N,
                                            const CalibrationOptions& opts,
                                            std::vector<LineStatRecord>* records) {
    AttentionTensor abar = average_attention(tensors);
    const std::size_t heads = abar.heads.size();
    std::vector<std::vector<LineMap>> maps(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        for (const Direction& dir : opts.directions) {
            maps[h].push_back(line_average(abar.heads[h], dir));
        }
    }
    auto stats = site_threshold_stats(maps, opts);
    std::vector<Eigen::MatrixXf> out;
    out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        out.push_back(calibrate_head(abar.heads[h], site, M, N, opts, stats[h], records,
                                     static_cast<int>(h)));
    }
    return out;
}

CalibrationResult calibrate(Transformer& model, const std::vector<Sample>& pool, int M, int N,
                            const CalibrationOptions& opts) {
    CalibrationResult result;
    result.M = M;
    result.N = N;

    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix64(opts.seed, 0xca11bULL));
    rng.shuffle(order);

    const float scale = 1.0f / std::sqrt(static_cast<float>(model.config().d_model /
                                                            model.config().heads));
    std::vector<AttentionTensor> self_tensors, cross_tensors;
    const int max_len = 4 * (pool.empty() ? 8 : static_cast<int>(pool[0].target_tokens.size())) + 8;
    for (std::size_t idx : order) {
        if (result.samples_used >= opts.sample_budget) break;
        const Sample& s = pool[idx];
        ++result.samples_tried;
        // the decoded output must be correct for the extraction to count
        std::vector<int> decoded = model.greedy_decode(s.input_tokens, max_len, nullptr);
        if (!sequence_match(s, decoded)) continue;
        auto [self_t, cross_t] = model.extract_last_layer_attention(s.input_tokens, decoded);
        if (opts.softmax_normalize) {
            for (auto& h : self_t.heads) h = attention_distribution(h, scale, true);
            for (auto& h : cross_t.heads) h = attention_distribution(h, scale, false);
        }
        self_tensors.push_back(std::move(self_t));
        cross_tensors.push_back(std::move(cross_t));
        ++result.samples_used;
    }
    if (result.samples_used < opts.min_correct) {
        throw InsufficientCorrectSamples(
            "calibrate: only " + std::to_string(result.samples_used) + " of " +
            std::to_string(result.samples_tried) + " decodes were correct (need " +
            std::to_string(opts.min_correct) + ")");
    }

    if (opts.include_self) {
        auto mats = calibrate_site(self_tensors, AttentionTensor::Site::Self, M, M, opts,
                                   &result.stats);
        for (auto& m : mats) result.bias.self_heads.emplace_back(m);
    }
    if (opts.include_cross) {
        auto mats = calibrate_site(cross_tensors, AttentionTensor::Site::Cross, M, N, opts,
                                   &result.stats);
        for (auto& m : mats) result.bias.cross_heads.emplace_back(m);
    }
    return result;
}

}  // namespace abclab
