#pragma once

// Brute-force transcription of the ABC bias computation, kept deliberately
// naive and separate from the library implementation: per-cell line walks,
// per-direction normalization, dropoff, element-wise merge, transparent
// fallback. Used as the independent oracle for calibrate_site().

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "abclab/calibration.hpp"

namespace oracle {

struct Settings {
    std::vector<int> deltas{1, -1, 0};
    abclab::ThresholdScope scope = abclab::ThresholdScope::Direction;
    float multiplier = 4.0f;
    bool threshold_enabled = true;
    int min_support = 1;
    int halo = 0;
    bool cross_vertical_right_anchored = false;  // site semantics under test
    bool site_is_cross = true;
};

inline bool right_anchored(const Settings& s, int delta) {
    if (delta < 0) return true;
    return s.site_is_cross && delta == 0 && s.cross_vertical_right_anchored;
}

// All cells of the (1,delta) line through (i,j), in increasing row order,
// restricted to an m x n source whose top-right corner sits at column
// shift+n-1 (shift = 0 for left anchoring).
inline std::vector<std::pair<int, int>> line_cells(int i, int j, int delta, int m, int n,
                                                   int shift) {
    std::vector<std::pair<int, int>> cells;
    for (int k = -64; k <= 64; ++k) {
        const int ii = i + k;
        const int jj = j + k * delta;
        if (ii < 0 || ii >= m) continue;
        if (jj < shift || jj >= shift + n) continue;
        cells.push_back({ii, jj - shift});
    }
    return cells;
}

struct DirLines {
    std::map<int, float> avg;
    std::map<int, int> count;
};

inline DirLines direction_lines(const Eigen::MatrixXf& a, int delta) {
    DirLines out;
    const int m = static_cast<int>(a.rows());
    const int n = static_cast<int>(a.cols());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const int l = abclab::line_index(i, j, delta, n);
            if (out.avg.count(l)) continue;
            float sum = 0.0f;
            int cnt = 0;
            for (auto [ii, jj] : line_cells(i, j, delta, m, n, 0)) {
                sum += a(ii, jj);
                ++cnt;
            }
            out.avg[l] = sum / static_cast<float>(cnt);
            out.count[l] = cnt;
        }
    }
    return out;
}

inline std::vector<Eigen::MatrixXf> run(const std::vector<Eigen::MatrixXf>& abar_heads, int M,
                                        int N, const Settings& s) {
    const float ninf = -std::numeric_limits<float>::infinity();
    const std::size_t H = abar_heads.size();
    const std::size_t D = s.deltas.size();

    std::vector<std::vector<DirLines>> lines(H, std::vector<DirLines>(D));
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t d = 0; d < D; ++d) {
            lines[h][d] = direction_lines(abar_heads[h], s.deltas[d]);
        }
    }

    // mu + multiplier * sigma over the supported d_l values of the pool
    auto stat_of = [&](const std::vector<std::pair<std::size_t, std::size_t>>& pool) {
        std::vector<float> values;
        for (auto [h, d] : pool) {
            for (const auto& [l, v] : lines[h][d].avg) {
                if (lines[h][d].count.at(l) >= s.min_support) values.push_back(v);
            }
        }
        if (values.empty()) return std::pair<float, float>{0.0f, 0.0f};
        double sum = 0.0;
        for (float v : values) sum += v;
        const double mu = sum / static_cast<double>(values.size());
        double var = 0.0;
        for (float v : values) var += (v - mu) * (v - mu);
        var /= static_cast<double>(values.size());
        return std::pair<float, float>{static_cast<float>(mu),
                                       static_cast<float>(std::sqrt(var))};
    };

    std::vector<std::vector<float>> thresholds(H, std::vector<float>(D));
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t d = 0; d < D; ++d) {
            std::vector<std::pair<std::size_t, std::size_t>> pool;
            switch (s.scope) {
                case abclab::ThresholdScope::Direction: pool = {{h, d}}; break;
                case abclab::ThresholdScope::Head:
                    for (std::size_t dd = 0; dd < D; ++dd) pool.push_back({h, dd});
                    break;
                case abclab::ThresholdScope::Site:
                    for (std::size_t hh = 0; hh < H; ++hh) {
                        for (std::size_t dd = 0; dd < D; ++dd) pool.push_back({hh, dd});
                    }
                    break;
            }
            auto [mu, sigma] = stat_of(pool);
            thresholds[h][d] = mu + s.multiplier * sigma;
        }
    }

    std::vector<Eigen::MatrixXf> result;
    for (std::size_t h = 0; h < H; ++h) {
        const int m = static_cast<int>(abar_heads[h].rows());
        const int n = static_cast<int>(abar_heads[h].cols());
        Eigen::MatrixXf merged = Eigen::MatrixXf::Constant(M, N, ninf);
        for (std::size_t d = 0; d < D; ++d) {
            const int delta = s.deltas[d];
            const DirLines& dl = lines[h][d];

            float d_max = ninf;
            for (const auto& [l, v] : dl.avg) {
                if (dl.count.at(l) >= s.min_support) d_max = std::max(d_max, v);
            }
            std::map<int, float> surviving;
            for (const auto& [l, v] : dl.avg) {
                if (dl.count.at(l) < s.min_support) continue;
                if (!s.threshold_enabled || v > thresholds[h][d]) surviving[l] = v - d_max;
            }
            if (s.halo > 0 && !surviving.empty()) {
                std::map<int, float> widened = surviving;
                for (const auto& [l, v] : surviving) {
                    for (int off = -s.halo; off <= s.halo; ++off) {
                        auto it = dl.avg.find(l + off);
                        if (it == dl.avg.end() || widened.count(l + off)) continue;
                        if (dl.count.at(l + off) < s.min_support) continue;
                        widened[l + off] = it->second - d_max;
                    }
                }
                surviving = std::move(widened);
            }

            const int shift = right_anchored(s, delta) ? N - n : 0;
            Eigen::MatrixXf part = Eigen::MatrixXf::Constant(M, N, ninf);
            for (int i = 0; i < M; ++i) {
                for (int j = 0; j < N; ++j) {
                    // a target element belongs to the extension of a source
                    // line iff the line through it intersects the source
                    if (line_cells(i, j, delta, m, n, shift).empty()) continue;
                    const int l = abclab::line_index(i, j - shift, delta, n);
                    auto it = surviving.find(l);
                    if (it != surviving.end()) part(i, j) = it->second;
                }
            }
            merged = merged.cwiseMax(part);
        }
        if (!merged.array().isFinite().any()) merged.setZero();
        result.push_back(std::move(merged));
    }
    return result;
}

}  // namespace oracle
