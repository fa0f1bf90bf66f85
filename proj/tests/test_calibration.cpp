#include <doctest.h>

#include <cmath>
#include <set>

#include "abclab/calibration.hpp"
#include "abclab/rng.hpp"
#include "oracle_abc.hpp"

using namespace abclab;

namespace {
const float kNinf = -std::numeric_limits<float>::infinity();

Eigen::MatrixXf mat2x2(float a, float b, float c, float d) {
    Eigen::MatrixXf m(2, 2);
    m << a, b, c, d;
    return m;
}

ThresholdStat pass_all() {
    ThresholdStat s;
    s.enabled = false;
    return s;
}
}  // namespace

TEST_CASE("line indices partition the matrix for every direction") {
    for (int m = 1; m <= 8; ++m) {
        for (int n = 1; n <= 8; ++n) {
            for (int delta : {-1, 0, 1}) {
                std::map<int, int> count;
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) count[line_index(i, j, delta, n)]++;
                }
                // every element on exactly one line
                int total = 0;
                for (auto& [l, c] : count) total += c;
                CHECK(total == m * n);
                // l is unique per line: walking any two distinct lines never
                // shares an element, equivalent to the index ranges below
                if (delta == 1) {
                    CHECK(count.begin()->first == -(m - 1));
                    CHECK(count.rbegin()->first == n - 1);
                } else if (delta == 0) {
                    CHECK(count.begin()->first == 1);
                    CHECK(count.rbegin()->first == n);
                } else {
                    CHECK(count.begin()->first == (n + 1) - (m + n));
                    CHECK(count.rbegin()->first == n - 1);
                }
            }
        }
    }
}

TEST_CASE("line averages match the worked 2x2 examples") {
    Eigen::MatrixXf a = mat2x2(1, 2, 3, 4);

    LineMap d1 = line_average(a, {1});
    CHECK(d1.d.at(0) == doctest::Approx(2.5));
    CHECK(d1.d.at(1) == doctest::Approx(2.0));
    CHECK(d1.d.at(-1) == doctest::Approx(3.0));

    LineMap d0 = line_average(a, {0});
    CHECK(d0.d.at(1) == doctest::Approx(2.0));
    CHECK(d0.d.at(2) == doctest::Approx(3.0));

    LineMap dm1 = line_average(a, {-1});
    CHECK(dm1.d.at(0) == doctest::Approx(2.5));  // cells (1,2),(2,1) in 1-based terms
    CHECK(dm1.d.at(1) == doctest::Approx(1.0));
    CHECK(dm1.d.at(-1) == doctest::Approx(4.0));
}

TEST_CASE("extend_bias pass-all reproduces the diagonal band example") {
    // d = {-1: 3.0, 0: 2.5, 1: 2.0}, delta=1, 3x3 target: 0 on the l=-1 band,
    // -0.5 on the main diagonal, -1.0 on l=1, -inf elsewhere
    LineMap lm;
    lm.dir = {1};
    lm.m = 2;
    lm.n = 2;
    lm.d = {{-1, 3.0f}, {0, 2.5f}, {1, 2.0f}};
    lm.support = {{-1, 1}, {0, 2}, {1, 1}};
    ExtendedBias eb = extend_bias(lm, 3, 3, pass_all(), Anchor::Left);
    CHECK(eb.d_max == doctest::Approx(3.0));
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            const int l = j - i;
            if (l == -1) {
                CHECK(eb.matrix(i, j) == doctest::Approx(0.0));
            } else if (l == 0) {
                CHECK(eb.matrix(i, j) == doctest::Approx(-0.5));
            } else if (l == 1) {
                CHECK(eb.matrix(i, j) == doctest::Approx(-1.0));
            } else {
                CHECK(std::isinf(eb.matrix(i, j)));
            }
        }
    }
}

TEST_CASE("all-equal line averages leave nothing above the threshold") {
    Eigen::MatrixXf flat = Eigen::MatrixXf::Constant(4, 4, 0.7f);
    LineMap lm = line_average(flat, {1});
    std::vector<const LineMap*> maps{&lm};
    ThresholdStat stat = pooled_stats(maps, 4.0f);
    CHECK(stat.sigma == doctest::Approx(0.0));
    ExtendedBias eb = extend_bias(lm, 6, 6, stat, Anchor::Left);
    CHECK(eb.surviving_lines == 0);  // no line strictly exceeds mu
    CHECK(!eb.matrix.array().isFinite().any());
}

TEST_CASE("a strong outlier among 21 lines survives the 4-sigma rule") {
    // 20 lines at 1.0 and one at 50.0: mu ~ 3.33, sigma ~ 10.4, z ~ 4.47
    LineMap lm;
    lm.dir = {0};
    lm.m = 4;
    lm.n = 21;
    for (int l = 1; l <= 21; ++l) {
        lm.d[l] = l == 11 ? 50.0f : 1.0f;
        lm.support[l] = 4;
    }
    std::vector<const LineMap*> maps{&lm};
    ThresholdStat stat = pooled_stats(maps, 4.0f);
    const double mu = (20.0 * 1.0 + 50.0) / 21.0;
    CHECK(stat.mu == doctest::Approx(mu));
    ExtendedBias eb = extend_bias(lm, 8, 21, stat, Anchor::Left);
    CHECK(eb.surviving_lines == 1);
    CHECK(eb.matrix(0, 10) == doctest::Approx(0.0));  // the surviving column, d_l - d_max = 0
    CHECK(eb.matrix(0, 0) == kNinf);
}

TEST_CASE("merge_directions takes element-wise max and falls back to transparent") {
    ExtendedBias a, b;
    a.matrix = Eigen::MatrixXf::Constant(2, 2, kNinf);
    b.matrix = Eigen::MatrixXf::Constant(2, 2, kNinf);
    a.matrix(0, 0) = -0.5f;
    Eigen::MatrixXf merged = merge_directions({a, b});
    CHECK(merged(0, 0) == -0.5f);
    CHECK(merged(1, 1) == kNinf);

    a.matrix.setConstant(kNinf);
    Eigen::MatrixXf transparent = merge_directions({a, b});
    CHECK(transparent.isZero());

    ExtendedBias c;
    c.matrix = Eigen::MatrixXf::Constant(3, 2, kNinf);
    CHECK_THROWS_AS(merge_directions({a, c}), DimensionMismatch);
}

TEST_CASE("average_attention is the element-wise mean over samples") {
    AttentionTensor t1, t2;
    t1.heads = {mat2x2(1, 2, 3, 4)};
    t2.heads = {mat2x2(3, 2, 1, 0)};
    auto mean = average_attention({t1, t2});
    CHECK(mean.heads[0].isApprox(mat2x2(2, 2, 2, 2)));
    auto single = average_attention({t1});
    CHECK(single.heads[0].isApprox(t1.heads[0]));
    CHECK_THROWS_AS(average_attention({}), EmptySetError);
    AttentionTensor t3;
    t3.heads = {Eigen::MatrixXf::Zero(3, 2)};
    CHECK_THROWS_AS(average_attention({t1, t3}), DimensionMismatch);
}

TEST_CASE("RPE structure: delta=1 extensions are constant along diagonals with clipped range") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 2 + static_cast<int>(rng.below(5));
        const int n = 2 + static_cast<int>(rng.below(5));
        Eigen::MatrixXf a(m, n);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) a(i, j) = static_cast<float>(rng.normal());
        }
        LineMap lm = line_average(a, {1});
        ExtendedBias eb = extend_bias(lm, 12, 12, pass_all(), Anchor::Left);
        for (int i = 0; i + 1 < 12; ++i) {
            for (int j = 0; j + 1 < 12; ++j) {
                const bool both_inf =
                    std::isinf(eb.matrix(i, j)) && std::isinf(eb.matrix(i + 1, j + 1));
                CHECK((both_inf || eb.matrix(i, j) == eb.matrix(i + 1, j + 1)));
            }
        }
        // asymmetric clip: finite iff j - i within [-(m-1), n-1]
        for (int i = 0; i < 12; ++i) {
            for (int j = 0; j < 12; ++j) {
                const int l = j - i;
                CHECK(std::isfinite(eb.matrix(i, j)) == (l >= -(m - 1) && l <= n - 1));
            }
        }
    }
}

TEST_CASE("affine invariance: a*A + b keeps the surviving set, scales values by a") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const int m = 3 + static_cast<int>(rng.below(4));
        const int n = 3 + static_cast<int>(rng.below(4));
        Eigen::MatrixXf base(m, n);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) base(i, j) = static_cast<float>(rng.normal());
        }
        const float a = 0.5f + static_cast<float>(rng.uniform()) * 3.0f;
        const float b = static_cast<float>(rng.normal()) * 2.0f;
        for (int delta : {-1, 0, 1}) {
            LineMap lm1 = line_average(base, {delta});
            LineMap lm2 = line_average((a * base.array() + b).matrix(), {delta});
            std::vector<const LineMap*> p1{&lm1}, p2{&lm2};
            ThresholdStat s1 = pooled_stats(p1, 2.0f);
            ThresholdStat s2 = pooled_stats(p2, 2.0f);
            ExtendedBias e1 = extend_bias(lm1, 10, 10, s1, paper_anchor(delta));
            ExtendedBias e2 = extend_bias(lm2, 10, 10, s2, paper_anchor(delta));
            CHECK(e1.surviving_lines == e2.surviving_lines);
            for (int i = 0; i < 10; ++i) {
                for (int j = 0; j < 10; ++j) {
                    if (std::isinf(e1.matrix(i, j))) {
                        CHECK(std::isinf(e2.matrix(i, j)));
                    } else {
                        CHECK(e2.matrix(i, j) ==
                              doctest::Approx(a * e1.matrix(i, j)).epsilon(1e-3));
                    }
                }
            }
        }
    }
}

TEST_CASE("negative-delta extension recovers the source lines in the top-right corner") {
    Rng rng(31);
    const int m = 4, n = 5, M = 9, N = 12;
    Eigen::MatrixXf a(m, n);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) a(i, j) = static_cast<float>(rng.normal());
    }
    LineMap lm = line_average(a, {-1});
    ExtendedBias eb = extend_bias(lm, M, N, pass_all(), Anchor::Right);
    float d_max = -1e30f;
    for (auto& [l, v] : lm.d) d_max = std::max(d_max, v);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const int l = line_index(i, j, -1, n);
            CHECK(eb.matrix(i, j + (N - n)) == doctest::Approx(lm.d.at(l) - d_max));
        }
    }
}

TEST_CASE("extend_bias rejects target dims smaller than the source") {
    LineMap lm = line_average(Eigen::MatrixXf::Zero(4, 6), {1});
    CHECK_THROWS_AS(extend_bias(lm, 3, 8, pass_all(), Anchor::Left), DimensionError);
    CHECK_THROWS_AS(extend_bias(lm, 8, 5, pass_all(), Anchor::Left), DimensionError);
}

TEST_CASE("synthetic anti-diagonal attention opens exactly the anti-diagonal band") {
    // a perfectly anti-diagonal pattern on a unary toy: the extended bias must
    // open exactly that band at every slice length
    const int m = 6, n = 5;
    Eigen::MatrixXf a = Eigen::MatrixXf::Zero(m, n);
    for (int i = 0; i < m; ++i) {
        const int j = n - 1 - i;
        if (j >= 0) a(i, j) = 1.0f;
    }
    AttentionTensor t;
    t.site = AttentionTensor::Site::Cross;
    t.heads = {a};
    CalibrationOptions opts;
    opts.scope = ThresholdScope::Direction;
    opts.threshold_multiplier = 2.0f;
    opts.min_line_support = 3;
    opts.line_halo = 0;
    auto mats = calibrate_site({t}, AttentionTensor::Site::Cross, 12, 12, opts, nullptr);
    REQUIRE(mats.size() == 1);
    for (int i = 0; i < 12; ++i) {
        for (int j = 0; j < 12; ++j) {
            const bool on_band = (12 - 1 - i) == j;  // live anti-diagonal of the 12x12 target
            if (on_band) {
                CHECK(mats[0](i, j) == doctest::Approx(0.0));
            } else {
                CHECK(std::isinf(mats[0](i, j)));
            }
        }
    }
}

TEST_CASE("calibrate_site equals the naive transcription on random tensors") {
    Rng rng(7);
    int checked = 0;
    for (int trial = 0; trial < 250; ++trial) {
        const int H = 1 + static_cast<int>(rng.below(4));
        const int m = 2 + static_cast<int>(rng.below(5));
        const int n = 2 + static_cast<int>(rng.below(5));
        const int M = m + static_cast<int>(rng.below(static_cast<std::uint64_t>(12 - m + 1)));
        const int N = n + static_cast<int>(rng.below(static_cast<std::uint64_t>(12 - n + 1)));
        std::vector<AttentionTensor> tensors;
        AttentionTensor t;
        t.site = AttentionTensor::Site::Cross;
        for (int h = 0; h < H; ++h) {
            Eigen::MatrixXf a(m, n);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) a(i, j) = static_cast<float>(rng.normal());
            }
            t.heads.push_back(a);
        }
        tensors.push_back(t);

        for (auto scope :
             {ThresholdScope::Direction, ThresholdScope::Head, ThresholdScope::Site}) {
            for (int support : {1, 3}) {
                for (int halo : {0, 1}) {
                    CalibrationOptions opts;
                    opts.scope = scope;
                    opts.threshold_multiplier = 2.0f;
                    opts.min_line_support = support;
                    opts.line_halo = halo;
                    opts.cross_vertical_right_anchored = trial % 2 == 0;
                    auto got = calibrate_site(tensors, AttentionTensor::Site::Cross, M, N, opts,
                                              nullptr);
                    oracle::Settings s;
                    s.scope = scope;
                    s.multiplier = 2.0f;
                    s.min_support = support;
                    s.halo = halo;
                    s.cross_vertical_right_anchored = opts.cross_vertical_right_anchored;
                    auto want = oracle::run(t.heads, M, N, s);
                    REQUIRE(got.size() == want.size());
                    for (std::size_t h = 0; h < got.size(); ++h) {
                        for (int i = 0; i < M; ++i) {
                            for (int j = 0; j < N; ++j) {
                                const float g = got[h](i, j), w = want[h](i, j);
                                const bool same =
                                    (std::isinf(g) && std::isinf(w) && g < 0 && w < 0) || g == w;
                                if (!same) {
                                    CAPTURE(h);
                                    CAPTURE(i);
                                    CAPTURE(j);
                                    CHECK(same);
                                }
                            }
                        }
                    }
                    ++checked;
                }
            }
        }
    }
    CHECK(checked >= 1000);
}
