#include <doctest.h>

#include <cmath>

#include "abclab/window_bias.hpp"

using namespace abclab;

namespace {
const float kNinf = -std::numeric_limits<float>::infinity();

bool open_at(const BiasMatrix& b, int i, int j) { return b(i, j) == 0.0f; }

int open_count_row(const BiasMatrix& b, int i) {
    int n = 0;
    for (int j = 0; j < b.cols(); ++j) {
        if (std::isfinite(b(i, j))) ++n;
    }
    return n;
}
}  // namespace

TEST_CASE("self window bias golden fixture L=3 w=1") {
    BiasMatrix b = self_window_bias(3, 1);
    const BiasMatrix expected = [] {
        BiasMatrix m(3, 3);
        m << 0, kNinf, kNinf, 0, 0, kNinf, kNinf, 0, 0;
        return m;
    }();
    CHECK(b.rows() == 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(b(i, j) == expected(i, j));
        }
    }
}

TEST_CASE("self window bias w=0 keeps only the diagonal") {
    BiasMatrix b = self_window_bias(4, 0);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            CHECK(std::isfinite(b(i, j)) == (i == j));
        }
    }
}

TEST_CASE("self window bias rows always have an open entry and stay causal") {
    for (int L : {1, 2, 5, 9}) {
        for (int w : {0, 1, 3}) {
            BiasMatrix b = self_window_bias(L, w);
            for (int i = 0; i < L; ++i) {
                CHECK(open_count_row(b, i) >= 1);
                for (int j = i + 1; j < L; ++j) CHECK(b(i, j) == kNinf);
            }
        }
    }
}

TEST_CASE("unary cross window w=0 opens exactly the anti-diagonal") {
    BiasMatrix b = cross_window_bias(3, 3, 0, WindowArity::Unary);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(std::isfinite(b(i, j)) == (i + j == 2));
        }
    }
}

TEST_CASE("unary cross window open-set cardinality is min(2w+1, S) away from borders") {
    const int S = 9;
    for (int w : {0, 1, 2}) {
        BiasMatrix b = cross_window_bias(S, S, w, WindowArity::Unary);
        for (int i = w; i < S - w; ++i) {
            CHECK(open_count_row(b, i) == std::min(2 * w + 1, S));
        }
        for (int i = 0; i < S; ++i) CHECK(open_count_row(b, i) >= 1);
    }
}

TEST_CASE("binary cross window golden fixture L=3 S=7 w=1") {
    // pairs: (a_3 b_3) cols 1-2, (a_2 b_2) cols 3-4, (a_1 b_1) cols 5-6; op col 0
    BiasMatrix b = cross_window_bias(3, 7, 1, WindowArity::Binary);
    auto row_open = [&](int i) {
        std::vector<int> cols;
        for (int j = 0; j < 7; ++j) {
            if (std::isfinite(b(i, j))) cols.push_back(j);
        }
        return cols;
    };
    CHECK(row_open(0) == std::vector<int>{0, 3, 4, 5, 6});  // pair 1 + pair 2 + operator
    CHECK(row_open(1) == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
    CHECK(row_open(2) == std::vector<int>{0, 1, 2, 3, 4});  // clamped at the high end
}

TEST_CASE("binary cross windows only open whole digit pairs") {
    for (int w : {0, 1, 2}) {
        BiasMatrix b = cross_window_bias(6, 11, w, WindowArity::Binary, false);
        for (int i = 0; i < b.rows(); ++i) {
            for (int p = 0; p < 5; ++p) {
                const int c0 = 2 * p + 1;
                CHECK(std::isfinite(b(i, c0)) == std::isfinite(b(i, c0 + 1)));
            }
        }
    }
}

TEST_CASE("binary rows past input coverage clamp to the most significant pair") {
    BiasMatrix b = cross_window_bias(6, 7, 0, WindowArity::Binary, false);
    // 3 pairs; rows 3.. (carry, EOS) open pair 3 = cols 1,2
    for (int i = 3; i < 6; ++i) {
        CHECK(open_at(b, i, 1));
        CHECK(open_at(b, i, 2));
        CHECK(open_count_row(b, i) == 2);
    }
}

TEST_CASE("binary cross window requires the aligned odd-length layout") {
    CHECK_THROWS_AS(cross_window_bias(3, 8, 1, WindowArity::Binary), DimensionError);
}

TEST_CASE("cpi_map wraps indices") {
    CHECK(cpi_map(7, 3) == 1);
    CHECK(cpi_map(2, 3) == 2);
    for (int i = 0; i < 5; ++i) CHECK(cpi_map(i, 100) == i);
    CHECK_THROWS_AS(cpi_map(1, 0), std::invalid_argument);
}

TEST_CASE("masking a mask changes nothing (idempotent composition)") {
    BiasMatrix b = self_window_bias(6, 1);
    BiasMatrix twice = b + b;  // -inf + -inf = -inf, 0 + 0 = 0
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            CHECK(((twice(i, j) == b(i, j)) || (std::isinf(twice(i, j)) && std::isinf(b(i, j)))));
        }
    }
}

TEST_CASE("window bias set replicates one scaffold across heads") {
    WindowSpec spec;
    spec.w = 1;
    spec.arity = WindowArity::Unary;
    spec.out_len = 5;
    spec.in_len = 4;
    BiasSet set = make_window_bias_set(spec, 4);
    REQUIRE(set.self_heads.size() == 4);
    REQUIRE(set.cross_heads.size() == 4);
    for (int h = 1; h < 4; ++h) {
        CHECK(set.cross_heads[static_cast<std::size_t>(h)] == set.cross_heads[0]);
    }
}
