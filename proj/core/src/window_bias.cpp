#include "abclab/window_bias.hpp"

#include <limits>
#include <stdexcept>

#include "abclab/errors.hpp"

namespace abclab {

namespace {
constexpr float kNegInf = -std::numeric_limits<float>::infinity();
}

BiasMatrix self_window_bias(int L, int w) {
    if (L < 1 || w < 0) throw std::invalid_argument("self_window_bias: L >= 1, w >= 0");
    BiasMatrix b = BiasMatrix::Constant(L, L, kNegInf);
    for (int i = 0; i < L; ++i) {
        for (int j = std::max(0, i - w); j <= i; ++j) b(i, j) = 0.0f;
    }
    return b;
}

BiasMatrix cross_window_bias(int L, int S, int w, WindowArity arity, bool operator_column_open) {
    if (L < 1 || S < 1 || w < 0) throw std::invalid_argument("cross_window_bias: bad dims");
    BiasMatrix b = BiasMatrix::Constant(L, S, kNegInf);

    if (arity == WindowArity::Unary) {
        for (int i = 0; i < L; ++i) {
            const int center = S - 1 - i;  // reversed output: digit i+1 reads column S-i
            int lo = std::max(0, center - w);
            int hi = std::min(S - 1, center + w);
            if (hi < 0) lo = hi = 0;  // rows past coverage clamp to the leftmost column
            for (int j = lo; j <= hi; ++j) b(i, j) = 0.0f;
        }
    } else {
        if (S % 2 == 0 || S < 3) {
            throw DimensionError("cross_window_bias: binary layout needs odd S >= 3 (op + pairs)");
        }
        const int pairs = (S - 1) / 2;  // digit pair k (1 = lowest) at columns 2(pairs-k)+1,+2
        for (int i = 0; i < L; ++i) {
            const int k = i + 1;
            int k_lo = std::max(1, k - w);
            int k_hi = std::min(pairs, k + w);
            if (k_lo > pairs) k_lo = k_hi = pairs;  // carry/EOS rows: most significant pair
            const int col_lo = 2 * (pairs - k_hi) + 1;
            const int col_hi = 2 * (pairs - k_lo) + 2;
            for (int j = col_lo; j <= col_hi; ++j) b(i, j) = 0.0f;
            if (operator_column_open && w >= 1) b(i, 0) = 0.0f;
        }
    }
    return b;
}

int cpi_map(int position, int period) {
    if (period < 1) throw std::invalid_argument("cpi_map: period must be >= 1");
    return position % period;
}

BiasSet make_window_bias_set(const WindowSpec& spec, int heads, bool operator_column_open) {
    BiasSet set;
    BiasMatrix self = self_window_bias(spec.out_len, spec.w);
    BiasMatrix cross =
        cross_window_bias(spec.out_len, spec.in_len, spec.w, spec.arity, operator_column_open);
    set.self_heads.assign(static_cast<std::size_t>(heads), self);
    set.cross_heads.assign(static_cast<std::size_t>(heads), cross);
    return set;
}

}  // namespace abclab
