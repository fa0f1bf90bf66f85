#pragma once

#include <Eigen/Dense>

#include "abclab/model.hpp"

namespace abclab {

using BiasMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class WindowArity { Unary, Binary };

struct WindowSpec {
    int w = 1;  // window half-width
    WindowArity arity = WindowArity::Unary;
    int out_len = 0;  // decoder rows L
    int in_len = 0;   // encoder columns S
};

// Decoder self-attention window: entry (i,j) is 0 iff 0 <= i-j <= w (1-based
// and 0-based agree here), everything else -inf. Includes the causal mask.
BiasMatrix self_window_bias(int L, int w);

// Cross-attention window along the anti-diagonal, matching reversed outputs.
// Row i opens the input position(s) for output digit i+1, extended w steps to
// both sides: one column per step for unary inputs, one aligned digit pair
// per step for binary (interleaved) inputs. Rows past the input coverage
// clamp to the leftmost column/pair. For binary inputs the leading operator
// column stays open when w >= 1 (heads are seen attending the operator), and
// the layout must be the aligned "op d d d d ..." form (odd S).
BiasMatrix cross_window_bias(int L, int S, int w, WindowArity arity,
                             bool operator_column_open = true);

// Cyclic position indexing: i mod T.
int cpi_map(int position, int period);

// Shared scaffold replicated across heads at exact live dims.
BiasSet make_window_bias_set(const WindowSpec& spec, int heads, bool operator_column_open = true);

}  // namespace abclab
