#pragma once

// Reverse-mode training stack for the small transformers in this project.
// Modules hold their parameters, gradients, and the forward caches needed by
// the matching backward call. Everything is templated on the scalar type so
// tests can run the exact same code in double precision.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "abclab/errors.hpp"
#include "abclab/rng.hpp"

namespace abclab::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
S neg_inf() {
    return -std::numeric_limits<S>::infinity();
}

template <class S>
struct Param {
    std::string name;
    Mat<S> value;
    Mat<S> grad;

    void init_zero(Eigen::Index rows, Eigen::Index cols) {
        value = Mat<S>::Zero(rows, cols);
        grad = Mat<S>::Zero(rows, cols);
    }
};

template <class S>
using ParamList = std::vector<Param<S>*>;

// Inverted dropout driven by a counter-based hash: masks depend only on
// (stream, element index), never on thread scheduling.
template <class S>
inline S drop_scale(std::uint64_t stream, std::uint64_t index, S rate) {
    if (rate <= S(0)) return S(1);
    const double u = unit_from_hash(mix64(stream, index));
    return u < static_cast<double>(rate) ? S(0) : S(1) / (S(1) - rate);
}

template <class S>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in, int out) {
        W.name = name + ".weight";
        b.name = name + ".bias";
        W.init_zero(in, out);
        b.init_zero(1, out);
    }

    void init(Rng& rng) {
        const double a = std::sqrt(6.0 / static_cast<double>(W.value.rows() + W.value.cols()));
        for (Eigen::Index i = 0; i < W.value.rows(); ++i) {
            for (Eigen::Index j = 0; j < W.value.cols(); ++j) {
                W.value(i, j) = static_cast<S>(rng.uniform(-a, a));
            }
        }
        b.value.setZero();
    }

    // Keeps untrained logits near uniform (readout layers).
    void init_normal(Rng& rng, double stddev) {
        for (Eigen::Index i = 0; i < W.value.rows(); ++i) {
            for (Eigen::Index j = 0; j < W.value.cols(); ++j) {
                W.value(i, j) = static_cast<S>(rng.normal() * stddev);
            }
        }
        b.value.setZero();
    }

    Mat<S> forward(const Mat<S>& x) {
        x_ = x;
        Mat<S> y = x * W.value;
        y.rowwise() += b.value.row(0);
        return y;
    }

    Mat<S> backward(const Mat<S>& dy) {
        W.grad.noalias() += x_.transpose() * dy;
        b.grad.row(0) += dy.colwise().sum();
        return dy * W.value.transpose();
    }

    void collect(ParamList<S>& out) {
        out.push_back(&W);
        out.push_back(&b);
    }

    Param<S> W, b;

private:
    Mat<S> x_;
};

template <class S>
class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(const std::string& name, int dim) {
        gamma.name = name + ".gamma";
        beta.name = name + ".beta";
        gamma.init_zero(1, dim);
        gamma.value.setOnes();
        beta.init_zero(1, dim);
    }

    Mat<S> forward(const Mat<S>& x) {
        const Eigen::Index n = x.rows(), d = x.cols();
        xhat_.resize(n, d);
        rstd_.resize(n);
        Mat<S> y(n, d);
        for (Eigen::Index r = 0; r < n; ++r) {
            const S mu = x.row(r).mean();
            const S var = (x.row(r).array() - mu).square().sum() / static_cast<S>(d);
            const S rstd = S(1) / std::sqrt(var + S(1e-5));
            rstd_[static_cast<std::size_t>(r)] = rstd;
            xhat_.row(r) = ((x.row(r).array() - mu) * rstd).matrix();
            y.row(r) = xhat_.row(r).cwiseProduct(gamma.value.row(0)) + beta.value.row(0);
        }
        return y;
    }

    Mat<S> backward(const Mat<S>& dy) {
        const Eigen::Index n = dy.rows(), d = dy.cols();
        Mat<S> dx(n, d);
        for (Eigen::Index r = 0; r < n; ++r) {
            auto xh = xhat_.row(r);
            Mat<S> dxh = dy.row(r).cwiseProduct(gamma.value.row(0));
            const S m1 = dxh.row(0).mean();
            const S m2 = dxh.row(0).cwiseProduct(xh).mean();
            dx.row(r) = ((dxh.row(0).array() - m1 - xh.array() * m2) *
                         rstd_[static_cast<std::size_t>(r)])
                            .matrix();
        }
        gamma.grad.row(0) += dy.cwiseProduct(xhat_).colwise().sum();
        beta.grad.row(0) += dy.colwise().sum();
        return dx;
    }

    void collect(ParamList<S>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    Param<S> gamma, beta;

private:
    Mat<S> xhat_;
    std::vector<S> rstd_;
};

// Per-call attention context. Bias matrices, when present, must already be
// sliced to [Tq x Tk] and sanitized (no all -inf row once combined with the
// causal mask).
template <class S>
struct AttnContext {
    bool causal = false;
    const std::vector<Mat<S>>* bias = nullptr;  // one matrix per head; must outlive backward
    const std::vector<S>* alibi_slopes = nullptr;
    bool alibi_symmetric = false;      // |i-j| instead of the causal (i-j), j <= i
    std::vector<int> rope_pos_q;       // empty = no rotary embedding
    std::vector<int> rope_pos_k;
    S dropout = S(0);
    std::uint64_t drop_stream = 0;  // 0 disables dropout
    bool want_scores = false;       // record unscaled QK^T per head (B == 1 only)
};

template <class S>
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(const std::string& name, int d_model, int heads, std::uint64_t stream_tag)
        : d_(d_model),
          heads_(heads),
          dh_(d_model / heads),
          stream_tag_(stream_tag),
          wq_(name + ".q", d_model, d_model),
          wk_(name + ".k", d_model, d_model),
          wv_(name + ".v", d_model, d_model),
          wo_(name + ".o", d_model, d_model) {}

    void init(Rng& rng) {
        wq_.init(rng);
        wk_.init(rng);
        wv_.init(rng);
        wo_.init(rng);
    }

    Mat<S> forward(const Mat<S>& xq, const Mat<S>& xkv, int B, int Tq, int Tk,
                   const AttnContext<S>& ctx) {
        B_ = B;
        Tq_ = Tq;
        Tk_ = Tk;
        ctx_ = ctx;
        q_ = wq_.forward(xq);
        k_ = wk_.forward(xkv);
        v_ = wv_.forward(xkv);
        if (!ctx.rope_pos_q.empty()) apply_rope(q_, ctx.rope_pos_q, Tq, false);
        if (!ctx.rope_pos_k.empty()) apply_rope(k_, ctx.rope_pos_k, Tk, false);

        probs_.assign(static_cast<std::size_t>(B) * static_cast<std::size_t>(heads_), Mat<S>());
        if (ctx.want_scores) {
            scores_.assign(static_cast<std::size_t>(heads_), Mat<S>());
        }
        const S scale = S(1) / std::sqrt(static_cast<S>(dh_));
        Mat<S> context(static_cast<Eigen::Index>(B) * Tq, d_);

#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < heads_; ++h) {
                auto qb = q_.block(static_cast<Eigen::Index>(b) * Tq, static_cast<Eigen::Index>(h) * dh_, Tq, dh_);
                auto kb = k_.block(static_cast<Eigen::Index>(b) * Tk, static_cast<Eigen::Index>(h) * dh_, Tk, dh_);
                auto vb = v_.block(static_cast<Eigen::Index>(b) * Tk, static_cast<Eigen::Index>(h) * dh_, Tk, dh_);

                Mat<S> raw = qb * kb.transpose();
                if (ctx.want_scores && B == 1) {
                    scores_[static_cast<std::size_t>(h)] = raw;
                }
                Mat<S> s = raw * scale;
                if (ctx.alibi_slopes) {
                    const S slope = (*ctx.alibi_slopes)[static_cast<std::size_t>(h)];
                    for (int i = 0; i < Tq; ++i) {
                        for (int j = 0; j < Tk; ++j) {
                            const S dist = ctx.alibi_symmetric
                                               ? static_cast<S>(std::abs(i - j))
                                               : static_cast<S>(i - j);
                            s(i, j) -= slope * dist;
                        }
                    }
                }
                if (ctx.bias) {
                    s += (*ctx.bias)[static_cast<std::size_t>(h)];
                }
                if (ctx.causal) {
                    for (int i = 0; i < Tq; ++i) {
                        for (int j = i + 1; j < Tk; ++j) s(i, j) = neg_inf<S>();
                    }
                }
                Mat<S>& p = probs_[static_cast<std::size_t>(b) * heads_ + static_cast<std::size_t>(h)];
                p = softmax_rows(s);
                Mat<S> pd = p;
                if (ctx.drop_stream != 0 && ctx.dropout > S(0)) {
                    apply_dropout(pd, b, h);
                }
                context.block(static_cast<Eigen::Index>(b) * Tq, static_cast<Eigen::Index>(h) * dh_, Tq, dh_).noalias() =
                    pd * vb;
            }
        }
        return wo_.forward(context);
    }

    // Returns (dXq, dXkv); for self attention the caller adds them.
    std::pair<Mat<S>, Mat<S>> backward(const Mat<S>& dy) {
        Mat<S> dctx = wo_.backward(dy);
        Mat<S> dq = Mat<S>::Zero(q_.rows(), q_.cols());
        Mat<S> dk = Mat<S>::Zero(k_.rows(), k_.cols());
        Mat<S> dv = Mat<S>::Zero(v_.rows(), v_.cols());
        const S scale = S(1) / std::sqrt(static_cast<S>(dh_));

#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < B_; ++b) {
            for (int h = 0; h < heads_; ++h) {
                const Mat<S>& p = probs_[static_cast<std::size_t>(b) * heads_ + static_cast<std::size_t>(h)];
                auto qb = q_.block(static_cast<Eigen::Index>(b) * Tq_, static_cast<Eigen::Index>(h) * dh_, Tq_, dh_);
                auto kb = k_.block(static_cast<Eigen::Index>(b) * Tk_, static_cast<Eigen::Index>(h) * dh_, Tk_, dh_);
                auto vb = v_.block(static_cast<Eigen::Index>(b) * Tk_, static_cast<Eigen::Index>(h) * dh_, Tk_, dh_);
                auto dctxb = dctx.block(static_cast<Eigen::Index>(b) * Tq_, static_cast<Eigen::Index>(h) * dh_, Tq_, dh_);

                Mat<S> pd = p;
                if (ctx_.drop_stream != 0 && ctx_.dropout > S(0)) {
                    apply_dropout(pd, b, h);
                }
                Mat<S> dpd = dctxb * vb.transpose();
                dv.block(static_cast<Eigen::Index>(b) * Tk_, static_cast<Eigen::Index>(h) * dh_, Tk_, dh_).noalias() +=
                    pd.transpose() * dctxb;

                if (ctx_.drop_stream != 0 && ctx_.dropout > S(0)) {
                    mask_like_dropout(dpd, b, h);
                }
                // softmax backward, rows independent
                Mat<S> ds(Tq_, Tk_);
                for (int i = 0; i < Tq_; ++i) {
                    const S dot = dpd.row(i).cwiseProduct(p.row(i)).sum();
                    ds.row(i) = (p.row(i).array() * (dpd.row(i).array() - dot)).matrix();
                }
                dq.block(static_cast<Eigen::Index>(b) * Tq_, static_cast<Eigen::Index>(h) * dh_, Tq_, dh_).noalias() +=
                    ds * kb * scale;
                dk.block(static_cast<Eigen::Index>(b) * Tk_, static_cast<Eigen::Index>(h) * dh_, Tk_, dh_).noalias() +=
                    ds.transpose() * qb * scale;
            }
        }
        if (!ctx_.rope_pos_q.empty()) apply_rope(dq, ctx_.rope_pos_q, Tq_, true);
        if (!ctx_.rope_pos_k.empty()) apply_rope(dk, ctx_.rope_pos_k, Tk_, true);
        Mat<S> dxq = wq_.backward(dq);
        Mat<S> dxkv = wk_.backward(dk);
        dxkv += wv_.backward(dv);
        return {std::move(dxq), std::move(dxkv)};
    }

    const std::vector<Mat<S>>& last_scores() const { return scores_; }

    void collect(ParamList<S>& out) {
        wq_.collect(out);
        wk_.collect(out);
        wv_.collect(out);
        wo_.collect(out);
    }

private:
    static Mat<S> softmax_rows(const Mat<S>& s) {
        Mat<S> p(s.rows(), s.cols());
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            S mx = neg_inf<S>();
            for (Eigen::Index j = 0; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
            if (!std::isfinite(mx)) {
                throw DimensionError("attention row fully masked; bias sanitation missing");
            }
            S sum = S(0);
            for (Eigen::Index j = 0; j < s.cols(); ++j) {
                const S e = std::isfinite(s(i, j)) ? std::exp(s(i, j) - mx) : S(0);
                p(i, j) = e;
                sum += e;
            }
            p.row(i) /= sum;
        }
        return p;
    }

    void apply_dropout(Mat<S>& p, int b, int h) const {
        const std::uint64_t stream = mix64(ctx_.drop_stream, stream_tag_);
        for (int i = 0; i < Tq_; ++i) {
            for (int j = 0; j < Tk_; ++j) {
                const std::uint64_t idx =
                    ((static_cast<std::uint64_t>(b) * static_cast<std::uint64_t>(heads_) +
                      static_cast<std::uint64_t>(h)) *
                         static_cast<std::uint64_t>(Tq_) +
                     static_cast<std::uint64_t>(i)) *
                        static_cast<std::uint64_t>(Tk_) +
                    static_cast<std::uint64_t>(j);
                p(i, j) *= drop_scale<S>(stream, idx, ctx_.dropout);
            }
        }
    }
    void mask_like_dropout(Mat<S>& g, int b, int h) const { apply_dropout(g, b, h); }

    // In-place rotary embedding over each head's dims; inverse = true rotates
    // by -theta (used on gradients).
    void apply_rope(Mat<S>& x, const std::vector<int>& pos, int T, bool inverse) const {
        const int half = dh_ / 2;
        const Eigen::Index rows = x.rows();
        const int B = static_cast<int>(rows) / T;
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < T; ++t) {
                const S p = static_cast<S>(pos[static_cast<std::size_t>(t)]);
                for (int h = 0; h < heads_; ++h) {
                    for (int c = 0; c < half; ++c) {
                        const S theta =
                            p * static_cast<S>(std::pow(10000.0, -2.0 * c / static_cast<double>(dh_)));
                        const S cs = std::cos(theta);
                        const S sn = inverse ? -std::sin(theta) : std::sin(theta);
                        const Eigen::Index r = static_cast<Eigen::Index>(b) * T + t;
                        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh_ + 2 * c;
                        const S x0 = x(r, c0), x1 = x(r, c0 + 1);
                        x(r, c0) = x0 * cs - x1 * sn;
                        x(r, c0 + 1) = x0 * sn + x1 * cs;
                    }
                }
            }
        }
    }

    int d_ = 0, heads_ = 0, dh_ = 0;
    int B_ = 0, Tq_ = 0, Tk_ = 0;
    std::uint64_t stream_tag_ = 0;
    AttnContext<S> ctx_;
    Linear<S> wq_, wk_, wv_, wo_;
    Mat<S> q_, k_, v_;
    std::vector<Mat<S>> probs_;   // per (b,h), post-softmax pre-dropout
    std::vector<Mat<S>> scores_;  // per head, unscaled QK^T (B == 1)
};

template <class S>
class FeedForward {
public:
    FeedForward() = default;
    FeedForward(const std::string& name, int d_model, int d_ff, std::uint64_t stream_tag)
        : stream_tag_(stream_tag), in_(name + ".in", d_model, d_ff), out_(name + ".out", d_ff, d_model) {}

    void init(Rng& rng) {
        in_.init(rng);
        out_.init(rng);
    }

    Mat<S> forward(const Mat<S>& x, S dropout, std::uint64_t drop_stream) {
        dropout_ = dropout;
        drop_stream_ = drop_stream;
        h_ = in_.forward(x);
        Mat<S> a = h_.cwiseMax(S(0));
        if (drop_stream != 0 && dropout > S(0)) {
            apply_dropout(a);
        }
        a_ = a;
        return out_.forward(a);
    }

    Mat<S> backward(const Mat<S>& dy) {
        Mat<S> da = out_.backward(dy);
        if (drop_stream_ != 0 && dropout_ > S(0)) {
            apply_dropout(da);
        }
        Mat<S> dh = ((h_.array() > S(0)).template cast<S>() * da.array()).matrix();
        return in_.backward(dh);
    }

    void collect(ParamList<S>& out) {
        in_.collect(out);
        out_.collect(out);
    }

private:
    void apply_dropout(Mat<S>& m) const {
        const std::uint64_t stream = mix64(drop_stream_, stream_tag_);
        std::uint64_t idx = 0;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                m(i, j) *= drop_scale<S>(stream, idx++, dropout_);
            }
        }
    }

    std::uint64_t stream_tag_ = 0;
    S dropout_ = S(0);
    std::uint64_t drop_stream_ = 0;
    Linear<S> in_, out_;
    Mat<S> h_, a_;
};

template <class S>
class Adam {
public:
    Adam() = default;
    Adam(ParamList<S> params, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (Param<S>* p : params_) {
            m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void zero_grads() {
        for (Param<S>* p : params_) p->grad.setZero();
    }

    // Global gradient-norm clip; 0 disables.
    void clip_grad_norm(S max_norm) {
        if (max_norm <= S(0)) return;
        double total = 0.0;
        for (Param<S>* p : params_) total += static_cast<double>(p->grad.squaredNorm());
        const double norm = std::sqrt(total);
        if (norm > static_cast<double>(max_norm)) {
            const S scale = static_cast<S>(static_cast<double>(max_norm) / norm);
            for (Param<S>* p : params_) p->grad *= scale;
        }
    }

    void step(S lr) {
        ++t_;
        const S c1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), t_));
        const S c2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Param<S>& p = *params_[i];
            m_[i] = beta1_ * m_[i] + (S(1) - beta1_) * p.grad;
            v_[i] = (beta2_ * v_[i].array() + (S(1) - beta2_) * p.grad.array().square()).matrix();
            p.value.array() -=
                lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
        }
    }

    std::int64_t steps() const { return t_; }
    void set_steps(std::int64_t t) { t_ = t; }
    std::vector<Mat<S>>& moments_m() { return m_; }
    std::vector<Mat<S>>& moments_v() { return v_; }
    const ParamList<S>& params() const { return params_; }

private:
    ParamList<S> params_;
    std::vector<Mat<S>> m_, v_;
    S beta1_ = S(0.9), beta2_ = S(0.999), eps_ = S(1e-8);
    std::int64_t t_ = 0;
};

// Mean token-level cross entropy over rows where mask is true.
// Fills dlogits with the gradient.
template <class S>
double cross_entropy(const Mat<S>& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask, Mat<S>* dlogits) {
    const Eigen::Index n = logits.rows(), v = logits.cols();
    if (dlogits) *dlogits = Mat<S>::Zero(n, v);
    double total = 0.0;
    std::int64_t count = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
        if (!mask[static_cast<std::size_t>(r)]) continue;
        ++count;
    }
    if (count == 0) throw EmptySetError("cross_entropy: empty target mask");
    for (Eigen::Index r = 0; r < n; ++r) {
        if (!mask[static_cast<std::size_t>(r)]) continue;
        const S mx = logits.row(r).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < v; ++j) {
            sum += std::exp(static_cast<double>(logits(r, j) - mx));
        }
        const double lse = std::log(sum) + static_cast<double>(mx);
        const int t = targets[static_cast<std::size_t>(r)];
        total += lse - static_cast<double>(logits(r, t));
        if (dlogits) {
            for (Eigen::Index j = 0; j < v; ++j) {
                const double p = std::exp(static_cast<double>(logits(r, j)) - lse);
                (*dlogits)(r, j) = static_cast<S>(p / static_cast<double>(count));
            }
            (*dlogits)(r, t) -= S(1) / static_cast<S>(count);
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace abclab::nn
