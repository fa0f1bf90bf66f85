#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "abclab/errors.hpp"
#include "abclab/nn.hpp"
#include "abclab/rng.hpp"
#include "abclab/vocab.hpp"

namespace abclab {

enum class PEKind { Sinusoidal, NoPE, RoPE, ALiBi };

inline const char* pe_name(PEKind pe) {
    switch (pe) {
        case PEKind::Sinusoidal: return "sinusoidal";
        case PEKind::NoPE: return "nope";
        case PEKind::RoPE: return "rope";
        case PEKind::ALiBi: return "alibi";
    }
    return "?";
}

inline PEKind pe_from_name(const std::string& name) {
    if (name == "sinusoidal" || name == "sin") return PEKind::Sinusoidal;
    if (name == "nope" || name == "none") return PEKind::NoPE;
    if (name == "rope") return PEKind::RoPE;
    if (name == "alibi") return PEKind::ALiBi;
    throw std::invalid_argument("unknown positional encoding '" + name + "'");
}

struct ModelConfig {
    int encoder_layers = 1;
    int decoder_layers = 6;
    int heads = 8;
    int d_model = 128;
    int d_ff = 512;
    float dropout = 0.3f;
    float learning_rate = 1e-5f;
    PEKind pe = PEKind::Sinusoidal;
    int cpi_period = 0;  // 0 = plain indexing, otherwise positions become i mod T
    int vocab_size = Vocab::kSize;
    std::uint64_t init_seed = 1;
    float grad_clip = 1.0f;  // global gradient norm; 0 disables
    bool bias_all_decoder_layers = true;

    void validate() const {
        if (d_model % heads != 0) throw DimensionError("d_model must be divisible by heads");
        if (dropout < 0.0f || dropout >= 1.0f) throw std::invalid_argument("dropout must be in [0,1)");
        if (encoder_layers < 1 || decoder_layers < 1) throw std::invalid_argument("need >= 1 layer");
    }
};

struct AttentionTensor {
    enum class Site { Self, Cross };
    Site site = Site::Self;
    int layer = 0;
    std::vector<Eigen::MatrixXf> heads;  // [query, key], pre-softmax, unscaled
};

// Additive pre-softmax biases, one matrix per head and attention site.
// Stored at full extension dims [M x M] (self) and [M x N] (cross) and sliced
// to the live sequence dims per site:
//   self  -> top-left block, matching the causal band structure (l = j - i);
//   cross -> top rows, rightmost columns, matching the reversed-output
//            geometry (anti-diagonals and right-anchored columns keep their
//            meaning at any live input length).
// A sliced row left with no finite entry (jointly with the causal mask for
// the self site) is reset to zeros so softmax stays defined.
template <class S>
struct BiasSetT {
    std::vector<nn::Mat<S>> self_heads;
    std::vector<nn::Mat<S>> cross_heads;

    bool has_self() const { return !self_heads.empty(); }
    bool has_cross() const { return !cross_heads.empty(); }

    static nn::Mat<S> slice_self(const nn::Mat<S>& full, int m) {
        if (full.rows() < m || full.cols() < m) {
            throw DimensionError("self bias smaller than live sequence");
        }
        nn::Mat<S> b = full.topLeftCorner(m, m);
        for (int i = 0; i < m; ++i) {
            bool open = false;
            for (int j = 0; j <= i && !open; ++j) open = std::isfinite(b(i, j));
            if (!open) b.row(i).setZero();
        }
        return b;
    }

    static nn::Mat<S> slice_cross(const nn::Mat<S>& full, int m, int n) {
        if (full.rows() < m || full.cols() < n) {
            throw DimensionError("cross bias smaller than live sequence");
        }
        nn::Mat<S> b = full.block(0, full.cols() - n, m, n);
        for (int i = 0; i < m; ++i) {
            bool open = false;
            for (int j = 0; j < n && !open; ++j) open = std::isfinite(b(i, j));
            if (!open) b.row(i).setZero();
        }
        return b;
    }

    std::vector<nn::Mat<S>> sliced_self(int m) const {
        std::vector<nn::Mat<S>> out;
        out.reserve(self_heads.size());
        for (const auto& h : self_heads) out.push_back(slice_self(h, m));
        return out;
    }

    std::vector<nn::Mat<S>> sliced_cross(int m, int n) const {
        std::vector<nn::Mat<S>> out;
        out.reserve(cross_heads.size());
        for (const auto& h : cross_heads) out.push_back(slice_cross(h, m, n));
        return out;
    }

    template <class T>
    BiasSetT<T> cast() const {
        BiasSetT<T> out;
        for (const auto& h : self_heads) out.self_heads.push_back(h.template cast<T>());
        for (const auto& h : cross_heads) out.cross_heads.push_back(h.template cast<T>());
        return out;
    }
};

using BiasSet = BiasSetT<float>;

// One uniform-shape training batch: enc tokens [B x Te] row-major, decoder
// input [B x Td] (SOS-framed), targets [B x Td] (EOS-framed, PAD ignored).
struct TokenBatch {
    std::vector<int> enc, dec_in, tgt;
    int B = 0, Te = 0, Td = 0;
};

template <class S>
class TransformerT {
public:
    explicit TransformerT(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg_.init_seed);
        const int d = cfg_.d_model;

        embedding_.name = "embedding";
        embedding_.init_zero(cfg_.vocab_size, d);
        for (Eigen::Index i = 0; i < embedding_.value.rows(); ++i) {
            for (Eigen::Index j = 0; j < embedding_.value.cols(); ++j) {
                embedding_.value(i, j) = static_cast<S>(rng.normal() * 0.02);
            }
        }

        for (int l = 0; l < cfg_.encoder_layers; ++l) {
            const std::string name = "enc." + std::to_string(l);
            enc_ln1_.emplace_back(name + ".ln1", d);
            enc_attn_.emplace_back(name + ".self", d, cfg_.heads, tag(100 + l, 0));
            enc_ln2_.emplace_back(name + ".ln2", d);
            enc_ff_.emplace_back(name + ".ff", d, cfg_.d_ff, tag(100 + l, 1));
        }
        for (int l = 0; l < cfg_.decoder_layers; ++l) {
            const std::string name = "dec." + std::to_string(l);
            dec_ln1_.emplace_back(name + ".ln1", d);
            dec_self_.emplace_back(name + ".self", d, cfg_.heads, tag(200 + l, 0));
            dec_ln2_.emplace_back(name + ".ln2", d);
            dec_cross_.emplace_back(name + ".cross", d, cfg_.heads, tag(200 + l, 1));
            dec_ln3_.emplace_back(name + ".ln3", d);
            dec_ff_.emplace_back(name + ".ff", d, cfg_.d_ff, tag(200 + l, 2));
        }
        enc_final_ln_ = nn::LayerNorm<S>("enc.final_ln", d);
        dec_final_ln_ = nn::LayerNorm<S>("dec.final_ln", d);
        out_proj_ = nn::Linear<S>("out", d, cfg_.vocab_size);

        for (auto& m : enc_attn_) m.init(rng);
        for (auto& m : enc_ff_) m.init(rng);
        for (auto& m : dec_self_) m.init(rng);
        for (auto& m : dec_cross_) m.init(rng);
        for (auto& m : dec_ff_) m.init(rng);
        out_proj_.init_normal(rng, 0.02);

        if (cfg_.pe == PEKind::ALiBi) {
            for (int h = 0; h < cfg_.heads; ++h) {
                alibi_slopes_.push_back(static_cast<S>(
                    std::pow(2.0, -8.0 * (h + 1) / static_cast<double>(cfg_.heads))));
            }
        }
        collect_params();
        opt_ = nn::Adam<S>(params_);
    }

    // Parameter and optimizer state hold pointers into this object.
    TransformerT(const TransformerT&) = delete;
    TransformerT& operator=(const TransformerT&) = delete;

    const ModelConfig& config() const { return cfg_; }
    nn::ParamList<S>& params() { return params_; }
    nn::Adam<S>& optimizer() { return opt_; }
    std::int64_t steps() const { return opt_.steps(); }

    // --- data plumbing -----------------------------------------------------

    static TokenBatch make_batch(const std::vector<const std::vector<int>*>& inputs,
                                 const std::vector<const std::vector<int>*>& targets) {
        TokenBatch b;
        b.B = static_cast<int>(inputs.size());
        b.Te = static_cast<int>(inputs[0]->size());
        b.Td = static_cast<int>(targets[0]->size()) + 1;
        b.enc.reserve(static_cast<std::size_t>(b.B) * b.Te);
        b.dec_in.reserve(static_cast<std::size_t>(b.B) * b.Td);
        b.tgt.reserve(static_cast<std::size_t>(b.B) * b.Td);
        for (int i = 0; i < b.B; ++i) {
            if (static_cast<int>(inputs[static_cast<std::size_t>(i)]->size()) != b.Te ||
                static_cast<int>(targets[static_cast<std::size_t>(i)]->size()) != b.Td - 1) {
                throw DimensionMismatch("make_batch: ragged batch");
            }
            b.enc.insert(b.enc.end(), inputs[static_cast<std::size_t>(i)]->begin(),
                         inputs[static_cast<std::size_t>(i)]->end());
            b.dec_in.push_back(Vocab::kSos);
            b.dec_in.insert(b.dec_in.end(), targets[static_cast<std::size_t>(i)]->begin(),
                            targets[static_cast<std::size_t>(i)]->end());
            b.tgt.insert(b.tgt.end(), targets[static_cast<std::size_t>(i)]->begin(),
                         targets[static_cast<std::size_t>(i)]->end());
            b.tgt.push_back(Vocab::kEos);
        }
        return b;
    }

    // --- training ----------------------------------------------------------

    // Forward + backward on one batch; grads are left in the parameters.
    // dropout_stream == 0 evaluates without dropout.
    double loss_and_grad(const TokenBatch& batch, const BiasSetT<S>* bias,
                         std::uint64_t dropout_stream) {
        if (batch.B == 0) throw EmptySetError("train_step: empty batch");
        opt_.zero_grads();
        nn::Mat<S> enc_out = encode(batch.enc, batch.B, batch.Te, dropout_stream);
        nn::Mat<S> logits =
            decode(enc_out, batch.dec_in, batch.B, batch.Td, batch.Te, bias, dropout_stream, false);

        std::vector<bool> mask(batch.tgt.size());
        for (std::size_t i = 0; i < batch.tgt.size(); ++i) mask[i] = batch.tgt[i] != Vocab::kPad;
        nn::Mat<S> dlogits;
        const double loss = nn::cross_entropy(logits, batch.tgt, mask, &dlogits);
        nn::Mat<S> denc = nn::Mat<S>::Zero(enc_out.rows(), enc_out.cols());
        backward_decoder(dlogits, denc);
        backward_encoder(denc);
        return loss;
    }

    double loss_only(const TokenBatch& batch, const BiasSetT<S>* bias,
                     std::uint64_t dropout_stream = 0) {
        nn::Mat<S> enc_out = encode(batch.enc, batch.B, batch.Te, dropout_stream);
        nn::Mat<S> logits =
            decode(enc_out, batch.dec_in, batch.B, batch.Td, batch.Te, bias, dropout_stream, false);
        std::vector<bool> mask(batch.tgt.size());
        for (std::size_t i = 0; i < batch.tgt.size(); ++i) mask[i] = batch.tgt[i] != Vocab::kPad;
        return nn::cross_entropy(logits, batch.tgt, mask, static_cast<nn::Mat<S>*>(nullptr));
    }

    // One Adam step on mean token cross entropy (PAD targets excluded).
    // Returns the loss at the current parameters, before the update.
    S train_step(const TokenBatch& batch, const BiasSetT<S>* bias) {
        const std::uint64_t stream =
            mix64(cfg_.init_seed, 0xd40bULL, static_cast<std::uint64_t>(steps() + 1));
        const double loss = loss_and_grad(batch, bias, stream);
        if (!std::isfinite(loss)) {
            throw NonFiniteLoss("train_step: loss diverged to " + std::to_string(loss));
        }
        opt_.clip_grad_norm(static_cast<S>(cfg_.grad_clip));
        opt_.step(static_cast<S>(cfg_.learning_rate));
        return static_cast<S>(loss);
    }

    // --- inference ---------------------------------------------------------

    nn::Mat<S> encode_frozen(const std::vector<int>& input) {
        return encode(input, 1, static_cast<int>(input.size()), 0);
    }

    // Full spec-shaped forward for one sample: logits per decoder position
    // plus last-decoder-layer attention tensors at both sites.
    struct ForwardOut {
        nn::Mat<S> logits;
        AttentionTensor self_attn;
        AttentionTensor cross_attn;
    };

    ForwardOut forward(const std::vector<int>& input, const std::vector<int>& decoder_tokens,
                       const BiasSetT<S>* bias, bool want_attention = false) {
        ForwardOut out;
        nn::Mat<S> enc_out = encode(input, 1, static_cast<int>(input.size()), 0);
        out.logits = decode(enc_out, decoder_tokens, 1, static_cast<int>(decoder_tokens.size()),
                            static_cast<int>(input.size()), bias, 0, want_attention);
        if (want_attention) {
            out.self_attn.site = AttentionTensor::Site::Self;
            out.self_attn.layer = cfg_.decoder_layers - 1;
            for (const auto& m : dec_self_.back().last_scores()) {
                out.self_attn.heads.push_back(m.template cast<float>());
            }
            out.cross_attn.site = AttentionTensor::Site::Cross;
            out.cross_attn.layer = cfg_.decoder_layers - 1;
            for (const auto& m : dec_cross_.back().last_scores()) {
                out.cross_attn.heads.push_back(m.template cast<float>());
            }
        }
        return out;
    }

    // Greedy argmax decode from SOS until EOS or max_len produced tokens.
    // Ties break toward the lowest token id. Returns tokens without EOS.
    std::vector<int> greedy_decode(const std::vector<int>& input, int max_len,
                                   const BiasSetT<S>* bias) {
        auto outs = greedy_decode_batch({input}, max_len, bias);
        return outs[0];
    }

    // Lockstep greedy decode over same-length inputs.
    std::vector<std::vector<int>> greedy_decode_batch(const std::vector<std::vector<int>>& inputs,
                                                      int max_len, const BiasSetT<S>* bias) {
        const int B = static_cast<int>(inputs.size());
        const int Te = static_cast<int>(inputs[0].size());
        std::vector<int> enc_tokens;
        enc_tokens.reserve(static_cast<std::size_t>(B) * Te);
        for (const auto& in : inputs) {
            if (static_cast<int>(in.size()) != Te) throw DimensionMismatch("ragged decode batch");
            enc_tokens.insert(enc_tokens.end(), in.begin(), in.end());
        }
        nn::Mat<S> enc_out = encode(enc_tokens, B, Te, 0);

        std::vector<std::vector<int>> produced(static_cast<std::size_t>(B));
        std::vector<bool> done(static_cast<std::size_t>(B), false);
        std::vector<int> dec(static_cast<std::size_t>(B), Vocab::kSos);
        int Td = 1;
        for (int step = 0; step < max_len; ++step) {
            nn::Mat<S> logits = decode(enc_out, dec, B, Td, Te, bias, 0, false);
            std::vector<int> next(static_cast<std::size_t>(B), Vocab::kPad);
            bool all_done = true;
            for (int b = 0; b < B; ++b) {
                if (done[static_cast<std::size_t>(b)]) continue;
                const Eigen::Index row = static_cast<Eigen::Index>(b) * Td + (Td - 1);
                int best = 0;
                for (int v = 1; v < cfg_.vocab_size; ++v) {
                    if (logits(row, v) > logits(row, best)) best = v;
                }
                if (best == Vocab::kEos) {
                    done[static_cast<std::size_t>(b)] = true;
                } else {
                    produced[static_cast<std::size_t>(b)].push_back(best);
                    next[static_cast<std::size_t>(b)] = best;
                    all_done = false;
                }
            }
            if (all_done) break;
            // grow decoder inputs
            std::vector<int> grown;
            grown.reserve(static_cast<std::size_t>(B) * (Td + 1));
            for (int b = 0; b < B; ++b) {
                grown.insert(grown.end(), dec.begin() + static_cast<std::ptrdiff_t>(b) * Td,
                             dec.begin() + static_cast<std::ptrdiff_t>(b + 1) * Td);
                grown.push_back(next[static_cast<std::size_t>(b)]);
            }
            dec = std::move(grown);
            ++Td;
        }
        return produced;
    }

    // Pre-softmax unscaled QK^T at the last decoder layer for one sample,
    // evaluated on the full teacher-forced sequence [SOS, tokens...].
    std::pair<AttentionTensor, AttentionTensor> extract_last_layer_attention(
        const std::vector<int>& input, const std::vector<int>& output_tokens,
        const BiasSetT<S>* bias = nullptr) {
        std::vector<int> dec{Vocab::kSos};
        dec.insert(dec.end(), output_tokens.begin(), output_tokens.end());
        ForwardOut out = forward(input, dec, bias, true);
        return {std::move(out.self_attn), std::move(out.cross_attn)};
    }

private:
    static std::uint64_t tag(int layer, int site) {
        return static_cast<std::uint64_t>(layer) * 16 + static_cast<std::uint64_t>(site);
    }

    std::vector<int> positions(int T) const {
        std::vector<int> pos(static_cast<std::size_t>(T));
        for (int i = 0; i < T; ++i) {
            pos[static_cast<std::size_t>(i)] = cfg_.cpi_period > 0 ? i % cfg_.cpi_period : i;
        }
        return pos;
    }

    void ensure_pe_rows(int T) {
        if (pe_table_.rows() >= T) return;
        const int d = cfg_.d_model;
        pe_table_.conservativeResize(T, d);
        for (int p = 0; p < T; ++p) {
            for (int c = 0; c < d; c += 2) {
                const double omega = std::pow(10000.0, -static_cast<double>(c) / d);
                pe_table_(p, c) = static_cast<S>(std::sin(p * omega));
                if (c + 1 < d) pe_table_(p, c + 1) = static_cast<S>(std::cos(p * omega));
            }
        }
    }

    nn::Mat<S> embed(const std::vector<int>& tokens, int B, int T) {
        const int d = cfg_.d_model;
        const S scale = std::sqrt(static_cast<S>(d));
        nn::Mat<S> x(static_cast<Eigen::Index>(B) * T, d);
        const auto pos = positions(T);
        const bool sin_pe = cfg_.pe == PEKind::Sinusoidal;
        if (sin_pe) ensure_pe_rows(cfg_.cpi_period > 0 ? std::min(T, cfg_.cpi_period) : T);
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < T; ++t) {
                const int tok = tokens[static_cast<std::size_t>(b) * T + static_cast<std::size_t>(t)];
                if (tok < 0 || tok >= cfg_.vocab_size) {
                    throw std::invalid_argument("token id out of range: " + std::to_string(tok));
                }
                const Eigen::Index r = static_cast<Eigen::Index>(b) * T + t;
                x.row(r) = embedding_.value.row(tok) * scale;
                if (sin_pe) x.row(r) += pe_table_.row(pos[static_cast<std::size_t>(t)]);
            }
        }
        return x;
    }

    void backward_embed(const std::vector<int>& tokens, const nn::Mat<S>& dx) {
        const S scale = std::sqrt(static_cast<S>(cfg_.d_model));
        for (Eigen::Index r = 0; r < dx.rows(); ++r) {
            embedding_.grad.row(tokens[static_cast<std::size_t>(r)]) += dx.row(r) * scale;
        }
    }

    nn::AttnContext<S> base_ctx(bool causal, bool symmetric_alibi, std::uint64_t stream) const {
        nn::AttnContext<S> ctx;
        ctx.causal = causal;
        ctx.alibi_symmetric = symmetric_alibi;
        if (cfg_.pe == PEKind::ALiBi) ctx.alibi_slopes = &alibi_slopes_;
        ctx.dropout = static_cast<S>(cfg_.dropout);
        ctx.drop_stream = stream;
        return ctx;
    }

    // stream == 0 means inference (no dropout).
    nn::Mat<S> encode(const std::vector<int>& tokens, int B, int T, std::uint64_t stream) {
        enc_tokens_ = tokens;
        nn::Mat<S> x = embed(tokens, B, T);
        for (int l = 0; l < cfg_.encoder_layers; ++l) {
            nn::AttnContext<S> ctx = base_ctx(false, true, stream);
            if (cfg_.pe == PEKind::RoPE) {
                ctx.rope_pos_q = positions(T);
                ctx.rope_pos_k = ctx.rope_pos_q;
            }
            nn::Mat<S> h = enc_ln1_[static_cast<std::size_t>(l)].forward(x);
            x += enc_attn_[static_cast<std::size_t>(l)].forward(h, h, B, T, T, ctx);
            x += enc_ff_[static_cast<std::size_t>(l)].forward(
                enc_ln2_[static_cast<std::size_t>(l)].forward(x), static_cast<S>(cfg_.dropout),
                stream);
        }
        return enc_final_ln_.forward(x);
    }

    void backward_encoder(const nn::Mat<S>& denc_out) {
        nn::Mat<S> dx = enc_final_ln_.backward(denc_out);
        for (int l = cfg_.encoder_layers - 1; l >= 0; --l) {
            nn::Mat<S> dh = enc_ff_[static_cast<std::size_t>(l)].backward(dx);
            dx += enc_ln2_[static_cast<std::size_t>(l)].backward(dh);
            auto [dq, dkv] = enc_attn_[static_cast<std::size_t>(l)].backward(dx);
            dq += dkv;
            dx += enc_ln1_[static_cast<std::size_t>(l)].backward(dq);
        }
        backward_embed(enc_tokens_, dx);
    }

    nn::Mat<S> decode(const nn::Mat<S>& enc_out, const std::vector<int>& dec_tokens, int B, int Td,
                      int Te, const BiasSetT<S>* bias, std::uint64_t stream, bool want_attention) {
        dec_tokens_ = dec_tokens;

        sliced_self_.clear();
        sliced_cross_.clear();
        if (bias) {
            if (bias->has_self()) sliced_self_ = bias->sliced_self(Td);
            if (bias->has_cross()) sliced_cross_ = bias->sliced_cross(Td, Te);
        }

        nn::Mat<S> x = embed(dec_tokens, B, Td);
        for (int l = 0; l < cfg_.decoder_layers; ++l) {
            const bool biased_layer = cfg_.bias_all_decoder_layers || l == cfg_.decoder_layers - 1;
            const bool last = l == cfg_.decoder_layers - 1;

            nn::AttnContext<S> self_ctx = base_ctx(true, false, stream);
            if (cfg_.pe == PEKind::RoPE) {
                self_ctx.rope_pos_q = positions(Td);
                self_ctx.rope_pos_k = self_ctx.rope_pos_q;
            }
            if (biased_layer && !sliced_self_.empty()) self_ctx.bias = &sliced_self_;
            self_ctx.want_scores = want_attention && last;

            nn::AttnContext<S> cross_ctx = base_ctx(false, true, stream);
            if (cfg_.pe == PEKind::RoPE) {
                cross_ctx.rope_pos_q = positions(Td);
                cross_ctx.rope_pos_k = positions(Te);
            }
            if (biased_layer && !sliced_cross_.empty()) cross_ctx.bias = &sliced_cross_;
            cross_ctx.want_scores = want_attention && last;

            nn::Mat<S> h = dec_ln1_[static_cast<std::size_t>(l)].forward(x);
            x += dec_self_[static_cast<std::size_t>(l)].forward(h, h, B, Td, Td, self_ctx);
            x += dec_cross_[static_cast<std::size_t>(l)].forward(
                dec_ln2_[static_cast<std::size_t>(l)].forward(x), enc_out, B, Td, Te, cross_ctx);
            x += dec_ff_[static_cast<std::size_t>(l)].forward(
                dec_ln3_[static_cast<std::size_t>(l)].forward(x), static_cast<S>(cfg_.dropout),
                stream);
        }
        return out_proj_.forward(dec_final_ln_.forward(x));
    }

    void backward_decoder(const nn::Mat<S>& dlogits, nn::Mat<S>& denc_out) {
        nn::Mat<S> dx = dec_final_ln_.backward(out_proj_.backward(dlogits));
        for (int l = cfg_.decoder_layers - 1; l >= 0; --l) {
            nn::Mat<S> dh = dec_ff_[static_cast<std::size_t>(l)].backward(dx);
            dx += dec_ln3_[static_cast<std::size_t>(l)].backward(dh);
            auto [dq_c, dkv_c] = dec_cross_[static_cast<std::size_t>(l)].backward(dx);
            denc_out += dkv_c;
            dx += dec_ln2_[static_cast<std::size_t>(l)].backward(dq_c);
            auto [dq_s, dkv_s] = dec_self_[static_cast<std::size_t>(l)].backward(dx);
            dq_s += dkv_s;
            dx += dec_ln1_[static_cast<std::size_t>(l)].backward(dq_s);
        }
        backward_embed(dec_tokens_, dx);
    }

    void collect_params() {
        params_.clear();
        params_.push_back(&embedding_);
        for (int l = 0; l < cfg_.encoder_layers; ++l) {
            enc_ln1_[static_cast<std::size_t>(l)].collect(params_);
            enc_attn_[static_cast<std::size_t>(l)].collect(params_);
            enc_ln2_[static_cast<std::size_t>(l)].collect(params_);
            enc_ff_[static_cast<std::size_t>(l)].collect(params_);
        }
        for (int l = 0; l < cfg_.decoder_layers; ++l) {
            dec_ln1_[static_cast<std::size_t>(l)].collect(params_);
            dec_self_[static_cast<std::size_t>(l)].collect(params_);
            dec_ln2_[static_cast<std::size_t>(l)].collect(params_);
            dec_cross_[static_cast<std::size_t>(l)].collect(params_);
            dec_ln3_[static_cast<std::size_t>(l)].collect(params_);
            dec_ff_[static_cast<std::size_t>(l)].collect(params_);
        }
        enc_final_ln_.collect(params_);
        dec_final_ln_.collect(params_);
        out_proj_.collect(params_);
    }

    ModelConfig cfg_;
    nn::Param<S> embedding_;
    std::vector<nn::LayerNorm<S>> enc_ln1_, enc_ln2_, dec_ln1_, dec_ln2_, dec_ln3_;
    std::vector<nn::MultiHeadAttention<S>> enc_attn_, dec_self_, dec_cross_;
    std::vector<nn::FeedForward<S>> enc_ff_, dec_ff_;
    nn::LayerNorm<S> enc_final_ln_, dec_final_ln_;
    nn::Linear<S> out_proj_;
    std::vector<S> alibi_slopes_;
    nn::Mat<S> pe_table_;

    nn::ParamList<S> params_;
    nn::Adam<S> opt_;

    // forward caches for the backward pass
    std::vector<int> enc_tokens_, dec_tokens_;
    std::vector<nn::Mat<S>> sliced_self_, sliced_cross_;
};

using Transformer = TransformerT<float>;

}  // namespace abclab
