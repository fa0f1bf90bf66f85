#include <doctest.h>

#include <cmath>

#include "abclab/model.hpp"
#include "abclab/rng.hpp"

using namespace abclab;

// Central-difference gradient check on a miniature model, in double precision.
// Covers every module: embeddings, layer norms, attention (with a bias mask in
// play), feed-forward, and the output head.
TEST_CASE("analytic gradients match central differences") {
    ModelConfig cfg;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 2;
    cfg.heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.dropout = 0.0f;
    cfg.pe = PEKind::Sinusoidal;
    cfg.init_seed = 123;
    TransformerT<double> model(cfg);

    TokenBatch batch;
    batch.B = 2;
    batch.Te = 4;
    batch.Td = 5;
    batch.enc = {0, 1, 2, 3, 9, 8, 7, 6};
    batch.dec_in = {Vocab::kSos, 4, 5, 6, 7, Vocab::kSos, 1, 2, 3, 4};
    batch.tgt = {4, 5, 6, 7, Vocab::kEos, 1, 2, 3, 4, Vocab::kEos};

    // exercise the masked-softmax backward too
    const double ninf = -std::numeric_limits<double>::infinity();
    BiasSetT<double> bias;
    bias.cross_heads.assign(2, nn::Mat<double>::Zero(8, 8));
    for (auto& h : bias.cross_heads) {
        h.setConstant(ninf);
        for (int i = 0; i < 8; ++i) {
            for (int j = 0; j < 8; ++j) {
                if (std::abs((7 - j) - i) <= 1) h(i, j) = -0.25;  // loose anti-diagonal band
            }
        }
    }

    const double base_loss = model.loss_and_grad(batch, &bias, 0);
    CHECK(std::isfinite(base_loss));

    // snapshot analytic grads
    std::vector<nn::Mat<double>> grads;
    for (auto* p : model.params()) grads.push_back(p->grad);

    Rng pick(77);
    double max_rel_err = 0.0;
    int checked = 0;
    while (checked < 100) {
        const std::size_t pi = static_cast<std::size_t>(pick.below(model.params().size()));
        auto* p = model.params()[pi];
        const Eigen::Index r = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(p->value.rows())));
        const Eigen::Index c = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(p->value.cols())));
        const double g = grads[pi](r, c);
        if (std::abs(g) < 1e-7) continue;  // avoid division noise on dead entries

        const double h = 1e-5 * std::max(1.0, std::abs(p->value(r, c)));
        const double saved = p->value(r, c);
        p->value(r, c) = saved + h;
        const double lp = model.loss_only(batch, &bias);
        p->value(r, c) = saved - h;
        const double lm = model.loss_only(batch, &bias);
        p->value(r, c) = saved;

        const double fd = (lp - lm) / (2.0 * h);
        const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-8});
        max_rel_err = std::max(max_rel_err, rel);
        ++checked;
    }
    CHECK(max_rel_err < 1e-3);
}
