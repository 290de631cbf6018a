#pragma once

// Central finite-difference check of the network gradients at 64 bits.

#include "oracles.hpp"
#include "prnu/pcn.hpp"

#include <array>
#include <cmath>
#include <random>

namespace gradcheck {

using prnu::pcn::ForwardTrace;
using prnu::pcn::Model;
using prnu::pcn::Tensor3;

struct Report {
    double worst_param = 0.0;
    double worst_input = 0.0;
    std::size_t checked = 0;
    /// Coordinates whose +-h probes switched some ReLU; the network is not
    /// differentiable across that step, so no comparison is made there.
    std::size_t kinks = 0;
    /// |staged forward - library forward| at the unperturbed point.
    double staged_mismatch = 0.0;
};

using Acts = std::array<Tensor3<double>, 3>;

inline prnu::pcn::ConvLayer<double> layer_of(const Model<double>& m, int l) {
    return {m.arch().conv[l], m.arch().in_channels(l), m.conv_weight(l), m.conv_bias(l)};
}

/// Recomputes activations from layer `from` on (3 = head only) and returns
/// the logit. Only the parts a perturbation can reach are redone.
inline double forward_from(const Model<double>& m, const Tensor3<double>& input, int from, Acts& act) {
    for (int l = from; l < 3; ++l) {
        const Tensor3<double>& x = l == 0 ? input : act[l - 1];
        act[l] = prnu::pcn::relu_forward(prnu::pcn::conv2d_forward(x, layer_of(m, l)));
    }
    const auto pooled = prnu::pcn::pairwise_corr_pool_forward(act[2]);
    double z = m.fc_bias();
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        z += m.fc_weight()[i] * pooled[i];
    }
    return z;
}

inline bool same_pattern(const Acts& a, const Acts& b, int from) {
    for (int l = from; l < 3; ++l) {
        const auto av = a[l].values();
        const auto bv = b[l].values();
        for (std::size_t i = 0; i < av.size(); ++i) {
            if ((av[i] > 0.0) != (bv[i] > 0.0)) {
                return false;
            }
        }
    }
    return true;
}

/// Random weights: He-scaled normals with small random biases so that
/// roughly half the units are active.
inline Model<double> random_model(const prnu::pcn::ArchDescriptor& arch, prnu::Rng& rng) {
    Model<double> m(arch);
    const auto& lay = m.layout();
    std::normal_distribution<double> normal(0.0, 1.0);
    auto p = m.params();
    for (int l = 0; l < 3; ++l) {
        const double fan_in = static_cast<double>(arch.in_channels(l)) * arch.conv[l].kernel * arch.conv[l].kernel;
        for (std::size_t i = 0; i < lay.conv_weight[l].size; ++i) {
            p[lay.conv_weight[l].offset + i] = normal(rng) * std::sqrt(2.0 / fan_in);
        }
        for (std::size_t i = 0; i < lay.conv_bias[l].size; ++i) {
            p[lay.conv_bias[l].offset + i] = 0.1 * normal(rng);
        }
    }
    for (std::size_t i = 0; i < lay.fc_weight.size; ++i) {
        p[lay.fc_weight.offset + i] = normal(rng);
    }
    p[lay.fc_bias.offset] = normal(rng);
    return m;
}

inline Report run(Model<double> model, Tensor3<double> input, double h = 1e-5) {
    ForwardTrace<double> trace;
    const double logit = prnu::pcn::forward_logit(model, input, &trace);
    std::vector<double> grad(model.params().size(), 0.0);
    Tensor3<double> grad_input;
    prnu::pcn::backward(model, input, trace, 1.0, std::span<double>(grad), &grad_input);

    Acts base;
    const double staged = forward_from(model, input, 0, base);
    Report rep;
    rep.staged_mismatch = std::abs(staged - logit);

    auto probe = [&](double& coord, int from, double analytic, double& worst) {
        const double saved = coord;
        Acts up_act = base;
        Acts down_act = base;
        coord = saved + h;
        const double up = forward_from(model, input, from, up_act);
        coord = saved - h;
        const double down = forward_from(model, input, from, down_act);
        coord = saved;
        if (!same_pattern(up_act, down_act, from)) {
            ++rep.kinks;
            return;
        }
        ++rep.checked;
        worst = std::max(worst, oracle::rel_err((up - down) / (2.0 * h), analytic));
    };
    const auto& lay = model.layout();
    auto params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        int from = 3;
        for (int l = 2; l >= 0; --l) {
            const auto& w = lay.conv_weight[l];
            const auto& b = lay.conv_bias[l];
            if ((i >= w.offset && i < w.offset + w.size) || (i >= b.offset && i < b.offset + b.size)) {
                from = l;
            }
        }
        probe(params[i], from, grad[i], rep.worst_param);
    }
    auto in = input.values();
    for (std::size_t i = 0; i < in.size(); ++i) {
        probe(in[i], 0, grad_input.values()[i], rep.worst_input);
    }
    return rep;
}

} // namespace gradcheck
