#include "prnu/training.hpp"

#include "model_io.hpp"
#include "prnu/errors.hpp"
#include "prnu/imaging.hpp"
#include "prnu/parallel.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace prnu::training {

namespace {

std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

} // namespace

const std::vector<Plane>& DeviceData::pool(Split s) const {
    switch (s) {
    case Split::Train:
        return train;
    case Split::Val:
        return val;
    case Split::Eval:
        return eval;
    }
    throw ConfigError("unknown split");
}

DeviceSet DeviceSet::select(std::span<const std::size_t> indices) const {
    DeviceSet out;
    for (std::size_t i : indices) {
        out.devices.push_back(devices.at(i));
    }
    return out;
}

pcn::PairTensor make_pair_tensor(const DeviceSet& ds, const PairSpec& spec, Split split, int side) {
    const Plane& k = ds.devices.at(spec.fingerprint_device).fingerprint;
    const Plane& w = ds.devices.at(spec.residual_device).pool(split).at(spec.residual_index);
    return pcn::PairTensor::from_planes(imaging::central_crop(k, side), imaging::central_crop(w, side));
}

std::size_t default_batches_per_epoch(const DeviceSet& ds) {
    if (ds.devices.empty()) {
        return 0;
    }
    std::size_t total = 0;
    for (const auto& d : ds.devices) {
        total += d.train.size();
    }
    return (total + ds.devices.size() - 1) / ds.devices.size();
}

std::vector<Batch> build_epoch_batches(const DeviceSet& ds, Rng& rng, std::size_t batches_per_epoch) {
    const std::size_t n = ds.size();
    if (n < 2) {
        throw ConfigError("training needs at least two devices to form non-coherent pairs");
    }
    for (const auto& d : ds.devices) {
        if (d.train.empty()) {
            throw ConfigError("device " + d.device_id + " has no training residuals");
        }
    }
    std::vector<Batch> batches(batches_per_epoch);
    for (auto& batch : batches) {
        batch.reserve(2 * n);
        for (std::size_t d = 0; d < n; ++d) {
            const std::size_t r = uniform_index(rng, ds.devices[d].train.size());
            std::size_t other = uniform_index(rng, n - 1);
            if (other >= d) {
                ++other;
            }
            batch.push_back({d, d, r, 1.0F});
            batch.push_back({other, d, r, 0.0F});
        }
    }
    return batches;
}

BceResult bce_with_logits(double logit, double label) {
    const double loss = std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
    double p = 0.0;
    if (logit >= 0.0) {
        p = 1.0 / (1.0 + std::exp(-logit));
    } else {
        const double e = std::exp(logit);
        p = e / (1.0 + e);
    }
    return {loss, p - label};
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& cfg) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("Adam buffers differ in size");
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        const double m = cfg.beta1 * static_cast<double>(state.m[i]) + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * static_cast<double>(state.v[i]) + (1.0 - cfg.beta2) * g * g;
        state.m[i] = static_cast<T>(m);
        state.v[i] = static_cast<T>(v);
        const double step = cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
        params[i] = static_cast<T>(static_cast<double>(params[i]) - step);
    }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, const AdamConfig&);

void TrainConfig::validate() const {
    if (!(adam.learning_rate > 0.0)) {
        throw ConfigError("learning rate must be positive");
    }
    if (max_epochs < 1 || patience < 1 || patience >= max_epochs) {
        throw ConfigError("need 1 <= patience < max_epochs");
    }
    arch.validate();
    if (crop < arch.min_input_side()) {
        throw ConfigError("crop " + std::to_string(crop) + " below the architecture minimum " +
                          std::to_string(arch.min_input_side()));
    }
    if (initial_model && !(initial_model->arch() == arch)) {
        throw ConfigError("initial model architecture differs from the configured one");
    }
}

std::vector<PairSpec> validation_pairs(const DeviceSet& ds, std::uint64_t seed) {
    const std::size_t n = ds.size();
    if (n < 2) {
        throw ConfigError("validation needs at least two devices");
    }
    Rng rng(seed);
    std::vector<PairSpec> pairs;
    for (std::size_t d = 0; d < n; ++d) {
        for (std::size_t r = 0; r < ds.devices[d].val.size(); ++r) {
            std::size_t other = uniform_index(rng, n - 1);
            if (other >= d) {
                ++other;
            }
            pairs.push_back({d, d, r, 1.0F});
            pairs.push_back({other, d, r, 0.0F});
        }
    }
    return pairs;
}

double pair_accuracy(const pcn::PcnModel& model, const DeviceSet& ds, std::span<const PairSpec> pairs, Split split,
                     int side, unsigned threads) {
    if (pairs.empty()) {
        throw EmptyInputError("accuracy over an empty pair list");
    }
    std::vector<int> correct(pairs.size(), 0);
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        const auto score = pcn::pcn_forward(make_pair_tensor(ds, pairs[i], split, side), model);
        correct[i] = ((score.c_s > 0.5) == (pairs[i].label > 0.5F)) ? 1 : 0;
    });
    std::size_t hits = 0;
    for (int c : correct) {
        hits += static_cast<std::size_t>(c);
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

void tree_reduce(std::vector<std::vector<float>>& parts, std::span<float> out) {
    if (parts.empty()) {
        std::fill(out.begin(), out.end(), 0.0F);
        return;
    }
    for (std::size_t stride = 1; stride < parts.size(); stride *= 2) {
        for (std::size_t i = 0; i + stride < parts.size(); i += 2 * stride) {
            auto& dst = parts[i];
            const auto& src = parts[i + stride];
            for (std::size_t j = 0; j < dst.size(); ++j) {
                dst[j] += src[j];
            }
        }
    }
    std::copy(parts.front().begin(), parts.front().end(), out.begin());
}

TrainResult train(const DeviceSet& ds, const TrainConfig& cfg) {
    cfg.validate();
    const std::vector<PairSpec> val_pairs = validation_pairs(ds, derive_seed(cfg.seed, 2));
    if (val_pairs.empty()) {
        throw ConfigError("training needs validation residuals");
    }
    const std::size_t batches_per_epoch =
        cfg.batches_per_epoch > 0 ? cfg.batches_per_epoch : default_batches_per_epoch(ds);

    pcn::PcnModel model =
        cfg.initial_model ? *cfg.initial_model : pcn::PcnModel::initialized(cfg.arch, derive_seed(cfg.seed, 1));
    const std::size_t n_params = model.params().size();
    AdamState<float> adam(n_params);
    Rng rng(cfg.seed);

    TrainResult result{model, {}};
    double best_accuracy = -1.0;
    int since_best = 0;
    std::vector<float> grad(n_params);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const std::vector<Batch> batches = build_epoch_batches(ds, rng, batches_per_epoch);
        double loss_sum = 0.0;
        std::size_t pair_count = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const Batch& batch = batches[b];
            std::vector<std::vector<float>> parts(batch.size());
            std::vector<double> losses(batch.size());
            parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
                const auto pair = make_pair_tensor(ds, batch[i], Split::Train, cfg.crop);
                pcn::ForwardTrace<float> trace;
                const float logit = pcn::forward_logit(model, pair.tensor(), &trace);
                const BceResult bce = bce_with_logits(logit, batch[i].label);
                losses[i] = bce.loss;
                parts[i].assign(n_params, 0.0F);
                pcn::backward(model, pair.tensor(), trace, static_cast<float>(bce.grad), std::span<float>(parts[i]));
            });
            for (std::size_t i = 0; i < batch.size(); ++i) {
                if (!std::isfinite(losses[i])) {
                    std::ostringstream msg;
                    msg << "non-finite training loss at epoch " << epoch << ", batch " << b << ", pair " << i;
                    throw NumericError(msg.str());
                }
                loss_sum += losses[i];
            }
            pair_count += batch.size();
            tree_reduce(parts, grad);
            const float inv = 1.0F / static_cast<float>(batch.size());
            for (float& g : grad) {
                g *= inv;
            }
            adam_step<float>(model.params(), grad, adam, cfg.adam);
        }
        const double accuracy = pair_accuracy(model, ds, val_pairs, Split::Val, cfg.crop, cfg.threads);
        result.history.epochs.push_back({epoch, loss_sum / static_cast<double>(pair_count), accuracy});
        if (accuracy > best_accuracy) {
            best_accuracy = accuracy;
            result.history.best_epoch = epoch;
            result.model = model;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            result.history.stopped_reason = "patience";
            return result;
        }
    }
    result.history.stopped_reason = "max_epochs";
    return result;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "epoch,train_loss,val_accuracy\n";
    out << std::setprecision(17);
    for (const auto& e : history.epochs) {
        out << e.epoch << ',' << e.train_loss << ',' << e.val_accuracy << '\n';
    }
}

void save_checkpoint(const pcn::PcnModel& model, const AdamState<float>& state, const std::filesystem::path& path) {
    prnu::detail::ByteWriter w;
    pcn::detail::write_model(w, model);
    w.bytes("ADAM");
    w.u64(state.t);
    w.u32(static_cast<std::uint32_t>(state.m.size()));
    for (float m : state.m) {
        w.f32(m);
    }
    for (float v : state.v) {
        w.f32(v);
    }
    w.write_to(path);
}

std::pair<pcn::PcnModel, AdamState<float>> load_checkpoint(const std::filesystem::path& path) {
    auto r = prnu::detail::ByteReader::from_file(path);
    pcn::PcnModel model = pcn::detail::read_model(r);
    if (r.remaining() < 4 || r.bytes(4) != "ADAM") {
        throw FormatError("missing optimizer appendix in " + path.string());
    }
    AdamState<float> state;
    state.t = r.u64();
    const std::uint32_t n = r.u32();
    if (n != model.params().size()) {
        throw FormatError("optimizer state size does not match the model in " + path.string());
    }
    state.m.resize(n);
    state.v.resize(n);
    for (float& m : state.m) {
        m = r.f32();
    }
    for (float& v : state.v) {
        v = r.f32();
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes in checkpoint " + path.string());
    }
    return {std::move(model), std::move(state)};
}

} // namespace prnu::training
