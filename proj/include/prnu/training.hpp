#pragma once

#include "prnu/pcn.hpp"
#include "prnu/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prnu::training {

enum class Split { Train, Val, Eval };

/// One device: full-size fingerprint plus residual pools per split. Crops
/// are taken when pairs are materialized.
struct DeviceData {
    std::string device_id;
    Plane fingerprint;
    std::vector<Plane> train;
    std::vector<Plane> val;
    std::vector<Plane> eval;

    [[nodiscard]] const std::vector<Plane>& pool(Split s) const;
};

struct DeviceSet {
    std::vector<DeviceData> devices;

    [[nodiscard]] std::size_t size() const noexcept { return devices.size(); }
    /// Subset by device index, order preserved.
    [[nodiscard]] DeviceSet select(std::span<const std::size_t> indices) const;
};

/// (fingerprint of `fingerprint_device`, residual `residual_index` of
/// `residual_device`); label 1 when the devices coincide.
struct PairSpec {
    std::size_t fingerprint_device = 0;
    std::size_t residual_device = 0;
    std::size_t residual_index = 0;
    float label = 0.0F;
};

using Batch = std::vector<PairSpec>;

/// Central crops of both members, normalized.
pcn::PairTensor make_pair_tensor(const DeviceSet& ds, const PairSpec& spec, Split split, int side);

/// One epoch of batches. Every batch holds, for each device d, one coherent
/// pair (K_d, W_d) and one non-coherent pair (K_e, W_d) with e != d drawn
/// uniformly; W_d is drawn uniformly from d's training pool.
std::vector<Batch> build_epoch_batches(const DeviceSet& ds, Rng& rng, std::size_t batches_per_epoch);
/// Number of batches used per epoch: ceil(mean training pool size).
std::size_t default_batches_per_epoch(const DeviceSet& ds);

struct BceResult {
    double loss = 0.0;
    double grad = 0.0; ///< d loss / d logit
};

/// Sigmoid cross-entropy on a logit, evaluated without overflow.
BceResult bce_with_logits(double logit, double label);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::uint64_t t = 0;

    explicit AdamState(std::size_t n = 0) : m(n, T{0}), v(n, T{0}) {}
};

/// Bias-corrected Adam update, in place.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& cfg);

struct TrainConfig {
    AdamConfig adam;
    int patience = 30;
    int max_epochs = 500;
    std::uint64_t seed = 1;
    int crop = 64;
    pcn::ArchDescriptor arch;
    /// 0 = ceil(mean training pool size).
    std::size_t batches_per_epoch = 0;
    unsigned threads = 1;
    /// Start from these weights instead of a seeded initialization.
    std::optional<pcn::PcnModel> initial_model;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    std::string stopped_reason; ///< "patience" or "max_epochs"

    bool operator==(const TrainHistory&) const = default;
};

struct TrainResult {
    pcn::PcnModel model;
    TrainHistory history;
};

/// Fixed validation pairs: each validation residual against its own
/// fingerprint and against one other device's, chosen from `seed`.
std::vector<PairSpec> validation_pairs(const DeviceSet& ds, std::uint64_t seed);

/// Fraction of pairs with (c_s > 0.5) == label.
double pair_accuracy(const pcn::PcnModel& model, const DeviceSet& ds, std::span<const PairSpec> pairs, Split split,
                     int side, unsigned threads);

/// Adam on batch-mean sigmoid cross-entropy with early stopping on validation
/// accuracy. Returns the weights of the best epoch (earliest on ties).
/// Throws NumericError if the loss becomes non-finite.
TrainResult train(const DeviceSet& ds, const TrainConfig& cfg);

/// Sums per-example gradients by pairwise tree reduction in a fixed order.
void tree_reduce(std::vector<std::vector<float>>& parts, std::span<float> out);

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

/// Model container followed by "ADAM", u64 step, moments m and v as f32.
void save_checkpoint(const pcn::PcnModel& model, const AdamState<float>& state, const std::filesystem::path& path);
std::pair<pcn::PcnModel, AdamState<float>> load_checkpoint(const std::filesystem::path& path);

} // namespace prnu::training
