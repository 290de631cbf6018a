#pragma once

#include "prnu/fingerprint.hpp"
#include "prnu/imaging.hpp"
#include "prnu/residual.hpp"
#include "prnu/training.hpp"
#include "prnu/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace prnu::synth {

struct SynthDevice {
    std::string device_id;
    Plane K_true; ///< zero-mean Gaussian PRNU, std ~ strength
    int rows = 0;
    int cols = 0;
    std::uint64_t seed = 0;
};

/// Zero-mean i.i.d. Gaussian PRNU pattern; the empirical mean is removed.
SynthDevice gen_device(std::uint64_t seed, int rows, int cols, double strength, std::string device_id = {});

/// I = level * (1 + K) + N(0, noise_std^2), clipped to [0, 255] and rounded.
imaging::Image gen_flat(const SynthDevice& dev, double level, double noise_std, Rng& rng);

/// Gaussian-blurred white noise (blur sigma drawn in [2, 16] px) rescaled
/// to [30, 220] serves as the scene; then I = scene * (1 + K) + noise.
imaging::Image gen_natural(const SynthDevice& dev, double noise_std, Rng& rng);

/// Separable Gaussian blur with mirrored borders, kernel truncated at 3 sigma.
Plane gaussian_blur(const Plane& in, double sigma);

struct SynthConfig {
    int n_devices = 20;
    int flats_per_device = 25;
    int naturals_per_device = 40;
    int rows = 128;
    int cols = 128;
    double strength = 0.02;
    double noise_std = 18.0;
    double flat_level_min = 100.0;
    double flat_level_max = 160.0;
    std::vector<int> jpeg_chain; ///< applied in order to every image
    double train_ratio = 0.5;
    double val_ratio = 0.25;
    double eval_ratio = 0.25;
    std::uint64_t seed = 1;
    residual::DenoiserConfig denoiser;
    unsigned threads = 1;

    void validate() const;
    /// Human-readable `key = value` lines.
    [[nodiscard]] std::string describe() const;
};

struct ManifestEntry {
    std::string device_id;
    std::string path; ///< relative to the dataset root
    std::string role; ///< "flat" or "natural"
    std::string split; ///< "train", "val", "eval", or "-" for flats
    std::vector<int> compression;
};

struct Dataset {
    training::DeviceSet devices;
    fingerprint::FingerprintDb db;
    std::vector<ManifestEntry> manifest;
};

std::string device_name(int index);

/// Generates devices, applies the JPEG chain, estimates fingerprints from
/// flats and residuals from naturals, and splits naturals per device. When
/// `root` is given, writes `<root>/<device>/{flat,natural}/<i>.pgm` plus
/// manifest.tsv. Output depends only on the config, never on thread count.
Dataset build_dataset(const SynthConfig& cfg, const std::optional<std::filesystem::path>& root = std::nullopt);

/// Rebuilds fingerprints, residuals and splits from a directory written by
/// build_dataset (or laid out the same way from real images).
Dataset load_dataset(const std::filesystem::path& root, const residual::DenoiserConfig& denoiser = {},
                     unsigned threads = 1);

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

} // namespace prnu::synth
