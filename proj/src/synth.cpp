#include "prnu/synth.hpp"

#include "prnu/errors.hpp"
#include "prnu/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace prnu::synth {

namespace {

Eigen::Index mirror(Eigen::Index i, Eigen::Index n) {
    if (n == 1) {
        return 0;
    }
    const Eigen::Index period = 2 * n;
    i %= period;
    if (i < 0) {
        i += period;
    }
    return i < n ? i : period - 1 - i;
}

Plane white_noise(int rows, int cols, double stddev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    Plane out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        out.data()[i] = normal(rng);
    }
    return out;
}

std::string join_chain(const std::vector<int>& chain) {
    if (chain.empty()) {
        return "none";
    }
    std::string out;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        out += (i ? "," : "") + std::to_string(chain[i]);
    }
    return out;
}

std::vector<int> parse_chain(const std::string& text) {
    std::vector<int> chain;
    if (text == "none" || text.empty()) {
        return chain;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            chain.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw FormatError("bad compression chain in manifest: " + text);
        }
    }
    return chain;
}

imaging::Image apply_chain(imaging::Image img, const std::vector<int>& chain) {
    for (int q : chain) {
        img = imaging::recompress_jpeg(img, q);
    }
    return img;
}

struct DeviceOutput {
    training::DeviceData data;
    fingerprint::Fingerprint fp;
    std::vector<ManifestEntry> manifest;
};

} // namespace

SynthDevice gen_device(std::uint64_t seed, int rows, int cols, double strength, std::string device_id) {
    if (!(strength >= 0.0)) {
        throw ConfigError("PRNU strength must be non-negative");
    }
    if (rows < 1 || cols < 1) {
        throw DimensionError("sensor dimensions must be positive");
    }
    Rng rng(seed);
    SynthDevice dev;
    dev.device_id = device_id.empty() ? "seed-" + std::to_string(seed) : std::move(device_id);
    dev.rows = rows;
    dev.cols = cols;
    dev.seed = seed;
    dev.K_true = strength > 0.0 ? white_noise(rows, cols, strength, rng) : Plane::Zero(rows, cols);
    dev.K_true -= dev.K_true.mean();
    return dev;
}

imaging::Image gen_flat(const SynthDevice& dev, double level, double noise_std, Rng& rng) {
    Plane img = level * (1.0 + dev.K_true);
    if (noise_std > 0.0) {
        img += white_noise(dev.rows, dev.cols, noise_std, rng);
    }
    imaging::ImageMeta meta;
    meta.device_id = dev.device_id;
    return imaging::Image(imaging::quantize_8bit(img), std::move(meta));
}

Plane gaussian_blur(const Plane& in, double sigma) {
    if (!(sigma > 0.0)) {
        return in;
    }
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (double& v : kernel) {
        v /= total;
    }
    const Eigen::Index rows = in.rows();
    const Eigen::Index cols = in.cols();
    Plane tmp(rows, cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        for (Eigen::Index x = 0; x < cols; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[static_cast<std::size_t>(i + radius)] * in(y, mirror(x + i, cols));
            }
            tmp(y, x) = acc;
        }
    }
    Plane out(rows, cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        for (Eigen::Index x = 0; x < cols; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[static_cast<std::size_t>(i + radius)] * tmp(mirror(y + i, rows), x);
            }
            out(y, x) = acc;
        }
    }
    return out;
}

imaging::Image gen_natural(const SynthDevice& dev, double noise_std, Rng& rng) {
    const double sigma = std::uniform_real_distribution<double>(2.0, 16.0)(rng);
    Plane scene = gaussian_blur(white_noise(dev.rows, dev.cols, 1.0, rng), sigma);
    const double lo = scene.minCoeff();
    const double hi = scene.maxCoeff();
    if (hi > lo) {
        scene = 30.0 + (scene - lo) * (190.0 / (hi - lo));
    } else {
        scene.setConstant(125.0);
    }
    Plane img = scene * (1.0 + dev.K_true);
    if (noise_std > 0.0) {
        img += white_noise(dev.rows, dev.cols, noise_std, rng);
    }
    imaging::ImageMeta meta;
    meta.device_id = dev.device_id;
    return imaging::Image(imaging::quantize_8bit(img), std::move(meta));
}

void SynthConfig::validate() const {
    if (n_devices < 1 || flats_per_device < 1 || naturals_per_device < 1) {
        throw ConfigError("device, flat and natural counts must be positive");
    }
    if (rows < 16 || cols < 16) {
        throw ConfigError("sensor dimensions must be at least 16x16");
    }
    if (!(strength >= 0.0) || !(noise_std >= 0.0)) {
        throw ConfigError("strength and noise must be non-negative");
    }
    if (!(flat_level_min >= 0.0) || !(flat_level_max <= 255.0) || flat_level_min > flat_level_max) {
        throw ConfigError("flat levels must satisfy 0 <= min <= max <= 255");
    }
    for (int q : jpeg_chain) {
        if (q < 1 || q > 100) {
            throw ConfigError("JPEG quality must be in 1..100, got " + std::to_string(q));
        }
    }
    if (train_ratio < 0.0 || val_ratio < 0.0 || eval_ratio < 0.0 ||
        std::abs(train_ratio + val_ratio + eval_ratio - 1.0) > 1e-9) {
        throw ConfigError("split ratios must be non-negative and sum to 1");
    }
    denoiser.validate();
}

std::string SynthConfig::describe() const {
    std::ostringstream out;
    out << "devices = " << n_devices << "\nflats_per_device = " << flats_per_device
        << "\nnaturals_per_device = " << naturals_per_device << "\nsize = " << rows << "x" << cols
        << "\nstrength = " << strength << "\nnoise_std = " << noise_std << "\nflat_levels = " << flat_level_min
        << ".." << flat_level_max << "\njpeg_chain = " << join_chain(jpeg_chain) << "\nsplit = " << train_ratio
        << "/" << val_ratio << "/" << eval_ratio << "\nseed = " << seed << "\nwavelet_levels = " << denoiser.levels
        << "\nsigma0_sq = " << denoiser.sigma0_sq << '\n';
    return out.str();
}

std::string device_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "dev%03d", index);
    return buf;
}

Dataset build_dataset(const SynthConfig& cfg, const std::optional<std::filesystem::path>& root) {
    cfg.validate();
    std::vector<DeviceOutput> outputs(static_cast<std::size_t>(cfg.n_devices));

    parallel_for(outputs.size(), cfg.threads, [&](std::size_t d) {
        const std::uint64_t dev_seed = derive_seed(cfg.seed, d);
        const std::string id = device_name(static_cast<int>(d));
        const SynthDevice dev = gen_device(derive_seed(dev_seed, 0), cfg.rows, cfg.cols, cfg.strength, id);
        DeviceOutput& out = outputs[d];
        out.data.device_id = id;
        std::filesystem::path dev_dir;
        if (root) {
            dev_dir = *root / id;
            std::filesystem::create_directories(dev_dir / "flat");
            std::filesystem::create_directories(dev_dir / "natural");
        }

        Rng flat_rng(derive_seed(dev_seed, 1));
        std::uniform_real_distribution<double> level(cfg.flat_level_min, cfg.flat_level_max);
        std::vector<imaging::Image> flats;
        for (int i = 0; i < cfg.flats_per_device; ++i) {
            const double lv = level(flat_rng);
            flats.push_back(apply_chain(gen_flat(dev, lv, cfg.noise_std, flat_rng), cfg.jpeg_chain));
            const std::string rel = id + "/flat/" + std::to_string(i) + ".pgm";
            if (root) {
                imaging::save_pgm(flats.back(), *root / rel);
            }
            out.manifest.push_back({id, rel, "flat", "-", cfg.jpeg_chain});
        }
        out.fp = fingerprint::estimate_prnu(flats, cfg.denoiser, id);
        out.data.fingerprint = out.fp.K.cast<double>();
        flats.clear();

        const int n = cfg.naturals_per_device;
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng split_rng(derive_seed(dev_seed, 3));
        std::shuffle(order.begin(), order.end(), split_rng);
        const int n_train = static_cast<int>(std::floor(n * cfg.train_ratio));
        const int n_val = static_cast<int>(std::floor(n * cfg.val_ratio));
        std::vector<std::string> split(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            split[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] =
                k < n_train ? "train" : (k < n_train + n_val ? "val" : "eval");
        }

        Rng natural_rng(derive_seed(dev_seed, 2));
        for (int i = 0; i < n; ++i) {
            const imaging::Image img = apply_chain(gen_natural(dev, cfg.noise_std, natural_rng), cfg.jpeg_chain);
            const std::string rel = id + "/natural/" + std::to_string(i) + ".pgm";
            if (root) {
                imaging::save_pgm(img, *root / rel);
            }
            const std::string& s = split[static_cast<std::size_t>(i)];
            out.manifest.push_back({id, rel, "natural", s, cfg.jpeg_chain});
            Plane w = residual::extract_residual(img, cfg.denoiser).values;
            if (s == "train") {
                out.data.train.push_back(std::move(w));
            } else if (s == "val") {
                out.data.val.push_back(std::move(w));
            } else {
                out.data.eval.push_back(std::move(w));
            }
        }
    });

    Dataset ds;
    for (auto& out : outputs) {
        ds.db.add(std::move(out.fp));
        ds.devices.devices.push_back(std::move(out.data));
        ds.manifest.insert(ds.manifest.end(), out.manifest.begin(), out.manifest.end());
    }
    if (root) {
        write_manifest(ds.manifest, *root / "manifest.tsv");
    }
    return ds;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "device_id\tpath\trole\tsplit\tcompression\n";
    for (const auto& e : entries) {
        out << e.device_id << '\t' << e.path << '\t' << e.role << '\t' << e.split << '\t' << join_chain(e.compression)
            << '\n';
    }
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line.rfind("device_id\t", 0) != 0) {
        throw FormatError("manifest header missing in " + path.string());
    }
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) {
            fields.push_back(f);
        }
        if (fields.size() != 5) {
            throw FormatError("manifest row needs 5 tab-separated fields: " + line);
        }
        if (fields[2] != "flat" && fields[2] != "natural") {
            throw FormatError("unknown role in manifest: " + fields[2]);
        }
        entries.push_back({fields[0], fields[1], fields[2], fields[3], parse_chain(fields[4])});
    }
    return entries;
}

Dataset load_dataset(const std::filesystem::path& root, const residual::DenoiserConfig& denoiser, unsigned threads) {
    const auto manifest = read_manifest(root / "manifest.tsv");
    std::vector<std::string> order;
    std::map<std::string, std::vector<const ManifestEntry*>> by_device;
    for (const auto& e : manifest) {
        if (by_device.find(e.device_id) == by_device.end()) {
            order.push_back(e.device_id);
        }
        by_device[e.device_id].push_back(&e);
    }
    std::vector<DeviceOutput> outputs(order.size());
    parallel_for(order.size(), threads, [&](std::size_t d) {
        DeviceOutput& out = outputs[d];
        out.data.device_id = order[d];
        std::vector<imaging::Image> flats;
        for (const ManifestEntry* e : by_device[order[d]]) {
            imaging::Image img = imaging::load_image(root / e->path).with_device(e->device_id);
            if (e->role == "flat") {
                flats.push_back(std::move(img));
                continue;
            }
            Plane w = residual::extract_residual(img, denoiser).values;
            if (e->split == "train") {
                out.data.train.push_back(std::move(w));
            } else if (e->split == "val") {
                out.data.val.push_back(std::move(w));
            } else if (e->split == "eval") {
                out.data.eval.push_back(std::move(w));
            } else {
                throw FormatError("natural image without a split: " + e->path);
            }
        }
        if (flats.empty()) {
            throw EmptyInputError("device " + order[d] + " has no flat-field images");
        }
        out.fp = fingerprint::estimate_prnu(flats, denoiser, order[d]);
        out.data.fingerprint = out.fp.K.cast<double>();
    });
    Dataset ds;
    ds.manifest = manifest;
    for (auto& out : outputs) {
        ds.db.add(std::move(out.fp));
        ds.devices.devices.push_back(std::move(out.data));
    }
    return ds;
}

} // namespace prnu::synth
