#include "prnu/bench.hpp"

#include "prnu/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

namespace prnu::bench {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Plane random_plane(int side, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Plane p(side, side);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        p.data()[i] = normal(rng);
    }
    return p;
}

double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

void check_reps(int reps) {
    if (reps < kMinReps) {
        throw ConfigError("benchmark needs at least " + std::to_string(kMinReps) + " repetitions, got " +
                          std::to_string(reps));
    }
}

volatile double g_sink = 0.0;

} // namespace

TimingStats summarize(std::vector<double> samples_ms) {
    if (samples_ms.empty()) {
        throw EmptyInputError("no timing samples");
    }
    std::sort(samples_ms.begin(), samples_ms.end());
    return {quantile(samples_ms, 0.5), quantile(samples_ms, 0.75) - quantile(samples_ms, 0.25),
            static_cast<int>(samples_ms.size())};
}

BenchResult bench_single(const eval::Scorer& scorer, int side, int reps, std::uint64_t seed) {
    check_reps(reps);
    Rng rng(seed);
    const Plane residual = random_plane(side, rng);
    const Plane fingerprint = random_plane(side, rng);
    for (int i = 0; i < kWarmups; ++i) {
        g_sink = g_sink + scorer.score_pair(residual, fingerprint);
    }
    std::vector<double> samples;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = Clock::now();
        g_sink = g_sink + scorer.score_pair(residual, fingerprint);
        samples.push_back(elapsed_ms(t0));
    }
    BenchResult r;
    r.scorer = scorer.tag();
    r.side = side;
    r.reps = reps;
    r.timing = summarize(std::move(samples));
    return r;
}

BenchResult bench_batch(eval::Scorer& scorer, int side, int db_size, unsigned threads, int reps, std::uint64_t seed) {
    check_reps(reps);
    if (db_size < 1) {
        throw ConfigError("database size must be at least 1");
    }
    Rng rng(seed);
    const Plane residual = random_plane(side, rng);
    std::vector<Plane> gallery;
    for (int i = 0; i < db_size; ++i) {
        gallery.push_back(random_plane(side, rng));
    }
    scorer.bind(gallery);

    std::vector<double> sequential_scores(gallery.size());
    auto run_sequential = [&] {
        for (std::size_t i = 0; i < gallery.size(); ++i) {
            sequential_scores[i] = scorer.score_pair(residual, gallery[i]);
        }
    };
    std::vector<double> batched_scores;
    auto run_batched = [&] { batched_scores = scorer.score(residual, threads); };

    for (int i = 0; i < kWarmups; ++i) {
        run_sequential();
        run_batched();
    }
    // Interleaved so slow drift of the machine affects both modes alike.
    std::vector<double> seq_ms;
    std::vector<double> batch_ms;
    for (int i = 0; i < reps; ++i) {
        auto t0 = Clock::now();
        run_sequential();
        seq_ms.push_back(elapsed_ms(t0));
        t0 = Clock::now();
        run_batched();
        batch_ms.push_back(elapsed_ms(t0));
    }

    BenchResult r;
    r.scorer = scorer.tag();
    r.side = side;
    r.db_size = db_size;
    r.threads = threads;
    r.reps = reps;
    r.timing = summarize(std::move(batch_ms));
    r.sequential = summarize(std::move(seq_ms));
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        r.max_score_diff = std::max(r.max_score_diff, std::abs(batched_scores[i] - sequential_scores[i]));
    }
    return r;
}

void write_bench_csv(std::span<const BenchResult> results, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << std::setprecision(9) << "scorer,P,db_size,threads,median_ms,iqr_ms,mode\n";
    for (const auto& r : results) {
        const bool batch = r.sequential.reps > 0;
        out << r.scorer << ',' << r.side << ',' << r.db_size << ',' << r.threads << ',' << r.timing.median_ms << ','
            << r.timing.iqr_ms << ',' << (batch ? "batched" : "single") << '\n';
        if (batch) {
            out << r.scorer << ',' << r.side << ',' << r.db_size << ",1," << r.sequential.median_ms << ','
                << r.sequential.iqr_ms << ",sequential\n";
        }
    }
}

} // namespace prnu::bench
