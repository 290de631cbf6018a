#pragma once

#include "prnu/eval.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace prnu::bench {

inline constexpr int kWarmups = 3;
inline constexpr int kMinReps = 5;

struct TimingStats {
    double median_ms = 0.0;
    double iqr_ms = 0.0;
    int reps = 0;
};

/// Median and interquartile range (linearly interpolated quartiles).
TimingStats summarize(std::vector<double> samples_ms);

struct BenchResult {
    std::string scorer;
    int side = 0;
    int db_size = 1;
    unsigned threads = 1;
    int reps = 0;
    /// Single pair for bench_single; one batched query for bench_batch.
    TimingStats timing;
    /// bench_batch only: the same query as a sequential loop of score_pair.
    TimingStats sequential;
    /// bench_batch only: largest |batched - sequential| over the database.
    double max_score_diff = 0.0;

    [[nodiscard]] double batch_ratio() const { return timing.median_ms / sequential.median_ms; }
};

/// Per-pair latency of `scorer.score_pair` on pre-generated P x P inputs.
/// Throws ConfigError when reps < kMinReps.
BenchResult bench_single(const eval::Scorer& scorer, int side, int reps = 20, std::uint64_t seed = 1);

/// One residual against `db_size` fingerprints: batched `scorer.score` at
/// `threads` versus a single-threaded loop of `score_pair`. Binding the
/// gallery happens outside the timed region.
BenchResult bench_batch(eval::Scorer& scorer, int side, int db_size, unsigned threads, int reps = 20,
                        std::uint64_t seed = 1);

/// scorer,P,db_size,threads,median_ms,iqr_ms,mode. A batch result adds a
/// second "sequential" row.
void write_bench_csv(std::span<const BenchResult> results, const std::filesystem::path& path);

} // namespace prnu::bench
