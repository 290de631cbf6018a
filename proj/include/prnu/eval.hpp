#pragma once

#include "prnu/pce.hpp"
#include "prnu/pcn.hpp"
#include "prnu/training.hpp"
#include "prnu/types.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace prnu::eval {

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

/// A matcher bound to a gallery of fingerprints. Inputs are full-size planes;
/// any cropping is the scorer's business.
class Scorer {
public:
    virtual ~Scorer() = default;

    [[nodiscard]] virtual std::string tag() const = 0;
    virtual void bind(std::span<const Plane> fingerprints) = 0;
    /// One score per bound fingerprint, in bind order.
    [[nodiscard]] virtual std::vector<double> score(const Plane& residual, unsigned threads) const = 0;
    /// Unbatched single pair; needs no gallery.
    [[nodiscard]] virtual double score_pair(const Plane& residual, const Plane& fingerprint) const = 0;
};

/// Signed PCE on central P x P crops.
class PceScorer final : public Scorer {
public:
    explicit PceScorer(int side, int exclusion_radius = 5);

    [[nodiscard]] std::string tag() const override { return "pce"; }
    void bind(std::span<const Plane> fingerprints) override;
    [[nodiscard]] std::vector<double> score(const Plane& residual, unsigned threads) const override;
    [[nodiscard]] double score_pair(const Plane& residual, const Plane& fingerprint) const override;

private:
    int side_;
    int radius_;
    std::optional<pce::BatchPce> batch_;
};

/// PCN logit on central P x P crops. The logit orders pairs exactly as C_s
/// does but does not saturate to ties at 1.0 in float.
class PcnScorer final : public Scorer {
public:
    PcnScorer(pcn::PcnModel model, int side);

    [[nodiscard]] std::string tag() const override { return "pcn"; }
    void bind(std::span<const Plane> fingerprints) override;
    [[nodiscard]] std::vector<double> score(const Plane& residual, unsigned threads) const override;
    [[nodiscard]] double score_pair(const Plane& residual, const Plane& fingerprint) const override;

private:
    pcn::PcnModel model_;
    int side_;
    std::optional<pcn::PcnMatcher> matcher_;
};

/// Any pair function, applied to the uncropped planes.
class FunctionScorer final : public Scorer {
public:
    using Fn = std::function<double(const Plane& residual, const Plane& fingerprint)>;

    FunctionScorer(std::string tag, Fn fn);

    [[nodiscard]] std::string tag() const override { return tag_; }
    void bind(std::span<const Plane> fingerprints) override;
    [[nodiscard]] std::vector<double> score(const Plane& residual, unsigned threads) const override;
    [[nodiscard]] double score_pair(const Plane& residual, const Plane& fingerprint) const override;

private:
    std::string tag_;
    Fn fn_;
    std::vector<Plane> gallery_;
};

struct ScoreMatrix {
    std::string scorer;
    std::vector<std::string> query_labels; ///< e.g. "dev003/eval/2"
    std::vector<std::string> true_ids;     ///< one per row
    std::vector<std::string> device_ids;   ///< one per column
    Eigen::MatrixXd values;                ///< rows x columns

    /// Sizes agree and every score is finite.
    void validate() const;
};

/// Every `split` residual of `ds` against every fingerprint of `ds`.
/// Rows are scored in parallel; the result is independent of `threads`.
ScoreMatrix score_matrix(const training::DeviceSet& ds, Scorer& scorer, training::Split split = training::Split::Eval,
                         unsigned threads = 1);

struct DeviceMetric {
    std::string device_id;
    double value = 0.0;
};

struct ClosedSetResult {
    double a_cs = 0.0;
    std::vector<DeviceMetric> per_device; ///< column order, devices with rows only
};

/// Argmax per row, ties to the earliest column; accuracy averaged per device.
/// Throws ConfigError when a row's true id is not a column.
ClosedSetResult closed_set_accuracy(const ScoreMatrix& sm);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0; ///< score >= threshold is called positive
};

struct RocResult {
    double auc = 0.0;
    std::vector<RocPoint> points; ///< from (0,0) to (1,1)
};

/// AUC = P(pos > neg) + P(pos = neg)/2 counted over all pairs, plus the ROC
/// swept over every distinct score. Throws EmptyInputError on an empty side.
RocResult roc_auc(std::span<const double> pos, std::span<const double> neg);

/// Trapezoidal area under a swept ROC.
double trapezoid_auc(std::span<const RocPoint> points);

struct EvalReport {
    std::string scorer;
    double a_cs = 0.0;
    double auc_os = 0.0; ///< raw scores pooled over devices
    std::vector<DeviceMetric> per_device_accuracy;
    std::vector<DeviceMetric> per_device_auc;
    std::vector<RocPoint> roc;
    ConfigEcho config;
};

/// Closed-set accuracy and open-set ROC from one matrix. For device d the
/// positives are its own residuals against K_d and the negatives all other
/// residuals against K_d.
EvalReport evaluate(const ScoreMatrix& sm, ConfigEcho config = {});

/// score_matrix followed by evaluate.
EvalReport open_set_eval(const training::DeviceSet& ds, Scorer& scorer, training::Split split = training::Split::Eval,
                         unsigned threads = 1, ConfigEcho config = {});

enum class Variant { Single, Double };
std::string variant_name(Variant v);

struct GridConfig {
    training::TrainConfig train;
    int side = 64;
    unsigned threads = 1;
    /// Skip training for a variant when its model is supplied.
    std::optional<pcn::PcnModel> single_model;
    std::optional<pcn::PcnModel> double_model;
};

struct GridCell {
    Variant train = Variant::Single;
    Variant eval = Variant::Single;
    double a_cs = 0.0;
    double auc_os = 0.0;
    ConfigEcho config;
};

struct GridReport {
    std::vector<GridCell> cells; ///< T(single)E(single), T(single)E(double), T(double)E(single), T(double)E(double)
    std::vector<training::TrainHistory> histories; ///< per training variant; empty when the model was supplied
    std::vector<pcn::PcnModel> models;

    [[nodiscard]] const GridCell& cell(Variant train, Variant eval) const;
};

/// Trains (or takes) one model per training variant and scores it on the eval
/// split of both eval variants. Each pair of sets must list the same device ids.
GridReport domain_grid(const training::DeviceSet& train_single, const training::DeviceSet& train_double,
                       const training::DeviceSet& eval_single, const training::DeviceSet& eval_double,
                       const GridConfig& cfg);

void write_scores_csv(const ScoreMatrix& sm, const std::filesystem::path& path);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_roc_csv(std::span<const RocPoint> points, const std::filesystem::path& path);
void write_grid_csv(const GridReport& grid, const std::filesystem::path& path);

} // namespace prnu::eval
