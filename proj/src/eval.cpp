#include "prnu/eval.hpp"

#include "prnu/errors.hpp"
#include "prnu/imaging.hpp"
#include "prnu/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace prnu::eval {

namespace {

std::vector<Plane> crop_all(std::span<const Plane> planes, int side) {
    std::vector<Plane> out;
    out.reserve(planes.size());
    for (const auto& p : planes) {
        out.push_back(imaging::central_crop(p, side));
    }
    return out;
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << std::setprecision(17);
    return out;
}

const char* split_name(training::Split s) {
    switch (s) {
    case training::Split::Train:
        return "train";
    case training::Split::Val:
        return "val";
    case training::Split::Eval:
        return "eval";
    }
    return "?";
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

} // namespace

// ------------------------------------------------------------------ scorers

PceScorer::PceScorer(int side, int exclusion_radius) : side_(side), radius_(exclusion_radius) {
    if (side < 2 * exclusion_radius + 2) {
        throw ConfigError("PCE crop " + std::to_string(side) + " too small for exclusion radius " +
                          std::to_string(exclusion_radius));
    }
}

void PceScorer::bind(std::span<const Plane> fingerprints) {
    batch_.emplace(crop_all(fingerprints, side_), radius_);
}

std::vector<double> PceScorer::score(const Plane& residual, unsigned threads) const {
    if (!batch_) {
        throw ConfigError("scorer has no bound fingerprints");
    }
    return batch_->score(imaging::central_crop(residual, side_), threads);
}

double PceScorer::score_pair(const Plane& residual, const Plane& fingerprint) const {
    return pce::pce(imaging::central_crop(residual, side_), imaging::central_crop(fingerprint, side_), radius_).pce;
}

PcnScorer::PcnScorer(pcn::PcnModel model, int side) : model_(std::move(model)), side_(side) {
    if (side < model_.arch().min_input_side()) {
        throw ConfigError("PCN crop " + std::to_string(side) + " below the architecture minimum " +
                          std::to_string(model_.arch().min_input_side()));
    }
}

void PcnScorer::bind(std::span<const Plane> fingerprints) {
    const auto crops = crop_all(fingerprints, side_);
    matcher_.emplace(model_, crops);
}

std::vector<double> PcnScorer::score(const Plane& residual, unsigned threads) const {
    if (!matcher_) {
        throw ConfigError("scorer has no bound fingerprints");
    }
    const auto scores = matcher_->score(imaging::central_crop(residual, side_), threads);
    std::vector<double> out(scores.size());
    std::transform(scores.begin(), scores.end(), out.begin(), [](const pcn::MatchScore& s) { return s.logit; });
    return out;
}

double PcnScorer::score_pair(const Plane& residual, const Plane& fingerprint) const {
    const auto pair = pcn::PairTensor::from_planes(imaging::central_crop(fingerprint, side_),
                                                   imaging::central_crop(residual, side_));
    return pcn::pcn_forward(pair, model_).logit;
}

FunctionScorer::FunctionScorer(std::string tag, Fn fn) : tag_(std::move(tag)), fn_(std::move(fn)) {
    if (!fn_) {
        throw ConfigError("function scorer needs a callable");
    }
}

void FunctionScorer::bind(std::span<const Plane> fingerprints) {
    gallery_.assign(fingerprints.begin(), fingerprints.end());
}

std::vector<double> FunctionScorer::score(const Plane& residual, unsigned threads) const {
    std::vector<double> out(gallery_.size());
    parallel_for(gallery_.size(), threads, [&](std::size_t i) { out[i] = fn_(residual, gallery_[i]); });
    return out;
}

double FunctionScorer::score_pair(const Plane& residual, const Plane& fingerprint) const {
    return fn_(residual, fingerprint);
}

// ------------------------------------------------------------------ score matrix

void ScoreMatrix::validate() const {
    if (values.rows() != static_cast<Eigen::Index>(true_ids.size()) ||
        values.cols() != static_cast<Eigen::Index>(device_ids.size()) || query_labels.size() != true_ids.size()) {
        throw DimensionError("score matrix shape disagrees with its labels");
    }
    if (!values.allFinite()) {
        throw NumericError("score matrix holds non-finite values");
    }
}

ScoreMatrix score_matrix(const training::DeviceSet& ds, Scorer& scorer, training::Split split, unsigned threads) {
    if (ds.size() == 0) {
        throw EmptyInputError("no devices to score");
    }
    ScoreMatrix sm;
    sm.scorer = scorer.tag();
    std::vector<Plane> fps;
    std::vector<const Plane*> queries;
    for (const auto& d : ds.devices) {
        sm.device_ids.push_back(d.device_id);
        fps.push_back(d.fingerprint);
        const auto& pool = d.pool(split);
        for (std::size_t r = 0; r < pool.size(); ++r) {
            queries.push_back(&pool[r]);
            sm.true_ids.push_back(d.device_id);
            sm.query_labels.push_back(d.device_id + "/" + split_name(split) + "/" + std::to_string(r));
        }
    }
    if (queries.empty()) {
        throw EmptyInputError(std::string("no residuals in split ") + split_name(split));
    }
    scorer.bind(fps);
    sm.values.resize(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(fps.size()));
    // Rows in parallel; each row scored sequentially so work is never nested.
    parallel_for(queries.size(), threads, [&](std::size_t q) {
        const auto row = scorer.score(*queries[q], 1);
        for (std::size_t c = 0; c < row.size(); ++c) {
            sm.values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(c)) = row[c];
        }
    });
    sm.validate();
    return sm;
}

// ------------------------------------------------------------------ metrics

ClosedSetResult closed_set_accuracy(const ScoreMatrix& sm) {
    sm.validate();
    const std::size_t n_cols = sm.device_ids.size();
    std::vector<std::size_t> hits(n_cols, 0);
    std::vector<std::size_t> totals(n_cols, 0);
    for (Eigen::Index r = 0; r < sm.values.rows(); ++r) {
        const auto it = std::find(sm.device_ids.begin(), sm.device_ids.end(), sm.true_ids[static_cast<std::size_t>(r)]);
        if (it == sm.device_ids.end()) {
            throw ConfigError("query device " + sm.true_ids[static_cast<std::size_t>(r)] + " is not in the database");
        }
        const auto truth = static_cast<std::size_t>(it - sm.device_ids.begin());
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < sm.values.cols(); ++c) {
            if (sm.values(r, c) > sm.values(r, best)) {
                best = c;
            }
        }
        ++totals[truth];
        if (static_cast<std::size_t>(best) == truth) {
            ++hits[truth];
        }
    }
    ClosedSetResult out;
    double sum = 0.0;
    for (std::size_t c = 0; c < n_cols; ++c) {
        if (totals[c] == 0) {
            continue;
        }
        const double acc = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
        out.per_device.push_back({sm.device_ids[c], acc});
        sum += acc;
    }
    if (out.per_device.empty()) {
        throw EmptyInputError("score matrix has no rows");
    }
    out.a_cs = sum / static_cast<double>(out.per_device.size());
    return out;
}

RocResult roc_auc(std::span<const double> pos, std::span<const double> neg) {
    if (pos.empty() || neg.empty()) {
        throw EmptyInputError("ROC needs at least one positive and one negative score");
    }
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(pos.size() + neg.size());
    for (double s : pos) {
        items.push_back({s, true});
    }
    for (double s : neg) {
        items.push_back({s, false});
    }
    for (const auto& it : items) {
        if (std::isnan(it.score)) {
            throw NumericError("NaN score in ROC input");
        }
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

    const double n_pos = static_cast<double>(pos.size());
    const double n_neg = static_cast<double>(neg.size());
    RocResult out;
    out.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    // Twice the Mann-Whitney count: each (pos, neg) pair adds 2 when pos is
    // strictly higher and 1 when tied. Kept in integers for exactness.
    unsigned long long twice_u = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t group_pos = 0;
        std::size_t group_neg = 0;
        const double threshold = items[i].score;
        while (i < items.size() && items[i].score == threshold) {
            (items[i].positive ? group_pos : group_neg) += 1;
            ++i;
        }
        // Negatives in this group lose to every earlier positive and tie with
        // the positives of the group.
        twice_u += 2ULL * static_cast<unsigned long long>(tp) * group_neg +
                   static_cast<unsigned long long>(group_pos) * group_neg;
        tp += group_pos;
        fp += group_neg;
        out.points.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, threshold});
    }
    out.auc = static_cast<double>(twice_u) / (2.0 * n_pos * n_neg);
    return out;
}

double trapezoid_auc(std::span<const RocPoint> points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        area += (points[i].fpr - points[i - 1].fpr) * 0.5 * (points[i].tpr + points[i - 1].tpr);
    }
    return area;
}

EvalReport evaluate(const ScoreMatrix& sm, ConfigEcho config) {
    const ClosedSetResult closed = closed_set_accuracy(sm);
    EvalReport report;
    report.scorer = sm.scorer;
    report.a_cs = closed.a_cs;
    report.per_device_accuracy = closed.per_device;
    report.config = std::move(config);

    std::vector<double> pooled_pos;
    std::vector<double> pooled_neg;
    for (std::size_t c = 0; c < sm.device_ids.size(); ++c) {
        std::vector<double> pos;
        std::vector<double> neg;
        for (Eigen::Index r = 0; r < sm.values.rows(); ++r) {
            const double s = sm.values(r, static_cast<Eigen::Index>(c));
            (sm.true_ids[static_cast<std::size_t>(r)] == sm.device_ids[c] ? pos : neg).push_back(s);
        }
        pooled_pos.insert(pooled_pos.end(), pos.begin(), pos.end());
        pooled_neg.insert(pooled_neg.end(), neg.begin(), neg.end());
        if (!pos.empty() && !neg.empty()) {
            report.per_device_auc.push_back({sm.device_ids[c], roc_auc(pos, neg).auc});
        }
    }
    RocResult roc = roc_auc(pooled_pos, pooled_neg);
    report.auc_os = roc.auc;
    report.roc = std::move(roc.points);
    return report;
}

EvalReport open_set_eval(const training::DeviceSet& ds, Scorer& scorer, training::Split split, unsigned threads,
                         ConfigEcho config) {
    return evaluate(score_matrix(ds, scorer, split, threads), std::move(config));
}

// ------------------------------------------------------------------ domain grid

std::string variant_name(Variant v) {
    return v == Variant::Single ? "single" : "double";
}

const GridCell& GridReport::cell(Variant train, Variant eval) const {
    for (const auto& c : cells) {
        if (c.train == train && c.eval == eval) {
            return c;
        }
    }
    throw ConfigError("grid cell missing");
}

GridReport domain_grid(const training::DeviceSet& train_single, const training::DeviceSet& train_double,
                       const training::DeviceSet& eval_single, const training::DeviceSet& eval_double,
                       const GridConfig& cfg) {
    auto same_ids = [](const training::DeviceSet& a, const training::DeviceSet& b) {
        if (a.size() != b.size()) {
            return false;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.devices[i].device_id != b.devices[i].device_id) {
                return false;
            }
        }
        return true;
    };
    if (!same_ids(train_single, train_double) || !same_ids(eval_single, eval_double)) {
        throw ConfigError("single and double variants must list the same devices");
    }

    GridReport grid;
    const std::pair<Variant, const training::DeviceSet*> trains[] = {{Variant::Single, &train_single},
                                                                     {Variant::Double, &train_double}};
    const std::pair<Variant, const training::DeviceSet*> evals[] = {{Variant::Single, &eval_single},
                                                                    {Variant::Double, &eval_double}};
    for (const auto& [tv, tset] : trains) {
        const auto& supplied = tv == Variant::Single ? cfg.single_model : cfg.double_model;
        std::string origin = "supplied";
        if (supplied) {
            grid.models.push_back(*supplied);
        } else {
            training::TrainConfig tc = cfg.train;
            tc.crop = cfg.side;
            tc.threads = cfg.threads;
            auto result = training::train(*tset, tc);
            origin = "trained: best_epoch=" + std::to_string(result.history.best_epoch) + " of " +
                     std::to_string(result.history.epochs.size());
            grid.histories.push_back(std::move(result.history));
            grid.models.push_back(std::move(result.model));
        }
        for (const auto& [ev, eset] : evals) {
            PcnScorer scorer(grid.models.back(), cfg.side);
            const EvalReport r = open_set_eval(*eset, scorer, training::Split::Eval, cfg.threads);
            GridCell cell;
            cell.train = tv;
            cell.eval = ev;
            cell.a_cs = r.a_cs;
            cell.auc_os = r.auc_os;
            cell.config = {{"train_variant", variant_name(tv)},
                           {"eval_variant", variant_name(ev)},
                           {"P", std::to_string(cfg.side)},
                           {"model", origin},
                           {"seed", std::to_string(cfg.train.seed)},
                           {"learning_rate", fmt(cfg.train.adam.learning_rate)},
                           {"patience", std::to_string(cfg.train.patience)},
                           {"max_epochs", std::to_string(cfg.train.max_epochs)},
                           {"train_devices", std::to_string(tset->size())},
                           {"eval_devices", std::to_string(eset->size())}};
            grid.cells.push_back(std::move(cell));
        }
    }
    return grid;
}

// ------------------------------------------------------------------ CSV

void write_scores_csv(const ScoreMatrix& sm, const std::filesystem::path& path) {
    sm.validate();
    auto out = open_csv(path);
    out << "query,device,score\n";
    for (Eigen::Index r = 0; r < sm.values.rows(); ++r) {
        for (Eigen::Index c = 0; c < sm.values.cols(); ++c) {
            out << sm.query_labels[static_cast<std::size_t>(r)] << ',' << sm.device_ids[static_cast<std::size_t>(c)]
                << ',' << sm.values(r, c) << '\n';
        }
    }
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "metric,value\n";
    out << "scorer," << report.scorer << '\n';
    out << "A_cs," << report.a_cs << '\n';
    out << "AUC_os," << report.auc_os << '\n';
    for (const auto& m : report.per_device_accuracy) {
        out << "accuracy:" << m.device_id << ',' << m.value << '\n';
    }
    for (const auto& m : report.per_device_auc) {
        out << "auc:" << m.device_id << ',' << m.value << '\n';
    }
    for (const auto& [k, v] : report.config) {
        out << "config:" << k << ',' << v << '\n';
    }
}

void write_roc_csv(std::span<const RocPoint> points, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "fpr,tpr,threshold\n";
    for (const auto& p : points) {
        out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
    }
}

void write_grid_csv(const GridReport& grid, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "train,eval,A_cs,AUC_os,config\n";
    for (const auto& c : grid.cells) {
        std::string echo;
        for (const auto& [k, v] : c.config) {
            echo += (echo.empty() ? "" : ";") + k + "=" + v;
        }
        out << variant_name(c.train) << ',' << variant_name(c.eval) << ',' << c.a_cs << ',' << c.auc_os << ",\""
            << echo << "\"\n";
    }
}

} // namespace prnu::eval
