// prnu_match: fingerprints, residuals, PCE/PCN matching, training and
// evaluation on the command line.

#include "prnu/bench.hpp"
#include "prnu/errors.hpp"
#include "prnu/eval.hpp"
#include "prnu/fingerprint.hpp"
#include "prnu/imaging.hpp"
#include "prnu/parallel.hpp"
#include "prnu/pcn.hpp"
#include "prnu/residual.hpp"
#include "prnu/synth.hpp"
#include "prnu/training.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using namespace prnu;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kData = 3, kNumeric = 4 };

using Echo = std::vector<std::pair<std::string, std::string>>;

void echo(const std::string& command, const Echo& cfg) {
    std::cout << "# prnu_match " << command << '\n';
    for (const auto& [k, v] : cfg) {
        std::cout << "# " << k << " = " << v << '\n';
    }
}

template <typename T>
std::string str(const T& v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

bool is_image(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".pgm" || ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image(e.path())) {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw EmptyInputError("no images in " + dir.string());
    }
    return files;
}

// The dataset's own fingerprints, or those of `db_dir` matched by device id.
training::DeviceSet with_db(training::DeviceSet ds, const std::string& db_dir) {
    if (db_dir.empty()) {
        return ds;
    }
    const auto db = fingerprint::load_db(db_dir);
    for (auto& d : ds.devices) {
        const std::size_t i = db.find(d.device_id);
        if (i == db.size()) {
            throw FormatError("device " + d.device_id + " has no fingerprint in " + db_dir);
        }
        d.fingerprint = db[i].K.cast<double>();
    }
    return ds;
}

std::unique_ptr<eval::Scorer> make_scorer(const std::string& kind, const std::string& model_path, int side) {
    if (kind == "pce") {
        return std::make_unique<eval::PceScorer>(side);
    }
    if (model_path.empty()) {
        throw ConfigError("--scorer pcn needs --model");
    }
    return std::make_unique<eval::PcnScorer>(pcn::load_model(model_path), side);
}

struct TrainFlags {
    int max_epochs = 500;
    int patience = 30;
    double lr = 1e-3;
    std::size_t batches = 0;

    void add(CLI::App* app) {
        app->add_option("--max-epochs", max_epochs, "Epoch limit")->capture_default_str();
        app->add_option("--patience", patience, "Early-stopping patience in epochs")->capture_default_str();
        app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
        app->add_option("--batches", batches, "Batches per epoch (0 = mean training pool size)")
            ->capture_default_str();
    }

    [[nodiscard]] training::TrainConfig config(int side, std::uint64_t seed, unsigned threads) const {
        training::TrainConfig cfg;
        cfg.crop = side;
        cfg.seed = seed;
        cfg.threads = threads;
        cfg.max_epochs = max_epochs;
        cfg.patience = patience;
        cfg.adam.learning_rate = lr;
        cfg.batches_per_epoch = batches;
        return cfg;
    }

    void echo_into(Echo& e) const {
        e.emplace_back("max_epochs", str(max_epochs));
        e.emplace_back("patience", str(patience));
        e.emplace_back("lr", str(lr));
        e.emplace_back("batches_per_epoch", batches == 0 ? "auto" : str(batches));
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PRNU source-camera matching with PCE and a pair-wise correlation network"};
    app.require_subcommand(1);
    app.fallthrough();
    std::optional<int> threads_flag;
    app.add_option("--threads", threads_flag, "Worker threads (default: $PRNU_MATCH_THREADS, else all cores)");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth::SynthConfig scfg;
    std::string synth_out;
    int synth_size = scfg.rows;
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--devices", scfg.n_devices, "Number of devices")->capture_default_str();
    synth_cmd->add_option("--flats", scfg.flats_per_device, "Flat-field images per device")->capture_default_str();
    synth_cmd->add_option("--naturals", scfg.naturals_per_device, "Natural images per device")
        ->capture_default_str();
    synth_cmd->add_option("--size", synth_size, "Sensor side in pixels")->capture_default_str();
    synth_cmd->add_option("--strength", scfg.strength, "PRNU standard deviation")->capture_default_str();
    synth_cmd->add_option("--noise", scfg.noise_std, "Additive noise standard deviation")->capture_default_str();
    synth_cmd->add_option("--jpeg", scfg.jpeg_chain, "JPEG qualities applied in order, e.g. --jpeg 80 90");
    synth_cmd->add_option("--seed", scfg.seed, "Master seed")->capture_default_str();

    // fingerprint
    auto* fp_cmd = app.add_subcommand("fingerprint", "Estimate a fingerprint from a directory of images");
    std::string fp_images;
    std::string fp_out;
    std::string fp_id;
    fp_cmd->add_option("images", fp_images, "Directory of flat-field images")->required();
    fp_cmd->add_option("--out", fp_out, "Fingerprint file")->required();
    fp_cmd->add_option("--id", fp_id, "Device id (default: directory name)");

    // residual
    auto* res_cmd = app.add_subcommand("residual", "Extract the noise residual of one image");
    std::string res_image;
    std::string res_out;
    res_cmd->add_option("image", res_image, "Input image")->required();
    res_cmd->add_option("--out", res_out, "Residual file")->required();

    // shared scorer flags
    std::string scorer_kind = "pce";
    std::string model_path;
    int side = 64;
    auto add_scorer = [&](CLI::App* cmd) {
        cmd->add_option("--scorer", scorer_kind, "pce or pcn")
            ->check(CLI::IsMember({"pce", "pcn"}))
            ->capture_default_str();
        cmd->add_option("--model", model_path, "PCN model file");
        cmd->add_option("-P,--patch", side, "Central patch side")->capture_default_str();
    };

    // match
    auto* match_cmd = app.add_subcommand("match", "Rank the devices of a fingerprint database for one residual");
    std::string match_residual;
    std::string match_db;
    match_cmd->add_option("residual", match_residual, "Residual file, or an image to extract one from")->required();
    match_cmd->add_option("--db", match_db, "Directory of fingerprint files")->required();
    add_scorer(match_cmd);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a PCN on a dataset directory");
    std::string train_data;
    std::string train_out;
    std::uint64_t seed = 1;
    TrainFlags tflags;
    train_cmd->add_option("dataset", train_data, "Dataset directory with manifest.tsv")->required();
    train_cmd->add_option("--out", train_out, "Output directory for model.pcnw and history.csv")->required();
    train_cmd->add_option("-P,--patch", side, "Central patch side")->capture_default_str();
    train_cmd->add_option("--seed", seed, "Training seed")->capture_default_str();
    tflags.add(train_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Closed- and open-set evaluation on a dataset's eval split");
    std::string eval_data;
    std::string eval_db;
    std::string eval_out;
    eval_cmd->add_option("dataset", eval_data, "Dataset directory with manifest.tsv")->required();
    eval_cmd->add_option("--db", eval_db, "Fingerprint directory (default: estimated from the dataset's flats)");
    eval_cmd->add_option("--out", eval_out, "Output directory for report.csv, roc.csv and scores.csv")->required();
    add_scorer(eval_cmd);

    // grid
    auto* grid_cmd = app.add_subcommand("grid", "Train/eval grid over single- and double-compressed data");
    std::string grid_single;
    std::string grid_double;
    std::string grid_out;
    grid_cmd->add_option("single", grid_single, "Single-compressed dataset directory")->required();
    grid_cmd->add_option("double", grid_double, "Double-compressed dataset directory")->required();
    grid_cmd->add_option("--out", grid_out, "Output directory for grid.csv and the two models")->required();
    grid_cmd->add_option("-P,--patch", side, "Central patch side")->capture_default_str();
    grid_cmd->add_option("--seed", seed, "Training seed")->capture_default_str();
    tflags.add(grid_cmd);

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Time single-pair and batched matching");
    int db_size = 87;
    int reps = 20;
    std::string bench_out;
    bench_cmd->add_option("--db-size", db_size, "Fingerprints per batched query")->capture_default_str();
    bench_cmd->add_option("--reps", reps, "Timed repetitions")->capture_default_str();
    bench_cmd->add_option("--out", bench_out, "bench.csv path")->required();
    add_scorer(bench_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        const unsigned threads = resolve_threads(threads_flag);

        if (*synth_cmd) {
            scfg.rows = synth_size;
            scfg.cols = synth_size;
            scfg.threads = threads;
            scfg.validate();
            std::cout << "# prnu_match synth\n";
            std::istringstream lines(scfg.describe());
            for (std::string line; std::getline(lines, line);) {
                std::cout << "# " << line << '\n';
            }
            std::cout << "# threads = " << threads << '\n';
            const auto ds = synth::build_dataset(scfg, fs::path(synth_out));
            std::ofstream(fs::path(synth_out) / "config.txt") << scfg.describe();
            fingerprint::save_db(ds.db, fs::path(synth_out) / "fingerprints");
            std::cout << "wrote " << ds.manifest.size() << " images for " << ds.db.size() << " devices to "
                      << synth_out << '\n';
        } else if (*fp_cmd) {
            const fs::path dir(fp_images);
            const std::string id = fp_id.empty() ? dir.filename().string() : fp_id;
            echo("fingerprint", {{"images", fp_images}, {"id", id}, {"out", fp_out}, {"threads", str(threads)}});
            std::vector<imaging::Image> images;
            for (const auto& p : list_images(dir)) {
                images.push_back(imaging::load_image(p));
            }
            const auto fp = fingerprint::estimate_prnu(images, {}, id, threads);
            fingerprint::save_fingerprint(fp, fp_out);
            std::cout << "fingerprint " << id << " from " << fp.n_images << " images, " << fp.K.rows() << "x"
                      << fp.K.cols() << '\n';
        } else if (*res_cmd) {
            echo("residual", {{"image", res_image}, {"out", res_out}});
            const auto res = residual::extract_residual(imaging::load_image(res_image));
            fingerprint::save_residual(res, res_out);
            std::cout << "residual " << res.values.rows() << "x" << res.values.cols() << '\n';
        } else if (*match_cmd) {
            echo("match", {{"residual", match_residual},
                           {"db", match_db},
                           {"scorer", scorer_kind},
                           {"model", model_path.empty() ? "-" : model_path},
                           {"P", str(side)},
                           {"threads", str(threads)}});
            const fs::path rp(match_residual);
            const Plane w = is_image(rp) ? residual::extract_residual(imaging::load_image(rp)).values
                                         : fingerprint::load_residual(rp).values;
            const auto db = fingerprint::load_db(match_db);
            if (db.empty()) {
                throw EmptyInputError("no fingerprints in " + match_db);
            }
            std::vector<Plane> gallery;
            for (const auto& fp : db.entries()) {
                gallery.push_back(fp.K.cast<double>());
            }
            auto scorer = make_scorer(scorer_kind, model_path, side);
            scorer->bind(gallery);
            const auto scores = scorer->score(w, threads);
            std::vector<std::size_t> order(scores.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
            std::cout << "rank,device,score\n";
            for (std::size_t r = 0; r < order.size(); ++r) {
                std::cout << r + 1 << ',' << db[order[r]].device_id << ',' << scores[order[r]] << '\n';
            }
        } else if (*train_cmd) {
            const auto cfg = tflags.config(side, seed, threads);
            Echo e{{"dataset", train_data}, {"out", train_out}, {"P", str(side)}, {"seed", str(seed)}};
            tflags.echo_into(e);
            e.emplace_back("threads", str(threads));
            echo("train", e);
            cfg.validate();
            const auto ds = synth::load_dataset(train_data, {}, threads);
            const auto result = training::train(ds.devices, cfg);
            fs::create_directories(train_out);
            pcn::save_model(result.model, fs::path(train_out) / "model.pcnw");
            training::write_history_csv(result.history, fs::path(train_out) / "history.csv");
            std::cout << "epochs " << result.history.epochs.size() << ", best " << result.history.best_epoch
                      << ", stopped on " << result.history.stopped_reason << '\n';
        } else if (*eval_cmd) {
            eval::ConfigEcho e{{"dataset", eval_data},
                               {"db", eval_db.empty() ? "-" : eval_db},
                               {"scorer", scorer_kind},
                               {"model", model_path.empty() ? "-" : model_path},
                               {"P", str(side)},
                               {"threads", str(threads)}};
            echo("eval", e);
            const auto ds = with_db(synth::load_dataset(eval_data, {}, threads).devices, eval_db);
            auto scorer = make_scorer(scorer_kind, model_path, side);
            const auto sm = eval::score_matrix(ds, *scorer, training::Split::Eval, threads);
            const auto report = eval::evaluate(sm, e);
            const fs::path out(eval_out);
            fs::create_directories(out);
            eval::write_report_csv(report, out / "report.csv");
            eval::write_roc_csv(report.roc, out / "roc.csv");
            eval::write_scores_csv(sm, out / "scores.csv");
            std::cout << "A_cs," << report.a_cs << "\nAUC_os," << report.auc_os << '\n';
        } else if (*grid_cmd) {
            eval::GridConfig gcfg;
            gcfg.train = tflags.config(side, seed, threads);
            gcfg.side = side;
            gcfg.threads = threads;
            Echo e{{"single", grid_single}, {"double", grid_double}, {"out", grid_out}, {"P", str(side)},
                   {"seed", str(seed)}};
            tflags.echo_into(e);
            e.emplace_back("threads", str(threads));
            echo("grid", e);
            gcfg.train.validate();
            const auto single = synth::load_dataset(grid_single, {}, threads).devices;
            const auto twice = synth::load_dataset(grid_double, {}, threads).devices;
            const auto grid = eval::domain_grid(single, twice, single, twice, gcfg);
            const fs::path out(grid_out);
            fs::create_directories(out);
            eval::write_grid_csv(grid, out / "grid.csv");
            pcn::save_model(grid.models.at(0), out / "model_single.pcnw");
            pcn::save_model(grid.models.at(1), out / "model_double.pcnw");
            std::cout << "train,eval,A_cs,AUC_os\n";
            for (const auto& c : grid.cells) {
                std::cout << eval::variant_name(c.train) << ',' << eval::variant_name(c.eval) << ',' << c.a_cs << ','
                          << c.auc_os << '\n';
            }
        } else if (*bench_cmd) {
            echo("bench", {{"scorer", scorer_kind},
                           {"model", model_path.empty() ? "-" : model_path},
                           {"P", str(side)},
                           {"db_size", str(db_size)},
                           {"reps", str(reps)},
                           {"threads", str(threads)}});
            std::unique_ptr<eval::Scorer> scorer;
            if (scorer_kind == "pcn" && model_path.empty()) {
                // Timing does not depend on the weights.
                scorer = std::make_unique<eval::PcnScorer>(pcn::PcnModel::initialized(pcn::ArchDescriptor{}, 1), side);
            } else {
                scorer = make_scorer(scorer_kind, model_path, side);
            }
            std::vector<bench::BenchResult> rows;
            rows.push_back(bench::bench_single(*scorer, side, reps));
            rows.push_back(bench::bench_batch(*scorer, side, db_size, threads, reps));
            bench::write_bench_csv(rows, bench_out);
            const auto& b = rows.back();
            std::cout << "single_ms," << rows.front().timing.median_ms << "\nbatched_ms," << b.timing.median_ms
                      << "\nsequential_ms," << b.sequential.median_ms << "\nratio," << b.batch_ratio()
                      << "\nmax_score_diff," << b.max_score_diff << '\n';
        }
        return kOk;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
}
