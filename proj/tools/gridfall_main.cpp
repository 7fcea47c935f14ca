#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <thread>

#include <CLI11.hpp>

#include "gridfall/app_config.hpp"
#include "gridfall/cosim.hpp"
#include "gridfall/log.hpp"

namespace fs = std::filesystem;
using namespace gridfall;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSweepFailure = 3;
constexpr int kExitPhysics = 4;

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    unsigned seed = 42;
    int jobs = 0;
    std::string learner;
    std::string cases;
    double deadband_eval = -1.0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "run configuration (JSON)")->required();
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--seed", o.seed, "seed for any randomized component");
    cmd->add_option("--jobs", o.jobs, "parallel workers (0 = all cores)");
    cmd->add_option("--learner", o.learner, "regression learner: linear|piecewise|auto|nnr");
    cmd->add_option("--cases", o.cases, "comma-separated case list, e.g. 1,2,3");
    cmd->add_option("--deadband-eval", o.deadband_eval,
                    "dead-band of the evaluation cost function, pu");
}

AppConfig load_config_with_overrides(const CommonOpts& o) {
    AppConfig cfg = load_app_config(o.config_path);
    cfg.seed = o.seed;
    cfg.jobs = o.jobs > 0 ? o.jobs : static_cast<int>(std::thread::hardware_concurrency());
    if (cfg.jobs < 1) cfg.jobs = 1;
    if (!o.learner.empty()) {
        const auto l = parse_learner(o.learner);
        if (!l) throw ParseError("unknown learner '" + o.learner + "'");
        cfg.learner = *l;
    }
    if (!o.cases.empty()) {
        cfg.cases.clear();
        std::stringstream ss(o.cases);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const auto c = parse_control_case(tok);
            if (!c) throw ParseError("unknown case '" + tok + "'");
            cfg.cases.push_back(*c);
        }
    }
    if (o.deadband_eval >= 0.0) cfg.eval_params.deadband_pu = o.deadband_eval;
    return cfg;
}

std::vector<std::shared_ptr<const RegressionModelSet>> load_models(const AppConfig& cfg,
                                                                   std::size_t n_ctrl) {
    std::vector<std::shared_ptr<const RegressionModelSet>> models;
    for (std::size_t k = 0; k < n_ctrl; ++k) {
        const std::string path = model_file_path(cfg.model_dir, static_cast<int>(k));
        if (!fs::exists(path))
            throw ParseError("model file not found: " + path +
                             " (run the train command first, or point model_dir at its output)");
        models.push_back(std::make_shared<RegressionModelSet>(load_model_set(path)));
    }
    return models;
}

void warn_cq_cp(const CostParams& p, const char* which) {
    if (p.c_q >= p.c_p)
        log::info("warning: %s has c_q >= c_p; the reference economics assume c_q << c_p", which);
}

int cmd_train(const CommonOpts& o) {
    const AppConfig cfg = load_config_with_overrides(o);
    warn_cq_cp(cfg.train_params, "train_params");
    const GridModel grid = load_grid(cfg.grid_path);
    const auto ctrl = grid.controllable_ders();
    if (ctrl.empty()) throw ValidationError("grid has no controllable DER to train for");

    fs::create_directories(o.out_dir);
    log::info("sweep: %d scenarios on %zu workers", kLatticeSteps * kLatticeSteps * kLatticeSteps,
              static_cast<std::size_t>(cfg.jobs));
    const auto t0 = std::chrono::steady_clock::now();
    const SweepResult sweep = run_sweep(grid, cfg.train_params, cfg.jobs, [](int done, int total) {
        log::debug("sweep progress %d/%d", done, total);
    });
    const double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log::info("sweep done in %.1f s: %d/%d converged", wall_s, sweep.report.converged,
              sweep.report.total);

    write_sweep_report((fs::path(o.out_dir) / "sweep_report.json").string(), sweep.report);
    for (std::size_t k = 0; k < ctrl.size(); ++k) {
        write_training_csv(training_csv_path(o.out_dir, static_cast<int>(k)), sweep.training[k]);
        TrainingStore store = TrainingStore::from_sweep(
            static_cast<int>(ctrl[k]), grid.ders[ctrl[k]].kind, sweep.training[k],
            cfg.bucket_capacity);
        const RegressionModelSet set = retrain(store, cfg.model_config(), 0, 0.0);
        save_model_set(model_file_path(o.out_dir, static_cast<int>(k)), set);
    }
    std::printf("sweep: %d scenarios, %d converged, %d failed (%.1f s)\n", sweep.report.total,
                sweep.report.converged, sweep.report.total - sweep.report.converged, wall_s);
    std::printf("wrote %zu model files to %s\n", ctrl.size(), o.out_dir.c_str());

    const double fail_frac =
        1.0 - static_cast<double>(sweep.report.converged) / sweep.report.total;
    if (fail_frac > 0.01) {
        log::error("sweep failure rate %.2f%% exceeds the 1%% threshold", 100.0 * fail_frac);
        return kExitSweepFailure;
    }
    return kExitOk;
}

int cmd_simulate(const CommonOpts& o) {
    const AppConfig cfg = load_config_with_overrides(o);
    const GridModel grid = load_grid(cfg.grid_path);
    const ProfileSeries prof = load_profiles(cfg.profile_path, cfg.timestep_s);
    const auto ctrl = grid.controllable_ders();

    SimInputs in;
    in.grid = &grid;
    in.profiles = &prof;
    if (cfg.control_case == ControlCase::OpfPlusRegression)
        in.models = load_models(cfg, ctrl.size());

    fs::create_directories(o.out_dir);
    const RunResult run = run_simulation(cfg.sim_config(), in);

    const std::string tag = control_case_name(cfg.control_case);
    write_run_report((fs::path(o.out_dir) / ("report_" + tag + ".json")).string(), run.report);
    write_step_records_csv((fs::path(o.out_dir) / ("steps_" + tag + ".csv")).string(), grid,
                           run.steps);
    for (std::size_t k = 0; k < run.decisions.size(); ++k)
        write_decision_log_csv(
            (fs::path(o.out_dir) / ("decisions_" + tag + "_der" + std::to_string(k) + ".csv"))
                .string(),
            run.decisions[k]);
    std::printf("case %s: mean cost %.6g over %d steps (%d violation steps)\n", tag.c_str(),
                run.report.mean_cost, run.report.steps, run.report.violations);
    return kExitOk;
}

int cmd_compare(const CommonOpts& o) {
    const AppConfig cfg = load_config_with_overrides(o);
    const GridModel grid = load_grid(cfg.grid_path);
    const ProfileSeries prof = load_profiles(cfg.profile_path, cfg.timestep_s);
    const auto ctrl = grid.controllable_ders();

    const bool needs_fallback =
        std::any_of(cfg.cases.begin(), cfg.cases.end(), [](ControlCase c) {
            return c == ControlCase::OpfPlusRegression || c == ControlCase::OpfPlusQv;
        });
    if (needs_fallback && cfg.failure_windows.empty())
        log::info("warning: cases with a fallback are configured but no failure windows are; "
                  "the fallback will never engage");

    SimInputs in;
    in.grid = &grid;
    in.profiles = &prof;
    if (std::any_of(cfg.cases.begin(), cfg.cases.end(),
                    [](ControlCase c) { return c == ControlCase::OpfPlusRegression; }))
        in.models = load_models(cfg, ctrl.size());

    fs::create_directories(o.out_dir);
    const CaseComparison cmp = compare_cases(cfg.sim_config(), in, cfg.cases);
    write_comparison_csv((fs::path(o.out_dir) / "comparison.csv").string(), cmp);
    const std::string table = comparison_table_text(cmp);
    std::ofstream((fs::path(o.out_dir) / "comparison.txt").string()) << table;
    std::fputs(table.c_str(), stdout);
    return kExitOk;
}

int cmd_retrain_experiment(const CommonOpts& o) {
    const AppConfig cfg = load_config_with_overrides(o);
    warn_cq_cp(cfg.retrain_params, "retrain_params");
    const GridModel grid = load_grid(cfg.grid_path);
    const ProfileSeries prof = load_profiles(cfg.profile_path, cfg.timestep_s);
    const auto ctrl = grid.controllable_ders();

    SimInputs in;
    in.grid = &grid;
    in.profiles = &prof;
    in.models = load_models(cfg, ctrl.size());

    // Buckets are rebuilt from the offline sweep output. The experiment
    // stores are kept smaller than the general capacity so a single online
    // batch can re-shape the neighbourhoods it touches.
    std::vector<TrainingStore> stores;
    for (std::size_t k = 0; k < ctrl.size(); ++k) {
        const auto rows = read_training_csv(training_csv_path(cfg.model_dir, static_cast<int>(k)));
        stores.push_back(TrainingStore::from_sweep(static_cast<int>(ctrl[k]),
                                                   grid.ders[ctrl[k]].kind, rows,
                                                   cfg.retrain_bucket_capacity));
    }

    fs::create_directories(o.out_dir);
    const RetrainingOutcome outcome = retraining_experiment(
        cfg.sim_config(), in, cfg.retrain_params, std::move(stores), cfg.model_config());

    for (std::size_t k = 0; k < outcome.retrained_sets.size(); ++k)
        save_model_set(model_file_path(o.out_dir, static_cast<int>(k)),
                       outcome.retrained_sets[k]);
    write_run_report((fs::path(o.out_dir) / "report_retrain_central.json").string(),
                     outcome.central);
    write_run_report((fs::path(o.out_dir) / "report_retrain_stale.json").string(),
                     outcome.stale_fallback);
    write_run_report((fs::path(o.out_dir) / "report_retrain_updated.json").string(),
                     outcome.retrained_fallback);

    std::ofstream summary((fs::path(o.out_dir) / "retrain_summary.csv").string());
    summary << "case,mean_cost,diff_to_central_pct\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "A-central,%.17g,0\nB-stale,%.17g,%.17g\nC-retrained,%.17g,%.17g\n",
                  outcome.central.mean_cost, outcome.stale_fallback.mean_cost,
                  outcome.stale_gap_pct, outcome.retrained_fallback.mean_cost,
                  outcome.retrained_gap_pct);
    summary << buf;

    std::printf("A central OPF (new params): mean cost %.6g\n", outcome.central.mean_cost);
    std::printf("B stale models fallback:    mean cost %.6g (+%.2f%%)\n",
                outcome.stale_fallback.mean_cost, outcome.stale_gap_pct);
    std::printf("C retrained models fallback: mean cost %.6g (+%.2f%%)\n",
                outcome.retrained_fallback.mean_cost, outcome.retrained_gap_pct);
    return kExitOk;
}

int cmd_export_models(const CommonOpts& o) {
    const AppConfig cfg = load_config_with_overrides(o);
    const GridModel grid = load_grid(cfg.grid_path);
    const auto ctrl = grid.controllable_ders();
    const auto models = load_models(cfg, ctrl.size());

    fs::create_directories(o.out_dir);
    for (std::size_t k = 0; k < models.size(); ++k) {
        const std::string path =
            (fs::path(o.out_dir) / ("curves_der" + std::to_string(k) + ".csv")).string();
        std::ofstream out(path);
        out << "channel,op_pct,kind,v_pu,setpoint_pct\n";
        for (Channel ch : {Channel::P, Channel::Q}) {
            for (int op : TrainingStore::operating_points()) {
                const RegressionModel& m = models[k]->model(ch, op);
                const char* kind = m.kind == ModelKind::Linear ? "linear"
                                   : m.kind == ModelKind::PiecewiseLinear ? "piecewise"
                                                                          : "nnr";
                if (m.kind == ModelKind::NearestNeighbour) {
                    for (std::size_t i = 0; i < m.nnr_centers.size(); ++i) {
                        char row[128];
                        std::snprintf(row, sizeof row, "%s,%d,%s,%.17g,%.17g\n", channel_name(ch),
                                      op, kind, m.nnr_centers[i], m.nnr_values[i]);
                        out << row;
                    }
                } else {
                    for (int i = 0; i <= 100; ++i) {
                        const double v = 0.90 + 0.20 * i / 100.0;
                        char row[128];
                        std::snprintf(row, sizeof row, "%s,%d,%s,%.17g,%.17g\n", channel_name(ch),
                                      op, kind, v, predict(m, v));
                        out << row;
                    }
                }
            }
        }
        std::printf("wrote %s\n", path.c_str());
    }
    return kExitOk;
}

int cmd_validate_grid(const CommonOpts& o) {
    const AppConfig cfg = load_config_with_overrides(o);
    const GridModel grid = load_grid(cfg.grid_path);
    int n_ctrl = 0;
    for (const auto& d : grid.ders)
        if (d.controllable) ++n_ctrl;
    std::printf("grid ok: %d buses, %zu branches, %zu DERs (%d controllable), S_base %.3g MVA\n",
                grid.bus_count(), grid.branches.size(), grid.ders.size(), n_ctrl,
                grid.s_base_mva);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gridfall: regression-fallback DER control study"};
    app.require_subcommand(1);

    CommonOpts opts;
    int (*handler)(const CommonOpts&) = nullptr;

    auto* train = app.add_subcommand("train", "offline OPF sweep and regression model training");
    add_common(train, opts);
    train->callback([&] { handler = cmd_train; });

    auto* simulate = app.add_subcommand("simulate", "run one control case over the profile");
    add_common(simulate, opts);
    simulate->callback([&] { handler = cmd_simulate; });

    auto* compare = app.add_subcommand("compare", "run the control-case comparison");
    add_common(compare, opts);
    compare->callback([&] { handler = cmd_compare; });

    auto* retrain = app.add_subcommand(
        "retrain-experiment", "offline-learning experiment: changed cost parameters, online "
                              "dataset updates, stale vs retrained fallback");
    add_common(retrain, opts);
    retrain->callback([&] { handler = cmd_retrain_experiment; });

    auto* export_models = app.add_subcommand("export-models", "export model curves as CSV");
    add_common(export_models, opts);
    export_models->callback([&] { handler = cmd_export_models; });

    auto* validate = app.add_subcommand("validate-grid", "load and validate a grid file");
    add_common(validate, opts);
    validate->callback([&] { handler = cmd_validate_grid; });

    CLI11_PARSE(app, argc, argv);

    try {
        return handler(opts);
    } catch (const PhysicsDivergence& e) {
        log::error("physics divergence: %s", e.what());
        return kExitPhysics;
    } catch (const ParseError& e) {
        log::error("%s", e.what());
        return kExitConfig;
    } catch (const ValidationError& e) {
        log::error("%s", e.what());
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        log::error("%s", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        log::error("unexpected error: %s", e.what());
        return 1;
    }
}
