#include "gridfall/app_config.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace gridfall {

namespace fs = std::filesystem;
using nlohmann::json;

SimConfig AppConfig::sim_config() const {
    SimConfig sc;
    sc.grid_path = grid_path;
    sc.profile_path = profile_path;
    sc.train_params = train_params;
    sc.eval_params = eval_params;
    sc.timestep_s = timestep_s;
    sc.horizon_steps = horizon_steps;
    sc.se_cycle_s = se_cycle_s;
    sc.opf_cycle_s = opf_cycle_s;
    sc.regression_cycle_s = regression_cycle_s;
    sc.transition_steps = transition_steps;
    sc.stale_after_s = stale_after_s;
    sc.failure_windows = failure_windows;
    sc.control_case = control_case;
    sc.seed = seed;
    sc.jobs = jobs;
    return sc;
}

ModelSetConfig AppConfig::model_config() const {
    return ModelSetConfig{learner, nnr_k, nnr_sections};
}

namespace {

CostParams parse_cost_params(const json& j, CostParams defaults) {
    CostParams p = defaults;
    if (j.contains("c_v")) p.c_v = j.at("c_v").get<double>();
    if (j.contains("c_q")) p.c_q = j.at("c_q").get<double>();
    if (j.contains("c_p")) p.c_p = j.at("c_p").get<double>();
    if (j.contains("deadband_pu")) p.deadband_pu = j.at("deadband_pu").get<double>();
    if (p.c_v <= 0 || p.c_q <= 0 || p.c_p <= 0)
        throw ParseError("cost parameters must be positive");
    return p;
}

}  // namespace

AppConfig load_app_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("malformed config " + path + ": " + e.what());
    }

    AppConfig cfg;
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty()) return p;
        fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };

    try {
        cfg.grid_path = resolve(j.at("grid").get<std::string>());
        cfg.profile_path = resolve(j.at("profile").get<std::string>());
        if (j.contains("model_dir")) cfg.model_dir = resolve(j.at("model_dir").get<std::string>());

        if (j.contains("train_params"))
            cfg.train_params = parse_cost_params(j.at("train_params"), cfg.train_params);
        if (j.contains("eval_params"))
            cfg.eval_params = parse_cost_params(j.at("eval_params"), cfg.eval_params);
        if (j.contains("retrain_params"))
            cfg.retrain_params = parse_cost_params(j.at("retrain_params"), cfg.retrain_params);

        if (j.contains("timestep_s")) cfg.timestep_s = j.at("timestep_s").get<double>();
        if (j.contains("horizon_steps")) cfg.horizon_steps = j.at("horizon_steps").get<int>();
        if (j.contains("se_cycle_s")) cfg.se_cycle_s = j.at("se_cycle_s").get<double>();
        if (j.contains("opf_cycle_s")) cfg.opf_cycle_s = j.at("opf_cycle_s").get<double>();
        if (j.contains("regression_cycle_s"))
            cfg.regression_cycle_s = j.at("regression_cycle_s").get<double>();
        if (j.contains("transition_steps"))
            cfg.transition_steps = j.at("transition_steps").get<int>();
        if (j.contains("stale_after_s")) cfg.stale_after_s = j.at("stale_after_s").get<double>();

        if (j.contains("failure_windows")) {
            for (const auto& w : j.at("failure_windows"))
                cfg.failure_windows.push_back(
                    {w.at("start_s").get<double>(), w.at("end_s").get<double>()});
        }

        if (j.contains("case")) {
            const auto c = parse_control_case(j.at("case").get<std::string>());
            if (!c) throw ParseError("unknown case '" + j.at("case").get<std::string>() + "'");
            cfg.control_case = *c;
        }
        if (j.contains("cases")) {
            cfg.cases.clear();
            for (const auto& c : j.at("cases")) {
                const auto cc = parse_control_case(
                    c.is_number() ? std::to_string(c.get<int>()) : c.get<std::string>());
                if (!cc) throw ParseError("unknown case in cases list");
                cfg.cases.push_back(*cc);
            }
        }

        if (j.contains("learner")) {
            const auto l = parse_learner(j.at("learner").get<std::string>());
            if (!l) throw ParseError("unknown learner '" + j.at("learner").get<std::string>() + "'");
            cfg.learner = *l;
        }
        if (j.contains("nnr_k")) cfg.nnr_k = j.at("nnr_k").get<int>();
        if (j.contains("nnr_sections")) cfg.nnr_sections = j.at("nnr_sections").get<int>();
        if (j.contains("bucket_capacity")) cfg.bucket_capacity = j.at("bucket_capacity").get<int>();
        if (j.contains("retrain_bucket_capacity"))
            cfg.retrain_bucket_capacity = j.at("retrain_bucket_capacity").get<int>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<unsigned>();
        if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
    } catch (const json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }

    if (cfg.nnr_k < 1 || cfg.nnr_sections < 1 || cfg.bucket_capacity < 1 ||
        cfg.retrain_bucket_capacity < 1)
        throw ParseError("nnr_k, nnr_sections and bucket capacities must be >= 1");
    return cfg;
}

std::string model_file_path(const std::string& dir, int ctrl_index) {
    const fs::path d = dir.empty() ? fs::path(".") : fs::path(dir);
    return (d / ("models_der" + std::to_string(ctrl_index) + ".json")).string();
}

std::string training_csv_path(const std::string& dir, int ctrl_index) {
    const fs::path d = dir.empty() ? fs::path(".") : fs::path(dir);
    return (d / ("training_der" + std::to_string(ctrl_index) + ".csv")).string();
}

}  // namespace gridfall
