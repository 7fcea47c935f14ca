#pragma once

#include <string>
#include <vector>

#include "gridfall/cosim.hpp"
#include "gridfall/regression.hpp"

namespace gridfall {

/// Everything a CLI run needs, read from one JSON file. Relative paths are
/// resolved against the config file's directory.
struct AppConfig {
    std::string grid_path;
    std::string profile_path;
    std::string model_dir;

    CostParams train_params{2e3, 1e4, 1e6, 0.01};
    CostParams eval_params{2e3, 1e4, 1e6, 0.0};
    CostParams retrain_params{2e3, 5e4, 1e5, 0.01};  // parameter change to learn

    double timestep_s = 30.0;
    int horizon_steps = 0;
    double se_cycle_s = 10.0;
    double opf_cycle_s = 30.0;
    double regression_cycle_s = 30.0;
    int transition_steps = 5;
    double stale_after_s = 60.0;
    std::vector<FailureWindow> failure_windows;

    ControlCase control_case = ControlCase::CentralOpf;
    std::vector<ControlCase> cases{ControlCase::NoControl, ControlCase::CentralOpf,
                                   ControlCase::OpfPlusRegression, ControlCase::OpfPlusQv};

    Learner learner = Learner::Nnr;
    int nnr_k = 20;
    int nnr_sections = 100;
    int bucket_capacity = TrainingStore::kDefaultCapacity;
    /// Dataset size for the offline-learning experiment's stores; small
    /// enough that one online batch visibly re-shapes the neighbourhoods.
    int retrain_bucket_capacity = 150;

    unsigned seed = 42;
    int jobs = 0;  // 0 = hardware concurrency

    SimConfig sim_config() const;
    ModelSetConfig model_config() const;
};

AppConfig load_app_config(const std::string& path);

std::string model_file_path(const std::string& dir, int ctrl_index);
std::string training_csv_path(const std::string& dir, int ctrl_index);

}  // namespace gridfall
