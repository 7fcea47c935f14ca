#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "gridfall/grid_model.hpp"

namespace gftest {

inline std::string write_temp(const std::string& name, const std::string& content) {
    const auto dir = std::filesystem::temp_directory_path() / "gridfall_tests";
    std::filesystem::create_directories(dir);
    const auto path = dir / name;
    std::ofstream(path) << content;
    return path.string();
}

/// Slack + one PQ bus joined by a single branch; optional load and DER at
/// bus 2. The analytic 2-bus solution makes this the main solver oracle.
inline gridfall::GridModel two_bus_grid(double r, double x, double load_p = 0.0,
                                        double load_q = 0.0, bool with_der = false,
                                        double s_max = 10.0) {
    gridfall::GridModel g;
    g.s_base_mva = 1.0;
    g.buses.push_back({1, gridfall::BusKind::Slack, 20.0, 0.0, 0.0});
    g.buses.push_back({2, gridfall::BusKind::PQ, 20.0, load_p, load_q});
    g.branches.push_back({1, 2, r, x, 0.0});
    if (with_der)
        g.ders.push_back({2, gridfall::DerKind::Wind, s_max, s_max, true});
    return g;
}

/// Small radial feeder: slack - 2 - 3 - 4, loads on 3 and 4, controllable
/// wind DER on 4 and a fixed PV on 3. Enough structure for OPF tests.
inline gridfall::GridModel four_bus_feeder() {
    gridfall::GridModel g;
    g.s_base_mva = 1.0;
    g.buses.push_back({1, gridfall::BusKind::Slack, 20.0, 0.0, 0.0});
    g.buses.push_back({2, gridfall::BusKind::PQ, 20.0, 0.0, 0.0});
    g.buses.push_back({3, gridfall::BusKind::PQ, 20.0, 1.2, 0.4});
    g.buses.push_back({4, gridfall::BusKind::PQ, 20.0, 0.8, 0.25});
    g.branches.push_back({1, 2, 0.004, 0.016, 0.0});
    g.branches.push_back({2, 3, 0.006, 0.024, 0.0});
    g.branches.push_back({3, 4, 0.008, 0.032, 0.0});
    g.ders.push_back({3, gridfall::DerKind::PV, 0.6, 0.6, false});
    g.ders.push_back({4, gridfall::DerKind::Wind, 4.0, 4.0, true});
    return g;
}

}  // namespace gftest
