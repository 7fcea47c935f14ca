#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridfall {

/// Raised when an input file cannot be parsed at all.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a parsed model violates a structural invariant.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class BusKind { Slack, PQ };
enum class DerKind { PV, Wind };

struct Bus {
    int id = 0;                 // 1-based, contiguous
    BusKind kind = BusKind::PQ;
    double base_voltage_kv = 0.0;
    double load_p_mw = 0.0;
    double load_q_mvar = 0.0;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r_pu = 0.0;  // series resistance, system base
    double x_pu = 0.0;  // series reactance
    double b_pu = 0.0;  // total shunt susceptance (split half per end)
};

struct Der {
    int bus = 0;
    DerKind kind = DerKind::PV;
    double s_max_mva = 0.0;
    double p_max_mw = 0.0;
    bool controllable = false;
};

struct GridModel {
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Der> ders;
    double s_base_mva = 1.0;

    int bus_count() const { return static_cast<int>(buses.size()); }
    std::vector<int> controllable_ders() const;  // indices into ders
};

/// One operating situation: scaling factors on the 5% lattice {0.00..1.00}.
struct Scenario {
    double load_factor = 1.0;
    double pv_factor = 1.0;
    double wind_factor = 1.0;

    double factor_for(DerKind k) const {
        return k == DerKind::PV ? pv_factor : wind_factor;
    }
    bool operator==(const Scenario&) const = default;
};

/// Grid with a scenario applied: loads scaled, per-DER available P fixed.
/// Topology and impedances are shared with the source model by value copy;
/// immutable after construction.
struct ScaledGrid {
    const GridModel* grid = nullptr;
    Scenario scenario;
    std::vector<double> load_p_mw;      // per bus
    std::vector<double> load_q_mvar;    // per bus
    std::vector<double> der_p_avail_mw; // per der, P'_max = s * P_max
};

struct ProfileSeries {
    double timestep_s = 30.0;
    std::vector<double> load;
    std::vector<double> pv;
    std::vector<double> wind;

    std::size_t size() const { return load.size(); }
    Scenario scenario_at(std::size_t i) const {
        return Scenario{load[i], pv[i], wind[i]};
    }
};

// 5% scenario lattice helpers. Factors live on {0.00, 0.05, ..., 1.00}.
inline constexpr int kLatticeSteps = 21;
bool on_lattice(double factor);
double quantize_down(double value);           // round down to lattice, never up
int lattice_pct(double factor);               // 0.35 -> 35

GridModel load_grid(const std::string& path);
std::string serialize_grid(const GridModel& grid);
void validate_grid(const GridModel& grid);    // throws ValidationError

ScaledGrid apply_scenario(const GridModel& grid, const Scenario& scenario);

ProfileSeries load_profiles(const std::string& path, double timestep_s = 30.0);

}  // namespace gridfall
