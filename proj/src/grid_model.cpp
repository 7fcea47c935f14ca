#include "gridfall/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

namespace gridfall {

using nlohmann::json;

std::vector<int> GridModel::controllable_ders() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < ders.size(); ++i)
        if (ders[i].controllable) out.push_back(static_cast<int>(i));
    return out;
}

bool on_lattice(double factor) {
    if (factor < -1e-9 || factor > 1.0 + 1e-9) return false;
    double scaled = factor * 20.0;
    return std::abs(scaled - std::round(scaled)) < 1e-6;
}

double quantize_down(double value) {
    // Round down to the nearest 5% step; values already on the lattice stay.
    int steps = static_cast<int>(std::floor(value * 20.0 + 1e-9));
    steps = std::clamp(steps, 0, 20);
    return steps / 20.0;
}

int lattice_pct(double factor) {
    return static_cast<int>(std::round(factor * 100.0));
}

namespace {

BusKind parse_bus_kind(const std::string& s) {
    if (s == "Slack") return BusKind::Slack;
    if (s == "PQ") return BusKind::PQ;
    throw ParseError("unknown bus kind '" + s + "'");
}

DerKind parse_der_kind(const std::string& s) {
    if (s == "PV") return DerKind::PV;
    if (s == "Wind") return DerKind::Wind;
    throw ParseError("unknown der kind '" + s + "'");
}

const char* bus_kind_name(BusKind k) { return k == BusKind::Slack ? "Slack" : "PQ"; }
const char* der_kind_name(DerKind k) { return k == DerKind::PV ? "PV" : "Wind"; }

}  // namespace

GridModel load_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open grid file: " + path);

    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("malformed grid file " + path + ": " + e.what());
    }

    GridModel grid;
    try {
        grid.s_base_mva = j.at("s_base_mva").get<double>();
        for (const auto& jb : j.at("buses")) {
            Bus b;
            b.id = jb.at("id").get<int>();
            b.kind = parse_bus_kind(jb.at("kind").get<std::string>());
            b.base_voltage_kv = jb.at("base_voltage_kv").get<double>();
            b.load_p_mw = jb.at("load_p_mw").get<double>();
            b.load_q_mvar = jb.at("load_q_mvar").get<double>();
            grid.buses.push_back(b);
        }
        for (const auto& jb : j.at("branches")) {
            Branch br;
            br.from_bus = jb.at("from_bus").get<int>();
            br.to_bus = jb.at("to_bus").get<int>();
            br.r_pu = jb.at("r_pu").get<double>();
            br.x_pu = jb.at("x_pu").get<double>();
            br.b_pu = jb.at("b_pu").get<double>();
            grid.branches.push_back(br);
        }
        for (const auto& jd : j.at("ders")) {
            Der d;
            d.bus = jd.at("bus").get<int>();
            d.kind = parse_der_kind(jd.at("kind").get<std::string>());
            d.s_max_mva = jd.at("s_max_mva").get<double>();
            d.p_max_mw = jd.at("p_max_mw").get<double>();
            d.controllable = jd.at("controllable").get<bool>();
            grid.ders.push_back(d);
        }
    } catch (const json::exception& e) {
        throw ParseError("grid file " + path + " missing field: " + e.what());
    }

    validate_grid(grid);
    return grid;
}

std::string serialize_grid(const GridModel& grid) {
    json j;
    j["s_base_mva"] = grid.s_base_mva;
    j["buses"] = json::array();
    for (const auto& b : grid.buses) {
        j["buses"].push_back({{"id", b.id},
                              {"kind", bus_kind_name(b.kind)},
                              {"base_voltage_kv", b.base_voltage_kv},
                              {"load_p_mw", b.load_p_mw},
                              {"load_q_mvar", b.load_q_mvar}});
    }
    j["branches"] = json::array();
    for (const auto& br : grid.branches) {
        j["branches"].push_back({{"from_bus", br.from_bus},
                                 {"to_bus", br.to_bus},
                                 {"r_pu", br.r_pu},
                                 {"x_pu", br.x_pu},
                                 {"b_pu", br.b_pu}});
    }
    j["ders"] = json::array();
    for (const auto& d : grid.ders) {
        j["ders"].push_back({{"bus", d.bus},
                             {"kind", der_kind_name(d.kind)},
                             {"s_max_mva", d.s_max_mva},
                             {"p_max_mw", d.p_max_mw},
                             {"controllable", d.controllable}});
    }
    return j.dump(2) + "\n";
}

void validate_grid(const GridModel& grid) {
    const int n = grid.bus_count();
    if (n < 2) throw ValidationError("grid needs at least 2 buses");
    if (grid.s_base_mva <= 0) throw ValidationError("s_base_mva must be > 0");

    int slack_count = 0;
    for (int i = 0; i < n; ++i) {
        const Bus& b = grid.buses[i];
        if (b.id != i + 1)
            throw ValidationError("bus ids must be contiguous starting at 1, got id " +
                                  std::to_string(b.id) + " at position " + std::to_string(i));
        if (b.base_voltage_kv <= 0)
            throw ValidationError("bus " + std::to_string(b.id) + ": base_voltage_kv must be > 0");
        if (b.load_p_mw < 0)
            throw ValidationError("bus " + std::to_string(b.id) + ": negative load_p_mw");
        if (b.kind == BusKind::Slack) {
            ++slack_count;
            if (b.id != 1) throw ValidationError("slack bus must be bus 1");
        }
    }
    if (slack_count != 1)
        throw ValidationError("grid must have exactly one slack bus, found " +
                              std::to_string(slack_count));

    if (grid.branches.empty()) throw ValidationError("grid has no branches");
    std::vector<std::vector<int>> adj(n);
    for (const auto& br : grid.branches) {
        if (br.from_bus == br.to_bus)
            throw ValidationError("branch connects bus " + std::to_string(br.from_bus) +
                                  " to itself");
        if (br.from_bus < 1 || br.from_bus > n || br.to_bus < 1 || br.to_bus > n)
            throw ValidationError("branch endpoint out of range: " + std::to_string(br.from_bus) +
                                  "-" + std::to_string(br.to_bus));
        if (br.r_pu < 0 || br.x_pu < 0 || br.b_pu < 0)
            throw ValidationError("branch " + std::to_string(br.from_bus) + "-" +
                                  std::to_string(br.to_bus) + ": negative impedance");
        if (br.r_pu == 0.0 && br.x_pu == 0.0)
            throw ValidationError("branch " + std::to_string(br.from_bus) + "-" +
                                  std::to_string(br.to_bus) + ": zero series impedance");
        adj[br.from_bus - 1].push_back(br.to_bus - 1);
        adj[br.to_bus - 1].push_back(br.from_bus - 1);
    }

    // connectivity from the slack
    std::vector<char> seen(n, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : adj[u])
            if (!seen[v]) {
                seen[v] = 1;
                q.push(v);
            }
    }
    for (int i = 0; i < n; ++i)
        if (!seen[i])
            throw ValidationError("bus " + std::to_string(i + 1) + " is not connected to the slack");

    for (const auto& d : grid.ders) {
        if (d.bus < 1 || d.bus > n)
            throw ValidationError("der at unknown bus " + std::to_string(d.bus));
        if (d.s_max_mva <= 0) throw ValidationError("der s_max_mva must be > 0");
        if (d.p_max_mw <= 0 || d.p_max_mw > d.s_max_mva + 1e-12)
            throw ValidationError("der p_max_mw must be in (0, s_max_mva]");
    }
}

ScaledGrid apply_scenario(const GridModel& grid, const Scenario& scenario) {
    for (double f : {scenario.load_factor, scenario.pv_factor, scenario.wind_factor}) {
        if (!on_lattice(f))
            throw std::invalid_argument("scenario factor " + std::to_string(f) +
                                        " is off the 5% lattice");
    }
    ScaledGrid sg;
    sg.grid = &grid;
    sg.scenario = scenario;
    sg.load_p_mw.reserve(grid.buses.size());
    sg.load_q_mvar.reserve(grid.buses.size());
    for (const auto& b : grid.buses) {
        sg.load_p_mw.push_back(b.load_p_mw * scenario.load_factor);
        sg.load_q_mvar.push_back(b.load_q_mvar * scenario.load_factor);
    }
    sg.der_p_avail_mw.reserve(grid.ders.size());
    for (const auto& d : grid.ders)
        sg.der_p_avail_mw.push_back(d.p_max_mw * scenario.factor_for(d.kind));
    return sg;
}

ProfileSeries load_profiles(const std::string& path, double timestep_s) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open profile file: " + path);

    ProfileSeries ps;
    ps.timestep_s = timestep_s;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("profile file is empty: " + path);
    // tolerate an optional UTF-8 BOM
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line = line.substr(3);
    if (line != "t,load,pv,wind")
        throw ParseError("profile header must be 't,load,pv,wind', got '" + line + "'");

    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<double> vals;
        while (std::getline(ss, field, ',')) {
            try {
                vals.push_back(std::stod(field));
            } catch (...) {
                throw ParseError("profile line " + std::to_string(lineno) +
                                 ": bad number '" + field + "'");
            }
        }
        if (vals.size() != 4)
            throw ParseError("profile line " + std::to_string(lineno) + ": expected 4 columns, got " +
                             std::to_string(vals.size()));
        for (int c = 1; c < 4; ++c) {
            if (vals[c] < 0.0 || vals[c] > 1.0 + 1e-9)
                throw ParseError("profile line " + std::to_string(lineno) +
                                 ": value out of [0,1]: " + std::to_string(vals[c]));
        }
        ps.load.push_back(quantize_down(vals[1]));
        ps.pv.push_back(quantize_down(vals[2]));
        ps.wind.push_back(quantize_down(vals[3]));
    }
    if (ps.load.empty()) throw ParseError("profile file has no data rows: " + path);
    return ps;
}

}  // namespace gridfall
