#include "gridfall/opf.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "gridfall/capability.hpp"

namespace gridfall {

double voltage_penalty(double v_pu, double deadband_pu) {
    const double dev = std::abs(v_pu - 1.0);
    if (dev <= deadband_pu) return 0.0;
    const double x = dev - deadband_pu;
    return x * x * x;
}

double total_cost(const GridModel& grid, const PfSolution& pf, const Dispatch& dispatch,
                  const std::vector<double>& avail_mw, const CostParams& params) {
    if (!pf.converged) throw std::invalid_argument("total_cost: power flow did not converge");

    double cv = 0.0;
    for (double v : pf.v_pu) cv += voltage_penalty(v, params.deadband_pu);

    double cq = 0.0, cp = 0.0;
    for (std::size_t d = 0; d < grid.ders.size(); ++d) {
        if (!grid.ders[d].controllable) continue;
        const double s = grid.ders[d].s_max_mva;
        const double qf = dispatch.q_mvar[d] / s;
        const double curt = (avail_mw[d] - dispatch.p_mw[d]) / s;
        cq += qf * qf;
        cp += curt * curt;
    }
    return params.c_v * cv + params.c_q * cq + params.c_p * cp;
}

Dispatch full_feed_dispatch(const ScaledGrid& grid) {
    Dispatch d = Dispatch::zeros(grid.grid->ders.size());
    d.p_mw = grid.der_p_avail_mw;
    return d;
}

namespace {

// Box coordinates for one controllable DER: u_p in [0,1] scales available P,
// u_q in [-1,1] scales the reactive limit at the chosen P. The feasible
// (P, Q) region maps onto the box exactly.
struct BoxMap {
    const ScaledGrid& grid;
    std::vector<int> ctrl;

    explicit BoxMap(const ScaledGrid& g) : grid(g), ctrl(g.grid->controllable_ders()) {}

    int dims() const { return static_cast<int>(ctrl.size()) * 2; }

    Dispatch to_dispatch(const std::vector<double>& u) const {
        Dispatch d = Dispatch::zeros(grid.grid->ders.size());
        for (std::size_t i = 0; i < grid.grid->ders.size(); ++i) {
            if (!grid.grid->ders[i].controllable) {
                d.p_mw[i] = grid.der_p_avail_mw[i];  // fixed cos(phi)=1 feed-in
                d.q_mvar[i] = 0.0;
            }
        }
        for (std::size_t k = 0; k < ctrl.size(); ++k) {
            const int di = ctrl[k];
            const Der& der = grid.grid->ders[di];
            const double p = u[2 * k] * grid.der_p_avail_mw[di];
            const double qlim = q_limit(p, der.s_max_mva);
            d.p_mw[di] = p;
            d.q_mvar[di] = u[2 * k + 1] * qlim;
        }
        return d;
    }

    std::vector<double> from_dispatch(const Dispatch& d) const {
        std::vector<double> u(dims(), 0.0);
        for (std::size_t k = 0; k < ctrl.size(); ++k) {
            const int di = ctrl[k];
            const Der& der = grid.grid->ders[di];
            const double avail = grid.der_p_avail_mw[di];
            const double p = avail > 0 ? std::clamp(d.p_mw[di], 0.0, avail) : 0.0;
            u[2 * k] = avail > 0 ? p / avail : 0.0;
            const double qlim = q_limit(p, der.s_max_mva);
            u[2 * k + 1] = qlim > 0 ? std::clamp(d.q_mvar[di] / qlim, -1.0, 1.0) : 0.0;
        }
        return u;
    }

    void clamp(std::vector<double>& u) const {
        for (std::size_t k = 0; k < ctrl.size(); ++k) {
            u[2 * k] = std::clamp(u[2 * k], 0.0, 1.0);
            u[2 * k + 1] = std::clamp(u[2 * k + 1], -1.0, 1.0);
        }
    }
};

}  // namespace

OpfResult solve_opf(const ScaledGrid& grid, const CostParams& params, const Dispatch& init) {
    const GridModel& g = *grid.grid;
    BoxMap box(grid);
    if (box.ctrl.empty())
        throw std::invalid_argument("solve_opf: grid has no controllable DER");

    const Ybus ybus = build_ybus(g);
    PfOptions pf_opts;
    pf_opts.ybus = &ybus;

    int evals = 0;
    PfSolution best_pf;
    auto objective = [&](const std::vector<double>& u, PfSolution* pf_out) {
        ++evals;
        const Dispatch d = box.to_dispatch(u);
        const PfSolution pf = solve_pf(grid, d, pf_opts);
        if (!pf.converged) return std::numeric_limits<double>::infinity();
        if (pf_out) *pf_out = pf;
        return total_cost(g, pf, d, grid.der_p_avail_mw, params);
    };

    // Deterministic seed set: full feed-in with a few Q postures, half
    // feed-in, and the caller's init.
    std::vector<std::vector<double>> seeds;
    const int nd = box.dims();
    auto uniform_seed = [&](double up, double uq) {
        std::vector<double> u(nd);
        for (int k = 0; k < nd / 2; ++k) {
            u[2 * k] = up;
            u[2 * k + 1] = uq;
        }
        return u;
    };
    seeds.push_back(uniform_seed(1.0, 0.0));
    seeds.push_back(uniform_seed(1.0, 0.5));
    seeds.push_back(uniform_seed(1.0, -0.5));
    seeds.push_back(uniform_seed(0.5, 0.0));
    seeds.push_back(uniform_seed(0.5, 0.5));
    seeds.push_back(uniform_seed(0.5, -0.5));
    seeds.push_back(box.from_dispatch(init));

    std::vector<double> u_best;
    double f_best = std::numeric_limits<double>::infinity();
    for (auto& s : seeds) {
        box.clamp(s);
        const double f = objective(s, nullptr);
        if (f < f_best) {
            f_best = f;
            u_best = s;
        }
    }

    OpfResult res;
    res.scenario = grid.scenario;
    if (!std::isfinite(f_best)) {
        res.converged = false;
        res.evaluations = evals;
        res.dispatch = box.to_dispatch(uniform_seed(1.0, 0.0));
        res.cost = std::numeric_limits<double>::infinity();
        return res;
    }

    // Compass pattern search on the box, greedy accept, halving steps.
    double h = 0.25;
    const double h_min = 5e-4;
    while (h >= h_min) {
        bool improved = false;
        for (int i = 0; i < nd; ++i) {
            for (double sign : {+1.0, -1.0}) {
                std::vector<double> cand = u_best;
                cand[i] += sign * h;
                box.clamp(cand);
                if (cand[i] == u_best[i]) continue;
                const double f = objective(cand, nullptr);
                if (f < f_best) {
                    f_best = f;
                    u_best = cand;
                    improved = true;
                }
            }
        }
        if (!improved) h *= 0.5;
    }

    // Canonical Q under cost ties: prefer |Q| -> 0, then the positive sign.
    for (int k = 0; k < nd / 2; ++k) {
        const int qi = 2 * k + 1;
        if (u_best[qi] == 0.0) continue;
        std::vector<double> cand = u_best;
        cand[qi] = 0.0;
        double f = objective(cand, nullptr);
        if (f <= f_best) {
            f_best = f;
            u_best = cand;
            continue;
        }
        if (u_best[qi] < 0.0) {
            cand = u_best;
            cand[qi] = -u_best[qi];
            f = objective(cand, nullptr);
            if (f <= f_best) {
                f_best = f;
                u_best = cand;
            }
        }
    }

    res.dispatch = box.to_dispatch(u_best);
    res.cost = objective(u_best, &best_pf);
    res.pf = best_pf;
    res.converged = best_pf.converged;
    res.evaluations = evals;
    for (std::size_t k = 0; k < box.ctrl.size(); ++k) {
        const int di = box.ctrl[k];
        const double s = g.ders[di].s_max_mva;
        res.setpoints.push_back({di, 100.0 * res.dispatch.p_mw[di] / s,
                                 100.0 * res.dispatch.q_mvar[di] / s});
    }
    return res;
}

SweepResult run_sweep(const GridModel& grid, const CostParams& params, int jobs,
                      const std::function<void(int, int)>& progress) {
    const int total = kLatticeSteps * kLatticeSteps * kLatticeSteps;
    SweepResult out;
    out.results.resize(total);

    std::atomic<int> next{0};
    std::atomic<int> done{0};
    auto worker = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= total) return;
            const int il = idx / (kLatticeSteps * kLatticeSteps);
            const int ipv = (idx / kLatticeSteps) % kLatticeSteps;
            const int iw = idx % kLatticeSteps;
            const Scenario sc{il * 0.05, ipv * 0.05, iw * 0.05};
            const ScaledGrid sg = apply_scenario(grid, sc);
            out.results[idx] = solve_opf(sg, params, full_feed_dispatch(sg));
            done.fetch_add(1);
        }
    };

    jobs = std::max(1, jobs);
    if (jobs == 1) {
        worker();
        if (progress) progress(total, total);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        if (progress) {
            while (done.load() < total) {
                progress(done.load(), total);
                std::this_thread::sleep_for(std::chrono::milliseconds(500));
            }
            progress(total, total);
        }
        for (auto& t : pool) t.join();
    }

    const auto ctrl = grid.controllable_ders();
    out.training.resize(ctrl.size());
    out.report.total = total;
    for (int idx = 0; idx < total; ++idx) {
        const OpfResult& r = out.results[idx];
        if (r.converged)
            ++out.report.converged;
        else
            out.report.failed_indices.push_back(idx);
        for (std::size_t k = 0; k < ctrl.size(); ++k) {
            TrainingRow row;
            row.scenario = r.scenario;
            row.converged = r.converged;
            row.cost = r.cost;
            if (r.converged) {
                const int bus = grid.ders[ctrl[k]].bus - 1;
                row.v_pu = r.pf.v_pu[bus];
                row.theta_rad = r.pf.theta_rad[bus];
                row.p_sp_pct = r.setpoints[k].p_pct;
                row.q_sp_pct = r.setpoints[k].q_pct;
            }
            out.training[k].push_back(row);
        }
    }
    return out;
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_training_csv(const std::string& path, const std::vector<TrainingRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "load_f,pv_f,wind_f,v_pu,theta_rad,p_sp_pct,q_sp_pct,cost,converged\n";
    for (const auto& r : rows) {
        out << fmt_double(r.scenario.load_factor) << ',' << fmt_double(r.scenario.pv_factor)
            << ',' << fmt_double(r.scenario.wind_factor) << ',' << fmt_double(r.v_pu) << ','
            << fmt_double(r.theta_rad) << ',' << fmt_double(r.p_sp_pct) << ','
            << fmt_double(r.q_sp_pct) << ',' << fmt_double(r.cost) << ','
            << (r.converged ? 1 : 0) << '\n';
    }
}

std::vector<TrainingRow> read_training_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "load_f,pv_f,wind_f,v_pu,theta_rad,p_sp_pct,q_sp_pct,cost,converged")
        throw ParseError("bad training csv header in " + path);
    std::vector<TrainingRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TrainingRow r;
        double conv = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf",
                        &r.scenario.load_factor, &r.scenario.pv_factor, &r.scenario.wind_factor,
                        &r.v_pu, &r.theta_rad, &r.p_sp_pct, &r.q_sp_pct, &r.cost, &conv) != 9)
            throw ParseError("bad training csv row in " + path + ": " + line);
        r.converged = conv != 0;
        rows.push_back(r);
    }
    return rows;
}

void write_sweep_report(const std::string& path, const SweepReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "{\n  \"scenarios\": " << report.total << ",\n  \"converged\": " << report.converged
        << ",\n  \"failed\": " << (report.total - report.converged) << ",\n  \"failed_indices\": [";
    for (std::size_t i = 0; i < report.failed_indices.size(); ++i) {
        if (i) out << ", ";
        out << report.failed_indices[i];
    }
    out << "]\n}\n";
}

}  // namespace gridfall
