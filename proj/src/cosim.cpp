#include "gridfall/cosim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace gridfall {

const char* control_case_name(ControlCase c) {
    switch (c) {
        case ControlCase::NoControl: return "no-control";
        case ControlCase::CentralOpf: return "central-opf";
        case ControlCase::OpfPlusRegression: return "regression";
        case ControlCase::OpfPlusQv: return "qv";
    }
    return "?";
}

std::optional<ControlCase> parse_control_case(const std::string& s) {
    if (s == "no-control" || s == "1") return ControlCase::NoControl;
    if (s == "central-opf" || s == "2") return ControlCase::CentralOpf;
    if (s == "regression" || s == "3") return ControlCase::OpfPlusRegression;
    if (s == "qv" || s == "4") return ControlCase::OpfPlusQv;
    return std::nullopt;
}

int control_case_number(ControlCase c) {
    switch (c) {
        case ControlCase::NoControl: return 1;
        case ControlCase::CentralOpf: return 2;
        case ControlCase::OpfPlusRegression: return 3;
        case ControlCase::OpfPlusQv: return 4;
    }
    return 0;
}

void MessageBus::add_failure_window(const FailureWindow& w) { windows_.push_back(w); }

bool MessageBus::in_failure(double t) const {
    for (const auto& w : windows_)
        if (t >= w.start_s && t < w.end_s) return true;
    return false;
}

bool MessageBus::deliver(double t) {
    if (in_failure(t)) {
        ++dropped_;
        return false;
    }
    ++delivered_;
    return true;
}

void inject_failure(MessageBus& bus, const FailureWindow& window) {
    if (window.end_s < window.start_s)
        throw std::invalid_argument("failure window ends before it starts");
    bus.add_failure_window(window);
}

void SimConfig::validate(std::size_t profile_len) const {
    if (timestep_s <= 0) throw std::invalid_argument("timestep_s must be > 0");
    const int steps = horizon_steps > 0 ? horizon_steps : static_cast<int>(profile_len);
    if (steps <= 0 || steps > static_cast<int>(profile_len))
        throw std::invalid_argument("horizon exceeds the profile length");
    const double horizon_s = steps * timestep_s;
    std::vector<FailureWindow> ws = failure_windows;
    std::sort(ws.begin(), ws.end(),
              [](const FailureWindow& a, const FailureWindow& b) { return a.start_s < b.start_s; });
    for (std::size_t i = 0; i < ws.size(); ++i) {
        if (ws[i].end_s < ws[i].start_s)
            throw std::invalid_argument("failure window ends before it starts");
        if (ws[i].start_s < 0 || ws[i].end_s > horizon_s)
            throw std::invalid_argument("failure window outside the horizon");
        if (i > 0 && ws[i].start_s < ws[i - 1].end_s)
            throw std::invalid_argument("failure windows overlap");
    }
}

namespace {

// Rolling voltage measurements; the controller and field devices read the
// mean over the trailing SE window, or the latest snapshot when the window
// is shorter than one step.
class MeasurementBuffer {
  public:
    explicit MeasurementBuffer(double window_s) : window_s_(window_s) {}

    void push(double t, const std::vector<double>& v) {
        history_.emplace_back(t, v);
        while (history_.size() > 64) history_.pop_front();
    }

    std::vector<double> mean_at(double now) const {
        std::vector<double> acc;
        int count = 0;
        for (const auto& [t, v] : history_) {
            if (t < now - window_s_ || t >= now) continue;
            if (acc.empty()) acc.assign(v.size(), 0.0);
            for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
            ++count;
        }
        if (count == 0) {
            if (history_.empty()) return {};
            return history_.back().second;
        }
        for (double& x : acc) x /= count;
        return acc;
    }

  private:
    double window_s_;
    std::deque<std::pair<double, std::vector<double>>> history_;
};

bool on_cycle(double t, double cycle_s, double dt) {
    if (cycle_s <= dt) return true;  // cycle at least once per step
    const double k = t / cycle_s;
    return std::abs(k - std::round(k)) * cycle_s < dt * 0.5;
}

struct QvState {
    double last_msg_time = 0.0;
    double cmd_p = 0.0;
    double cmd_q = 0.0;
};

}  // namespace

RunResult run_simulation(const SimConfig& cfg, const SimInputs& in) {
    const GridModel& grid = *in.grid;
    const ProfileSeries& prof = *in.profiles;
    cfg.validate(prof.size());

    const int steps = cfg.horizon_steps > 0 ? cfg.horizon_steps : static_cast<int>(prof.size());
    const double dt = cfg.timestep_s;
    const auto ctrl = grid.controllable_ders();
    const Ybus ybus = build_ybus(grid);

    const bool uses_opf = cfg.control_case != ControlCase::NoControl;
    const bool fallback_case = cfg.control_case == ControlCase::OpfPlusRegression ||
                               cfg.control_case == ControlCase::OpfPlusQv;

    MessageBus bus;
    if (fallback_case)
        for (const auto& w : cfg.failure_windows) inject_failure(bus, w);

    FieldIedOptions ied_opts;
    ied_opts.stale_after_s = cfg.stale_after_s;
    ied_opts.transition_steps = cfg.transition_steps;
    ied_opts.ingest_setpoints = in.stores != nullptr;

    std::vector<FieldIed> ieds;
    std::vector<QvState> qv_states(ctrl.size());
    for (std::size_t k = 0; k < ctrl.size(); ++k) {
        FieldIed ied(static_cast<int>(ctrl[k]), ied_opts);
        if (k < in.models.size() && in.models[k]) ied.attach_models(in.models[k]);
        if (in.stores) ied.attach_store(&(*in.stores)[k]);
        ieds.push_back(std::move(ied));
    }

    auto avail_pct_of_smax = [&](const ScaledGrid& sg, int der_index) {
        const Der& d = grid.ders[der_index];
        return 100.0 * sg.der_p_avail_mw[der_index] / d.s_max_mva;
    };

    RunResult out;
    out.report.control_case = cfg.control_case;
    out.decisions.resize(ctrl.size());

    MeasurementBuffer meas(cfg.se_cycle_s);
    PfSolution prev_pf;

    // Bootstrap physics: everything at full available feed-in, unity pf.
    {
        const ScaledGrid sg0 = apply_scenario(grid, prof.scenario_at(0));
        Dispatch d0 = full_feed_dispatch(sg0);
        PfOptions po;
        po.ybus = &ybus;
        PfSolution pf0 = solve_pf(sg0, d0, po);
        if (!pf0.converged) throw PhysicsDivergence("bootstrap power flow diverged");
        meas.push(-dt, pf0.v_pu);
        prev_pf = pf0;
        for (std::size_t k = 0; k < ctrl.size(); ++k) {
            const double p0 = avail_pct_of_smax(sg0, ctrl[k]);
            ieds[k].set_initial_command(p0, 0.0);
            qv_states[k] = {0.0, p0, 0.0};
        }
    }

    double cost_sum = 0.0;
    for (int step = 0; step < steps; ++step) {
        const double t = step * dt;
        const Scenario sc = prof.scenario_at(step);
        const ScaledGrid sg = apply_scenario(grid, sc);
        const std::vector<double> v_meas = meas.mean_at(t);
        const bool comm_ok = !bus.in_failure(t);

        // Controller tick: central OPF and broadcast.
        std::vector<SetpointMessage> outbox(ctrl.size());
        std::vector<bool> delivered(ctrl.size(), false);
        if (uses_opf && on_cycle(t, cfg.opf_cycle_s, dt)) {
            const OpfResult opf = solve_opf(sg, cfg.train_params, full_feed_dispatch(sg));
            if (opf.converged) {
                for (std::size_t k = 0; k < ctrl.size(); ++k) {
                    SetpointMessage m;
                    m.der_id = ctrl[k];
                    m.p_sp_pct = opf.setpoints[k].p_pct;
                    m.q_sp_pct = opf.setpoints[k].q_pct;
                    m.operating_point_pct =
                        lattice_pct(sc.factor_for(grid.ders[ctrl[k]].kind));
                    m.timestamp = t;
                    outbox[k] = m;
                    delivered[k] = bus.deliver(t);
                }
            }
        }

        // Field tick per controllable DER.
        StepRecord rec;
        rec.t = t;
        rec.scenario = sc;
        rec.comm_ok = comm_ok;
        for (std::size_t k = 0; k < ctrl.size(); ++k) {
            const int di = ctrl[k];
            const int bus_idx = grid.ders[di].bus - 1;
            const double v = bus_idx < static_cast<int>(v_meas.size()) ? v_meas[bus_idx] : 1.0;
            const double avail_pct = avail_pct_of_smax(sg, di);
            const int op = lattice_pct(sc.factor_for(grid.ders[di].kind));

            ControlDecision dec;
            switch (cfg.control_case) {
                case ControlCase::NoControl:
                    dec = fixed_pf_control(avail_pct);
                    break;
                case ControlCase::CentralOpf:
                case ControlCase::OpfPlusRegression: {
                    FieldIed& ied = ieds[k];
                    ied.observe_voltage(v);
                    if (delivered[k])
                        dec = ied.process_message(outbox[k], t);
                    else if (on_cycle(t, cfg.regression_cycle_s, dt))
                        dec = ied.control_tick(v, op, t);
                    else
                        dec = ied.hold();
                    break;
                }
                case ControlCase::OpfPlusQv: {
                    QvState& qs = qv_states[k];
                    if (delivered[k]) {
                        qs.last_msg_time = t;
                        std::tie(qs.cmd_p, qs.cmd_q) =
                            limit_capability(outbox[k].p_sp_pct, outbox[k].q_sp_pct);
                        dec.p_cmd_pct = qs.cmd_p;
                        dec.q_cmd_pct = qs.cmd_q;
                        dec.mode = IedMode::Remote;
                        dec.reason = "remote";
                    } else if (!detect_failure(qs.last_msg_time, t, cfg.stale_after_s)) {
                        dec.p_cmd_pct = qs.cmd_p;
                        dec.q_cmd_pct = qs.cmd_q;
                        dec.mode = IedMode::Remote;
                        dec.reason = "hold";
                    } else {
                        dec = qv_control(v, avail_pct);
                        qs.cmd_p = dec.p_cmd_pct;
                        qs.cmd_q = dec.q_cmd_pct;
                    }
                    break;
                }
            }

            // The actual infeed can never exceed the momentary availability.
            const double p_capped = std::min(dec.p_cmd_pct, avail_pct);
            std::tie(dec.p_cmd_pct, dec.q_cmd_pct) = limit_capability(p_capped, dec.q_cmd_pct);

            rec.p_cmd_pct.push_back(dec.p_cmd_pct);
            rec.q_cmd_pct.push_back(dec.q_cmd_pct);
            rec.modes.push_back(dec.mode);
            out.decisions[k].push_back(
                {t, di, dec.mode, dec.p_cmd_pct, dec.q_cmd_pct, v, dec.reason});
        }

        // Physics: commanded dispatch, non-controllable DERs at P'_max.
        Dispatch dispatch = full_feed_dispatch(sg);
        for (std::size_t k = 0; k < ctrl.size(); ++k) {
            const int di = ctrl[k];
            dispatch.p_mw[di] = rec.p_cmd_pct[k] / 100.0 * grid.ders[di].s_max_mva;
            dispatch.q_mvar[di] = rec.q_cmd_pct[k] / 100.0 * grid.ders[di].s_max_mva;
        }
        PfOptions po;
        po.ybus = &ybus;
        po.warm_start = &prev_pf;
        PfSolution pf = solve_pf(sg, dispatch, po);
        if (!pf.converged) {
            PfOptions flat;
            flat.ybus = &ybus;
            pf = solve_pf(sg, dispatch, flat);
        }
        if (!pf.converged)
            throw PhysicsDivergence("power flow diverged at t=" + std::to_string(t) + " s");

        // conservation: slack generation balances loads + losses - DER infeed
        {
            std::vector<std::complex<double>> vph(grid.bus_count());
            for (int i = 0; i < grid.bus_count(); ++i)
                vph[i] = std::polar(pf.v_pu[i], pf.theta_rad[i]);
            double losses = 0.0;
            for (const auto& br : grid.branches) {
                const auto zinv = 1.0 / std::complex<double>(br.r_pu, br.x_pu);
                losses += std::norm((vph[br.from_bus - 1] - vph[br.to_bus - 1]) * zinv) * br.r_pu;
            }
            double load_sum = 0.0, gen_sum = 0.0;
            for (int i = 0; i < grid.bus_count(); ++i) load_sum += sg.load_p_mw[i];
            for (double p : dispatch.p_mw) gen_sum += p;
            const double err =
                std::abs(pf.slack_p_pu - (load_sum - gen_sum + losses) / grid.s_base_mva);
            if (err > 1e-6)
                throw PhysicsDivergence("power balance violated at t=" + std::to_string(t) +
                                        " s (residual " + std::to_string(err) + " pu)");
        }

        rec.v_pu = pf.v_pu;
        rec.cost = total_cost(grid, pf, dispatch, sg.der_p_avail_mw, cfg.eval_params);
        cost_sum += rec.cost;
        for (double v : pf.v_pu)
            if (v < 0.95 || v > 1.05) {
                ++out.report.violations;
                break;
            }

        meas.push(t, pf.v_pu);
        prev_pf = pf;
        out.steps.push_back(std::move(rec));
    }

    out.report.steps = steps;
    out.report.mean_cost = cost_sum / steps;
    out.report.messages_delivered = bus.delivered();
    out.report.messages_dropped = bus.dropped();
    return out;
}

CaseComparison compare_cases(const SimConfig& base, const SimInputs& in,
                             const std::vector<ControlCase>& cases) {
    CaseComparison cmp;
    cmp.cases = cases;
    for (ControlCase c : cases) {
        SimConfig cfg = base;
        cfg.control_case = c;
        cmp.reports.push_back(run_simulation(cfg, in).report);
    }
    auto mean_of = [&](ControlCase c) -> double {
        for (std::size_t i = 0; i < cmp.cases.size(); ++i)
            if (cmp.cases[i] == c) return cmp.reports[i].mean_cost;
        return std::numeric_limits<double>::quiet_NaN();
    };
    const double m1 = mean_of(ControlCase::NoControl);
    const double m2 = mean_of(ControlCase::CentralOpf);
    for (const auto& r : cmp.reports) {
        cmp.diff_to_case1_pct.push_back(100.0 * (r.mean_cost - m1) / m1);
        cmp.diff_to_case2_pct.push_back(100.0 * (r.mean_cost - m2) / m2);
    }
    return cmp;
}

RetrainingOutcome retraining_experiment(const SimConfig& base, const SimInputs& in,
                                        const CostParams& new_params,
                                        std::vector<TrainingStore> stores,
                                        const ModelSetConfig& model_cfg) {
    RetrainingOutcome out;

    // Phase 1: central OPF runs with the new cost parameters while the
    // field IEDs ingest the received setpoints into their datasets. The
    // phases are scored with the exact cost function the new OPF
    // optimizes, dead-band included, so the central run is the reference
    // optimum the fallbacks are measured against.
    SimConfig ingest_cfg = base;
    ingest_cfg.control_case = ControlCase::CentralOpf;
    ingest_cfg.train_params = new_params;
    ingest_cfg.eval_params = new_params;
    SimInputs ingest_in = in;
    ingest_in.stores = &stores;
    const RunResult phase1 = run_simulation(ingest_cfg, ingest_in);
    out.central = phase1.report;

    // Phase 2: retrain from the updated buckets.
    const double horizon_s =
        (base.horizon_steps > 0 ? base.horizon_steps : static_cast<int>(in.profiles->size())) *
        base.timestep_s;
    std::vector<std::shared_ptr<const RegressionModelSet>> retrained;
    for (std::size_t k = 0; k < stores.size(); ++k) {
        const int prev_version = (k < in.models.size() && in.models[k]) ? in.models[k]->version : 0;
        RegressionModelSet set = retrain(stores[k], model_cfg, prev_version, horizon_s);
        out.retrained_sets.push_back(set);
        retrained.push_back(std::make_shared<RegressionModelSet>(std::move(set)));
    }

    // Phase 3: stale vs retrained fallback against the new central OPF.
    SimConfig eval_cfg = ingest_cfg;
    eval_cfg.control_case = ControlCase::OpfPlusRegression;

    SimInputs stale_in = in;
    stale_in.stores = nullptr;
    out.stale_fallback = run_simulation(eval_cfg, stale_in).report;

    SimInputs fresh_in = in;
    fresh_in.stores = nullptr;
    fresh_in.models = retrained;
    out.retrained_fallback = run_simulation(eval_cfg, fresh_in).report;

    out.stale_gap_pct =
        100.0 * (out.stale_fallback.mean_cost - out.central.mean_cost) / out.central.mean_cost;
    out.retrained_gap_pct =
        100.0 * (out.retrained_fallback.mean_cost - out.central.mean_cost) / out.central.mean_cost;
    return out;
}

// ---------------------------------------------------------------------------
// Output files

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

void write_step_records_csv(const std::string& path, const GridModel& grid,
                            const std::vector<StepRecord>& steps) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    const auto ctrl = grid.controllable_ders();
    out << "t,load_f,pv_f,wind_f,cost,comm_ok";
    for (int b = 1; b <= grid.bus_count(); ++b) out << ",v" << b;
    for (int di : ctrl)
        out << ",p_der" << di << ",q_der" << di << ",mode_der" << di;
    out << "\n";
    for (const auto& s : steps) {
        out << fmt(s.t) << ',' << fmt(s.scenario.load_factor) << ',' << fmt(s.scenario.pv_factor)
            << ',' << fmt(s.scenario.wind_factor) << ',' << fmt(s.cost) << ','
            << (s.comm_ok ? 1 : 0);
        for (double v : s.v_pu) out << ',' << fmt(v);
        for (std::size_t k = 0; k < s.p_cmd_pct.size(); ++k)
            out << ',' << fmt(s.p_cmd_pct[k]) << ',' << fmt(s.q_cmd_pct[k]) << ','
                << mode_name(s.modes[k]);
        out << '\n';
    }
}

void write_decision_log_csv(const std::string& path, const std::vector<DecisionRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "t,der_id,mode,p_cmd,q_cmd,v_pu,reason\n";
    for (const auto& r : rows)
        out << fmt(r.t) << ',' << r.der_index << ',' << mode_name(r.mode) << ',' << fmt(r.p_cmd_pct)
            << ',' << fmt(r.q_cmd_pct) << ',' << fmt(r.v_pu) << ',' << r.reason << '\n';
}

std::vector<DecisionRow> read_decision_log_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::getline(in, line);
    std::vector<DecisionRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() != 7) throw ParseError("bad decision row: " + line);
        DecisionRow r;
        r.t = std::stod(f[0]);
        r.der_index = std::stoi(f[1]);
        if (f[2] == "Remote") r.mode = IedMode::Remote;
        else if (f[2] == "Transition") r.mode = IedMode::Transition;
        else if (f[2] == "Fallback") r.mode = IedMode::Fallback;
        else r.mode = IedMode::Emergency;
        r.p_cmd_pct = std::stod(f[3]);
        r.q_cmd_pct = std::stod(f[4]);
        r.v_pu = std::stod(f[5]);
        r.reason = f[6];
        rows.push_back(r);
    }
    return rows;
}

void write_run_report(const std::string& path, const RunReport& r) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "{\n"
        << "  \"case\": \"" << control_case_name(r.control_case) << "\",\n"
        << "  \"steps\": " << r.steps << ",\n"
        << "  \"mean_cost\": " << fmt(r.mean_cost) << ",\n"
        << "  \"violations\": " << r.violations << ",\n"
        << "  \"messages_delivered\": " << r.messages_delivered << ",\n"
        << "  \"messages_dropped\": " << r.messages_dropped << "\n"
        << "}\n";
}

void write_comparison_csv(const std::string& path, const CaseComparison& cmp) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "case,name,mean_cost,diff_to_case1_pct,diff_to_case2_pct\n";
    for (std::size_t i = 0; i < cmp.reports.size(); ++i) {
        out << control_case_number(cmp.cases[i]) << ',' << control_case_name(cmp.cases[i]) << ','
            << fmt(cmp.reports[i].mean_cost) << ',' << fmt(cmp.diff_to_case1_pct[i]) << ','
            << fmt(cmp.diff_to_case2_pct[i]) << '\n';
    }
}

std::string comparison_table_text(const CaseComparison& cmp) {
    std::ostringstream os;
    os << "case  name          mean cost     diff to case 1   diff to case 2\n";
    for (std::size_t i = 0; i < cmp.reports.size(); ++i) {
        const std::string d1 = std::isnan(cmp.diff_to_case1_pct[i])
                                   ? "-"
                                   : fmt_short(cmp.diff_to_case1_pct[i]) + "%";
        const std::string d2 = std::isnan(cmp.diff_to_case2_pct[i])
                                   ? "-"
                                   : fmt_short(cmp.diff_to_case2_pct[i]) + "%";
        char line[160];
        std::snprintf(line, sizeof line, "%-5d %-13s %-13s %-16s %s\n",
                      control_case_number(cmp.cases[i]), control_case_name(cmp.cases[i]),
                      fmt_short(cmp.reports[i].mean_cost).c_str(), d1.c_str(), d2.c_str());
        os << line;
    }
    return os.str();
}

}  // namespace gridfall
