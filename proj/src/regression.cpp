#include "gridfall/regression.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace gridfall {

using nlohmann::json;

const char* channel_name(Channel c) { return c == Channel::P ? "P" : "Q"; }

const char* learner_name(Learner l) {
    switch (l) {
        case Learner::Linear: return "linear";
        case Learner::Piecewise: return "piecewise";
        case Learner::Auto: return "auto";
        case Learner::Nnr: return "nnr";
    }
    return "?";
}

std::optional<Learner> parse_learner(const std::string& s) {
    if (s == "linear") return Learner::Linear;
    if (s == "piecewise") return Learner::Piecewise;
    if (s == "auto") return Learner::Auto;
    if (s == "nnr") return Learner::Nnr;
    return std::nullopt;
}

TrainingStore::TrainingStore(int der_id, int capacity) : der_id_(der_id), capacity_(capacity) {
    for (int op : operating_points()) buckets_[op] = {};
}

std::vector<int> TrainingStore::operating_points() {
    std::vector<int> ops;
    for (int op = 0; op <= 100; op += 5) ops.push_back(op);
    return ops;
}

TrainingStore TrainingStore::from_sweep(int der_id, DerKind kind,
                                        const std::vector<TrainingRow>& rows, int capacity) {
    TrainingStore store(der_id, capacity);
    std::map<int, std::vector<const TrainingRow*>> grouped;
    for (const auto& r : rows) {
        if (!r.converged) continue;
        grouped[lattice_pct(r.scenario.factor_for(kind))].push_back(&r);
    }
    for (auto& [op, group] : grouped) {
        auto& b = store.buckets_[op];
        const std::size_t n = group.size();
        if (static_cast<int>(n) <= capacity) {
            for (const TrainingRow* r : group)
                b.push_back({r->v_pu, r->theta_rad, r->p_sp_pct, r->q_sp_pct,
                             SampleOrigin::OfflineSweep});
        } else {
            // thin evenly so the kept subset spans the whole scenario range
            for (int i = 0; i < capacity; ++i) {
                const TrainingRow* r = group[static_cast<std::size_t>(i) * n / capacity];
                b.push_back({r->v_pu, r->theta_rad, r->p_sp_pct, r->q_sp_pct,
                             SampleOrigin::OfflineSweep});
            }
        }
    }
    return store;
}

namespace {

double round_to(double v, double step) { return std::round(v / step) * step; }

bool same_entry(const JointSample& a, double v, double p, double q) {
    return round_to(a.v_pu, 1e-4) == round_to(v, 1e-4) &&
           round_to(a.p_sp_pct, 5.0) == round_to(p, 5.0) &&
           round_to(a.q_sp_pct, 5.0) == round_to(q, 5.0);
}

}  // namespace

void TrainingStore::ingest(int op_pct, double v_pu, double p_sp_pct, double q_sp_pct) {
    auto it = buckets_.find(op_pct);
    if (it == buckets_.end())
        throw std::invalid_argument("ingest: operating point " + std::to_string(op_pct) +
                                    " is not on the 5% lattice");
    auto& bucket = it->second;
    for (const auto& s : bucket)
        if (same_entry(s, v_pu, p_sp_pct, q_sp_pct)) return;  // already known

    bucket.push_back({v_pu, 0.0, p_sp_pct, q_sp_pct, SampleOrigin::OnlineSetpoint});
    if (static_cast<int>(bucket.size()) <= capacity_) return;

    // Candidates: the 5 existing entries with voltage closest to the new
    // sample's; evict the one with the largest setpoint distance.
    const std::size_t n_old = bucket.size() - 1;
    std::vector<std::size_t> order(n_old);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double da = std::abs(bucket[a].v_pu - v_pu);
        const double db = std::abs(bucket[b].v_pu - v_pu);
        if (da != db) return da < db;
        return a < b;
    });
    const std::size_t n_cand = std::min<std::size_t>(5, n_old);
    std::size_t victim = order[0];
    double worst = -1.0;
    for (std::size_t c = 0; c < n_cand; ++c) {
        const JointSample& s = bucket[order[c]];
        const double dp = p_sp_pct - s.p_sp_pct;
        const double dq = q_sp_pct - s.q_sp_pct;
        const double crit = dp * dp + dq * dq;
        if (crit > worst) {
            worst = crit;
            victim = order[c];
        }
    }
    bucket.erase(bucket.begin() + static_cast<std::ptrdiff_t>(victim));
}

TrainingBucket TrainingStore::bucket(Channel ch, int op_pct) const {
    TrainingBucket b;
    b.der_id = der_id_;
    b.channel = ch;
    b.operating_point_pct = op_pct;
    b.capacity = capacity_;
    auto it = buckets_.find(op_pct);
    if (it == buckets_.end()) return b;
    b.samples.reserve(it->second.size());
    for (const auto& s : it->second)
        b.samples.push_back({s.v_pu, s.theta_rad,
                             ch == Channel::P ? s.p_sp_pct : s.q_sp_pct, s.origin});
    return b;
}

const std::vector<JointSample>& TrainingStore::joint(int op_pct) const {
    return buckets_.at(op_pct);
}

std::vector<JointSample>& TrainingStore::joint_mutable(int op_pct) {
    return buckets_.at(op_pct);
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

RegressionModel constant_model(Channel ch, double value) {
    RegressionModel m;
    m.kind = ModelKind::Linear;
    m.channel = ch;
    m.slope = 0.0;
    m.intercept = value;
    return m;
}

double sample_mean(const std::vector<TrainingSample>& s) {
    double acc = 0.0;
    for (const auto& x : s) acc += x.setpoint_pct;
    return s.empty() ? 0.0 : acc / static_cast<double>(s.size());
}

// Least squares y ~ basis(v) via normal equations; returns false on a
// singular system. dim <= 4.
bool solve_normal_equations(const std::vector<TrainingSample>& s,
                            const std::vector<double>& knots, std::vector<double>& coef) {
    const int dim = 2 + static_cast<int>(knots.size());
    double ata[4][4] = {};
    double atb[4] = {};
    for (const auto& x : s) {
        double basis[4] = {1.0, x.v_pu, 0.0, 0.0};
        for (std::size_t j = 0; j < knots.size(); ++j)
            basis[2 + j] = std::max(0.0, x.v_pu - knots[j]);
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j < dim; ++j) ata[i][j] += basis[i] * basis[j];
            atb[i] += basis[i] * x.setpoint_pct;
        }
    }
    // Gaussian elimination with partial pivoting.
    int idx[4] = {0, 1, 2, 3};
    for (int col = 0; col < dim; ++col) {
        int piv = col;
        for (int r = col + 1; r < dim; ++r)
            if (std::abs(ata[idx[r]][col]) > std::abs(ata[idx[piv]][col])) piv = r;
        std::swap(idx[col], idx[piv]);
        const double p = ata[idx[col]][col];
        if (std::abs(p) < 1e-12) return false;
        for (int r = col + 1; r < dim; ++r) {
            const double f = ata[idx[r]][col] / p;
            for (int c = col; c < dim; ++c) ata[idx[r]][c] -= f * ata[idx[col]][c];
            atb[idx[r]] -= f * atb[idx[col]];
        }
    }
    coef.assign(dim, 0.0);
    for (int r = dim - 1; r >= 0; --r) {
        double acc = atb[idx[r]];
        for (int c = r + 1; c < dim; ++c) acc -= ata[idx[r]][c] * coef[c];
        coef[r] = acc / ata[idx[r]][r];
    }
    return true;
}

double hinge_sse(const std::vector<TrainingSample>& s, const std::vector<double>& knots,
                 const std::vector<double>& coef) {
    double sse = 0.0;
    for (const auto& x : s) {
        double y = coef[0] + coef[1] * x.v_pu;
        for (std::size_t j = 0; j < knots.size(); ++j)
            y += coef[2 + j] * std::max(0.0, x.v_pu - knots[j]);
        const double r = y - x.setpoint_pct;
        sse += r * r;
    }
    return sse;
}

RegressionModel hinge_to_model(Channel ch, const std::vector<double>& knots,
                               const std::vector<double>& coef) {
    RegressionModel m;
    m.channel = ch;
    if (knots.empty()) {
        m.kind = ModelKind::Linear;
        m.intercept = coef[0];
        m.slope = coef[1];
        return m;
    }
    m.kind = ModelKind::PiecewiseLinear;
    m.breakpoints = knots;
    double slope = coef[1];
    double intercept = coef[0];
    m.segments.emplace_back(slope, intercept);
    for (std::size_t j = 0; j < knots.size(); ++j) {
        slope += coef[2 + j];
        intercept -= coef[2 + j] * knots[j];
        m.segments.emplace_back(slope, intercept);
    }
    return m;
}

std::vector<double> breakpoint_grid(const std::vector<TrainingSample>& s, int count = 50) {
    std::vector<double> v;
    v.reserve(s.size());
    for (const auto& x : s) v.push_back(x.v_pu);
    std::sort(v.begin(), v.end());
    const auto pct = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    const double lo = pct(0.05), hi = pct(0.95);
    std::vector<double> grid;
    if (hi <= lo) return grid;
    for (int i = 0; i < count; ++i)
        grid.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return grid;
}

struct FitCandidate {
    bool valid = false;
    double sse = std::numeric_limits<double>::infinity();
    std::vector<double> knots;
    std::vector<double> coef;
};

FitCandidate best_hinge_fit(const std::vector<TrainingSample>& s, int n_knots,
                            const std::vector<double>& grid) {
    FitCandidate best;
    std::vector<double> coef;
    if (n_knots == 0) {
        if (solve_normal_equations(s, {}, coef)) {
            best.valid = true;
            best.coef = coef;
            best.sse = hinge_sse(s, {}, coef);
        }
        return best;
    }
    if (n_knots == 1) {
        for (double b : grid) {
            if (!solve_normal_equations(s, {b}, coef)) continue;
            const double sse = hinge_sse(s, {b}, coef);
            if (sse < best.sse) {
                best = {true, sse, {b}, coef};
            }
        }
        return best;
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t j = i + 1; j < grid.size(); ++j) {
            const std::vector<double> knots{grid[i], grid[j]};
            if (!solve_normal_equations(s, knots, coef)) continue;
            const double sse = hinge_sse(s, knots, coef);
            if (sse < best.sse) {
                best = {true, sse, knots, coef};
            }
        }
    }
    return best;
}

}  // namespace

RegressionModel fit_linear(const TrainingBucket& bucket) {
    const auto& s = bucket.samples;
    if (s.empty()) return constant_model(bucket.channel, 0.0);

    const double n = static_cast<double>(s.size());
    double sv = 0, sy = 0, svv = 0, svy = 0;
    for (const auto& x : s) {
        sv += x.v_pu;
        sy += x.setpoint_pct;
        svv += x.v_pu * x.v_pu;
        svy += x.v_pu * x.setpoint_pct;
    }
    const double denom = n * svv - sv * sv;
    if (s.size() < 2 || std::abs(denom) < 1e-15 * std::max(1.0, n * svv))
        return constant_model(bucket.channel, sample_mean(s));

    RegressionModel m;
    m.kind = ModelKind::Linear;
    m.channel = bucket.channel;
    m.slope = (n * svy - sv * sy) / denom;
    m.intercept = (sy - m.slope * sv) / n;
    return m;
}

RegressionModel fit_piecewise(const TrainingBucket& bucket, int max_breakpoints) {
    max_breakpoints = std::clamp(max_breakpoints, 0, 2);
    const auto& s = bucket.samples;
    if (max_breakpoints == 0 || static_cast<int>(s.size()) < (max_breakpoints + 1) * 2)
        return fit_linear(bucket);

    const auto grid = breakpoint_grid(s);
    FitCandidate best = best_hinge_fit(s, 0, grid);
    for (int k = 1; k <= max_breakpoints; ++k) {
        FitCandidate c = best_hinge_fit(s, k, grid);
        if (c.valid && c.sse < best.sse) best = c;
    }
    if (!best.valid) return fit_linear(bucket);
    return hinge_to_model(bucket.channel, best.knots, best.coef);
}

RegressionModel fit_auto(const TrainingBucket& bucket) {
    const auto& s = bucket.samples;
    if (s.size() < 4) return fit_linear(bucket);

    // Fixed split: every 5th sample validates, the rest train.
    TrainingBucket train = bucket, val = bucket;
    train.samples.clear();
    val.samples.clear();
    for (std::size_t i = 0; i < s.size(); ++i)
        (i % 5 == 4 ? val.samples : train.samples).push_back(s[i]);
    if (val.samples.empty() || train.samples.size() < 2) return fit_linear(bucket);

    auto val_sse = [&](const RegressionModel& m) {
        double sse = 0.0;
        for (const auto& x : val.samples) {
            const double r = predict(m, x.v_pu) - x.setpoint_pct;
            sse += r * r;
        }
        return sse;
    };

    const RegressionModel lin = fit_linear(train);
    const RegressionModel pw1 = fit_piecewise(train, 1);
    const RegressionModel pw2 = fit_piecewise(train, 2);
    const double e_lin = val_sse(lin), e_pw1 = val_sse(pw1), e_pw2 = val_sse(pw2);

    // Ties favour the simpler model.
    if (e_lin <= e_pw1 && e_lin <= e_pw2) return fit_linear(bucket);
    if (e_pw1 <= e_pw2) return fit_piecewise(bucket, 1);
    return fit_piecewise(bucket, 2);
}

RegressionModel fit_nnr(const TrainingBucket& bucket, int k, int sections) {
    const auto& s = bucket.samples;
    if (s.empty()) return constant_model(bucket.channel, 0.0);
    k = std::max(1, k);
    sections = std::max(1, sections);

    double vmin = s[0].v_pu, vmax = s[0].v_pu;
    for (const auto& x : s) {
        vmin = std::min(vmin, x.v_pu);
        vmax = std::max(vmax, x.v_pu);
    }
    const double width = (vmax - vmin) / static_cast<double>(sections);

    RegressionModel m;
    m.kind = ModelKind::NearestNeighbour;
    m.channel = bucket.channel;
    m.nnr_centers.resize(sections);
    m.nnr_values.resize(sections);

    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), s.size());
    std::vector<std::size_t> order(s.size());
    for (int cell = 0; cell < sections; ++cell) {
        const double center = vmin + (static_cast<double>(cell) + 0.5) * width;
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double da = std::abs(s[a].v_pu - center);
            const double db = std::abs(s[b].v_pu - center);
            if (da != db) return da < db;
            return a < b;
        });
        // Accumulate in ascending sample-index order so the mean is a
        // reproducible function of the selected set.
        std::vector<std::size_t> sel(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk));
        std::sort(sel.begin(), sel.end());
        double acc = 0.0;
        for (std::size_t i : sel) acc += s[i].setpoint_pct;
        m.nnr_centers[cell] = center;
        m.nnr_values[cell] = acc / static_cast<double>(kk);
    }
    return m;
}

double predict(const RegressionModel& m, double v_pu) {
    double y = 0.0;
    switch (m.kind) {
        case ModelKind::Linear:
            y = m.slope * v_pu + m.intercept;
            break;
        case ModelKind::PiecewiseLinear: {
            std::size_t seg = 0;
            while (seg < m.breakpoints.size() && v_pu > m.breakpoints[seg]) ++seg;
            y = m.segments[seg].first * v_pu + m.segments[seg].second;
            break;
        }
        case ModelKind::NearestNeighbour: {
            const auto& c = m.nnr_centers;
            if (c.empty()) break;
            auto it = std::lower_bound(c.begin(), c.end(), v_pu);
            std::size_t idx;
            if (it == c.begin())
                idx = 0;
            else if (it == c.end())
                idx = c.size() - 1;
            else {
                const std::size_t hi = static_cast<std::size_t>(it - c.begin());
                const std::size_t lo = hi - 1;
                // ties toward the lower cell
                idx = (std::abs(c[hi] - v_pu) < std::abs(v_pu - c[lo])) ? hi : lo;
            }
            y = m.nnr_values[idx];
            break;
        }
    }
    return m.channel == Channel::P ? std::clamp(y, 0.0, 100.0) : std::clamp(y, -100.0, 100.0);
}

// ---------------------------------------------------------------------------
// Model sets

const RegressionModel& RegressionModelSet::model(Channel ch, int op_pct) const {
    auto it = models.find({static_cast<int>(ch), op_pct});
    if (it == models.end())
        throw std::out_of_range("no model for channel " + std::string(channel_name(ch)) +
                                " op " + std::to_string(op_pct));
    return it->second;
}

void RegressionModelSet::set_model(Channel ch, int op_pct, RegressionModel m) {
    models[{static_cast<int>(ch), op_pct}] = std::move(m);
}

bool RegressionModelSet::complete() const {
    for (Channel ch : {Channel::P, Channel::Q})
        for (int op : TrainingStore::operating_points())
            if (!models.count({static_cast<int>(ch), op})) return false;
    return true;
}

RegressionModelSet retrain(const TrainingStore& store, const ModelSetConfig& cfg,
                           int previous_version, double trained_at) {
    RegressionModelSet set;
    set.der_id = store.der_id();
    set.version = previous_version + 1;
    set.trained_at = trained_at;

    const auto ops = TrainingStore::operating_points();
    for (Channel ch : {Channel::P, Channel::Q}) {
        std::vector<int> empty_ops;
        for (int op : ops) {
            const TrainingBucket b = store.bucket(ch, op);
            if (b.samples.empty()) {
                empty_ops.push_back(op);
                continue;
            }
            RegressionModel m;
            switch (cfg.learner) {
                case Learner::Linear: m = fit_linear(b); break;
                case Learner::Piecewise: m = fit_piecewise(b, 2); break;
                case Learner::Auto: m = fit_auto(b); break;
                case Learner::Nnr: m = fit_nnr(b, cfg.nnr_k, cfg.nnr_sections); break;
            }
            set.set_model(ch, op, std::move(m));
        }
        // Empty operating points borrow the nearest trained neighbour,
        // preferring the lower one as the conservative choice.
        for (int op : empty_ops) {
            const RegressionModel* donor = nullptr;
            for (int dist = 5; dist <= 100 && !donor; dist += 5) {
                for (int cand : {op - dist, op + dist}) {
                    if (cand < 0 || cand > 100) continue;
                    auto it = set.models.find({static_cast<int>(ch), cand});
                    if (it != set.models.end()) {
                        donor = &it->second;
                        break;
                    }
                }
            }
            set.set_model(ch, op, donor ? *donor : constant_model(ch, 0.0));
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json model_to_json(const RegressionModel& m) {
    json payload;
    const char* kind = nullptr;
    switch (m.kind) {
        case ModelKind::Linear:
            kind = "linear";
            payload = {{"slope", m.slope}, {"intercept", m.intercept}};
            break;
        case ModelKind::PiecewiseLinear: {
            kind = "piecewise";
            payload["breakpoints"] = m.breakpoints;
            payload["segments"] = json::array();
            for (const auto& [slope, intercept] : m.segments)
                payload["segments"].push_back({slope, intercept});
            break;
        }
        case ModelKind::NearestNeighbour: {
            kind = "nnr";
            payload = json::array();
            for (std::size_t i = 0; i < m.nnr_centers.size(); ++i)
                payload.push_back({m.nnr_centers[i], m.nnr_values[i]});
            break;
        }
    }
    return json{{"kind", kind}, {"payload", payload}};
}

RegressionModel model_from_json(Channel ch, const json& j) {
    RegressionModel m;
    m.channel = ch;
    const std::string kind = j.at("kind").get<std::string>();
    const json& payload = j.at("payload");
    if (kind == "linear") {
        m.kind = ModelKind::Linear;
        m.slope = payload.at("slope").get<double>();
        m.intercept = payload.at("intercept").get<double>();
    } else if (kind == "piecewise") {
        m.kind = ModelKind::PiecewiseLinear;
        m.breakpoints = payload.at("breakpoints").get<std::vector<double>>();
        for (const auto& seg : payload.at("segments"))
            m.segments.emplace_back(seg.at(0).get<double>(), seg.at(1).get<double>());
    } else if (kind == "nnr") {
        m.kind = ModelKind::NearestNeighbour;
        for (const auto& row : payload) {
            m.nnr_centers.push_back(row.at(0).get<double>());
            m.nnr_values.push_back(row.at(1).get<double>());
        }
    } else {
        throw ParseError("unknown model kind '" + kind + "'");
    }
    return m;
}

}  // namespace

void save_model_set(const std::string& path, const RegressionModelSet& set) {
    json j;
    j["der_id"] = set.der_id;
    j["version"] = set.version;
    j["trained_at"] = set.trained_at;
    j["models"] = json::array();
    for (Channel ch : {Channel::P, Channel::Q}) {
        for (int op : TrainingStore::operating_points()) {
            auto it = set.models.find({static_cast<int>(ch), op});
            if (it == set.models.end()) continue;
            json jm = model_to_json(it->second);
            jm["channel"] = channel_name(ch);
            jm["op_pct"] = op;
            j["models"].push_back(std::move(jm));
        }
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(1) << "\n";
}

RegressionModelSet load_model_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("malformed model file " + path + ": " + e.what());
    }
    RegressionModelSet set;
    set.der_id = j.at("der_id").get<int>();
    set.version = j.at("version").get<int>();
    set.trained_at = j.at("trained_at").get<double>();
    for (const auto& jm : j.at("models")) {
        const std::string ch_name = jm.at("channel").get<std::string>();
        const Channel ch = ch_name == "P" ? Channel::P : Channel::Q;
        set.set_model(ch, jm.at("op_pct").get<int>(), model_from_json(ch, jm));
    }
    return set;
}

}  // namespace gridfall
