#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridfall/grid_model.hpp"
#include "gridfall/opf.hpp"

namespace gridfall {

enum class Channel { P, Q };
enum class SampleOrigin { OfflineSweep, OnlineSetpoint };
enum class Learner { Linear, Piecewise, Auto, Nnr };

const char* channel_name(Channel c);
const char* learner_name(Learner l);
std::optional<Learner> parse_learner(const std::string& s);

struct TrainingSample {
    double v_pu = 0.0;
    double theta_rad = 0.0;
    double setpoint_pct = 0.0;
    SampleOrigin origin = SampleOrigin::OfflineSweep;
};

/// One channel of one operating point; a view materialized from the joint
/// per-operating-point storage below.
struct TrainingBucket {
    int der_id = 0;
    Channel channel = Channel::P;
    int operating_point_pct = 0;
    int capacity = 0;
    std::vector<TrainingSample> samples;
};

/// P and Q setpoints of one OPF solution share the voltage that produced
/// them, and the eviction criterion compares both channels at once, so the
/// store keeps them joined and hands out per-channel views for fitting.
struct JointSample {
    double v_pu = 0.0;
    double theta_rad = 0.0;
    double p_sp_pct = 0.0;
    double q_sp_pct = 0.0;
    SampleOrigin origin = SampleOrigin::OfflineSweep;
};

class TrainingStore {
  public:
    static constexpr int kDefaultCapacity = 512;

    TrainingStore() = default;
    TrainingStore(int der_id, int capacity = kDefaultCapacity);

    /// Seed from offline sweep output. Non-converged rows are skipped; the
    /// bucket is chosen by the DER-kind scaling factor of each scenario.
    static TrainingStore from_sweep(int der_id, DerKind kind,
                                    const std::vector<TrainingRow>& rows,
                                    int capacity = kDefaultCapacity);

    /// Online update per the dataset-maintenance rules: skip duplicates,
    /// append otherwise, and when over capacity evict the entry that
    /// maximizes (P_new - P_i)^2 + (Q_new - Q_i)^2 among the candidates
    /// whose voltage is nearest the new sample's.
    void ingest(int op_pct, double v_pu, double p_sp_pct, double q_sp_pct);

    TrainingBucket bucket(Channel ch, int op_pct) const;
    const std::vector<JointSample>& joint(int op_pct) const;
    std::vector<JointSample>& joint_mutable(int op_pct);

    int der_id() const { return der_id_; }
    int capacity() const { return capacity_; }
    static std::vector<int> operating_points();  // {0,5,...,100}

  private:
    int der_id_ = 0;
    int capacity_ = kDefaultCapacity;
    std::map<int, std::vector<JointSample>> buckets_;
};

enum class ModelKind { Linear, PiecewiseLinear, NearestNeighbour };

struct RegressionModel {
    ModelKind kind = ModelKind::Linear;
    Channel channel = Channel::P;

    // Linear
    double slope = 0.0;
    double intercept = 0.0;

    // PiecewiseLinear: up to two breakpoints, one (slope, intercept) line
    // per segment, continuous across breakpoints by construction.
    std::vector<double> breakpoints;
    std::vector<std::pair<double, double>> segments;

    // NearestNeighbour: lookup table over equal-width voltage sections.
    std::vector<double> nnr_centers;
    std::vector<double> nnr_values;
};

/// Ordinary least squares on (v -> setpoint); constant model at the mean
/// when the voltages are degenerate.
RegressionModel fit_linear(const TrainingBucket& bucket);

/// Continuous piecewise-linear fit with at most `max_breakpoints` (<= 2)
/// knees. Breakpoint positions are searched on a fixed grid between the
/// 5th and 95th voltage percentiles; exhaustive over pairs for two knees.
RegressionModel fit_piecewise(const TrainingBucket& bucket, int max_breakpoints = 2);

/// Fits linear and piecewise (1 and 2 breakpoints) on a deterministic 80%
/// split, picks the lowest validation error (ties -> simpler), refits the
/// winner on the full bucket.
RegressionModel fit_auto(const TrainingBucket& bucket);

/// k-nearest-neighbour lookup table: for each of `sections` equal-width
/// cells spanning the sample voltage range, the stored value is the mean
/// setpoint of the k samples nearest the cell center (ties by lower sample
/// index; k clamped to the dataset size).
RegressionModel fit_nnr(const TrainingBucket& bucket, int k = 20, int sections = 100);

/// Evaluate a model. NNR picks the cell whose center is nearest the query
/// (out-of-range queries clamp to the end cells); linear and piecewise
/// extrapolate with the end segment. The result is clamped to [0,100] for
/// P and [-100,100] for Q.
double predict(const RegressionModel& model, double v_pu);

struct ModelSetConfig {
    Learner learner = Learner::Nnr;
    int nnr_k = 20;
    int nnr_sections = 100;
};

class RegressionModelSet {
  public:
    int der_id = 0;
    int version = 0;
    double trained_at = 0.0;  // simulation time, seconds

    const RegressionModel& model(Channel ch, int op_pct) const;
    void set_model(Channel ch, int op_pct, RegressionModel m);
    bool complete() const;

    std::map<std::pair<int, int>, RegressionModel> models;  // (channel, op_pct)
};

/// Fit all 42 models from the store. Buckets with no samples borrow the
/// nearest non-empty operating point's model, preferring the lower one.
/// The returned set carries version = previous version + 1.
RegressionModelSet retrain(const TrainingStore& store, const ModelSetConfig& cfg,
                           int previous_version = 0, double trained_at = 0.0);

void save_model_set(const std::string& path, const RegressionModelSet& set);
RegressionModelSet load_model_set(const std::string& path);

}  // namespace gridfall
