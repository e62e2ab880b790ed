#pragma once

#include <span>
#include <string>
#include <vector>

#include "latdyn/bundle.hpp"
#include "latdyn/interp.hpp"
#include "latdyn/trajectory.hpp"

namespace latdyn::online {

struct PredictionRequest {
  Vector mu;                  // raw units
  RowMatrix coords;           // M x d, any point set inside or outside training grids
  std::vector<double> times;  // empty = the bundle's training grid
};

struct PredictionDetails {
  InterpolationResult interpolation;
  Matrix z;  // (N_t+1) x N_s latent trajectory from the identified ODE
};

/// Interpolated coefficients -> z0 from the initial-state network -> RK4 solve of
/// the latent ODE -> reconstruction at every query point and time, denormalized.
FieldTrajectory predict(const ModelBundle& bundle, const PredictionRequest& request,
                        PredictionDetails* details = nullptr);

/// ||pred - truth||_F / ||truth||_F * 100.
double l2_rate(const RowMatrix& predicted, const RowMatrix& truth);

struct EvaluationEntry {
  std::string id;
  Vector mu;
  double rl2 = 0.0;              // percent
  double predict_seconds = 0.0;  // online stage only
  double hf_seconds = 0.0;       // recorded high-fidelity wall clock, 0 if unknown
};

struct EvaluationReport {
  std::vector<EvaluationEntry> entries;
  double aggregate_rl2 = 0.0;    // over all fields of all entries concatenated
  double predict_seconds = 0.0;  // sum of per-entry online times
  double hf_seconds = 0.0;       // sum of per-entry high-fidelity times
  double speedup = 0.0;          // hf_seconds / predict_seconds, 0 if unknown
  bool partial = false;
  std::vector<std::string> missing;  // requested points without truth
};

/// Predicts every truth trajectory (or only those matching `points`, raw units)
/// on the truth coordinates. Entries are timed one at a time on one thread.
EvaluationReport evaluate_testset(const ModelBundle& bundle, const Dataset& truth,
                                  std::span<const Vector> points = {});

void write_report_csv(const std::string& path, const EvaluationReport& report);

}  // namespace latdyn::online
