#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace httpwatt::power {

/// Normalized host utilization at one instant. Disk and NIC are fractions of
/// a calibrated maximum throughput so every regressor lives in [0,1].
struct UtilizationSample {
  double timestamp = 0.0;  // seconds since transfer start
  double cpu = 0.0;
  double mem = 0.0;
  double disk = 0.0;
  double nic = 0.0;
};

enum class ModelKind { FineGrained, CpuOnly };

const char* kind_name(ModelKind kind) noexcept;
ModelKind parse_kind(const std::string& name);

struct PowerModel {
  ModelKind kind = ModelKind::CpuOnly;
  double intercept = 0.0;  // watts at zero utilization
  double coeff_cpu = 0.0;  // watts per unit utilization
  double coeff_mem = 0.0;
  double coeff_disk = 0.0;
  double coeff_nic = 0.0;

  /// Number of fitted coefficients, intercept included.
  int coefficient_count() const noexcept { return kind == ModelKind::CpuOnly ? 2 : 5; }
};

struct CalibrationRow {
  UtilizationSample sample;
  double measured_power = 0.0;  // watts
};

using CalibrationSet = std::vector<CalibrationRow>;

struct EnergyReport {
  double total_energy = 0.0;  // joules
  double avg_power = 0.0;     // watts
  double duration = 0.0;      // seconds
  std::vector<std::pair<double, double>> samples;  // (timestamp, predicted watts)
};

/// Ordinary least squares over the regressors selected by `kind`.
/// Throws Error{UnderDetermined} when there are fewer than coefficient_count()+1
/// rows and Error{DegenerateDesign} when a regressor has zero variance or the
/// design matrix is rank deficient.
PowerModel fit_model(std::span<const CalibrationRow> calib, ModelKind kind);

/// intercept + sum(coeff * utilization), clamped at 0 W.
double predict_power(const PowerModel& model, const UtilizationSample& s);

/// Trapezoidal integration of predicted power over a sorted timeline.
EnergyReport integrate_energy(const PowerModel& model, std::span<const UtilizationSample> timeline);

/// Trapezoid over (timestamp, watts) points; shared by the simulator-free paths.
double trapezoid(std::span<const std::pair<double, double>> points);

bool in_range(const UtilizationSample& s) noexcept;

// Persistence. Calibration CSV header: timestamp,cpu,mem,disk,nic,power_watts
CalibrationSet read_calibration_csv(const std::string& path);
std::string model_to_json(const PowerModel& model);
PowerModel model_from_json(const std::string& text);
void save_model(const PowerModel& model, const std::string& path);
PowerModel load_model(const std::string& path);

}  // namespace httpwatt::power
