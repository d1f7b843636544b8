#include "httpwatt/power.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "httpwatt/error.hpp"
#include "httpwatt/util.hpp"

namespace httpwatt::power {

const char* kind_name(ModelKind kind) noexcept {
  return kind == ModelKind::FineGrained ? "fine-grained" : "cpu-only";
}

ModelKind parse_kind(const std::string& name) {
  if (name == "fine-grained" || name == "FineGrained" || name == "fine") return ModelKind::FineGrained;
  if (name == "cpu-only" || name == "CpuOnly" || name == "cpu") return ModelKind::CpuOnly;
  throw Error(Errc::InvalidArgument, "unknown power model kind '" + name + "'");
}

bool in_range(const UtilizationSample& s) noexcept {
  auto ok = [](double v) { return v >= 0.0 && v <= 1.0; };
  return ok(s.cpu) && ok(s.mem) && ok(s.disk) && ok(s.nic) && s.timestamp >= 0.0;
}

namespace {

constexpr std::array<const char*, 4> kRegressorNames{"cpu", "mem", "disk", "nic"};

double regressor(const UtilizationSample& s, int i) {
  switch (i) {
    case 0: return s.cpu;
    case 1: return s.mem;
    case 2: return s.disk;
    default: return s.nic;
  }
}

// Least squares by Householder QR; `a` is row-major rows x cols and is destroyed.
std::vector<double> solve_least_squares(std::vector<double> a, std::vector<double> b, int rows, int cols) {
  auto at = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * cols + c]; };
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));

  for (int k = 0; k < cols; ++k) {
    double norm = 0.0;
    for (int r = k; r < rows; ++r) norm += at(r, k) * at(r, k);
    norm = std::sqrt(norm);
    if (norm <= 1e-12 * std::max(scale, 1.0)) {
      throw Error(Errc::DegenerateDesign, "design matrix is rank deficient (column " + std::to_string(k) + ")");
    }
    const double alpha = at(k, k) > 0 ? -norm : norm;
    std::vector<double> v(rows - k);
    for (int r = k; r < rows; ++r) v[r - k] = at(r, k);
    v[0] -= alpha;
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    if (vnorm2 == 0.0) continue;
    for (int c = k; c < cols; ++c) {
      double dot = 0.0;
      for (int r = k; r < rows; ++r) dot += v[r - k] * at(r, c);
      const double f = 2.0 * dot / vnorm2;
      for (int r = k; r < rows; ++r) at(r, c) -= f * v[r - k];
    }
    double dot = 0.0;
    for (int r = k; r < rows; ++r) dot += v[r - k] * b[r];
    const double f = 2.0 * dot / vnorm2;
    for (int r = k; r < rows; ++r) b[r] -= f * v[r - k];
  }

  double rmax = 0.0;
  for (int k = 0; k < cols; ++k) rmax = std::max(rmax, std::abs(at(k, k)));
  std::vector<double> x(cols);
  for (int k = cols - 1; k >= 0; --k) {
    if (std::abs(at(k, k)) <= 1e-10 * rmax) {
      throw Error(Errc::DegenerateDesign, "design matrix is rank deficient (column " + std::to_string(k) + ")");
    }
    double s = b[k];
    for (int c = k + 1; c < cols; ++c) s -= at(k, c) * x[c];
    x[k] = s / at(k, k);
  }
  return x;
}

}  // namespace

PowerModel fit_model(std::span<const CalibrationRow> calib, ModelKind kind) {
  PowerModel model;
  model.kind = kind;
  const int regressors = kind == ModelKind::CpuOnly ? 1 : 4;
  const int cols = regressors + 1;
  const int rows = static_cast<int>(calib.size());
  if (rows < cols + 1) {
    throw Error(Errc::UnderDetermined, "need at least " + std::to_string(cols + 1) + " calibration rows for a " +
                                           kind_name(kind) + " model, got " + std::to_string(rows));
  }
  for (int r = 0; r < rows; ++r) {
    if (!(calib[r].measured_power > 0.0)) {
      throw Error(Errc::InvalidArgument, "row " + std::to_string(r + 1) + ": measured power must be positive");
    }
    if (!in_range(calib[r].sample)) {
      throw Error(Errc::OutOfRangeSample, "row " + std::to_string(r + 1) + ": utilization outside [0,1]");
    }
  }
  for (int i = 0; i < regressors; ++i) {
    const double first = regressor(calib[0].sample, i);
    bool varies = false;
    for (const auto& row : calib) varies = varies || regressor(row.sample, i) != first;
    if (!varies) {
      throw Error(Errc::DegenerateDesign, std::string("regressor '") + kRegressorNames[i] + "' has zero variance");
    }
  }

  std::vector<double> a(static_cast<std::size_t>(rows) * cols);
  std::vector<double> b(rows);
  for (int r = 0; r < rows; ++r) {
    a[static_cast<std::size_t>(r) * cols] = 1.0;
    for (int i = 0; i < regressors; ++i) a[static_cast<std::size_t>(r) * cols + 1 + i] = regressor(calib[r].sample, i);
    b[r] = calib[r].measured_power;
  }
  const auto x = solve_least_squares(std::move(a), std::move(b), rows, cols);
  model.intercept = x[0];
  model.coeff_cpu = x[1];
  if (kind == ModelKind::FineGrained) {
    model.coeff_mem = x[2];
    model.coeff_disk = x[3];
    model.coeff_nic = x[4];
  }
  return model;
}

double predict_power(const PowerModel& model, const UtilizationSample& s) {
  if (!in_range(s)) throw Error(Errc::OutOfRangeSample, "utilization sample outside [0,1]");
  double p = model.intercept + model.coeff_cpu * s.cpu;
  if (model.kind == ModelKind::FineGrained) {
    p += model.coeff_mem * s.mem + model.coeff_disk * s.disk + model.coeff_nic * s.nic;
  }
  return std::max(0.0, p);
}

double trapezoid(std::span<const std::pair<double, double>> points) {
  double e = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    e += 0.5 * (points[i].second + points[i - 1].second) * (points[i].first - points[i - 1].first);
  }
  return e;
}

EnergyReport integrate_energy(const PowerModel& model, std::span<const UtilizationSample> timeline) {
  if (timeline.size() < 2) throw Error(Errc::TooFewSamples, "energy integration needs at least two samples");
  EnergyReport report;
  report.samples.reserve(timeline.size());
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    if (i > 0 && timeline[i].timestamp < timeline[i - 1].timestamp) {
      throw Error(Errc::UnsortedTimeline, "sample " + std::to_string(i) + " precedes its predecessor");
    }
    report.samples.emplace_back(timeline[i].timestamp, predict_power(model, timeline[i]));
  }
  report.total_energy = trapezoid(report.samples);
  report.duration = timeline.back().timestamp - timeline.front().timestamp;
  report.avg_power = report.duration > 0 ? report.total_energy / report.duration : report.samples.front().second;
  return report;
}

CalibrationSet read_calibration_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open calibration file " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::SchemaMismatch, path + ": empty calibration file");
  const auto header = util::split_csv_line(line);
  constexpr std::array<const char*, 6> required{"timestamp", "cpu", "mem", "disk", "nic", "power_watts"};
  std::array<std::size_t, 6> index{};
  for (std::size_t k = 0; k < required.size(); ++k) {
    auto it = std::find(header.begin(), header.end(), required[k]);
    if (it == header.end()) {
      throw Error(Errc::SchemaMismatch, path + ": missing required column '" + required[k] + "'");
    }
    index[k] = static_cast<std::size_t>(it - header.begin());
  }
  CalibrationSet rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = util::split_csv_line(line);
    std::array<double, 6> v{};
    for (std::size_t k = 0; k < required.size(); ++k) {
      if (index[k] >= cells.size()) {
        throw Error(Errc::SchemaMismatch, path + ":" + std::to_string(line_no) + ": too few columns");
      }
      if (!util::parse_double(cells[index[k]], v[k])) {
        throw Error(Errc::SchemaMismatch, path + ":" + std::to_string(line_no) + ": bad number in column '" +
                                              required[k] + "'");
      }
    }
    rows.push_back({UtilizationSample{v[0], v[1], v[2], v[3], v[4]}, v[5]});
  }
  return rows;
}

std::string model_to_json(const PowerModel& model) {
  nlohmann::ordered_json j;
  j["kind"] = kind_name(model.kind);
  j["intercept"] = model.intercept;
  j["coeff_cpu"] = model.coeff_cpu;
  j["coeff_mem"] = model.coeff_mem;
  j["coeff_disk"] = model.coeff_disk;
  j["coeff_nic"] = model.coeff_nic;
  return j.dump(2);
}

PowerModel model_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    PowerModel m;
    m.kind = parse_kind(j.at("kind").get<std::string>());
    m.intercept = j.at("intercept").get<double>();
    m.coeff_cpu = j.at("coeff_cpu").get<double>();
    m.coeff_mem = j.value("coeff_mem", 0.0);
    m.coeff_disk = j.value("coeff_disk", 0.0);
    m.coeff_nic = j.value("coeff_nic", 0.0);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaMismatch, std::string("power model JSON: ") + e.what());
  }
}

void save_model(const PowerModel& model, const std::string& path) {
  util::write_file(path, model_to_json(model) + "\n");
}

PowerModel load_model(const std::string& path) {
  try {
    return model_from_json(util::read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace httpwatt::power
