#include "httpwatt/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "httpwatt/dataset.hpp"
#include "httpwatt/power.hpp"
#include "httpwatt/telemetry.hpp"
#include "httpwatt/transport.hpp"
#include "httpwatt/util.hpp"

namespace httpwatt::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

int exit_code_for(const Error& e) noexcept {
  switch (e.code()) {
    case Errc::Unreachable:
    case Errc::ProtocolError:
      return kNetwork;
    case Errc::FileFailed:
      return kFileFailed;
    case Errc::InvalidArgument:
    case Errc::SchemaMismatch:
    case Errc::EmptyDataset:
    case Errc::UnderDetermined:
    case Errc::DegenerateDesign:
    case Errc::OutOfRangeSample:
    case Errc::UnsortedTimeline:
    case Errc::TooFewSamples:
      return kUsage;
    default:
      return kFailure;
  }
}

RunConfig config_from_json(const std::string& text) {
  RunConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw Error(Errc::SchemaMismatch, "config must be a JSON object");
    if (j.contains("profile")) {
      if (j["profile"].is_string()) c.profile = j["profile"].get<std::string>();
      else c.profile_inline = sim::profile_from_json(j["profile"].dump());
    }
    c.manifest = j.value("manifest", c.manifest);
    c.out = j.value("out", c.out);
    c.sla = j.value("sla", c.sla);
    c.channels = j.value("channels", c.channels);
    c.max_channels = j.value("max_channels", c.max_channels);
    c.target_pct = j.value("target_pct", c.target_pct);
    c.reference = j.value("reference", c.reference);
    c.power_model = j.value("power_model", c.power_model);
    c.window_secs = j.value("window_secs", c.window_secs);
    c.pp_cap = j.value("pp_cap", c.pp_cap);
    c.verify = j.value("verify", c.verify);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaMismatch, std::string("config: ") + e.what());
  }
  return c;
}

sim::SimProfile resolve_profile(const RunConfig& cfg) {
  sim::SimProfile p;
  if (!cfg.profile.empty()) {
    if (fs::exists(cfg.profile)) {
      p = sim::load_profile(cfg.profile);
    } else {
      const auto f = util::split_csv_line(cfg.profile);
      if (f.size() != 3 || !util::parse_double(f[0], p.network.bandwidth) || !util::parse_double(f[1], p.network.rtt) ||
          !util::parse_double(f[2], p.network.tcp_buffer))
        throw Error(Errc::InvalidArgument, "--profile: no such file and not 'bandwidth,rtt,buffer': " + cfg.profile);
    }
  } else if (cfg.profile_inline) {
    p = *cfg.profile_inline;
  }
  p.seed = cfg.seed;
  p.validate();
  return p;
}

sla::SlaRequest make_request(const RunConfig& cfg) {
  sla::SlaRequest r;
  r.mode = sla::parse_mode(cfg.sla);
  r.channel_count = cfg.channels;
  r.max_channels = cfg.max_channels;
  r.target_fraction = cfg.target_pct / 100.0;
  r.reference_throughput = cfg.reference;
  r.validate();
  return r;
}

namespace {

json params_json(const TransferParams& p) {
  return {{"pipelining", p.pipelining}, {"parallelism", p.parallelism}, {"concurrency", p.concurrency}};
}

std::string lower_class(SizeClass c) {
  std::string s = class_name(c);
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

std::string outcome_to_json(const sla::TransferOutcome& o, const std::vector<std::string>& warnings) {
  json j;
  j["mode"] = sla::mode_name(o.mode);
  j["channel_bound"] = o.channel_bound;
  j["throughput_bps"] = o.achieved_throughput;
  j["energy_j"] = o.energy_available ? json(o.energy) : json(nullptr);
  j["duration_s"] = o.duration;
  j["total_bytes"] = o.total_bytes;
  j["ratio_bits_per_joule"] = o.energy_available ? json(o.ratio()) : json(nullptr);
  j["chosen_concurrency"] = o.chosen_concurrency ? json(*o.chosen_concurrency) : json(nullptr);
  j["final_concurrency"] = o.final_concurrency;
  j["max_live_channels"] = o.max_live_channels;
  j["target_unreachable"] = o.target_unreachable;
  j["dataset_exhausted_during_search"] = o.dataset_exhausted_during_search;
  json groups = json::array();
  for (auto c : kAllClasses) {
    const auto& g = o.groups[index_of(c)];
    groups.push_back({{"subgroup", lower_class(c)}, {"files", g.files}, {"bytes", g.bytes}, {"completed_at_s", g.completed_at}});
  }
  j["groups"] = groups;
  json params = json::array();
  for (const auto& h : o.history) {
    json e = {{"timestamp", h.timestamp}, {"subgroup", lower_class(h.group)}};
    e.update(params_json(h.params));
    params.push_back(e);
  }
  j["parameters"] = params;
  json probes = json::array();
  for (const auto& p : o.probes)
    probes.push_back({{"concurrency", p.concurrency},
                      {"throughput_bps", p.window_throughput},
                      {"energy_j", p.window_energy},
                      {"seconds", p.window_seconds},
                      {"ratio", p.ratio},
                      {"full_window", p.full_window}});
  j["probes"] = probes;
  j["failures"] = o.failures;
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

std::string history_jsonl(const sla::TransferOutcome& o) {
  std::string s;
  for (const auto& h : o.history) {
    json e = {{"timestamp", h.timestamp},
              {"subgroup", lower_class(h.group)},
              {"pp", h.params.pipelining},
              {"p", h.params.parallelism},
              {"cc", h.params.concurrency},
              {"window_throughput_bps", h.window_throughput},
              {"window_energy_j", h.window_energy}};
    s += e.dump() + "\n";
  }
  return s;
}

std::string samples_csv(const sla::TransferOutcome& o, const std::string& header_comment) {
  std::vector<sim::SweepPoint> rows;
  if (o.mode == sla::Mode::EnergyEfficiency) {
    for (const auto& p : o.probes)
      rows.push_back({p.concurrency, p.window_throughput, p.window_energy, p.window_seconds, p.ratio});
  } else {
    for (const auto& w : o.windows) {
      const double bits = w.bytes * 8.0;
      rows.push_back({w.concurrency, w.throughput(), w.energy, w.end - w.start, w.energy > 0 ? bits / w.energy : 0.0});
    }
  }
  std::string s;
  if (!header_comment.empty()) s += "# " + header_comment + "\n";
  s += "concurrency,throughput_bps,energy_j,ratio\n";
  for (const auto& r : rows)
    s += std::to_string(r.concurrency) + "," + util::format_double(r.throughput) + "," + util::format_double(r.energy) +
         "," + util::format_double(r.ratio) + "\n";
  return s;
}

ReportRow report_row(const std::string& text, const std::string& source) {
  ReportRow r;
  r.source = source;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const char* k : {"mode", "channel_bound", "throughput_bps", "duration_s", "energy_j"})
      if (!j.contains(k)) throw Error(Errc::SchemaMismatch, source + ": missing field '" + k + "'");
    r.mode = j.at("mode").get<std::string>();
    r.channels = j.at("channel_bound").get<int>();
    r.throughput = j.at("throughput_bps").get<double>();
    r.duration = j.at("duration_s").get<double>();
    r.energy = j.at("energy_j").is_null() ? 0.0 : j.at("energy_j").get<double>();
    r.ratio = r.energy > 0 ? r.throughput * r.duration / r.energy : 0.0;
    if (j.contains("ratio_bits_per_joule") && !j["ratio_bits_per_joule"].is_null()) {
      const double stored = j["ratio_bits_per_joule"].get<double>();
      if (std::abs(stored - r.ratio) > 1e-6 * std::max(1.0, std::abs(r.ratio)))
        throw Error(Errc::SchemaMismatch, source + ": stored ratio disagrees with throughput*duration/energy");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaMismatch, source + ": " + e.what());
  }
  return r;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string s = "source,mode,channels,throughput_bps,energy_j,duration_s,ratio\n";
  for (const auto& r : rows)
    s += r.source + "," + r.mode + "," + std::to_string(r.channels) + "," + util::format_double(r.throughput) + "," +
         util::format_double(r.energy) + "," + util::format_double(r.duration) + "," + util::format_double(r.ratio) + "\n";
  return s;
}

std::vector<int> parse_sweep(const std::string& text) {
  const auto dots = text.find("..");
  std::uint64_t a = 0, b = 0;
  if (dots == std::string::npos || !util::parse_u64(text.substr(0, dots), a) || !util::parse_u64(text.substr(dots + 2), b))
    throw Error(Errc::InvalidArgument, "--sweep wants A..B, got '" + text + "'");
  if (a < 1 || b < a || b > 4096) throw Error(Errc::InvalidArgument, "empty or invalid sweep range '" + text + "'");
  std::vector<int> v;
  for (auto i = a; i <= b; ++i) v.push_back(static_cast<int>(i));
  return v;
}

namespace {

void emit(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
  } else {
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    util::write_file(path, content);
  }
}

sla::SlaOptions sla_options(const RunConfig& cfg) {
  sla::SlaOptions o;
  if (!(cfg.window_secs > 0)) throw Error(Errc::InvalidArgument, "--window-secs must be positive");
  if (cfg.pp_cap < 1) throw Error(Errc::InvalidArgument, "--pp-cap must be >= 1");
  o.window_seconds = cfg.window_secs;
  o.planner.pipelining_cap = cfg.pp_cap;
  return o;
}

int cmd_calibrate(const std::string& csv, const std::string& kind, const std::string& out_path, std::ostream& out) {
  const auto rows = power::read_calibration_csv(csv);
  const auto model = power::fit_model(rows, power::parse_kind(kind));
  const auto text = power::model_to_json(model);
  if (!out_path.empty()) power::save_model(model, out_path);
  out << text << (text.ends_with("\n") ? "" : "\n");
  return kOk;
}

int cmd_transfer(const RunConfig& cfg, const std::string& outcome_path, const std::string& history_path,
                 const std::string& telemetry_path, std::ostream& out, std::ostream& err) {
  if (cfg.manifest.empty()) throw Error(Errc::InvalidArgument, "--manifest is required");
  if (cfg.profile.empty() && !cfg.profile_inline) throw Error(Errc::InvalidArgument, "--profile is required");
  const auto request = make_request(cfg);
  const auto profile = resolve_profile(cfg).network;
  const auto opts = sla_options(cfg);
  const std::string root = cfg.out.empty() ? "." : cfg.out;

  const auto manifest = dataset::read_manifest(cfg.manifest);
  auto resolved = transport::resolve_manifest(manifest);
  for (const auto& w : resolved.warnings) err << "warning: " << w << "\n";

  Grouping groups;
  if (!resolved.files.empty()) groups = planner::group_files(resolved.files, profile, opts.planner);
  groups.unknown_size = resolved.unknown_size;
  if (groups.file_count() == 0) throw Error(Errc::EmptyDataset, "manifest lists no files");

  transport::EngineOptions eo;
  eo.output_root = root;
  eo.verify = cfg.verify;
  std::unique_ptr<telemetry::ProcfsProvider> procfs;
  if (!cfg.power_model.empty()) {
    eo.power_model = power::load_model(cfg.power_model);
    try {
      procfs = std::make_unique<telemetry::ProcfsProvider>();
      eo.metrics = procfs.get();
    } catch (const Error& e) {
      err << "warning: " << e.what() << "; energy unavailable\n";
    }
  }
  transport::RealSession session(groups, resolved.hosts, eo);
  auto outcome = sla::run(request, groups, profile, session, opts);

  auto warnings = resolved.warnings;
  for (const auto& w : session.warnings()) {
    warnings.push_back(w);
    err << "warning: " << w << "\n";
  }
  emit(outcome_path.empty() ? (fs::path(root) / "outcome.json").string() : outcome_path, outcome_to_json(outcome, warnings), out);
  emit(history_path.empty() ? (fs::path(root) / "history.jsonl").string() : history_path, history_jsonl(outcome), out);
  if (!telemetry_path.empty()) {
    const auto tl = session.telemetry_timeline();
    emit(telemetry_path, telemetry::telemetry_csv(tl, session.progress_log()), out);
  }
  err << "moved " << outcome.total_bytes << " bytes in " << outcome.duration << " s, "
      << outcome.achieved_throughput / 1e6 << " Mb/s";
  if (outcome.energy_available) err << ", " << outcome.energy << " J";
  err << "\n";
  for (const auto& f : outcome.failures) err << "failed: " << f << "\n";
  if (!outcome.failures.empty()) return kFileFailed;
  if (outcome.target_unreachable) return kUnreachable;
  return kOk;
}

std::vector<FileEntry> simulate_dataset(const RunConfig& cfg, const std::string& name, int scale) {
  if (!cfg.manifest.empty()) {
    std::vector<FileEntry> files;
    for (const auto& e : dataset::read_manifest(cfg.manifest)) {
      if (!e.size) throw Error(Errc::InvalidArgument, "the simulator needs a size for " + e.url);
      files.push_back({e.url, *e.size});
    }
    return files;
  }
  return dataset::reference(name, cfg.seed, scale);
}

int cmd_simulate(const RunConfig& cfg, const std::string& algo, const std::string& sweep, const std::string& name,
                 int scale, std::optional<int> pp, std::optional<int> p, const std::string& outcome_path,
                 std::ostream& out, std::ostream& err) {
  if (algo.empty() == sweep.empty()) throw Error(Errc::InvalidArgument, "simulate wants exactly one of --algo or --sweep");
  if (scale < 1) throw Error(Errc::InvalidArgument, "--scale must be >= 1");
  const auto profile = resolve_profile(cfg);
  const auto opts = sla_options(cfg);
  const auto files = simulate_dataset(cfg, name, scale);
  const auto groups = planner::group_files(files, profile.network, opts.planner);
  std::ostringstream meta;
  meta << "dataset=" << (cfg.manifest.empty() ? name : cfg.manifest) << " scale=" << scale << " seed=" << cfg.seed
       << " bandwidth_bps=" << util::format_double(profile.network.bandwidth)
       << " rtt_s=" << util::format_double(profile.network.rtt);

  if (!sweep.empty()) {
    sim::SweepSpec spec;
    spec.levels = parse_sweep(sweep);
    spec.pipelining = pp;
    spec.parallelism = p;
    const auto points = sim::throughput_energy_sweep(groups, profile, spec, opts);
    emit(cfg.out, sim::sweep_to_csv(points, meta.str()), out);
    auto best = std::max_element(points.begin(), points.end(),
                                 [](const auto& a, const auto& b) { return a.ratio < b.ratio; });
    err << "best ratio at concurrency " << best->concurrency << "\n";
    return kOk;
  }

  RunConfig c = cfg;
  c.sla = algo;
  const auto request = make_request(c);
  sim::SimulatedSession session(groups, profile);
  const auto outcome = sla::run(request, groups, profile.network, session, opts);
  meta << " algo=" << sla::mode_name(request.mode);
  emit(cfg.out, samples_csv(outcome, meta.str()), out);
  if (!outcome_path.empty()) emit(outcome_path, outcome_to_json(outcome), out);
  std::ostream& summary = cfg.out.empty() || cfg.out == "-" ? err : out;
  if (outcome.chosen_concurrency) summary << "chosen level " << *outcome.chosen_concurrency << "\n";
  summary << "throughput_bps " << util::format_double(outcome.achieved_throughput) << "\n"
          << "energy_j " << util::format_double(outcome.energy) << "\n"
          << "ratio " << util::format_double(outcome.ratio()) << "\n";
  if (outcome.target_unreachable) {
    summary << "target unreachable at " << outcome.final_concurrency << " channels\n";
    return kUnreachable;
  }
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::vector<std::string>& telemetry_files,
               const std::string& model_path, const std::string& out_path, const std::string& energy_out,
               std::ostream& out) {
  if (inputs.empty() && telemetry_files.empty()) throw Error(Errc::InvalidArgument, "report needs at least one input");
  if (!inputs.empty()) {
    std::vector<ReportRow> rows;
    for (const auto& path : inputs) {
      std::string text;
      try {
        text = util::read_file(path);
      } catch (const std::exception&) {
        throw Error(Errc::SchemaMismatch, path + ": cannot read");
      }
      rows.push_back(report_row(text, path));
    }
    emit(out_path, report_csv(rows), out);
  }
  if (!telemetry_files.empty()) {
    if (model_path.empty()) throw Error(Errc::InvalidArgument, "--telemetry needs --power-model");
    const auto model = power::load_model(model_path);
    std::string csv = "source,samples,duration_s,energy_j\n";
    double total = 0.0;
    for (const auto& path : telemetry_files) {
      const auto tl = telemetry::read_telemetry_csv(path);
      if (tl.size() < 2) throw Error(Errc::SchemaMismatch, path + ": needs at least two samples");
      const auto rep = power::integrate_energy(model, tl);
      total += rep.total_energy;
      csv += path + "," + std::to_string(tl.size()) + "," + util::format_double(rep.duration) + "," +
             util::format_double(rep.total_energy) + "\n";
    }
    csv += "total,,," + util::format_double(total) + "\n";
    if (!inputs.empty() && (energy_out.empty() || energy_out == "-") && (out_path.empty() || out_path == "-")) out << "\n";
    emit(energy_out, csv, out);
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    if (const char* path = std::getenv("HTTPWATT_CONFIG"); path && *path) cfg = config_from_json(util::read_file(path));
  } catch (const Error& e) {
    err << "HTTPWATT_CONFIG: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "HTTPWATT_CONFIG: " << e.what() << "\n";
    return kUsage;
  }

  CLI::App app{"Energy-aware HTTP bulk downloader"};
  app.require_subcommand(1);
  auto common = [&](CLI::App* s) {
    s->add_option("--profile", cfg.profile, "profile JSON, or bandwidth_bps,rtt_s,tcp_buffer_bytes");
    s->add_option("--window-secs", cfg.window_secs, "measurement window (s)");
    s->add_option("--pp-cap", cfg.pp_cap, "pipelining cap");
    s->add_option("--sla", cfg.sla, "min-energy|max-throughput|energy-efficiency|flexible");
    s->add_option("--channels", cfg.channels, "channel count (min-energy, max-throughput)");
    s->add_option("--max-channels", cfg.max_channels, "channel bound (energy-efficiency, flexible)");
    s->add_option("--target-pct", cfg.target_pct, "flexible target, percent of --reference");
    s->add_option("--reference", cfg.reference, "reference throughput (bits/s)");
    s->add_option("--manifest", cfg.manifest, "lines of '<url> [size_bytes]'");
  };

  auto* calibrate = app.add_subcommand("calibrate", "fit a power model from a calibration CSV");
  std::string calib_csv, kind = "fine", model_out;
  calibrate->add_option("csv", calib_csv, "timestamp,cpu,mem,disk,nic,power_watts")->required();
  calibrate->add_option("--kind", kind, "fine|cpu");
  calibrate->add_option("--out", model_out, "model JSON to write");

  auto* transfer = app.add_subcommand("transfer", "download a manifest under an SLA");
  std::string outcome_path, history_path, telemetry_path;
  common(transfer);
  transfer->add_option("--out", cfg.out, "output root");
  transfer->add_option("--power-model", cfg.power_model, "model JSON from calibrate");
  transfer->add_flag("--verify", cfg.verify, "write a .sha256 sidecar per file");
  transfer->add_option("--outcome", outcome_path, "outcome JSON (default <out>/outcome.json)");
  transfer->add_option("--history", history_path, "parameter history JSONL (default <out>/history.jsonl)");
  transfer->add_option("--telemetry-csv", telemetry_path, "raw telemetry CSV");

  auto* simulate = app.add_subcommand("simulate", "run an algorithm or a sweep on the simulator");
  std::string algo, sweep, name = "html", sim_outcome;
  int scale = 1;
  std::optional<int> pp, p;
  common(simulate);
  simulate->add_option("--algo", algo, "min-energy|max-throughput|ee|flexible");
  simulate->add_option("--sweep", sweep, "concurrency range A..B");
  simulate->add_option("--dataset", name, "html|image|video|mixed");
  simulate->add_option("--scale", scale, "dataset size multiplier");
  simulate->add_option("--pipelining", pp, "sweep: fixed pipelining");
  simulate->add_option("--parallelism", p, "sweep: fixed parallelism");
  simulate->add_option("--seed", cfg.seed, "dataset and jitter seed");
  simulate->add_option("--out", cfg.out, "CSV path (default stdout)");
  simulate->add_option("--outcome", sim_outcome, "outcome JSON for --algo runs");

  auto* report = app.add_subcommand("report", "summarize outcome JSONs, merge host telemetry");
  std::vector<std::string> inputs, telemetry_files;
  std::string report_out, energy_out, report_model;
  report->add_option("outcomes", inputs, "outcome JSON files");
  report->add_option("--telemetry", telemetry_files, "telemetry CSV per host (summed)");
  report->add_option("--power-model", report_model, "model for --telemetry");
  report->add_option("--out", report_out, "CSV path (default stdout)");
  report->add_option("--energy-out", energy_out, "telemetry CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*calibrate) return cmd_calibrate(calib_csv, kind, model_out, out);
    if (*transfer) return cmd_transfer(cfg, outcome_path, history_path, telemetry_path, out, err);
    if (*simulate) return cmd_simulate(cfg, algo, sweep, name, scale, pp, p, sim_outcome, out, err);
    if (*report) return cmd_report(inputs, telemetry_files, report_model, report_out, energy_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace httpwatt::cli
