// greyfiber: scenario runner, report regeneration and service-mode daemons.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "greyfiber/error.hpp"
#include "greyfiber/harness.hpp"
#include "greyfiber/service.hpp"

using namespace gf;

namespace {

void print_checks(const harness::Report& r) {
  for (const auto& c : r.checks) {
    std::string value = c["value"].is_null() ? "n/a" : fmt::format("{:.6g}", c["value"].get<double>());
    fmt::print("  {} {}: {}\n", c["pass"].get<bool>() ? "ok  " : "FAIL", c["name"].get<std::string>(), value);
  }
  fmt::print("{}: {}\n", r.scenario, r.pass ? "pass" : "FAIL");
}

int run_scenario(const std::string& file, std::optional<std::uint64_t> seed, const std::string& out) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open " + file);
  auto j = nlohmann::json::parse(in);
  auto sc = harness::load_scenario(file);
  auto result = harness::run_scenario(sc, seed.value_or(sc.seed));
  harness::write_outputs(out, sc, j, result);
  fmt::print("{} events, {} stage records, {} rate points -> {}\n", result.events_processed, result.events.size(),
             result.trace.size(), out);
  print_checks(result.report);
  return result.report.pass ? 0 : 1;
}

int report(const std::string& dir) {
  auto r = harness::report_from_dir(dir);
  std::cout << harness::to_json(r).dump(2) << "\n";
  print_checks(r);
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GreyFiber control plane and experiment harness"};
  app.require_subcommand(1);

  std::string scenario_file, out_dir = "out";
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run-scenario", "Run a scenario under the virtual clock");
  run->add_option("file", scenario_file, "scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--out", out_dir, "output directory");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Rebuild report.json from a run directory");
  rep->add_option("dir", report_dir, "directory written by run-scenario")->required()->check(CLI::ExistingDirectory);

  service::GgcServiceOptions ggc_opts;
  auto* serve_ggc = app.add_subcommand("serve-ggc", "Run the global controller on the wall clock");
  serve_ggc->add_option("--listen", ggc_opts.listen_port, "site/client port (0 picks one)");
  serve_ggc->add_option("--topology", ggc_opts.topology_file, "seller topology registered at start-up");
  serve_ggc->add_option("--mechanism", ggc_opts.mechanism, "gsp or vcg");
  serve_ggc->add_option("--backup", ggc_opts.backup, "local or none");
  serve_ggc->add_option("--events", ggc_opts.events_file, "append stage records here");

  service::GlscServiceOptions glsc_opts;
  auto* serve_glsc = app.add_subcommand("serve-glsc", "Run one site controller against a GGC");
  serve_glsc->add_option("--site", glsc_opts.site, "site id")->required();
  serve_glsc->add_option("--ggc", glsc_opts.ggc, "host:port of the GGC")->required();
  serve_glsc->add_option("--profile", glsc_opts.profile, "ideal, optical or geni");
  serve_glsc->add_option("--monitor-interval", glsc_opts.monitor_interval_s, "seconds between probes");

  service::ExchangeServiceOptions ex_opts;
  auto* serve_ex = app.add_subcommand("serve-exchange", "Run a standalone sealed-bid exchange");
  serve_ex->add_option("--listen", ex_opts.listen_port, "port (0 picks one)");
  serve_ex->add_option("--mechanism", ex_opts.mechanism, "gsp or vcg");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return run_scenario(scenario_file, seed, out_dir);
    if (*rep) return report(report_dir);
    if (*serve_ggc) return service::serve_ggc(ggc_opts);
    if (*serve_glsc) return service::serve_glsc(glsc_opts);
    if (*serve_ex) return service::serve_exchange(ex_opts);
  } catch (const Error& e) {
    fmt::print(stderr, "greyfiber: {} ({})\n", e.what(), errc_name(e.code()));
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "greyfiber: {}\n", e.what());
    return 2;
  }
  return 0;
}
