#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "greyfiber/ggc.hpp"
#include "greyfiber/substrate.hpp"
#include "greyfiber/topology.hpp"

namespace gf::harness {

struct ScriptedRequest {
  Millis at{0};
  ggc::ResourceRequest request;
};

// Pre-configured OSPF backup path, idle until a failure severs the primary.
struct StandbyLane {
  NodeId a;
  NodeId b;
  std::vector<LinkId> links;
  Bps capacity = 0;
};

// Seeded request generator over the scenario's node pairs.
struct RandomRequests {
  std::size_t count = 0;
  Millis start{0};
  Millis spacing{1000};
  double duration_s = 60.0;
  std::uint32_t max_strands = 1;
  std::int64_t max_bid = 10;  // whole units
  Bps capacity = 1'000'000;
};

// A named check on one report metric. The metric object carries a "kind"
// and its parameters; the check passes when min <= value <= max.
struct Expectation {
  std::string name;
  nlohmann::json metric;
  std::optional<double> min;
  std::optional<double> max;
};

struct Scenario {
  std::string name;
  topology::TopologyDocument topology;
  std::string profile = "ideal";
  exchange::Mechanism mechanism = exchange::Mechanism::GSP;
  ggc::BackupMode backup = ggc::BackupMode::Local;
  Millis monitor_interval{1000};
  substrate::FlowModelParams flow_model;
  std::optional<substrate::OspfTimers> ospf;
  std::vector<StandbyLane> standby;
  std::map<LinkId, Money> reserves;
  std::vector<ScriptedRequest> requests;
  std::optional<RandomRequests> random_requests;
  std::vector<substrate::Flow> flows;
  substrate::FailureSchedule failures;
  std::vector<Expectation> expectations;
  std::uint64_t seed = 1;
  Millis start{0};
  Millis horizon{0};

  // Every scripted event falls inside [start, horizon].
  void validate() const;
};

// `base_dir` resolves a topology given as a file name.
Scenario parse_scenario(const nlohmann::json& j, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);

// ---------------------------------------------------------------------------

struct StageTimings {
  RequestId request;
  double exchange = 0.0;  // accept_bid + auction + winner_notify
  double config_generation = 0.0;
  double circuit_creation = 0.0;
  double client_request_total = 0.0;  // first stage start to last stage end
  double protocol = 0.0;              // everything else inside the total
  double internal = 0.0;              // sum of stage durations except circuit creation
  bool complete = false;              // one record for every stage
};

// Per-request breakdown, ordered by request id. Throws MalformedLog on a
// duplicated stage or an inverted interval.
std::vector<StageTimings> overhead_breakdown(const std::vector<ggc::StageRecord>& log);

struct Recovery {
  Millis fail{0};
  std::optional<Millis> lag;
};

struct Report {
  std::string scenario;
  std::uint64_t seed = 0;
  double bits_total = 0.0;
  std::map<std::string, double> bits_per_flow;
  std::vector<Recovery> recoveries;
  std::vector<StageTimings> timings;
  std::size_t granted = 0;
  nlohmann::json checks = nlohmann::json::array();
  bool pass = true;
};

nlohmann::json to_json(const Report& r);
Report report_from_json(const nlohmann::json& j);

// Pure post-processing: the report depends only on its inputs.
Report build_report(const Scenario& scenario, const std::vector<ggc::StageRecord>& log,
                    const substrate::RateTrace& trace);

// Evaluates one metric object against a finished run.
double evaluate_metric(const nlohmann::json& metric, const std::vector<ggc::StageRecord>& log,
                       const substrate::RateTrace& trace, const std::vector<StageTimings>& timings);

// OSPF lag over GreyFiber lag, from the first failure of each report.
double compare_backups(const Report& greyfiber, const Report& ospf);

// ---------------------------------------------------------------------------

struct RunOptions {
  // Checks graph invariants after every scheduler event.
  bool verify_each_event = false;
};

struct RunResult {
  std::vector<ggc::StageRecord> events;
  substrate::RateTrace trace;
  Report report;
  std::vector<ggc::LeaseOutcome> outcomes;
  std::vector<ggc::BackupRecord> backups;
  topology::CounterSnapshot initial;
  topology::CounterSnapshot final;
  std::size_t events_processed = 0;
  std::size_t verifications = 0;
};

RunResult run_scenario(const Scenario& scenario, std::uint64_t seed, const RunOptions& options = {});

// events.jsonl, rates.csv, report.json and a copy of the scenario.
void write_outputs(const std::string& dir, const Scenario& scenario, const nlohmann::json& scenario_json,
                   const RunResult& result);
// Rebuilds report.json from the files written above.
Report report_from_dir(const std::string& dir);

// ---------------------------------------------------------------------------

// A small random topology with requests that expire and links that fail and
// come back, all inside the horizon.
Scenario random_workload(std::uint64_t seed);

struct AccountingResult {
  bool counters_restored = false;
  std::size_t events = 0;
  std::size_t granted = 0;
  std::size_t backups = 0;
  std::string error;  // first invariant violation, if any
};
AccountingResult accounting_trial(std::uint64_t seed);

}  // namespace gf::harness
