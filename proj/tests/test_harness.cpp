#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "greyfiber/error.hpp"
#include "greyfiber/harness.hpp"

using namespace gf;
using namespace gf::harness;
using nlohmann::json;

namespace {

std::string fixture(const std::string& name) { return std::string(GREYFIBER_FIXTURES) + "/scenarios/" + name + ".json"; }

json fixture_json(const std::string& name) {
  std::ifstream in(fixture(name));
  return json::parse(in);
}

Scenario with(const std::string& name, const std::function<void(json&)>& edit) {
  auto j = fixture_json(name);
  edit(j);
  return parse_scenario(j, std::string(GREYFIBER_FIXTURES) + "/scenarios");
}

Report report_with_lag(double lag) {
  Report r;
  r.scenario = "x";
  r.recoveries.push_back({from_seconds(60), from_seconds(lag)});
  return r;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected gf::Error");
  return Errc::InvalidArgument;
}

}  // namespace

TEST_CASE("scenario files load and validate") {
  for (auto name : {"scaling", "overhead", "throughput-steps-geni", "throughput-steps-cloudlab", "outage-none",
                    "outage-nobackup", "outage-ospf", "outage-greyfiber"}) {
    CAPTURE(name);
    auto s = load_scenario(fixture(name));
    CHECK(s.name == name);
    CHECK(!s.expectations.empty());
  }
  CHECK(code_of([] { with("overhead", [](json& j) { j["horizon_s"] = 5; }); }) == Errc::SchemaViolation);
  CHECK(code_of([] { with("overhead", [](json& j) { j.erase("name"); }); }) == Errc::SchemaViolation);
  CHECK(code_of([] {
          with("outage-greyfiber", [](json& j) { j["failures"][0]["link"] = "nope"; });
        }) == Errc::SchemaViolation);
}

TEST_CASE("overhead breakdown") {
  auto s = load_scenario(fixture("overhead"));
  auto run = run_scenario(s, 1);
  auto t = overhead_breakdown(run.events);
  REQUIRE(t.size() == 5);
  for (const auto& x : t) {
    CHECK(x.complete);
    CHECK(x.circuit_creation == 0.0);
    CHECK(x.internal > 0.0);
    CHECK(x.internal < 0.5);
    CHECK(x.exchange == doctest::Approx(0.177));
    CHECK(x.client_request_total >= x.exchange + x.config_generation + x.circuit_creation);
  }

  auto geni = with("overhead", [](json& j) { j["profile"] = "geni"; j["horizon_s"] = 200; });
  for (auto& r : geni.requests) r.at = r.at * 4;
  auto g = overhead_breakdown(run_scenario(geni, 1).events);
  CHECK(g.front().circuit_creation / g.front().client_request_total > 0.95);

  // Malformed logs.
  std::vector<ggc::StageRecord> dup{{RequestId{1}, ggc::Stage::Auction, Millis{0}, Millis{1}},
                                    {RequestId{1}, ggc::Stage::Auction, Millis{1}, Millis{2}}};
  CHECK(code_of([&] { overhead_breakdown(dup); }) == Errc::MalformedLog);
  std::vector<ggc::StageRecord> inverted{{RequestId{1}, ggc::Stage::Auction, Millis{5}, Millis{1}}};
  CHECK(code_of([&] { overhead_breakdown(inverted); }) == Errc::MalformedLog);
}

TEST_CASE("compare_backups") {
  CHECK(compare_backups(report_with_lag(1.25), report_with_lag(36)) == doctest::Approx(28.8));
  CHECK(compare_backups(report_with_lag(7), report_with_lag(7)) == 1.0);
  Report none;
  none.scenario = "none";
  CHECK(code_of([&] { compare_backups(none, report_with_lag(36)); }) == Errc::MissingRecovery);
  none.recoveries.push_back({from_seconds(60), std::nullopt});
  CHECK(code_of([&] { compare_backups(report_with_lag(1), none); }) == Errc::MissingRecovery);
}

TEST_CASE("faster probing shortens recovery") {
  auto gf_fast = with("outage-greyfiber", [](json& j) { j["monitor_interval_s"] = 0.1; });
  auto fast = run_scenario(gf_fast, 1).report;
  REQUIRE(fast.recoveries.front().lag);
  CHECK(*fast.recoveries.front().lag == Millis{340});
  auto ospf = run_scenario(load_scenario(fixture("outage-ospf")), 1).report;
  CHECK(compare_backups(fast, ospf) > 100.0);
}

TEST_CASE("runs are reproducible and reports regenerate from outputs") {
  auto s = load_scenario(fixture("throughput-steps-geni"));
  auto a = run_scenario(s, 7);
  auto b = run_scenario(s, 7);
  CHECK(a.events == b.events);
  CHECK(a.trace == b.trace);
  CHECK(to_json(a.report) == to_json(b.report));

  auto dir = std::filesystem::temp_directory_path() / "greyfiber-test-run";
  std::filesystem::remove_all(dir);
  write_outputs(dir.string(), s, fixture_json("throughput-steps-geni"), a);
  CHECK(to_json(report_from_dir(dir.string())) == to_json(a.report));
  CHECK(report_from_json(to_json(a.report)).bits_total == a.report.bits_total);
  std::filesystem::remove_all(dir);
}

TEST_CASE("seeded random requests") {
  auto s = with("overhead", [](json& j) {
    j["requests"] = json::array();
    j["random_requests"] = {{"count", 8}, {"spacing_s", 2.0}, {"duration_s", 5.0}, {"max_strands", 2}};
    j["expectations"] = json::array();
  });
  auto a = run_scenario(s, 3);
  auto b = run_scenario(s, 3);
  auto c = run_scenario(s, 4);
  CHECK(a.events == b.events);
  CHECK(a.outcomes.size() == 8);
  bool differs = a.events != c.events;
  for (std::size_t i = 0; !differs && i < a.outcomes.size(); ++i)
    differs = a.outcomes[i].client != c.outcomes[i].client || a.outcomes[i].payment != c.outcomes[i].payment;
  CHECK(differs);
}

TEST_CASE("metrics") {
  auto s = load_scenario(fixture("outage-greyfiber"));
  auto run = run_scenario(s, 1);
  auto timings = overhead_breakdown(run.events);
  auto metric = [&](json m) { return evaluate_metric(m, run.events, run.trace, timings); };
  CHECK(metric({{"kind", "bits_total"}, {"from_s", 0}, {"to_s", 60}}) == doctest::Approx(20.78e6 * 60));
  CHECK(metric({{"kind", "mean_rate"}, {"flow", "iperf"}, {"from_s", 10}, {"to_s", 20}}) == doctest::Approx(20.78e6));
  CHECK(metric({{"kind", "recovery_lag"}, {"fail_s", 60}}) == doctest::Approx(1.24));
  CHECK(metric({{"kind", "stage_seconds"}, {"request", 1}, {"stage", "circuit_creation"}}) == doctest::Approx(0.24));
  CHECK(metric({{"kind", "granted"}}) == 1.0);
  CHECK(std::isnan(metric({{"kind", "stage_seconds"}, {"request", 9}, {"stage", "auction"}})));
  CHECK(code_of([&] { metric({{"kind", "vibes"}}); }) == Errc::SchemaViolation);
}

TEST_CASE("random accounting workloads") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    CAPTURE(seed);
    auto r = accounting_trial(seed);
    CHECK(r.error == "");
    CHECK(r.counters_restored);
    CHECK(r.events > 0);
  }
}
