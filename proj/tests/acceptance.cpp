// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "auction_oracle.hpp"
#include "builders.hpp"
#include "greyfiber/harness.hpp"
#include "greyfiber/service.hpp"
#include "greyfiber/substrate.hpp"

using namespace gf;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixture(const std::string& name) { return std::string(GREYFIBER_FIXTURES) + "/scenarios/" + name + ".json"; }

harness::RunResult run(const std::string& name) { return harness::run_scenario(harness::load_scenario(fixture(name)), 1); }

bool within(double v, double target, double tol) { return std::fabs(v - target) <= std::fabs(target) * tol; }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int n, const std::string& title, const std::function<Verdict()>& check) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, fmt::format("exception: {}", e.what())};
  }
  if (!v.pass) ++failures;
  fmt::print("{} {} {}: {}\n", v.pass ? "PASS" : "FAIL", n, title, v.detail);
  std::fflush(stdout);
}

// Bid grid shared by the first two criteria.
template <class Fn>
void for_each_case(Fn&& fn) {
  for (std::size_t n = 1; n <= 4; ++n)
    for (std::size_t k = 1; k <= 3; ++k)
      for (std::int64_t reserve : {0, 2}) oracle::for_each_profile(n, 6, [&](const auto& bids) { fn(k, reserve, bids); });
}

Verdict oracle_equivalence() {
  auto t0 = Clock::now();
  std::size_t cases = 0, mismatches = 0;
  for_each_case([&](std::size_t k, std::int64_t reserve, const std::vector<exchange::Bid>& bids) {
    ++cases;
    auto g = oracle::observe(exchange::Mechanism::GSP, k, reserve, bids);
    auto og = oracle::gsp(k, reserve, bids);
    auto v = oracle::observe(exchange::Mechanism::VCG, k, reserve, bids);
    auto ov = oracle::vcg(k, reserve, bids);
    if (g.empty != og.empty || g.payments != og.payments) ++mismatches;
    if (v.empty != ov.empty || v.payments != ov.payments) ++mismatches;
  });
  double s = since(t0);
  return {mismatches == 0 && s < 5.0,
          fmt::format("{} profiles x 2 mechanisms, {} mismatches, {:.2f} s", cases, mismatches, s)};
}

Verdict vcg_truthfulness() {
  auto t0 = Clock::now();
  std::size_t checks = 0, violations = 0;
  for_each_case([&](std::size_t k, std::int64_t reserve, const std::vector<exchange::Bid>& truthful) {
    for (std::size_t i = 0; i < truthful.size(); ++i) {
      auto honest = oracle::observed_payoff(exchange::Mechanism::VCG, k, reserve, truthful, truthful[i].bidder);
      for (std::int64_t d = 0; d <= 6; ++d) {
        if (d == truthful[i].amount.micros) continue;
        auto bids = truthful;
        bids[i].amount = Money{d};  // the value stays put
        ++checks;
        if (oracle::observed_payoff(exchange::Mechanism::VCG, k, reserve, bids, truthful[i].bidder) > honest)
          ++violations;
      }
    }
  });
  double s = since(t0);
  return {violations == 0 && s < 10.0,
          fmt::format("{} unilateral deviations, {} profitable, {:.2f} s", checks, violations, s)};
}

Verdict throughput_steps() {
  auto t0 = Clock::now();
  std::vector<std::string> notes;
  bool ok = true;
  auto check = [&](const std::string& name, double per_link, double eta) {
    auto r = run(name);
    auto flows = substrate::trace_flows(r.trace);
    ok = ok && flows.size() == 5;
    std::vector<std::string> epochs;
    for (int k = 0; k < 5; ++k) {
      double target = per_link * (k + 1) / 5.0 * eta;
      double lo = 1e300, hi = 0;
      // Steady state: the second half of each 30 s epoch.
      for (const auto& f : flows) {
        double m = substrate::mean_rate(r.trace, f, from_seconds(30.0 * k + 15), from_seconds(30.0 * k + 30));
        lo = std::min(lo, m);
        hi = std::max(hi, m);
      }
      ok = ok && within(lo, target, 0.01) && within(hi, target, 0.01);
      epochs.push_back(fmt::format("{:.4g}", lo));
    }
    notes.push_back(fmt::format("{} [{}] b/s", name, fmt::join(epochs, ", ")));
  };
  check("throughput-steps-geni", 20e6, 1.0);
  check("throughput-steps-cloudlab", 10e9, 0.955);
  double s = since(t0);
  return {ok && s < 5.0, fmt::format("{}; {:.2f} s", fmt::join(notes, "; "), s)};
}

struct Outage {
  double bits[4] = {0, 0, 0, 0};
  std::optional<double> lag[4];
  harness::Report reports[4];
};

const Outage& outage() {
  static Outage o = [] {
    Outage out;
    const char* names[] = {"outage-none", "outage-nobackup", "outage-ospf", "outage-greyfiber"};
    for (int i = 0; i < 4; ++i) {
      auto r = run(names[i]);
      out.bits[i] = substrate::bits_transferred(r.trace, Millis{0}, from_seconds(i == 2 ? 100 : 90));
      if (auto lag = substrate::recovery_lag(r.trace, from_seconds(60)); lag && i > 0) out.lag[i] = to_seconds(*lag);
      out.reports[i] = r.report;
    }
    return out;
  }();
  return o;
}

Verdict outage_scenarios() {
  auto t0 = Clock::now();
  const auto& o = outage();
  double s = since(t0);
  bool s1 = within(o.bits[0], 20.78e6 * 90, 0.02);
  bool s2 = within(o.bits[1], 1.23e9, 0.05);
  bool s3 = o.lag[2] && *o.lag[2] == 36.0;
  bool s4 = o.lag[3] && *o.lag[3] <= 1.25 && o.bits[3] >= 1.7e9;
  bool order = o.bits[0] >= o.bits[3] && o.bits[3] >= o.bits[2] && o.bits[2] >= o.bits[1];
  auto lag = [](const std::optional<double>& l) { return l ? fmt::format("{:.2f} s", *l) : std::string("none"); };
  return {s1 && s2 && s3 && s4 && order && s < 10.0,
          fmt::format("totals {:.3f}/{:.3f}/{:.3f}/{:.3f} Gb, lags ospf {} greyfiber {}, ordering {}, {:.2f} s",
                      o.bits[0] / 1e9, o.bits[1] / 1e9, o.bits[2] / 1e9, o.bits[3] / 1e9, lag(o.lag[2]), lag(o.lag[3]),
                      order ? "holds" : "broken", s)};
}

Verdict speedup() {
  const auto& o = outage();
  double ratio = harness::compare_backups(o.reports[3], o.reports[2]);
  return {ratio >= 28.0, fmt::format("{:.1f}x", ratio)};
}

Verdict scaling() {
  auto t0 = Clock::now();
  auto sc = harness::load_scenario(fixture("scaling"));
  auto r = harness::run_scenario(sc, 1);
  std::map<std::size_t, std::uint64_t> request_for;  // n -> request id, in submission order
  for (std::size_t i = 0; i < sc.requests.size(); ++i) request_for[sc.requests[i].request.strands_needed] = i + 1;
  bool ok = true;
  std::vector<std::string> rows;
  double cfg_lo = 1e9, cfg_hi = 0;
  for (std::size_t n : {1, 5, 10, 50}) {
    double circuit = -1, cfg = -1;
    for (const auto& e : r.events) {
      if (e.request_id.value != request_for.at(n)) continue;
      if (e.stage == ggc::Stage::CircuitCreation) circuit = to_seconds(e.t_end - e.t_start);
      if (e.stage == ggc::Stage::ConfigGeneration) cfg = to_seconds(e.t_end - e.t_start);
    }
    double table = 0;
    for (const auto& p : substrate::geni_table())
      if (p.links == n) table = p.seconds;
    ok = ok && circuit == table && cfg > 0;
    cfg_lo = std::min(cfg_lo, cfg);
    cfg_hi = std::max(cfg_hi, cfg);
    rows.push_back(fmt::format("n={} {:.0f} s", n, circuit));
  }
  ok = ok && cfg_hi < 3 * cfg_lo;
  double s = since(t0);
  return {ok && s < 5.0, fmt::format("{}; config generation {:.3f}-{:.3f} s; {:.2f} s wall", fmt::join(rows, ", "),
                                     cfg_lo, cfg_hi, s)};
}

Verdict overhead_bound() {
  using proto::MsgType;
  service::GgcServer ggc(service::GgcServiceOptions{});
  ggc.start();
  auto addr = fmt::format("127.0.0.1:{}", ggc.port());
  service::GlscClient sa({"SA", addr, "ideal", 1.0}), sb({"SB", addr, "ideal", 1.0});
  sa.start();
  sb.start();
  service::Client seller(addr), buyer(addr);
  seller.request(MsgType::REGISTER_SELLER,
                 {{"seller", "seller1"}, {"topology", testing::topology_json({"A", "B"}, {{"c1", "A", "B", 10}})}});
  buyer.request(MsgType::REGISTER_BUYER, {{"client_name", "h1"}});
  const int requests = 10;
  int granted = 0;
  double round_trip = 0;  // submit to auction result, as the buyer sees it
  for (int i = 0; i < requests; ++i) {
    auto sent = Clock::now();
    json req{{"endpoint_a", "A"},        {"endpoint_b", "B"}, {"strands_needed", 1},
             {"bid_amount", 1'000'000}, {"time", {{"start", 0.0}, {"duration_s", 600}}},
             {"capacity_needed_bps", 1'000'000}, {"client_name", "h1"}};
    buyer.request(MsgType::SUBMIT_BID, {{"request", req}});
    if (buyer.next_unsolicited().body["disposition"] == "granted") ++granted;
    round_trip = std::max(round_trip, since(sent));
  }
  auto timings = harness::overhead_breakdown(ggc.events());
  sa.stop();
  sb.stop();
  ggc.stop();
  double worst = 0, sum = 0;
  for (const auto& t : timings) {
    worst = std::max(worst, t.internal);
    sum += t.internal;
  }
  bool ok = granted == requests && timings.size() == requests && worst < 0.5 && round_trip < 0.5;
  return {ok, fmt::format("{} granted over loopback TCP, internal stages mean {:.1f} ms, max {:.1f} ms, "
                          "slowest client round trip {:.1f} ms",
                          granted, 1e3 * sum / std::max<std::size_t>(1, timings.size()), 1e3 * worst,
                          1e3 * round_trip)};
}

Verdict accounting() {
  auto t0 = Clock::now();
  std::size_t restored = 0, events = 0, granted = 0, backups = 0;
  std::string first_error;
  const std::uint64_t trials = 1000;
  for (std::uint64_t seed = 1; seed <= trials; ++seed) {
    auto r = harness::accounting_trial(seed);
    if (r.counters_restored && r.error.empty())
      ++restored;
    else if (first_error.empty())
      first_error = fmt::format("seed {}: {}", seed, r.error);
    events += r.events;
    granted += r.granted;
    backups += r.backups;
  }
  double s = since(t0);
  return {restored == trials && s < 60.0,
          fmt::format("{}/{} workloads restored, {} events checked, {} leases, {} backups, {:.1f} s{}", restored, trials,
                      events, granted, backups, s, first_error.empty() ? "" : "; " + first_error)};
}

Verdict determinism() {
  std::size_t identical = 0, total = 0;
  auto lines = [](const harness::RunResult& r) {
    std::string out;
    for (const auto& e : r.events) out += ggc::EventLog::line(e) + "\n";
    return out;
  };
  for (auto name : {"scaling", "overhead", "throughput-steps-geni", "throughput-steps-cloudlab", "outage-none",
                    "outage-nobackup", "outage-ospf", "outage-greyfiber"}) {
    auto sc = harness::load_scenario(fixture(name));
    ++total;
    if (lines(harness::run_scenario(sc, 42)) == lines(harness::run_scenario(sc, 42))) ++identical;
  }
  for (std::uint64_t seed : {5, 77, 901}) {
    auto sc = harness::random_workload(seed);
    ++total;
    if (lines(harness::run_scenario(sc, seed)) == lines(harness::run_scenario(sc, seed))) ++identical;
  }
  return {identical == total, fmt::format("{}/{} scenarios byte-identical across two runs", identical, total)};
}

}  // namespace

int main() {
  report(1, "auction oracle equivalence", oracle_equivalence);
  report(2, "VCG truthfulness", vcg_truthfulness);
  report(3, "throughput steps", throughput_steps);
  report(4, "outage scenarios", outage_scenarios);
  report(5, "backup speedup", speedup);
  report(6, "scaling pipeline", scaling);
  report(7, "overhead bound", overhead_bound);
  report(8, "resource accounting", accounting);
  report(9, "determinism", determinism);
  return failures;
}
