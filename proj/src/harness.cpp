#include "greyfiber/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "greyfiber/error.hpp"
#include "greyfiber/glsc.hpp"
#include "greyfiber/sim.hpp"

namespace gf::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(Errc::SchemaViolation, fmt::format("missing field '{}'", key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, fmt::format("field '{}': {}", key, e.what()));
  }
}

Millis seconds_field(const json& j, const char* key, double fallback) {
  return from_seconds(j.contains(key) ? field<double>(j, key) : fallback);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::InvalidArgument, fmt::format("cannot open {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::InvalidArgument, fmt::format("cannot write {}", path.string()));
  out << text;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, fmt::format("{}: {}", what, e.what()));
  }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// Scenario files

void Scenario::validate() const {
  if (name.empty()) throw Error(Errc::SchemaViolation, "scenario needs a name");
  if (horizon < start) throw Error(Errc::SchemaViolation, "horizon precedes start");
  flow_model.validate();
  if (ospf) ospf->validate();
  if (monitor_interval.count() <= 0) throw Error(Errc::SchemaViolation, "monitor interval must be positive");
  auto inside = [&](Millis t, const std::string& what) {
    if (t < start || t > horizon)
      throw Error(Errc::SchemaViolation, fmt::format("{} at {:.3f} s lies outside the horizon", what, to_seconds(t)));
  };
  std::set<LinkId> links;
  for (const auto& l : topology.links) links.insert(l.id);
  for (const auto& r : requests) {
    inside(r.at, "request");
    r.request.validate();
  }
  for (const auto& f : flows) {
    inside(f.start, "flow " + f.id);
    inside(f.stop, "flow " + f.id);
    if (f.stop < f.start) throw Error(Errc::SchemaViolation, "flow " + f.id + " stops before it starts");
  }
  for (const auto& f : failures) {
    if (!links.count(f.link)) throw Error(Errc::SchemaViolation, "failure names unknown link " + f.link.str());
    inside(f.fail, "failure");
    if (f.repair) inside(*f.repair, "repair");
  }
  for (const auto& s : standby)
    for (const auto& l : s.links)
      if (!links.count(l)) throw Error(Errc::SchemaViolation, "standby lane names unknown link " + l.str());
  if (random_requests) {
    const auto& rr = *random_requests;
    if (rr.count && rr.spacing.count() <= 0) throw Error(Errc::SchemaViolation, "random request spacing must be positive");
    if (rr.count) inside(rr.start + rr.spacing * static_cast<std::int64_t>(rr.count - 1), "random request");
  }
}

Scenario parse_scenario(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw Error(Errc::SchemaViolation, "scenario must be an object");
  Scenario s;
  s.name = field<std::string>(j, "name");

  const auto& topo = j.contains("topology") ? j.at("topology") : throw Error(Errc::SchemaViolation, "missing topology");
  if (topo.is_string())
    s.topology = topology::parse_topology(parse_json(read_file((fs::path(base_dir) / topo.get<std::string>()).string()),
                                                     topo.get<std::string>()));
  else
    s.topology = topology::parse_topology(topo);

  s.profile = j.value("profile", std::string("ideal"));
  substrate::LatencyProfile::named(s.profile);  // throws on unknown names
  s.mechanism = exchange::parse_mechanism(j.value("mechanism", std::string("gsp")));
  s.backup = ggc::parse_backup_mode(j.value("backup", std::string("local")));
  s.monitor_interval = seconds_field(j, "monitor_interval_s", 1.0);
  s.seed = j.value("seed", std::uint64_t{1});
  s.start = seconds_field(j, "start_s", 0.0);
  s.horizon = from_seconds(field<double>(j, "horizon_s"));

  if (j.contains("flow_model")) {
    const auto& fm = j.at("flow_model");
    s.flow_model.efficiency = fm.value("efficiency", 1.0);
    s.flow_model.warmup = seconds_field(fm, "warmup_s", 0.0);
    s.flow_model.ramp = fm.value("ramp", false);
    s.flow_model.ramp_step = seconds_field(fm, "ramp_step_s", 1.0);
  }
  if (j.contains("ospf")) {
    const auto& o = j.at("ospf");
    s.ospf = substrate::OspfTimers{o.value("hello_s", 10.0), o.value("dead_s", 40.0), o.value("wait_s", 4.0)};
  }
  for (const auto& sl : j.value("standby_lanes", json::array())) {
    StandbyLane lane{NodeId{field<std::string>(sl, "a")}, NodeId{field<std::string>(sl, "b")}, {},
                     field<Bps>(sl, "capacity_bps")};
    for (const auto& l : field<std::vector<std::string>>(sl, "links")) lane.links.push_back(LinkId{l});
    s.standby.push_back(std::move(lane));
  }
  for (const auto& [link, micros] : j.value("reserves", json::object()).items())
    s.reserves[LinkId{link}] = Money{micros.get<std::int64_t>()};

  for (const auto& r : j.value("requests", json::array())) {
    ScriptedRequest sr;
    sr.at = from_seconds(field<double>(r, "at_s"));
    json body = r;
    body.erase("at_s");
    // A request without an explicit window starts when it is submitted.
    if (!body.contains("time")) throw Error(Errc::SchemaViolation, "request needs a time window");
    if (!body["time"].contains("start")) body["time"]["start"] = to_seconds(sr.at);
    sr.request = ggc::parse_request(body);
    s.requests.push_back(std::move(sr));
  }
  if (j.contains("random_requests")) {
    const auto& rr = j.at("random_requests");
    RandomRequests g;
    g.count = field<std::size_t>(rr, "count");
    g.start = seconds_field(rr, "start_s", 0.0);
    g.spacing = seconds_field(rr, "spacing_s", 1.0);
    g.duration_s = rr.value("duration_s", 60.0);
    g.max_strands = rr.value("max_strands", 1u);
    g.max_bid = rr.value("max_bid", std::int64_t{10});
    g.capacity = rr.value("capacity_bps", Bps{1'000'000});
    s.random_requests = g;
  }
  for (const auto& f : j.value("flows", json::array())) {
    substrate::Flow flow;
    flow.id = field<std::string>(f, "id");
    flow.src = NodeId{field<std::string>(f, "src")};
    flow.dst = NodeId{field<std::string>(f, "dst")};
    flow.start = from_seconds(field<double>(f, "start_s"));
    flow.stop = from_seconds(field<double>(f, "stop_s"));
    if (f.contains("demand_bps")) flow.demand_bps = field<double>(f, "demand_bps");
    s.flows.push_back(std::move(flow));
  }
  for (const auto& f : j.value("failures", json::array())) {
    substrate::ScheduledFailure sf{LinkId{field<std::string>(f, "link")}, from_seconds(field<double>(f, "fail_s")),
                                   std::nullopt};
    if (f.contains("repair_s")) sf.repair = from_seconds(field<double>(f, "repair_s"));
    s.failures.push_back(std::move(sf));
  }
  for (const auto& e : j.value("expectations", json::array())) {
    Expectation ex{field<std::string>(e, "name"), field<json>(e, "metric"), std::nullopt, std::nullopt};
    if (e.contains("min")) ex.min = field<double>(e, "min");
    if (e.contains("max")) ex.max = field<double>(e, "max");
    s.expectations.push_back(std::move(ex));
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  auto j = parse_json(read_file(path), path);
  return parse_scenario(j, fs::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Overhead breakdown

std::vector<StageTimings> overhead_breakdown(const std::vector<ggc::StageRecord>& log) {
  std::map<RequestId, std::map<ggc::Stage, ggc::StageRecord>> by_request;
  for (const auto& r : log) {
    if (r.t_end < r.t_start)
      throw Error(Errc::MalformedLog, fmt::format("request {}: stage {} ends before it starts", r.request_id.value,
                                                  ggc::stage_name(r.stage)));
    if (!by_request[r.request_id].emplace(r.stage, r).second)
      throw Error(Errc::MalformedLog,
                  fmt::format("request {}: stage {} recorded twice", r.request_id.value, ggc::stage_name(r.stage)));
  }
  std::vector<StageTimings> out;
  for (const auto& [id, stages] : by_request) {
    StageTimings t;
    t.request = id;
    t.complete = stages.size() == ggc::kStages.size();
    Millis first = Millis::max(), last = Millis::min();
    double sum = 0.0;
    for (const auto& [stage, r] : stages) {
      double d = to_seconds(r.t_end - r.t_start);
      first = std::min(first, r.t_start);
      last = std::max(last, r.t_end);
      sum += d;
      switch (stage) {
        case ggc::Stage::AcceptBid:
        case ggc::Stage::Auction:
        case ggc::Stage::WinnerNotify: t.exchange += d; break;
        case ggc::Stage::ConfigGeneration: t.config_generation = d; break;
        case ggc::Stage::CircuitCreation: t.circuit_creation = d; break;
        default: break;
      }
    }
    t.client_request_total = to_seconds(last - first);
    t.internal = sum - t.circuit_creation;
    t.protocol = t.client_request_total - t.exchange - t.config_generation - t.circuit_creation;
    out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json timings_json(const StageTimings& t) {
  return {{"request", t.request.value},
          {"exchange_s", t.exchange},
          {"config_generation_s", t.config_generation},
          {"circuit_creation_s", t.circuit_creation},
          {"client_request_total_s", t.client_request_total},
          {"protocol_s", t.protocol},
          {"internal_s", t.internal},
          {"complete", t.complete}};
}

const StageTimings* timing_for(const std::vector<StageTimings>& timings, const json& metric) {
  auto id = field<std::uint64_t>(metric, "request");
  for (const auto& t : timings)
    if (t.request.value == id) return &t;
  return nullptr;
}

double aggregate(const std::vector<double>& xs, const std::string& how) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (how == "min") return *std::min_element(xs.begin(), xs.end());
  if (how == "max") return *std::max_element(xs.begin(), xs.end());
  if (how == "mean") {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  }
  throw Error(Errc::SchemaViolation, "unknown aggregate '" + how + "'");
}

}  // namespace

double evaluate_metric(const json& metric, const std::vector<ggc::StageRecord>& log, const substrate::RateTrace& trace,
                       const std::vector<StageTimings>& timings) {
  const auto kind = field<std::string>(metric, "kind");
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  auto window = [&](Millis& from, Millis& to) {
    from = from_seconds(field<double>(metric, "from_s"));
    to = from_seconds(field<double>(metric, "to_s"));
  };

  if (kind == "bits_total") {
    Millis from, to;
    window(from, to);
    return substrate::bits_transferred(trace, from, to);
  }
  if (kind == "flow_bits" || kind == "mean_rate") {
    Millis from, to;
    window(from, to);
    auto flow = field<std::string>(metric, "flow");
    std::vector<std::string> flows = flow == "*" ? substrate::trace_flows(trace) : std::vector<std::string>{flow};
    std::vector<double> xs;
    for (const auto& f : flows)
      xs.push_back(kind == "mean_rate" ? substrate::mean_rate(trace, f, from, to)
                                       : substrate::bits_transferred(trace, f, from, to));
    return aggregate(xs, metric.value("aggregate", std::string("min")));
  }
  if (kind == "recovery_lag") {
    auto lag = substrate::recovery_lag(trace, from_seconds(field<double>(metric, "fail_s")));
    return lag ? to_seconds(*lag) : nan;
  }
  if (kind == "stage_seconds") {
    auto stage = ggc::parse_stage(field<std::string>(metric, "stage"));
    auto id = field<std::uint64_t>(metric, "request");
    for (const auto& r : log)
      if (r.request_id.value == id && r.stage == stage) return to_seconds(r.t_end - r.t_start);
    return nan;
  }
  if (kind == "internal_seconds" || kind == "circuit_creation_share") {
    if (metric.contains("request") && metric.at("request").is_number()) {
      const auto* t = timing_for(timings, metric);
      if (!t) return nan;
      if (kind == "internal_seconds") return t->internal;
      return t->client_request_total > 0 ? t->circuit_creation / t->client_request_total : nan;
    }
    std::vector<double> xs;
    for (const auto& t : timings) {
      if (!t.complete) continue;
      if (kind == "internal_seconds")
        xs.push_back(t.internal);
      else if (t.client_request_total > 0)
        xs.push_back(t.circuit_creation / t.client_request_total);
    }
    return aggregate(xs, metric.value("aggregate", std::string("max")));
  }
  if (kind == "granted") {
    return static_cast<double>(std::count_if(timings.begin(), timings.end(), [](const auto& t) { return t.complete; }));
  }
  throw Error(Errc::SchemaViolation, "unknown metric kind '" + kind + "'");
}

Report build_report(const Scenario& scenario, const std::vector<ggc::StageRecord>& log,
                    const substrate::RateTrace& trace) {
  Report r;
  r.scenario = scenario.name;
  r.seed = scenario.seed;
  r.bits_total = substrate::bits_transferred(trace, scenario.start, scenario.horizon);
  for (const auto& f : substrate::trace_flows(trace))
    r.bits_per_flow[f] = substrate::bits_transferred(trace, f, scenario.start, scenario.horizon);
  for (const auto& f : scenario.failures) r.recoveries.push_back({f.fail, substrate::recovery_lag(trace, f.fail)});
  r.timings = overhead_breakdown(log);
  r.granted = static_cast<std::size_t>(
      std::count_if(r.timings.begin(), r.timings.end(), [](const auto& t) { return t.complete; }));
  for (const auto& e : scenario.expectations) {
    double v = evaluate_metric(e.metric, log, trace, r.timings);
    bool ok = !std::isnan(v) && (!e.min || v >= *e.min) && (!e.max || v <= *e.max);
    r.checks.push_back({{"name", e.name},
                        {"value", std::isnan(v) ? json(nullptr) : json(v)},
                        {"min", optional_number(e.min)},
                        {"max", optional_number(e.max)},
                        {"pass", ok}});
    r.pass = r.pass && ok;
  }
  return r;
}

json to_json(const Report& r) {
  json rec = json::array();
  for (const auto& x : r.recoveries)
    rec.push_back({{"fail_s", to_seconds(x.fail)}, {"lag_s", x.lag ? json(to_seconds(*x.lag)) : json(nullptr)}});
  json timings = json::array();
  for (const auto& t : r.timings) timings.push_back(timings_json(t));
  return {{"scenario", r.scenario},       {"seed", r.seed},         {"bits_total", r.bits_total},
          {"bits_per_flow", r.bits_per_flow}, {"recoveries", rec},  {"stage_timings", timings},
          {"granted", r.granted},          {"checks", r.checks},     {"pass", r.pass}};
}

Report report_from_json(const json& j) {
  Report r;
  r.scenario = field<std::string>(j, "scenario");
  r.seed = field<std::uint64_t>(j, "seed");
  r.bits_total = field<double>(j, "bits_total");
  r.bits_per_flow = field<std::map<std::string, double>>(j, "bits_per_flow");
  for (const auto& x : field<json>(j, "recoveries")) {
    Recovery rec{from_seconds(field<double>(x, "fail_s")), std::nullopt};
    if (!x.at("lag_s").is_null()) rec.lag = from_seconds(x.at("lag_s").get<double>());
    r.recoveries.push_back(rec);
  }
  for (const auto& x : field<json>(j, "stage_timings")) {
    StageTimings t;
    t.request = RequestId{field<std::uint64_t>(x, "request")};
    t.exchange = field<double>(x, "exchange_s");
    t.config_generation = field<double>(x, "config_generation_s");
    t.circuit_creation = field<double>(x, "circuit_creation_s");
    t.client_request_total = field<double>(x, "client_request_total_s");
    t.protocol = field<double>(x, "protocol_s");
    t.internal = field<double>(x, "internal_s");
    t.complete = field<bool>(x, "complete");
    r.timings.push_back(t);
  }
  r.granted = field<std::size_t>(j, "granted");
  r.checks = field<json>(j, "checks");
  r.pass = field<bool>(j, "pass");
  return r;
}

double compare_backups(const Report& greyfiber, const Report& ospf) {
  auto lag_of = [](const Report& r) {
    if (r.recoveries.empty() || !r.recoveries.front().lag)
      throw Error(Errc::MissingRecovery, fmt::format("report '{}' has no recovery event", r.scenario));
    return to_seconds(*r.recoveries.front().lag);
  };
  double gf = lag_of(greyfiber), base = lag_of(ospf);
  if (gf == base) return 1.0;
  if (gf == 0.0) return std::numeric_limits<double>::infinity();
  return base / gf;
}

// ---------------------------------------------------------------------------
// Running a scenario

namespace {

// Mirrors lease lifecycle events into the simulated data plane.
class SubstrateBridge : public ggc::LeaseObserver {
 public:
  explicit SubstrateBridge(substrate::Network& net) : net_(net) {}

  void on_active(const ggc::Lease& lease, Millis at) override {
    for (std::size_t i = 0; i < lease.allocation.path.lanes.size(); ++i) provision(lease, i, at);
  }
  void on_lane_replaced(const ggc::Lease& lease, std::size_t lane, Millis active_from) override {
    net_.remove_lane({lease.id, lane});
    provision(lease, lane, active_from);
  }
  void on_released(const ggc::Lease& lease) override { net_.remove_lease(lease.id); }

 private:
  void provision(const ggc::Lease& lease, std::size_t lane, Millis at) {
    const auto& nodes = lease.allocation.path.lanes.at(lane).nodes;
    std::vector<std::pair<std::size_t, LinkId>> hops;
    for (const auto& c : lease.allocation.circuits)
      if (c.lane == lane) hops.emplace_back(c.hop, c.link);
    std::sort(hops.begin(), hops.end());
    std::vector<LinkId> links;
    for (auto& [_, l] : hops) links.push_back(l);
    Bps cap = lease.allocation.capacity > 0 ? lease.allocation.capacity : std::numeric_limits<Bps>::max();
    net_.provision_lane({lease.id, lane}, nodes.front(), nodes.back(), std::move(links), cap, at);
  }

  substrate::Network& net_;
};

std::vector<ScriptedRequest> expand_random(const Scenario& s, std::uint64_t seed) {
  std::vector<ScriptedRequest> out;
  if (!s.random_requests || s.random_requests->count == 0) return out;
  const auto& g = *s.random_requests;
  std::vector<NodeId> nodes;
  for (const auto& n : s.topology.nodes) nodes.push_back(n.id);
  std::sort(nodes.begin(), nodes.end());
  if (nodes.size() < 2) throw Error(Errc::SchemaViolation, "random requests need two nodes");
  // Modulo draws keep the sequence identical across standard libraries.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < g.count; ++i) {
    auto a = rng() % nodes.size();
    auto b = rng() % (nodes.size() - 1);
    if (b >= a) ++b;
    ScriptedRequest sr;
    sr.at = g.start + g.spacing * static_cast<std::int64_t>(i);
    auto& r = sr.request;
    r.endpoint_a = nodes[a];
    r.endpoint_b = nodes[b];
    r.strands_needed = static_cast<std::uint32_t>(1 + rng() % std::max<std::uint32_t>(1, g.max_strands));
    r.bid_amount = Money::units(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(g.max_bid + 1)));
    r.time = {sr.at, g.duration_s};
    r.capacity_needed = g.capacity;
    r.client_name = fmt::format("client{}", rng() % 4);
    out.push_back(std::move(sr));
  }
  return out;
}

}  // namespace

RunResult run_scenario(const Scenario& scenario, std::uint64_t seed, const RunOptions& options) {
  scenario.validate();
  Scenario sc = scenario;
  sc.seed = seed;

  topology::TopologyGraph graph;
  exchange::Exchange exchange([&graph](const LinkId& l) { return graph.has_link(l); });
  sim::Scheduler sched(sc.start);
  ggc::EventLog log;
  substrate::Network net(sched, sc.flow_model);
  glsc::NetworkProbe probe(net);

  ggc::GgcOptions gopts;
  gopts.mechanism = sc.mechanism;
  gopts.backup = sc.backup;
  ggc::Ggc ggc(graph, exchange, sched, log, gopts);
  SubstrateBridge bridge(net);
  ggc.set_observer(&bridge);

  std::set<SiteId> sites;
  for (const auto& n : sc.topology.nodes) sites.insert(n.site);
  glsc::MonitorPolicy policy;
  policy.interval = sc.monitor_interval;
  policy.phase = Millis{((sc.start.count() % policy.interval.count()) + policy.interval.count()) %
                        policy.interval.count()};
  std::vector<std::unique_ptr<glsc::Glsc>> agents;
  for (const auto& s : sites) {
    auto a = std::make_unique<glsc::Glsc>(s, sched, probe, substrate::LatencyProfile::named(sc.profile), policy,
                                          sc.backup, &graph);
    a->set_uplink(&ggc);
    ggc.attach_agent(a.get());
    agents.push_back(std::move(a));
  }

  // One registration per seller, each carrying only that seller's strands.
  std::map<SellerId, topology::TopologyDocument> by_seller;
  for (const auto& l : sc.topology.links) by_seller[l.seller].links.push_back(l);
  for (auto& [seller, frag] : by_seller) {
    frag.nodes = sc.topology.nodes;
    std::set<LinkId> mine;
    for (const auto& l : frag.links) mine.insert(l.id);
    for (auto c : sc.topology.conduits) {
      std::erase_if(c.links, [&](const LinkId& l) { return !mine.count(l); });
      if (!c.links.empty()) frag.conduits.push_back(std::move(c));
    }
    std::map<LinkId, Money> reserves;
    for (const auto& [l, m] : sc.reserves)
      if (mine.count(l)) reserves[l] = m;
    ggc.register_seller(seller, frag, reserves);
  }
  for (const auto& l : graph.link_ids()) net.add_link(l, graph.link(l).max_bandwidth);
  net.set_ospf(sc.ospf);
  for (std::size_t i = 0; i < sc.standby.size(); ++i) {
    const auto& s = sc.standby[i];
    net.add_standby_lane({LeaseId{(std::uint64_t{1} << 32) + i}, 0}, s.a, s.b, s.links, s.capacity);
  }
  for (const auto& f : sc.flows) net.add_flow(f);
  net.inject_failure(sc.failures);

  auto requests = sc.requests;
  for (auto& r : expand_random(sc, seed)) requests.push_back(std::move(r));
  std::stable_sort(requests.begin(), requests.end(), [](const auto& x, const auto& y) { return x.at < y.at; });
  for (const auto& sr : requests) {
    sched.at(sr.at, sim::Phase::Control, [&ggc, req = sr.request] {
      if (!ggc.is_buyer(req.client_name)) ggc.register_buyer(req.client_name);
      ggc.submit(req);
    });
  }

  RunResult result;
  result.initial = graph.snapshot();
  for (auto& a : agents) a->start();

  if (options.verify_each_event) {
    while (auto t = sched.next_time()) {
      if (*t > sc.horizon) break;
      sched.step();
      graph.verify();
      ++result.verifications;
    }
  }
  sched.run_until(sc.horizon);

  result.events = log.records();
  result.trace = net.trace();
  result.outcomes = ggc.outcomes();
  result.backups = ggc.backups();
  result.final = graph.snapshot();
  result.events_processed = sched.processed();
  result.report = build_report(sc, result.events, result.trace);
  return result;
}

void write_outputs(const std::string& dir, const Scenario& scenario, const json& scenario_json,
                   const RunResult& result) {
  fs::create_directories(dir);
  std::string events;
  for (const auto& r : result.events) events += ggc::EventLog::line(r) + "\n";
  write_file(fs::path(dir) / "events.jsonl", events);
  write_file(fs::path(dir) / "rates.csv", substrate::to_csv(result.trace));
  write_file(fs::path(dir) / "report.json", to_json(result.report).dump(2) + "\n");
  // Self-contained copy: the topology is inlined and the seed pinned.
  json copy = scenario_json;
  copy["topology"] = topology::to_json(scenario.topology);
  copy["seed"] = result.report.seed;
  write_file(fs::path(dir) / "scenario.json", copy.dump(2) + "\n");
}

Report report_from_dir(const std::string& dir) {
  auto sc = parse_scenario(parse_json(read_file((fs::path(dir) / "scenario.json").string()), "scenario.json"), dir);
  auto log = ggc::EventLog::parse_jsonl(read_file((fs::path(dir) / "events.jsonl").string()));
  auto trace = substrate::parse_csv(read_file((fs::path(dir) / "rates.csv").string()));
  return build_report(sc, log, trace);
}

// ---------------------------------------------------------------------------
// Random accounting workloads

Scenario random_workload(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto pick = [&](std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); };

  Scenario s;
  s.name = fmt::format("random-{}", seed);
  s.seed = seed;
  const char* profiles[] = {"ideal", "optical", "geni"};
  s.profile = profiles[pick(0, 2)];
  s.backup = pick(0, 3) == 0 ? ggc::BackupMode::None : ggc::BackupMode::Local;
  s.mechanism = pick(0, 1) ? exchange::Mechanism::GSP : exchange::Mechanism::VCG;

  auto n_nodes = pick(2, 5);
  for (std::uint64_t i = 0; i < n_nodes; ++i) {
    NodeId id{fmt::format("N{}", i)};
    s.topology.nodes.push_back({id, SiteId{fmt::format("S{}", i)}, {}});
  }
  // A spanning chain keeps the graph connected; extra conduits add detours.
  std::set<std::pair<std::uint64_t, std::uint64_t>> pairs;
  for (std::uint64_t i = 1; i < n_nodes; ++i) pairs.insert({pick(0, i - 1), i});
  for (auto extra = pick(0, n_nodes); extra > 0; --extra) {
    auto a = pick(0, n_nodes - 1), b = pick(0, n_nodes - 1);
    if (a != b) pairs.insert({std::min(a, b), std::max(a, b)});
  }
  std::size_t cidx = 0;
  for (auto [a, b] : pairs) {
    topology::Conduit c{ConduitId{fmt::format("c{}", cidx++)}, s.topology.nodes[a].id, s.topology.nodes[b].id, {}};
    for (auto k = pick(1, 3); k > 0; --k) {
      topology::FiberLink l;
      l.id = LinkId{fmt::format("{}_{}", c.id.str(), c.links.size())};
      l.conduit = c.id;
      l.seller = SellerId{pick(0, 1) ? "s1" : "s2"};
      l.max_bandwidth = l.available_bandwidth = static_cast<Bps>(pick(1, 4)) * 10'000'000;
      l.wavelength_capacity = static_cast<std::uint32_t>(pick(1, 4));
      c.links.push_back(l.id);
      s.topology.links.push_back(l);
    }
    s.topology.conduits.push_back(std::move(c));
  }

  Millis last_expiry{0};
  for (auto n = pick(3, 12); n > 0; --n) {
    ScriptedRequest sr;
    sr.at = Millis{static_cast<std::int64_t>(pick(0, 120'000))};
    auto a = pick(0, n_nodes - 1);
    auto b = (a + pick(1, n_nodes - 1)) % n_nodes;
    auto& r = sr.request;
    r.endpoint_a = s.topology.nodes[a].id;
    r.endpoint_b = s.topology.nodes[b].id;
    r.strands_needed = static_cast<std::uint32_t>(pick(1, 2));
    r.bid_amount = Money::units(static_cast<std::int64_t>(pick(0, 6)));
    r.capacity_needed = static_cast<Bps>(pick(1, 20)) * 1'000'000;
    r.client_name = fmt::format("b{}", pick(0, 3));
    // Some requests are booked ahead of time.
    Millis start = pick(0, 3) == 0 ? sr.at + Millis{static_cast<std::int64_t>(pick(1'000, 30'000))} : sr.at;
    r.time = {start, static_cast<double>(pick(5, 90))};
    last_expiry = std::max(last_expiry, start + from_seconds(r.time.duration_s));
    s.requests.push_back(std::move(sr));
  }
  for (auto n = pick(0, 3); n > 0; --n) {
    const auto& l = s.topology.links[pick(0, s.topology.links.size() - 1)];
    Millis fail{static_cast<std::int64_t>(pick(0, 150'000))};
    Millis repair = fail + Millis{static_cast<std::int64_t>(pick(500, 40'000))};
    s.failures.push_back({l.id, fail, repair});
    last_expiry = std::max(last_expiry, repair);
  }
  // Room for provisioning (up to a minute on the slowest profile) after every event.
  s.horizon = last_expiry + from_seconds(180);
  return s;
}

AccountingResult accounting_trial(std::uint64_t seed) {
  AccountingResult out;
  try {
    auto s = random_workload(seed);
    RunOptions opts;
    opts.verify_each_event = true;
    auto r = run_scenario(s, seed, opts);
    out.events = r.verifications;
    out.granted = r.report.granted;
    out.backups = r.backups.size();
    out.counters_restored = r.initial == r.final;
    if (!out.counters_restored) out.error = "counters differ from the initial snapshot";
  } catch (const Error& e) {
    out.error = fmt::format("{}: {}", errc_name(e.code()), e.what());
  }
  return out;
}

}  // namespace gf::harness
