#include <doctest.h>

#include "builders.hpp"
#include "greyfiber/error.hpp"
#include "greyfiber/ggc.hpp"
#include "rig.hpp"

using namespace gf;
using namespace gf::ggc;
using gf::testing::Rig;
using gf::testing::dumbbell;
using gf::testing::topology_json;
using nlohmann::json;

namespace {

std::vector<StageRecord> stages_of(const EventLog& log, RequestId id) {
  std::vector<StageRecord> out;
  for (const auto& r : log.records())
    if (r.request_id == id) out.push_back(r);
  return out;
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

TEST_CASE("classification") {
  ResourceRequest r;
  r.time = {Millis{0}, 45};
  auto c = classify_request(r, Millis{0});
  CHECK(c.immediacy == Immediacy::Realtime);
  CHECK(c.timescale == Timescale::Small);

  r.time = {from_seconds(7200), 6 * 3600};
  c = classify_request(r, Millis{0});
  CHECK(c.immediacy == Immediacy::NonRealtime);
  CHECK(c.timescale == Timescale::Medium);

  CHECK(timescale_for(2 * 365 * 86400.0) == Timescale::ExtraLarge);
  CHECK(timescale_for(3599) == Timescale::Small);
  CHECK(timescale_for(3600) == Timescale::Medium);
  CHECK(timescale_for(86400) == Timescale::Large);
  CHECK(timescale_for(365 * 86400.0) == Timescale::ExtraLarge);
}

TEST_CASE("request JSON round trip and validation") {
  json j = {{"endpoint_a", "A"},        {"endpoint_b", "B"},
            {"strands_needed", 2},      {"bid_amount", 5000000},
            {"time", {{"start", 1.5}, {"duration_s", 60}}},
            {"capacity_needed_bps", 20000000}, {"client_name", "h1"}};
  auto r = parse_request(j);
  CHECK(r.strands_needed == 2);
  CHECK(r.time.start == Millis{1500});
  CHECK(to_json(r) == j);
  j.erase("client_name");
  CHECK(code_of([&] { parse_request(j); }) == Errc::SchemaViolation);
  r.endpoint_b = r.endpoint_a;
  CHECK(code_of([&] { r.validate(); }) == Errc::InvalidRequest);
}

TEST_CASE("event log lines round trip") {
  EventLog log;
  log.append({RequestId{3}, Stage::ConfigGeneration, Millis{-500}, Millis{124}});
  log.append({RequestId{3}, Stage::Notify, Millis{200}, Millis{202}});
  auto text = log.to_jsonl();
  CHECK(text.substr(0, text.find('\n')) ==
        R"({"request_id":3,"stage":"config_generation","step":12,"t_start":-0.500,"t_end":0.124})");
  CHECK(EventLog::parse_jsonl(text) == log.records());
  CHECK(code_of([] { EventLog::parse_jsonl("{\"request_id\":1}\n"); }) == Errc::MalformedLog);
  CHECK(code_of([] { EventLog::parse_jsonl("not json\n"); }) == Errc::MalformedLog);
}

TEST_CASE("config generation: one config per distinct site") {
  auto g = dumbbell(3);
  Lease lease;
  lease.id = LeaseId{1};
  auto paths = g.find_candidate_paths(NodeId{"A"}, NodeId{"B"}, 2, 1000);
  lease.allocation = g.allocate(paths.front(), 2, 1000, lease.id);
  lease.path = lease.allocation.path;
  auto bundle = generate_configuration(g, lease);
  REQUIRE(bundle.configs.size() == 2);
  CHECK(bundle.configs[0].site == SiteId{"SA"});
  CHECK(bundle.configs[0].anchor);
  CHECK(!bundle.configs[1].anchor);
  CHECK(bundle.configs[1].circuits.size() == 2);
  CHECK(site_config_from_json(to_json(bundle.configs[1])).circuits.size() == 2);

  auto chain = topology::TopologyGraph::from_json(
      topology_json({"A", "B", "C", "D"}, {{"ab", "A", "B"}, {"bc", "B", "C"}, {"cd", "C", "D"}}));
  Lease l2;
  l2.id = LeaseId{2};
  l2.allocation = chain.allocate(chain.find_candidate_paths(NodeId{"A"}, NodeId{"D"}, 1, 1000).front(), 1, 1000, l2.id);
  l2.path = l2.allocation.path;
  auto b2 = generate_configuration(chain, l2);
  CHECK(b2.configs.size() == 4);
  // Interior sites see both of their strands.
  CHECK(b2.configs[1].circuits.size() == 2);
}

TEST_CASE("config generation cost stays within the measured band") {
  Millis lo = Millis::max(), hi = Millis::min();
  for (std::size_t n = 1; n <= 60; ++n) {
    lo = std::min(lo, config_generation_cost(n));
    hi = std::max(hi, config_generation_cost(n));
  }
  CHECK(lo == Millis{107});
  CHECK(hi == Millis{148});
  CHECK(config_generation_cost(1) == Millis{124});
  CHECK(config_generation_cost(50) == Millis{121});
}

TEST_CASE("pipeline: single bidder is granted with complete, ordered stage records") {
  Rig rig(dumbbell(5));
  rig.ggc.register_buyer("h1");
  auto req = rig.request("h1", 10, 3);
  auto id = rig.ggc.submit(req);
  rig.sched.run_until(from_seconds(5));
  auto o = rig.ggc.outcome(id);
  REQUIRE(o);
  CHECK(o->disposition == Disposition::Granted);
  REQUIRE(o->lease);
  CHECK(o->lease->allocation.circuits.size() == 3);
  CHECK(o->connectivity->circuits.size() == 3);
  CHECK(o->payment == Money{0});  // lone bidder pays the reserve
  CHECK(o->lease->price == o->payment);

  auto recs = stages_of(rig.log, id);
  REQUIRE(recs.size() == kStages.size());
  Millis internal{0};
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].stage == kStages[i]);
    CHECK(recs[i].t_end >= recs[i].t_start);
    if (i) CHECK(recs[i].t_start >= recs[i - 1].t_end);
    if (recs[i].stage != Stage::CircuitCreation) internal += recs[i].t_end - recs[i].t_start;
  }
  CHECK(internal < Millis{500});
  CHECK(internal > Millis{0});
  CHECK(rig.ggc.lease(o->lease->id)->state == LeaseState::Active);
  rig.graph.verify();
}

TEST_CASE("pipeline: two bidders for the last strand") {
  Rig rig(dumbbell(1, 20e6, 1));  // one wavelength: room for one lane
  rig.ggc.register_buyer("h1");
  rig.ggc.register_buyer("h2");
  auto id1 = rig.ggc.submit(rig.request("h1", 10));
  auto id2 = rig.ggc.submit(rig.request("h2", 8));
  rig.sched.run_until(from_seconds(5));
  CHECK(rig.ggc.outcome(id1)->disposition == Disposition::Granted);
  CHECK(rig.ggc.outcome(id1)->payment == Money::units(8));
  CHECK(rig.ggc.outcome(id2)->disposition == Disposition::Outbid);
  CHECK(rig.graph.live_circuit_count() == 1);
}

TEST_CASE("pipeline: disjoint concurrent requests both succeed") {
  Rig rig(dumbbell(2));
  rig.ggc.register_buyer("h1");
  rig.ggc.register_buyer("h2");
  auto id1 = rig.ggc.submit(rig.request("h1", 10));
  auto id2 = rig.ggc.submit(rig.request("h2", 8));
  rig.sched.run_until(from_seconds(5));
  CHECK(rig.ggc.outcome(id1)->disposition == Disposition::Granted);
  CHECK(rig.ggc.outcome(id2)->disposition == Disposition::Granted);
  // Two slots, GSP ladder: the lower winner pays the reserve.
  CHECK(rig.ggc.outcome(id1)->payment == Money::units(8));
  CHECK(rig.ggc.outcome(id2)->payment == Money{0});
}

TEST_CASE("pipeline: rejection paths leave counters untouched") {
  Rig rig(dumbbell(2));
  auto before = rig.graph.snapshot();
  rig.ggc.register_buyer("h1");
  auto too_many = rig.ggc.submit(rig.request("h1", 10, 3));
  auto stranger = rig.ggc.submit(rig.request("nobody", 10));
  rig.sched.run_until(from_seconds(5));
  CHECK(rig.ggc.outcome(too_many)->disposition == Disposition::Rejected);
  CHECK(rig.ggc.outcome(too_many)->reason == "InsufficientStrands");
  CHECK(rig.ggc.outcome(too_many)->payment == Money{0});
  CHECK(rig.ggc.outcome(stranger)->reason == "UnknownBidder");
  CHECK(rig.graph.snapshot() == before);
  CHECK(rig.graph.live_circuit_count() == 0);
}

TEST_CASE("pipeline: bids under the path reserve") {
  Rig rig(dumbbell(1));
  auto offer = rig.exchange.offering_for(LinkId{"l_c1"});
  rig.exchange.withdraw_offering(offer->id);
  rig.exchange.register_offering(SellerId{"seller1"}, LinkId{"l_c1"}, Money::units(4));
  rig.ggc.register_buyer("h1");
  auto id = rig.ggc.submit(rig.request("h1", 3));
  rig.sched.run_until(from_seconds(5));
  CHECK(rig.ggc.outcome(id)->reason == "BelowReserve");
}

TEST_CASE("registration") {
  Rig rig(dumbbell(1));
  CHECK(!rig.ggc.register_buyer("h1").empty());
  CHECK(code_of([&] { rig.ggc.register_buyer("h1"); }) == Errc::DuplicateBuyer);

  // A seller adds a second conduit at new sites: two offerings, one monitoring site notified.
  auto frag = topology::parse_topology(topology_json({"C", "D"}, {{"c2", "C", "D", 2}}, "seller2"));
  auto added = rig.ggc.register_seller(SellerId{"seller2"}, frag);
  CHECK(added.size() == 2);
  CHECK(rig.exchange.offerings().size() == 3);

  // Conflicting link id from another seller: rejected, graph unchanged.
  auto before = rig.graph.snapshot();
  auto clash = topology::parse_topology(topology_json({"C", "D"}, {{"c2", "C", "D", 2}}, "seller3"));
  CHECK_THROWS_AS(rig.ggc.register_seller(SellerId{"seller3"}, clash), Error);
  CHECK(rig.graph.snapshot() == before);
}

TEST_CASE("non-realtime requests hold between auction and provisioning") {
  Rig rig(dumbbell(1));
  rig.ggc.register_buyer("h1");
  auto req = rig.request("h1", 10);
  req.time = {from_seconds(100), 60};
  auto id = rig.ggc.submit(req);
  rig.sched.run_until(from_seconds(200));
  auto recs = stages_of(rig.log, id);
  REQUIRE(recs.size() == kStages.size());
  CHECK(recs[2].t_end < from_seconds(1));
  CHECK(recs[3].t_start == from_seconds(100));
  auto lease = rig.ggc.outcome(id)->lease;
  CHECK(lease->expiry == lease->start + from_seconds(60));
}

TEST_CASE("expiry restores counters; boundary is closed") {
  Rig rig(dumbbell(2));
  auto before = rig.graph.snapshot();
  rig.ggc.register_buyer("h1");
  auto req = rig.request("h1", 10, 2);
  req.time.duration_s = 30;
  auto id = rig.ggc.submit(req);
  rig.sched.run_until(from_seconds(1));
  auto lease = rig.ggc.outcome(id)->lease;
  CHECK(rig.graph.snapshot() != before);
  CHECK(rig.ggc.expire_leases(lease->expiry - Millis{1}).empty());
  CHECK(rig.ggc.expire_leases(lease->expiry).size() == 1);
  CHECK(rig.ggc.lease(lease->id)->state == LeaseState::Expired);
  CHECK(rig.graph.snapshot() == before);
  CHECK(rig.ggc.expire_leases(lease->expiry + Millis{1}).empty());
  rig.sched.run_until(from_seconds(100));
  CHECK(rig.graph.snapshot() == before);
  rig.graph.verify();
}

TEST_CASE("scaling: circuit creation tracks the geni table") {
  for (std::size_t n : {1, 5, 10, 50}) {
    Rig rig(dumbbell(50), "geni");
    rig.ggc.register_buyer("h1");
    auto id = rig.ggc.submit(rig.request("h1", 10, static_cast<std::uint32_t>(n)));
    rig.sched.run_until(from_seconds(120));
    CHECK(rig.ggc.outcome(id)->disposition == Disposition::Granted);
    for (const auto& r : stages_of(rig.log, id))
      if (r.stage == Stage::CircuitCreation)
        CHECK(r.t_end - r.t_start == substrate::provision_latency(substrate::LatencyProfile::named("geni"), n));
  }
}
