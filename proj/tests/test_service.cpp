#include <doctest.h>

#include <thread>

#include "builders.hpp"
#include "greyfiber/error.hpp"
#include "greyfiber/harness.hpp"
#include "greyfiber/service.hpp"

using namespace gf;
using namespace gf::service;
using gf::testing::topology_json;
using nlohmann::json;
using proto::MsgType;

namespace {

json request_json(const std::string& client, std::int64_t bid, int strands = 1) {
  return {{"endpoint_a", "A"},        {"endpoint_b", "B"}, {"strands_needed", strands},
          {"bid_amount", bid},        {"time", {{"start", 0.0}, {"duration_s", 3600}}},
          {"capacity_needed_bps", 1000000}, {"client_name", client}};
}

template <typename Pred>
bool eventually(Pred p, std::chrono::milliseconds limit = std::chrono::milliseconds(5000)) {
  auto until = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < until) {
    if (p()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return p();
}

struct Deployment {
  GgcServer ggc{GgcServiceOptions{}};
  std::unique_ptr<GlscClient> sa, sb;

  explicit Deployment(double interval_s = 1.0) {
    ggc.start();
    auto addr = fmt::format("127.0.0.1:{}", ggc.port());
    sa = std::make_unique<GlscClient>(GlscServiceOptions{"SA", addr, "ideal", interval_s});
    sb = std::make_unique<GlscClient>(GlscServiceOptions{"SB", addr, "ideal", interval_s});
    sa->start();
    sb->start();
  }
  ~Deployment() {
    sa->stop();
    sb->stop();
    ggc.stop();
  }
  std::string address() const { return fmt::format("127.0.0.1:{}", ggc.port()); }
};

}  // namespace

TEST_CASE("loopback: seller, buyer and a granted lease") {
  Deployment d;
  Client seller(d.address());
  auto reg = seller.request(MsgType::REGISTER_SELLER,
                            {{"seller", "seller1"}, {"topology", topology_json({"A", "B"}, {{"c1", "A", "B", 2}})}});
  CHECK(reg.body["links"].size() == 2);
  // The owning site learns which links to watch.
  CHECK(eventually([&] { return d.sa->with_glsc([](glsc::Glsc& g) { return g.monitored().size(); }) == 2; }));

  Client buyer(d.address());
  CHECK(buyer.request(MsgType::REGISTER_BUYER, {{"client_name", "h1"}}).body["token"] == "buyer-1");
  CHECK_THROWS_AS(buyer.request(MsgType::REGISTER_BUYER, {{"client_name", "h1"}}), Error);

  auto sub = buyer.request(MsgType::SUBMIT_BID, {{"request", request_json("h1", 5'000'000, 2)}});
  auto id = sub.body["request_id"].get<std::uint64_t>();
  auto result = buyer.next_unsolicited();
  REQUIRE(result.type == MsgType::AUCTION_RESULT);
  CHECK(result.body["request_id"] == id);
  CHECK(result.body["disposition"] == "granted");
  CHECK(result.body["connectivity"]["circuits"].size() == 2);

  auto records = d.ggc.events();
  auto timings = harness::overhead_breakdown(records);
  REQUIRE(timings.size() == 1);
  CHECK(timings[0].complete);
  CHECK(timings[0].internal < 0.5);
  CHECK(d.ggc.with_ggc([](ggc::Ggc&, topology::TopologyGraph& g) { return g.live_circuit_count(); }) == 2);
}

TEST_CASE("loopback: a dead strand is replaced by the controller") {
  Deployment d(0.05);
  Client seller(d.address());
  seller.request(MsgType::REGISTER_SELLER,
                 {{"seller", "seller1"}, {"topology", topology_json({"A", "B"}, {{"c1", "A", "B", 2}})}});
  Client buyer(d.address());
  buyer.request(MsgType::REGISTER_BUYER, {{"client_name", "h1"}});
  buyer.request(MsgType::SUBMIT_BID, {{"request", request_json("h1", 1)}});
  auto result = buyer.next_unsolicited();
  REQUIRE(result.body["disposition"] == "granted");
  auto link = result.body["connectivity"]["wavelengths"][0][0].get<std::string>();

  d.sa->probe().set_up(LinkId{link}, false);
  CHECK(eventually([&] {
    return d.ggc.with_ggc([](ggc::Ggc& g, topology::TopologyGraph&) { return g.backups().size(); }) == 1;
  }));
  auto backup = d.ggc.with_ggc([](ggc::Ggc& g, topology::TopologyGraph&) { return g.backups().front(); });
  CHECK(backup.how == "same-conduit");
  auto lease = d.ggc.with_ggc([](ggc::Ggc& g, topology::TopologyGraph&) { return g.leases().front(); });
  CHECK(lease.allocation.circuits.front().link != LinkId{link});
}

TEST_CASE("loopback: errors come back as ERROR frames") {
  Deployment d;
  Client c(d.address());
  try {
    c.request(MsgType::SUBMIT_BID, {{"request", {{"endpoint_a", "A"}}}});
    FAIL("expected an error reply");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("SchemaViolation") != std::string::npos);
  }
  // An unregistered buyer gets a refusal, not an error.
  c.request(MsgType::SUBMIT_BID, {{"request", request_json("stranger", 1)}});
  auto r = c.next_unsolicited();
  CHECK(r.body["disposition"] == "rejected");
  CHECK(r.body["reason"] == "UnknownBidder");
}

TEST_CASE("standalone exchange rounds") {
  ExchangeServer ex(ExchangeServiceOptions{0, "gsp", 0.1});
  ex.start();
  auto addr = fmt::format("127.0.0.1:{}", ex.port());
  Client seller(addr), b1(addr), b2(addr);
  seller.request(MsgType::REGISTER_SELLER,
                 {{"seller", "s"}, {"offerings", {{{"link", "l1"}, {"reserve", 1'000'000}}}}});
  b1.request(MsgType::REGISTER_BUYER, {{"client_name", "b1"}});
  b2.request(MsgType::REGISTER_BUYER, {{"client_name", "b2"}});
  b1.request(MsgType::SUBMIT_BID, {{"client_name", "b1"}, {"links", {"l1"}}, {"amount", 5'000'000}});
  b2.request(MsgType::SUBMIT_BID, {{"client_name", "b2"}, {"links", {"l1"}}, {"amount", 3'000'000}});
  auto r1 = b1.next_unsolicited();
  auto r2 = b2.next_unsolicited();
  CHECK(r1.body["won"] == true);
  CHECK(r1.body["payment"] == 3'000'000);
  CHECK(r2.body["won"] == false);
  ex.stop();
}
