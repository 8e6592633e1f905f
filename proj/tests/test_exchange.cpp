#include <doctest.h>

#include <thread>

#include "auction_oracle.hpp"
#include "greyfiber/error.hpp"
#include "greyfiber/exchange.hpp"

using namespace gf;
using namespace gf::exchange;

namespace {

Bid bid(const std::string& who, std::int64_t amount, std::int64_t t = 0, std::int64_t value = -1) {
  Bid b;
  b.bidder = who;
  b.amount = Money::units(amount);
  b.value = Money::units(value < 0 ? amount : value);
  b.submitted_at = Millis{t};
  return b;
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

std::map<std::string, std::int64_t> payments(const AuctionOutcome& o) {
  std::map<std::string, std::int64_t> out;
  for (const auto& w : o.winners) out[w.bidder] = w.payment.micros;
  return out;
}

}  // namespace

TEST_CASE("gsp: single slot, second price") {
  std::vector<Bid> bids{bid("A", 10, 0), bid("B", 8, 1), bid("C", 5, 2)};
  auto o = run_gsp_auction(1, Money::units(4), bids);
  // Oracle agreement on the spec example.
  auto expected = oracle::gsp(1, Money::units(4).micros, bids);
  CHECK(payments(o) == expected.payments);
  REQUIRE(o.winners.size() == 1);
  CHECK(o.winners[0].bidder == "A");
  CHECK(o.winners[0].payment == Money::units(8));
  CHECK(o.clearing_bid == Money::units(8));
  CHECK(o.losers == std::vector<std::string>{"B", "C"});
}

TEST_CASE("gsp: lone bidder pays the reserve") {
  std::vector<Bid> bids{bid("A", 10)};
  auto o = run_gsp_auction(1, Money::units(5), bids);
  CHECK(o.winners.at(0).payment == Money::units(5));
}

TEST_CASE("gsp: all bids under the reserve is an empty round") {
  std::vector<Bid> bids{bid("A", 3), bid("B", 2, 1)};
  CHECK(code_of([&] { run_gsp_auction(1, Money::units(4), bids); }) == Errc::EmptyRound);
  CHECK(code_of([&] { run_gsp_auction(1, Money::units(4), std::vector<Bid>{}); }) == Errc::EmptyRound);
}

TEST_CASE("gsp: two slots follow the payment ladder") {
  std::vector<Bid> bids{bid("A", 10, 0), bid("B", 8, 1), bid("C", 5, 2)};
  auto o = run_gsp_auction(2, Money::units(4), bids);
  CHECK(payments(o) == oracle::gsp(2, Money::units(4).micros, bids).payments);
  CHECK(o.award_for("A")->payment == Money::units(8));
  CHECK(o.award_for("B")->payment == Money::units(5));
}

TEST_CASE("gsp: ties rank earlier submissions first, then names") {
  std::vector<Bid> bids{bid("B", 7, 0), bid("A", 7, 5), bid("C", 7, 0)};
  auto o = run_gsp_auction(1, Money{0}, bids);
  CHECK(o.winners.at(0).bidder == "B");
  CHECK(o.winners.at(0).payment == Money::units(7));
}

TEST_CASE("vcg: externality payments") {
  std::vector<Bid> bids{bid("A", 10, 0), bid("B", 8, 1), bid("C", 5, 2)};
  auto o = run_vcg_auction(2, Money{0}, bids);
  CHECK(payments(o) == oracle::vcg(2, 0, bids).payments);
  CHECK(o.award_for("A")->payment == Money::units(5));
  CHECK(o.award_for("B")->payment == Money::units(5));

  std::vector<Bid> two{bid("A", 10, 0), bid("B", 8, 1)};
  CHECK(run_vcg_auction(1, Money{0}, two).winners.at(0).payment == Money::units(8));

  std::vector<Bid> one{bid("A", 10)};
  CHECK(run_vcg_auction(3, Money::units(2), one).winners.at(0).payment == Money::units(2));
}

TEST_CASE("payoff") {
  std::vector<Bid> bids{bid("A", 10, 0, 12), bid("B", 8, 1)};
  auto o = run_gsp_auction(1, Money{0}, bids);
  CHECK(payoff(o, "A") == Money::units(4));
  CHECK(payoff(o, "B") == Money{0});
  CHECK(code_of([&] { payoff(o, "Z"); }) == Errc::UnknownBidder);

  std::vector<Bid> boundary{bid("A", 10, 0, 8), bid("B", 8, 1)};
  CHECK(payoff(run_gsp_auction(1, Money{0}, boundary), "A") == Money{0});
}

TEST_CASE("property: value never influences selection or pricing") {
  std::vector<Bid> a{bid("A", 6, 0, 1), bid("B", 4, 1, 9), bid("C", 3, 2, 0)};
  std::vector<Bid> b{bid("A", 6, 0, 50), bid("B", 4, 1, 0), bid("C", 3, 2, 7)};
  for (auto m : {Mechanism::GSP, Mechanism::VCG}) {
    CHECK(payments(run_auction(m, 2, Money::units(1), a)) == payments(run_auction(m, 2, Money::units(1), b)));
  }
}

TEST_CASE("property: winner monotonicity and reserve/IR over a small grid") {
  for (std::size_t n = 1; n <= 3; ++n) {
    oracle::for_each_profile(n, 5, [&](const std::vector<Bid>& bids) {
      for (auto m : {Mechanism::GSP, Mechanism::VCG}) {
        for (std::size_t k = 1; k <= 2; ++k) {
          for (std::int64_t r : {0, 2}) {
            auto base = oracle::observe(m, k, r, bids);
            if (base.empty) continue;
            for (const auto& [who, pay] : base.payments) {
              auto it = std::find_if(bids.begin(), bids.end(), [&](const Bid& b) { return b.bidder == who; });
              CHECK(pay <= it->amount.micros);
              CHECK(pay >= r);
              // Raise this winner's bid; the winner set must not change.
              auto raised = bids;
              std::find_if(raised.begin(), raised.end(), [&](const Bid& b) { return b.bidder == who; })->amount.micros += 3;
              auto after = oracle::observe(m, k, r, raised);
              std::set<std::string> w0, w1;
              for (const auto& p : base.payments) w0.insert(p.first);
              for (const auto& p : after.payments) w1.insert(p.first);
              CHECK(w0 == w1);
            }
          }
        }
      }
    });
  }
}

TEST_CASE("property: gsp and vcg agree when k = 1") {
  for (std::size_t n = 1; n <= 4; ++n) {
    oracle::for_each_profile(n, 4, [&](const std::vector<Bid>& bids) {
      for (std::int64_t r : {0, 2}) {
        auto g = oracle::observe(Mechanism::GSP, 1, r, bids);
        auto v = oracle::observe(Mechanism::VCG, 1, r, bids);
        CHECK(g.empty == v.empty);
        CHECK(g.payments == v.payments);
      }
    });
  }
}

TEST_CASE("exchange: offerings") {
  std::set<std::string> links{"l1", "l2", "l3"};
  Exchange ex([&](const LinkId& l) { return links.count(l.str()) != 0; });
  int adverts = 0;
  std::size_t audience = 0;
  ex.set_advertiser([&](const Offering&, const std::vector<std::string>& buyers) {
    ++adverts;
    audience = buyers.size();
  });
  ex.register_bidder("h1");
  ex.register_bidder("h2");

  auto id = ex.register_offering(SellerId{"s"}, LinkId{"l1"}, Money::units(4));
  CHECK(adverts == 1);
  CHECK(audience == 2);
  CHECK(ex.register_offering(SellerId{"s"}, LinkId{"l1"}, Money::units(4)) == id);
  CHECK(code_of([&] { ex.register_offering(SellerId{"s"}, LinkId{"l1"}, Money::units(5)); }) ==
        Errc::DuplicateOffering);
  CHECK(code_of([&] { ex.register_offering(SellerId{"s"}, LinkId{"l9"}, Money::units(1)); }) == Errc::UnknownLink);
  ex.register_offering(SellerId{"s"}, LinkId{"l2"}, Money::units(1));
  ex.register_offering(SellerId{"s"}, LinkId{"l3"}, Money::units(1));
  CHECK(ex.offerings().size() == 3);
}

TEST_CASE("exchange: sealed rounds") {
  Exchange ex([](const LinkId&) { return true; });
  auto o1 = ex.register_offering(SellerId{"s"}, LinkId{"l1"}, Money::units(4));
  ex.register_bidder("A");
  ex.register_bidder("B");
  ex.register_bidder("C");
  auto lot = ex.open_lot({o1}, 1);

  auto b = bid("A", 10, 0);
  b.lot = lot;
  auto receipt = ex.submit_bid(b);
  CHECK(receipt.lot == lot);
  CHECK(code_of([&] { ex.submit_bid(b); }) == Errc::DuplicateBid);

  auto b2 = bid("B", 8, 1);
  b2.lot = lot;
  ex.submit_bid(b2);
  auto stray = bid("Z", 8, 1);
  stray.lot = lot;
  CHECK(code_of([&] { ex.submit_bid(stray); }) == Errc::UnknownBidder);

  CHECK(ex.visible_bids(lot, "B").size() == 1);
  auto o = ex.close_lot(lot, Mechanism::GSP);
  CHECK(o.winners.at(0).bidder == "A");
  CHECK(o.winners.at(0).payment == Money::units(8));
  CHECK(ex.visible_bids(lot, "B").size() == 2);

  auto late = bid("C", 20, 2);
  late.lot = lot;
  CHECK(code_of([&] { ex.submit_bid(late); }) == Errc::UnknownOffering);
  // Outcomes are immutable once closed.
  CHECK(ex.close_lot(lot, Mechanism::VCG).mechanism == Mechanism::GSP);
}

TEST_CASE("exchange: concurrent bid intake") {
  Exchange ex([](const LinkId&) { return true; });
  auto off = ex.register_offering(SellerId{"s"}, LinkId{"l1"}, Money{0});
  for (int i = 0; i < 16; ++i) ex.register_bidder("b" + std::to_string(i));
  auto lot = ex.open_lot({off}, 3);
  std::vector<std::thread> threads;
  for (int i = 0; i < 16; ++i) {
    threads.emplace_back([&, i] {
      auto b = bid("b" + std::to_string(i), i, i);
      b.lot = lot;
      ex.submit_bid(b);
    });
  }
  for (auto& t : threads) t.join();
  auto o = ex.close_lot(lot, Mechanism::GSP);
  CHECK(o.winners.size() == 3);
  CHECK(o.winners[0].bidder == "b15");
  CHECK(o.winners[2].payment == Money::units(12));
}
