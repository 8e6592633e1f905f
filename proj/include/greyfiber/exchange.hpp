#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "greyfiber/types.hpp"

namespace gf::exchange {

enum class Mechanism { GSP, VCG };
std::string_view mechanism_name(Mechanism m);
Mechanism parse_mechanism(std::string_view s);

// A listed link (an element of the set L) with the seller's reserve.
struct Offering {
  OfferingId id;
  LinkId link;
  SellerId seller;
  Money reserve;
  Millis listed_at{0};
};

// Sealed bid. `value` is the bidder's private valuation; it is carried for
// payoff accounting only and never read by winner selection or pricing.
struct Bid {
  std::string bidder;
  LotId lot;
  Money amount;
  Money value;
  Millis submitted_at{0};
};

struct Award {
  std::string bidder;
  Money bid;
  Money payment;
  std::size_t rank = 0;  // 0 = highest
};

struct AuctionOutcome {
  LotId lot;
  std::vector<OfferingId> offerings;
  Mechanism mechanism = Mechanism::GSP;
  std::size_t slots = 0;
  Money reserve;
  std::vector<Award> winners;       // in rank order
  std::vector<std::string> losers;  // includes bids discarded below reserve
  Money clearing_bid;               // highest losing eligible bid, else reserve
  std::map<std::string, Money> values;

  const Award* award_for(std::string_view bidder) const;
};

// Eligible bids (amount >= reserve) in rank order: amount descending, then
// earlier submission, then bidder name.
std::vector<Bid> rank_bids(std::span<const Bid> bids, Money reserve);

// Winner at rank j pays the bid ranked j+1; a winner with nobody ranked below
// pays the reserve.
AuctionOutcome run_gsp_auction(std::size_t slots, Money reserve, std::span<const Bid> bids);
// Unit-demand identical slots: every winner pays the (k+1)-th eligible bid, or
// the reserve when no eligible bidder was displaced.
AuctionOutcome run_vcg_auction(std::size_t slots, Money reserve, std::span<const Bid> bids);
AuctionOutcome run_auction(Mechanism m, std::size_t slots, Money reserve, std::span<const Bid> bids);

// value - payment for a winner, zero for a loser.
Money payoff(const AuctionOutcome& outcome, std::string_view bidder);

struct Receipt {
  LotId lot;
  std::uint64_t sequence = 0;
};

// The Fiber Exchange: offerings, registered bidders, and sealed single-shot
// rounds ("lots") over sets of identical slots.
class Exchange {
 public:
  using LinkCatalog = std::function<bool(const LinkId&)>;
  using Advertiser = std::function<void(const Offering&, const std::vector<std::string>& buyers)>;

  explicit Exchange(LinkCatalog catalog);

  OfferingId register_offering(const SellerId& seller, const LinkId& link, Money reserve, Millis now = Millis{0});
  void withdraw_offering(OfferingId id);
  std::vector<Offering> offerings() const;
  std::optional<Offering> offering(OfferingId id) const;
  std::optional<Offering> offering_for(const LinkId& link) const;
  Money reserve_for(const LinkId& link) const;

  void register_bidder(const std::string& name);
  bool is_registered(const std::string& name) const;
  void set_advertiser(Advertiser advertiser);

  // A lot without an explicit reserve uses the largest reserve among its offerings.
  LotId open_lot(std::vector<OfferingId> offerings, std::size_t slots, std::optional<Money> reserve = std::nullopt);
  Receipt submit_bid(const Bid& bid);
  // Sealed until close: a viewer sees only its own bids on an open lot.
  std::vector<Bid> visible_bids(LotId lot, const std::string& viewer) const;
  AuctionOutcome close_lot(LotId lot, Mechanism mechanism);
  std::optional<AuctionOutcome> outcome(LotId lot) const;

 private:
  struct Lot {
    std::vector<OfferingId> offerings;
    std::size_t slots = 0;
    Money reserve;
    std::vector<Bid> bids;
    bool closed = false;
    std::optional<AuctionOutcome> outcome;
    std::unique_ptr<std::mutex> run_mu = std::make_unique<std::mutex>();
  };

  LinkCatalog catalog_;
  Advertiser advertiser_;
  std::map<OfferingId, Offering> offerings_;
  std::map<LinkId, OfferingId> by_link_;
  std::vector<std::string> bidders_;
  std::map<LotId, Lot> lots_;
  std::uint64_t next_offering_ = 1;
  std::uint64_t next_lot_ = 1;
  std::uint64_t next_receipt_ = 1;
  mutable std::mutex mu_;
};

}  // namespace gf::exchange
