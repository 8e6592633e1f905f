#include "greyfiber/exchange.hpp"

#include <algorithm>
#include <memory>

#include <fmt/format.h>

#include "greyfiber/error.hpp"

namespace gf::exchange {

std::string_view mechanism_name(Mechanism m) { return m == Mechanism::GSP ? "gsp" : "vcg"; }

Mechanism parse_mechanism(std::string_view s) {
  if (s == "gsp" || s == "GSP") return Mechanism::GSP;
  if (s == "vcg" || s == "VCG") return Mechanism::VCG;
  throw Error(Errc::InvalidArgument, fmt::format("unknown auction mechanism '{}'", s));
}

const Award* AuctionOutcome::award_for(std::string_view bidder) const {
  for (const auto& w : winners)
    if (w.bidder == bidder) return &w;
  return nullptr;
}

std::vector<Bid> rank_bids(std::span<const Bid> bids, Money reserve) {
  std::vector<Bid> eligible;
  for (const auto& b : bids) {
    if (b.amount.micros < 0) throw Error(Errc::InvalidArgument, "bid amounts must be non-negative");
    if (b.amount >= reserve) eligible.push_back(b);
  }
  std::sort(eligible.begin(), eligible.end(), [](const Bid& x, const Bid& y) {
    if (x.amount != y.amount) return x.amount > y.amount;
    if (x.submitted_at != y.submitted_at) return x.submitted_at < y.submitted_at;
    return x.bidder < y.bidder;
  });
  return eligible;
}

namespace {

AuctionOutcome settle(Mechanism mechanism, std::size_t slots, Money reserve, std::span<const Bid> bids) {
  if (reserve.micros < 0) throw Error(Errc::InvalidArgument, "reserve must be non-negative");
  std::set<std::string> names;
  for (const auto& b : bids) {
    if (!names.insert(b.bidder).second)
      throw Error(Errc::DuplicateBid, "bidder " + b.bidder + " bid twice in one round");
  }
  auto ranked = rank_bids(bids, reserve);
  if (ranked.empty() || slots == 0) throw Error(Errc::EmptyRound, "no eligible bids");

  AuctionOutcome out;
  out.mechanism = mechanism;
  out.slots = slots;
  out.reserve = reserve;
  for (const auto& b : bids) out.values[b.bidder] = b.value;

  const std::size_t nwin = std::min(slots, ranked.size());
  out.clearing_bid = nwin < ranked.size() ? ranked[nwin].amount : reserve;
  for (std::size_t j = 0; j < nwin; ++j) {
    Money pay;
    if (mechanism == Mechanism::GSP)
      pay = j + 1 < ranked.size() ? ranked[j + 1].amount : reserve;
    else
      pay = out.clearing_bid;
    out.winners.push_back({ranked[j].bidder, ranked[j].amount, std::max(pay, reserve), j});
  }
  for (const auto& b : bids) {
    if (!out.award_for(b.bidder)) out.losers.push_back(b.bidder);
  }
  std::sort(out.losers.begin(), out.losers.end());
  return out;
}

}  // namespace

AuctionOutcome run_gsp_auction(std::size_t slots, Money reserve, std::span<const Bid> bids) {
  return settle(Mechanism::GSP, slots, reserve, bids);
}

AuctionOutcome run_vcg_auction(std::size_t slots, Money reserve, std::span<const Bid> bids) {
  return settle(Mechanism::VCG, slots, reserve, bids);
}

AuctionOutcome run_auction(Mechanism m, std::size_t slots, Money reserve, std::span<const Bid> bids) {
  return settle(m, slots, reserve, bids);
}

Money payoff(const AuctionOutcome& outcome, std::string_view bidder) {
  auto it = outcome.values.find(std::string(bidder));
  if (it == outcome.values.end()) throw Error(Errc::UnknownBidder, std::string(bidder));
  if (const auto* w = outcome.award_for(bidder)) return it->second - w->payment;
  return Money{0};
}

// ---------------------------------------------------------------------------

Exchange::Exchange(LinkCatalog catalog) : catalog_(std::move(catalog)) {}

OfferingId Exchange::register_offering(const SellerId& seller, const LinkId& link, Money reserve, Millis now) {
  if (reserve.micros < 0) throw Error(Errc::InvalidArgument, "reserve must be non-negative");
  if (catalog_ && !catalog_(link)) throw Error(Errc::UnknownLink, link.str());
  Offering listed;
  Advertiser notify;
  std::vector<std::string> audience;
  {
    std::lock_guard lock(mu_);
    auto it = by_link_.find(link);
    if (it != by_link_.end()) {
      const auto& cur = offerings_.at(it->second);
      if (cur.seller == seller && cur.reserve == reserve) return cur.id;
      throw Error(Errc::DuplicateOffering, "link " + link.str() + " already has a live offering");
    }
    listed = Offering{OfferingId{next_offering_++}, link, seller, reserve, now};
    offerings_.emplace(listed.id, listed);
    by_link_.emplace(link, listed.id);
    notify = advertiser_;
    audience = bidders_;
  }
  if (notify) notify(listed, audience);
  return listed.id;
}

void Exchange::withdraw_offering(OfferingId id) {
  std::lock_guard lock(mu_);
  auto it = offerings_.find(id);
  if (it == offerings_.end()) throw Error(Errc::UnknownOffering, fmt::format("offering {}", id.value));
  by_link_.erase(it->second.link);
  offerings_.erase(it);
}

std::vector<Offering> Exchange::offerings() const {
  std::lock_guard lock(mu_);
  std::vector<Offering> out;
  for (const auto& [_, o] : offerings_) out.push_back(o);
  return out;
}

std::optional<Offering> Exchange::offering(OfferingId id) const {
  std::lock_guard lock(mu_);
  auto it = offerings_.find(id);
  if (it == offerings_.end()) return std::nullopt;
  return it->second;
}

std::optional<Offering> Exchange::offering_for(const LinkId& link) const {
  std::lock_guard lock(mu_);
  auto it = by_link_.find(link);
  if (it == by_link_.end()) return std::nullopt;
  return offerings_.at(it->second);
}

Money Exchange::reserve_for(const LinkId& link) const {
  auto o = offering_for(link);
  return o ? o->reserve : Money{0};
}

void Exchange::register_bidder(const std::string& name) {
  std::lock_guard lock(mu_);
  if (std::find(bidders_.begin(), bidders_.end(), name) == bidders_.end()) bidders_.push_back(name);
}

bool Exchange::is_registered(const std::string& name) const {
  std::lock_guard lock(mu_);
  return std::find(bidders_.begin(), bidders_.end(), name) != bidders_.end();
}

void Exchange::set_advertiser(Advertiser advertiser) {
  std::lock_guard lock(mu_);
  advertiser_ = std::move(advertiser);
}

LotId Exchange::open_lot(std::vector<OfferingId> offerings, std::size_t slots, std::optional<Money> reserve) {
  std::lock_guard lock(mu_);
  Money floor{0};
  for (auto id : offerings) {
    auto it = offerings_.find(id);
    if (it == offerings_.end()) throw Error(Errc::UnknownOffering, fmt::format("offering {}", id.value));
    floor = std::max(floor, it->second.reserve);
  }
  LotId id{next_lot_++};
  Lot lot;
  lot.offerings = std::move(offerings);
  lot.slots = slots;
  lot.reserve = reserve.value_or(floor);
  lots_.emplace(id, std::move(lot));
  return id;
}

Receipt Exchange::submit_bid(const Bid& bid) {
  std::lock_guard lock(mu_);
  if (std::find(bidders_.begin(), bidders_.end(), bid.bidder) == bidders_.end())
    throw Error(Errc::UnknownBidder, bid.bidder);
  if (bid.amount.micros < 0) throw Error(Errc::InvalidArgument, "bid amounts must be non-negative");
  auto it = lots_.find(bid.lot);
  if (it == lots_.end() || it->second.closed)
    throw Error(Errc::UnknownOffering, fmt::format("lot {} is not open", bid.lot.value));
  for (const auto& b : it->second.bids) {
    if (b.bidder == bid.bidder)
      throw Error(Errc::DuplicateBid, fmt::format("{} already bid in lot {}", bid.bidder, bid.lot.value));
  }
  it->second.bids.push_back(bid);
  return Receipt{bid.lot, next_receipt_++};
}

std::vector<Bid> Exchange::visible_bids(LotId lot, const std::string& viewer) const {
  std::lock_guard lock(mu_);
  auto it = lots_.find(lot);
  if (it == lots_.end()) throw Error(Errc::UnknownOffering, fmt::format("lot {}", lot.value));
  std::vector<Bid> out;
  for (const auto& b : it->second.bids) {
    if (it->second.closed || b.bidder == viewer) out.push_back(b);
  }
  return out;
}

AuctionOutcome Exchange::close_lot(LotId id, Mechanism mechanism) {
  std::mutex* run_mu = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = lots_.find(id);
    if (it == lots_.end()) throw Error(Errc::UnknownOffering, fmt::format("lot {}", id.value));
    run_mu = it->second.run_mu.get();
  }
  // One round at a time per lot; bid intake stays open on other lots.
  std::lock_guard run(*run_mu);
  std::vector<Bid> bids;
  std::size_t slots = 0;
  Money reserve;
  std::vector<OfferingId> offerings;
  {
    std::lock_guard lock(mu_);
    auto& lot = lots_.at(id);
    if (lot.closed) {
      if (lot.outcome) return *lot.outcome;
      throw Error(Errc::EmptyRound, fmt::format("lot {} closed without winners", id.value));
    }
    lot.closed = true;
    bids = lot.bids;
    slots = lot.slots;
    reserve = lot.reserve;
    offerings = lot.offerings;
  }
  auto out = run_auction(mechanism, slots, reserve, bids);
  out.lot = id;
  out.offerings = std::move(offerings);
  std::lock_guard lock(mu_);
  lots_.at(id).outcome = out;
  return out;
}

std::optional<AuctionOutcome> Exchange::outcome(LotId lot) const {
  std::lock_guard lock(mu_);
  auto it = lots_.find(lot);
  if (it == lots_.end()) return std::nullopt;
  return it->second.outcome;
}

}  // namespace gf::exchange
