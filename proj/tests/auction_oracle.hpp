#pragma once

// Brute-force auction oracles, independent of the exchange's ranking code:
// GSP by pairwise rank counting, VCG by exhaustive welfare maximization with
// Clarke payments (unsold slots are worth the reserve to the seller).

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "greyfiber/error.hpp"
#include "greyfiber/exchange.hpp"

namespace gf::oracle {

struct OracleOutcome {
  std::map<std::string, std::int64_t> payments;  // winners only
  bool empty = false;
};

inline bool beats(const exchange::Bid& x, const exchange::Bid& y) {
  if (x.amount.micros != y.amount.micros) return x.amount.micros > y.amount.micros;
  if (x.submitted_at != y.submitted_at) return x.submitted_at < y.submitted_at;
  return x.bidder < y.bidder;
}

inline OracleOutcome gsp(std::size_t k, std::int64_t reserve, const std::vector<exchange::Bid>& bids) {
  std::vector<const exchange::Bid*> eligible;
  for (const auto& b : bids)
    if (b.amount.micros >= reserve) eligible.push_back(&b);
  OracleOutcome out;
  if (eligible.empty() || k == 0) {
    out.empty = true;
    return out;
  }
  std::map<std::size_t, const exchange::Bid*> by_rank;
  for (const auto* b : eligible) {
    std::size_t rank = 0;
    for (const auto* o : eligible)
      if (o != b && beats(*o, *b)) ++rank;
    by_rank[rank] = b;
  }
  for (const auto& [rank, b] : by_rank) {
    if (rank >= k) continue;
    auto next = by_rank.find(rank + 1);
    std::int64_t pay = next != by_rank.end() ? next->second->amount.micros : reserve;
    out.payments[b->bidder] = std::max(pay, reserve);
  }
  return out;
}

inline OracleOutcome vcg(std::size_t k, std::int64_t reserve, const std::vector<exchange::Bid>& bids) {
  const std::size_t n = bids.size();
  auto welfare = [&](unsigned mask) {
    std::int64_t w = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) {
        w += bids[i].amount.micros;
        ++count;
      }
    }
    return w + static_cast<std::int64_t>(k - count) * reserve;
  };
  auto popcount = [](unsigned m) { return static_cast<std::size_t>(__builtin_popcount(m)); };
  // Preference among equal-welfare allocations: more winners, then the
  // better-ranked membership.
  auto better = [&](unsigned a, unsigned b) {
    std::int64_t wa = welfare(a), wb = welfare(b);
    if (wa != wb) return wa > wb;
    if (popcount(a) != popcount(b)) return popcount(a) > popcount(b);
    std::vector<const exchange::Bid*> ma, mb;
    for (std::size_t i = 0; i < n; ++i) {
      if (a & (1u << i)) ma.push_back(&bids[i]);
      if (b & (1u << i)) mb.push_back(&bids[i]);
    }
    auto cmp = [](const exchange::Bid* x, const exchange::Bid* y) { return beats(*x, *y); };
    std::sort(ma.begin(), ma.end(), cmp);
    std::sort(mb.begin(), mb.end(), cmp);
    for (std::size_t i = 0; i < ma.size(); ++i)
      if (ma[i] != mb[i]) return beats(*ma[i], *mb[i]);
    return false;
  };
  auto best = [&](unsigned allowed) {
    std::optional<unsigned> arg;
    for (unsigned m = 0; m < (1u << n); ++m) {
      if ((m & ~allowed) != 0 || popcount(m) > k) continue;
      bool feasible = true;  // a bid under the reserve never receives a slot
      for (std::size_t i = 0; i < n; ++i)
        if ((m & (1u << i)) && bids[i].amount.micros < reserve) feasible = false;
      if (!feasible) continue;
      if (!arg || better(m, *arg)) arg = m;
    }
    return *arg;
  };
  const unsigned all = (1u << n) - 1;
  unsigned star = best(all);
  OracleOutcome out;
  if (star == 0 || k == 0) {
    out.empty = true;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(star & (1u << i))) continue;
    std::int64_t without = welfare(best(all & ~(1u << i)));
    std::int64_t others_with = welfare(star) - bids[i].amount.micros;
    out.payments[bids[i].bidder] = without - others_with;
  }
  return out;
}

// Outcome of the mechanism under test in oracle form; EmptyRound maps to empty.
inline OracleOutcome observe(exchange::Mechanism m, std::size_t k, std::int64_t reserve,
                             const std::vector<exchange::Bid>& bids) {
  OracleOutcome out;
  try {
    auto o = exchange::run_auction(m, k, Money{reserve}, bids);
    for (const auto& w : o.winners) out.payments[w.bidder] = w.payment.micros;
  } catch (const Error& e) {
    if (e.code() != Errc::EmptyRound) throw;
    out.empty = true;
  }
  return out;
}

inline std::int64_t observed_payoff(exchange::Mechanism m, std::size_t k, std::int64_t reserve,
                                    const std::vector<exchange::Bid>& bids, const std::string& bidder) {
  try {
    auto o = exchange::run_auction(m, k, Money{reserve}, bids);
    return exchange::payoff(o, bidder).micros;
  } catch (const Error& e) {
    if (e.code() != Errc::EmptyRound) throw;
    return 0;
  }
}

// Calls fn(bids) for every profile of `n` bidders with amounts in [0, max_bid].
template <class Fn>
void for_each_profile(std::size_t n, int max_bid, Fn&& fn) {
  std::vector<int> digits(n, 0);
  while (true) {
    std::vector<exchange::Bid> bids;
    for (std::size_t i = 0; i < n; ++i) {
      exchange::Bid b;
      b.bidder = std::string(1, static_cast<char>('A' + i));
      b.amount = Money{digits[i]};
      b.value = Money{digits[i]};
      b.submitted_at = Millis{static_cast<std::int64_t>(i)};
      bids.push_back(b);
    }
    fn(bids);
    std::size_t pos = 0;
    while (pos < n && ++digits[pos] > max_bid) digits[pos++] = 0;
    if (pos == n) return;
  }
}

}  // namespace gf::oracle
