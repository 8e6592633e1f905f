#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>

namespace gf {

// String-backed identifier distinguished by tag so node, link and conduit ids
// cannot be mixed up.
template <class Tag>
struct StrongId {
  std::string value;

  StrongId() = default;
  explicit StrongId(std::string v) : value(std::move(v)) {}
  explicit StrongId(const char* v) : value(v) {}

  const std::string& str() const { return value; }
  bool empty() const { return value.empty(); }

  friend auto operator<=>(const StrongId&, const StrongId&) = default;
  friend bool operator==(const StrongId&, const StrongId&) = default;
  friend std::ostream& operator<<(std::ostream& os, const StrongId& id) { return os << id.value; }
};

// Monotonically issued numeric identifier.
template <class Tag>
struct SerialId {
  std::uint64_t value = 0;

  constexpr SerialId() = default;
  constexpr explicit SerialId(std::uint64_t v) : value(v) {}

  friend constexpr auto operator<=>(const SerialId&, const SerialId&) = default;
  friend constexpr bool operator==(const SerialId&, const SerialId&) = default;
  friend std::ostream& operator<<(std::ostream& os, const SerialId& id) { return os << id.value; }
};

using NodeId = StrongId<struct NodeTag>;
using SiteId = StrongId<struct SiteTag>;
using ConduitId = StrongId<struct ConduitTag>;
using LinkId = StrongId<struct LinkTag>;
using SellerId = StrongId<struct SellerTag>;

using CircuitId = SerialId<struct CircuitTag>;
using AllocationId = SerialId<struct AllocationTag>;
using LeaseId = SerialId<struct LeaseTag>;
using RequestId = SerialId<struct RequestTag>;
using OfferingId = SerialId<struct OfferingTag>;
using LotId = SerialId<struct LotTag>;
using HandleId = SerialId<struct HandleTag>;

// Bandwidth in bits per second. Integral so that debit/credit round trips are exact.
using Bps = std::int64_t;

// Virtual and wall timestamps share one millisecond time base.
using Millis = std::chrono::milliseconds;

inline Millis from_seconds(double s) {
  return Millis{static_cast<std::int64_t>(s * 1000.0 + (s >= 0 ? 0.5 : -0.5))};
}
inline double to_seconds(Millis t) { return static_cast<double>(t.count()) / 1000.0; }

// Money in integer micro-units.
struct Money {
  std::int64_t micros = 0;

  constexpr Money() = default;
  constexpr explicit Money(std::int64_t m) : micros(m) {}
  static constexpr Money units(std::int64_t u) { return Money{u * 1'000'000}; }

  friend constexpr auto operator<=>(const Money&, const Money&) = default;
  friend constexpr bool operator==(const Money&, const Money&) = default;
  friend constexpr Money operator+(Money a, Money b) { return Money{a.micros + b.micros}; }
  friend constexpr Money operator-(Money a, Money b) { return Money{a.micros - b.micros}; }
  constexpr Money& operator+=(Money o) {
    micros += o.micros;
    return *this;
  }
  friend std::ostream& operator<<(std::ostream& os, Money m) { return os << m.micros << "u"; }
};

}  // namespace gf

template <class Tag>
struct std::hash<gf::StrongId<Tag>> {
  std::size_t operator()(const gf::StrongId<Tag>& id) const noexcept {
    return std::hash<std::string>{}(id.value);
  }
};

template <class Tag>
struct std::hash<gf::SerialId<Tag>> {
  std::size_t operator()(const gf::SerialId<Tag>& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
