#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gf {

enum class Errc {
  // topology
  SchemaViolation,
  DuplicateId,
  DanglingReference,
  DuplicateWavelength,
  UnknownNode,
  UnknownLink,
  InvalidRequest,
  ConcurrentDepletion,
  WavelengthExhausted,
  DoubleRelease,
  UnknownAllocation,
  // exchange
  DuplicateOffering,
  UnknownOffering,
  DuplicateBid,
  UnknownBidder,
  EmptyRound,
  // ggc
  DuplicateBuyer,
  ConflictingLink,
  UnknownLease,
  // glsc
  LinkDown,
  UnknownHandle,
  NoLocalResource,
  // substrate / harness
  InvalidArgument,
  MalformedLog,
  MissingRecovery,
  // protocol
  MalformedFrame,
  Transport,
};

std::string_view errc_name(Errc code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace gf
