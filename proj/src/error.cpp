#include "greyfiber/error.hpp"

namespace gf {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::DanglingReference: return "DanglingReference";
    case Errc::DuplicateWavelength: return "DuplicateWavelength";
    case Errc::UnknownNode: return "UnknownNode";
    case Errc::UnknownLink: return "UnknownLink";
    case Errc::InvalidRequest: return "InvalidRequest";
    case Errc::ConcurrentDepletion: return "ConcurrentDepletion";
    case Errc::WavelengthExhausted: return "WavelengthExhausted";
    case Errc::DoubleRelease: return "DoubleRelease";
    case Errc::UnknownAllocation: return "UnknownAllocation";
    case Errc::DuplicateOffering: return "DuplicateOffering";
    case Errc::UnknownOffering: return "UnknownOffering";
    case Errc::DuplicateBid: return "DuplicateBid";
    case Errc::UnknownBidder: return "UnknownBidder";
    case Errc::EmptyRound: return "EmptyRound";
    case Errc::DuplicateBuyer: return "DuplicateBuyer";
    case Errc::ConflictingLink: return "ConflictingLink";
    case Errc::UnknownLease: return "UnknownLease";
    case Errc::LinkDown: return "LinkDown";
    case Errc::UnknownHandle: return "UnknownHandle";
    case Errc::NoLocalResource: return "NoLocalResource";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::MalformedLog: return "MalformedLog";
    case Errc::MissingRecovery: return "MissingRecovery";
    case Errc::MalformedFrame: return "MalformedFrame";
    case Errc::Transport: return "Transport";
  }
  return "Unknown";
}

}  // namespace gf
