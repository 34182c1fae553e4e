#pragma once

#include <stdexcept>
#include <string>

namespace lipscan {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct StaleTrace : Error { using Error::Error; };
struct TooLarge : Error { using Error::Error; };
struct CorruptFile : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct LabelOutOfRange : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct MissingReference : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct DivergenceAbort : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };
struct PreconditionViolated : Error { using Error::Error; };
struct WrongLoss : Error { using Error::Error; };
struct UnsupportedLayer : Error { using Error::Error; };
struct ArchMismatch : Error { using Error::Error; };
struct RejectNoHidden : Error { using Error::Error; };
struct InsufficientData : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

} // namespace lipscan
