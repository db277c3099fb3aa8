#pragma once

#include <stdexcept>
#include <string>

namespace spermdet {

/// Base class for every recoverable failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Network-configuration parsing failures.
class CfgError : public Error {
public:
    enum class Kind { UnknownSection, MissingKey, MalformedValue, EmptyNetwork };

    CfgError(Kind kind, std::string message, int line = 0)
        : Error(std::move(message)), kind(kind), line(line) {}

    Kind kind;
    int line;  // 1-based source line, 0 when not applicable
};

/// Tensor/layer geometry violations (mismatched shapes, bad dimensions).
class ShapeError : public Error {
public:
    explicit ShapeError(std::string message, int layer = -1)
        : Error(std::move(message)), layer(layer) {}

    int layer;  // offending layer index, -1 when not layer-specific
};

/// Binary weights stream failures.
class WeightsError : public Error {
public:
    enum class Kind { BadHeader, Truncated, TrailingBytes, PrefixShapeMismatch };

    WeightsError(Kind kind, std::string message, long long detail = -1)
        : Error(std::move(message)), kind(kind), detail(detail) {}

    Kind kind;
    long long detail;  // layer index or byte count, depending on kind
};

/// PNM raster decoding failures.
class ImageError : public Error {
public:
    enum class Kind { BadMagic, BadDimensions, Truncated };

    ImageError(Kind kind, std::string message) : Error(std::move(message)), kind(kind) {}

    Kind kind;
};

/// Ground-truth annotation parsing failures.
class AnnotationError : public Error {
public:
    enum class Kind { MalformedLine, ValueOutOfRange };

    AnnotationError(Kind kind, std::string message, int line)
        : Error(std::move(message)), kind(kind), line(line) {}

    Kind kind;
    int line;  // 1-based
};

/// Evaluation pairing failures.
class EvalError : public Error {
public:
    enum class Kind { MissingCounterpart, UnknownImageId };

    EvalError(Kind kind, std::string message) : Error(std::move(message)), kind(kind) {}

    Kind kind;
};

/// Numeric breakdowns: NaN loss, negative variance from a corrupt file.
class NumericError : public Error {
public:
    enum class Kind { NegativeVariance, NanLoss, GtOutsideCanvas, TooFewBoxes, EmptyDataset };

    NumericError(Kind kind, std::string message) : Error(std::move(message)), kind(kind) {}

    Kind kind;
};

}  // namespace spermdet
