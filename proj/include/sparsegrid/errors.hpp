// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace sparsegrid {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or overflowing tensor dimensions.
struct DimensionError : Error { using Error::Error; };
// Shape mismatch between arguments.
struct ShapeError : Error { using Error::Error; };
// Grid not divisible by the requested cube dims.
struct LayoutError : Error { using Error::Error; };
// Attention mask with an empty row; signals a policy bug upstream.
struct MaskError : Error { using Error::Error; };
// Parameter outside its documented range.
struct ParamError : Error { using Error::Error; };
// Merge plan applied to a sequence it was not built for.
struct PlanError : Error { using Error::Error; };
// Non-finite values where finite input is required.
struct NumericError : Error { using Error::Error; };
// On-disk payload inconsistent with its sidecar.
struct CorruptFileError : Error { using Error::Error; };
// Recognized file with an unsupported dtype/layout/endianness.
struct UnsupportedFormatError : Error { using Error::Error; };
// Parsed input that violates a documented contract.
struct ValidationError : Error { using Error::Error; };
// Entropy over a single-key distribution (log N = 0).
struct UndefinedEntropyError : Error { using Error::Error; };

} // namespace sparsegrid
