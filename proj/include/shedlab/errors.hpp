#pragma once

#include <stdexcept>
#include <string>

namespace shedlab {

/// Argument or clock value outside its documented domain.
struct RangeError : std::out_of_range {
  explicit RangeError(const std::string& what) : std::out_of_range(what) {}
};

/// Shapes, layouts or caches that do not line up.
struct StructuralError : std::runtime_error {
  explicit StructuralError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values encountered where finite ones are required.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Schedule or fit collapsed to a state where the quantity is undefined.
struct DegenerateError : std::runtime_error {
  explicit DegenerateError(const std::string& what) : std::runtime_error(what) {}
};

/// Config file failed typed validation.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// On-disk file does not follow its documented format.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Operation needs at least one element and got none.
struct EmptyInputError : std::runtime_error {
  explicit EmptyInputError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace shedlab
