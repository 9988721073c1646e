#pragma once

#include <stdexcept>
#include <string>

namespace tgtn {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a transaction arrives with a timestamp older than the newest
/// node already in a graph. Kept distinct so stream code can apply a
/// late-event policy instead of failing.
class OutOfOrderError : public Error {
public:
    using Error::Error;
};

}  // namespace tgtn
