#pragma once

#include <stdexcept>
#include <string>

namespace hcc {

// Raised for malformed inputs and violated data contracts. The CLI maps it to
// exit code 1.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hcc
