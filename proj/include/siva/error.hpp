#pragma once

#include <stdexcept>
#include <string>

namespace siva {

/// Raised for every contract violation and runtime failure in the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message)
{
    if (!condition) throw Error(message);
}

}  // namespace siva
