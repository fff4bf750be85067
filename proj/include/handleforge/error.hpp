#pragma once

#include <stdexcept>
#include <string>

namespace handleforge {

// Contract violations and IO failures throw Error; the CLI catches it and
// emits one machine-parsable line on stderr.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

}  // namespace handleforge
