#pragma once

#include <stdexcept>
#include <string>

namespace oseg {

// Error taxonomy mirrored by the C API status codes.
enum class ErrorKind {
    InvalidArgument,
    Io,
    Runtime,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
    throw Error(ErrorKind::InvalidArgument, msg);
}

[[noreturn]] inline void throw_io(const std::string& msg) {
    throw Error(ErrorKind::Io, msg);
}

[[noreturn]] inline void throw_runtime(const std::string& msg) {
    throw Error(ErrorKind::Runtime, msg);
}

} // namespace oseg
