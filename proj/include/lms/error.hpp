#pragma once

#include <stdexcept>
#include <string>

namespace lms {

enum class ErrorKind {
    kArgument = 1,
    kShape = 2,
    kConfig = 3,
    kIo = 4,
    kRuntime = 5,
    kDivergence = 6,
};

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_argument(const std::string& msg) { throw Error(ErrorKind::kArgument, msg); }
[[noreturn]] inline void throw_shape(const std::string& msg) { throw Error(ErrorKind::kShape, msg); }
[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(ErrorKind::kConfig, msg); }
[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(ErrorKind::kIo, msg); }

}  // namespace lms
