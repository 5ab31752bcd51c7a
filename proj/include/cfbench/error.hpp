#pragma once

#include <stdexcept>
#include <string>

namespace cfbench {

// Coarse failure class; the CLI maps these onto its exit codes.
enum class ErrorKind {
  usage,        // bad arguments or configuration
  environment,  // compiler or endpoint missing
  data,         // malformed corpus, logs, or reports
  precondition  // API misuse
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) { return Error(ErrorKind::usage, what); }
inline Error environment_error(const std::string& what) { return Error(ErrorKind::environment, what); }
inline Error data_error(const std::string& what) { return Error(ErrorKind::data, what); }
inline Error precondition_error(const std::string& what) { return Error(ErrorKind::precondition, what); }

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::precondition:
      return 1;
    case ErrorKind::environment:
      return 2;
    case ErrorKind::data:
      return 3;
  }
  return 1;
}

}  // namespace cfbench
