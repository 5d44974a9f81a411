#pragma once

#include <stdexcept>
#include <string>

namespace repronlp {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { usage = 1, config = 2, data = 3, store = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class StoreError : public Error {
 public:
  explicit StoreError(const std::string& what) : Error(ErrorKind::store, what) {}
};

}  // namespace repronlp
