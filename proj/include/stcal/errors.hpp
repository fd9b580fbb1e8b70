#pragma once

#include <stdexcept>
#include <string>

namespace stcal {

/**
 * @brief Base class for every error raised by the library.
 *
 * The three subclasses map onto the command-line exit codes
 * (config 2, data 3, numerical 4).
 */
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace stcal
