#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace efc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

// Bad shapes, unknown options, missing prerequisites.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values, singular solves, overflow.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or unreadable data files.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

// Runs fn(i) for i in [0, n). Work is dealt in fixed-size chunks so results
// are independent of the worker count; fn must only write to slot i.
// Worker count: EFC_THREADS env var, else hardware concurrency.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t chunk = 32);

std::size_t worker_count();

}  // namespace efc
