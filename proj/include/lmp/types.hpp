/*
 * Copyright 2026 The lmpcast Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace lmp {

template <class T = double>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T = double>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <class T = double>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using VectorXd = Vector<double>;
using MatrixXd = Matrix<double>;
using VectorXi = Eigen::VectorXi;
using Index = Eigen::Index;

using VectorRef = Eigen::Ref<const VectorXd>;
using MatrixRef = Eigen::Ref<const MatrixXd>;

// Error taxonomy. Each kind maps to a CLI exit code.
enum class ErrorKind { Validation, Structural, Numerical, Infeasible, Config };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};
struct StructuralError : Error {
  explicit StructuralError(const std::string& w) : Error(ErrorKind::Structural, w) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorKind::Numerical, w) {}
};
struct InfeasibleError : Error {
  explicit InfeasibleError(const std::string& w) : Error(ErrorKind::Infeasible, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};

// 0 success, 2 validation, 3 numerical, 4 infeasible.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Numerical: return 3;
    case ErrorKind::Infeasible: return 4;
    default: return 2;
  }
}

}  // namespace lmp
