// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pcsot/tensor.hpp"

namespace testutil {

// Relative error with an absolute floor so near-zero gradients compare on
// an absolute scale where finite differences are noise-limited.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Central finite differences against the analytic gradient of a scalar
// loss. `build_loss` must rebuild the computation from the current
// parameter values on every call. Returns the max relative error over all
// coordinates of all listed parameters.
inline double gradcheck(std::vector<pcsot::Tensor>& params,
                        const std::function<pcsot::Tensor()>& build_loss,
                        double eps = 1e-5) {
  using namespace pcsot;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  double analytic_loss = 0;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = build_loss();
    analytic_loss = loss.data()[0];
    tape.backward(loss);
  }
  (void)analytic_loss;
  double worst = 0;
  for (auto& p : params) {
    const std::vector<double>* g = p.grad();
    for (int i = 0; i < p.size(); ++i) {
      const double saved = p.data()[static_cast<std::size_t>(i)];
      p.mutable_data()[static_cast<std::size_t>(i)] = saved + eps;
      const double up = build_loss().data()[0];
      p.mutable_data()[static_cast<std::size_t>(i)] = saved - eps;
      const double dn = build_loss().data()[0];
      p.mutable_data()[static_cast<std::size_t>(i)] = saved;
      const double numeric = (up - dn) / (2 * eps);
      const double analytic = g ? (*g)[static_cast<std::size_t>(i)] : 0.0;
      worst = std::max(worst, rel_err(analytic, numeric));
    }
  }
  return worst;
}

// Same check but only for selected (param index, flat index) coordinates.
inline double gradcheck_coords(
    std::vector<pcsot::Tensor>& params,
    const std::function<pcsot::Tensor()>& build_loss,
    const std::vector<std::pair<int, int>>& coords, double eps = 1e-5) {
  using namespace pcsot;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = build_loss();
    tape.backward(loss);
  }
  double worst = 0;
  for (auto [pi, i] : coords) {
    auto& p = params[static_cast<std::size_t>(pi)];
    const double saved = p.data()[static_cast<std::size_t>(i)];
    p.mutable_data()[static_cast<std::size_t>(i)] = saved + eps;
    const double up = build_loss().data()[0];
    p.mutable_data()[static_cast<std::size_t>(i)] = saved - eps;
    const double dn = build_loss().data()[0];
    p.mutable_data()[static_cast<std::size_t>(i)] = saved;
    const double numeric = (up - dn) / (2 * eps);
    const std::vector<double>* g = p.grad();
    const double analytic = g ? (*g)[static_cast<std::size_t>(i)] : 0.0;
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

// Scratch directory that cleans up after itself.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    path_ = fs::temp_directory_path() /
            ("pcsot_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
