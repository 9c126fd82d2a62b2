#pragma once

#include <cmath>
#include <cstdio>
#include <unistd.h>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fmtx/rng.hpp"
#include "fmtx/tape.hpp"
#include "fmtx/tensor.hpp"

namespace testutil {

using DTensor = fmtx::Tensor<double>;
using DTape = fmtx::Tape<double>;

// Central finite differences against reverse-mode gradients. The loss
// function must rebuild its graph from the given tape each call so the
// perturbed evaluations see fresh forward values.
inline double max_grad_rel_err(
    const std::function<DTensor(DTape&)>& loss_fn,
    std::vector<DTensor> params, double h = 1e-5) {
  DTape tape;
  DTensor loss = loss_fn(tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.push_back(p.grad());

  double worst = 0;
  DTape eval(false);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      double keep = vals[i];
      vals[i] = keep + h;
      double up = loss_fn(eval).item();
      vals[i] = keep - h;
      double dn = loss_fn(eval).item();
      vals[i] = keep;
      double fd = (up - dn) / (2 * h);
      double a = analytic[pi][i];
      double denom = std::max({1.0, std::fabs(a), std::fabs(fd)});
      worst = std::max(worst, std::fabs(a - fd) / denom);
    }
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

inline DTensor random_tensor(fmtx::Shape shape, fmtx::Rng& rng,
                             bool requires_grad = true, double scale = 1.0) {
  DTensor t(std::move(shape), 0.0, requires_grad);
  for (auto& v : t.values()) v = rng.normal() * scale;
  return t;
}

// Values bounded away from zero, for kinked ops (relu) and pool ties.
inline DTensor random_tensor_offzero(fmtx::Shape shape, fmtx::Rng& rng,
                                     bool requires_grad = true) {
  DTensor t(std::move(shape), 0.0, requires_grad);
  for (auto& v : t.values()) {
    double x = rng.normal();
    v = (x >= 0 ? x + 0.1 : x - 0.1);
  }
  return t;
}

// Scratch directory unique to a test, removed on destruction.
struct TmpDir {
  std::filesystem::path path;
  explicit TmpDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("fmtx_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TmpDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
