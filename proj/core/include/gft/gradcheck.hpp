#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gft/model.hpp"
#include "gft/tensor.hpp"

namespace gft {

/// Central differences (f(x + h·e_i) - f(x - h·e_i)) / 2h for every i.
template <class T>
BasicTensor<T> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
                                double h);

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from reporting noise as a large relative error.
double relative_error(double analytic, double numeric, double floor = 1e-8);

struct GradcheckOptions {
  std::size_t probes_per_tensor = 3;
  double step = 1e-4;
  double tolerance = 1e-3;
  double error_floor = 1e-8;
  std::uint64_t seed = 0;
};

struct LayerGradcheck {
  std::string group;
  std::size_t probes = 0;
  /// Backward pass vs finite differences, both in double precision.
  double max_relative_error = 0.0;
  /// The float32 production backward vs the double backward (informational).
  double max_float_deviation = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<LayerGradcheck> layers;  ///< one per layer group, depth order
  double max_relative_error = 0.0;
  bool passed = true;
};

/// Probes `probes_per_tensor` random coordinates of every trainable
/// parameter. The model is evaluated in double precision with the selection
/// masks of the unperturbed pass held fixed, so the loss is a smooth function
/// of the parameters.
GradcheckReport gradcheck_model(const GftModel<float>& model, const Tensor& images,
                                const std::vector<std::size_t>& labels, const GradcheckOptions& opts = {});

}  // namespace gft
