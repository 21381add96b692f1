#include "gft/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "gft/random.hpp"

namespace gft {

template <class T>
BasicTensor<T> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
                                double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  BasicTensor<T> probe = x;
  BasicTensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T original = probe[i];
    probe[i] = static_cast<T>(original + h);
    const double up = f(probe);
    probe[i] = static_cast<T>(original - h);
    const double down = f(probe);
    probe[i] = original;
    grad[i] = static_cast<T>((up - down) / (2.0 * h));
  }
  return grad;
}

template Tensor finite_diff_grad(const std::function<double(const Tensor&)>&, const Tensor&, double);
template Tensor64 finite_diff_grad(const std::function<double(const Tensor64&)>&, const Tensor64&, double);

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

template <class T>
double evaluate_loss(const GftModel<T>& model, const BasicTensor<T>& images, const std::vector<std::size_t>& labels,
                     const std::vector<pps::SelectionMask>& masks) {
  ad::Tape<T> tape;
  ForwardOptions opts;
  opts.forced_masks = &masks;
  auto fwd = gft_forward(tape, model, images, nullptr, opts);
  return ad::cross_entropy(fwd.logits, labels).value()[0];
}

template <class T>
std::vector<BasicTensor<T>> analytic_grads(const GftModel<T>& model, const BasicTensor<T>& images,
                                           const std::vector<std::size_t>& labels,
                                           const std::vector<pps::SelectionMask>& masks) {
  ad::Tape<T> tape;
  ForwardOptions opts;
  opts.forced_masks = &masks;
  auto fwd = gft_forward(tape, model, images, nullptr, opts);
  tape.backward(ad::cross_entropy(fwd.logits, labels));
  std::vector<BasicTensor<T>> grads;
  for (const auto& v : fwd.params) grads.push_back(v.grad());
  return grads;
}

}  // namespace

GradcheckReport gradcheck_model(const GftModel<float>& model, const Tensor& images,
                                const std::vector<std::size_t>& labels, const GradcheckOptions& opts) {
  GftModel<double> shadow = model.cast<double>();
  const Tensor64 images64 = images.cast<double>();

  std::vector<pps::SelectionMask> masks;
  {
    ad::Tape<double> tape;
    masks = gft_forward(tape, shadow, images64, nullptr).masks();
  }
  const auto grads64 = analytic_grads(shadow, images64, labels, masks);
  const auto grads32 = analytic_grads(model, images, labels, masks);

  std::map<std::string, LayerGradcheck> by_group;
  for (const auto& g : model.config.layer_groups()) by_group[g].group = g;

  Rng rng(opts.seed);
  for (std::size_t p = 0; p < shadow.params.size(); ++p) {
    auto& param = shadow.params[p];
    if (!param.trainable) continue;
    LayerGradcheck& entry = by_group.at(param.group);
    const std::size_t probes = std::min(opts.probes_per_tensor, param.value.numel());
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t i = rng.index(param.value.numel());
      const double original = param.value[i];
      param.value[i] = original + opts.step;
      const double up = evaluate_loss(shadow, images64, labels, masks);
      param.value[i] = original - opts.step;
      const double down = evaluate_loss(shadow, images64, labels, masks);
      param.value[i] = original;

      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = grads64[p][i];
      entry.max_relative_error = std::max(entry.max_relative_error, relative_error(analytic, numeric, opts.error_floor));
      entry.max_float_deviation =
          std::max(entry.max_float_deviation, relative_error(grads32[p][i], analytic, opts.error_floor));
      ++entry.probes;
    }
  }

  GradcheckReport report;
  for (const auto& g : model.config.layer_groups()) {
    LayerGradcheck entry = by_group.at(g);
    entry.passed = entry.probes > 0 && entry.max_relative_error < opts.tolerance;
    report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
    report.passed = report.passed && entry.passed;
    report.layers.push_back(entry);
  }
  return report;
}

}  // namespace gft
