#pragma once

#include <random>

#include "terrace/loss.hpp"
#include "terrace/network.hpp"

namespace terrace {

struct gradcheck_options {
  int seeds = 50;
  double eps = 1e-6;
  int input_size = 64;          // H = W, must be divisible by 32
  int coords_per_seed = 24;     // finite-difference probes, spread over tensors
  network_config net;           // double-precision toy topology
  loss_config loss;             // variant is alternated per seed

  gradcheck_options() {
    net.in_channels = 11;
    net.encoder_widths = {4, 6, 8, 10, 12};
    net.decoder_widths = {12, 10, 8, 6, 4};
  }
};

struct gradcheck_report {
  double max_rel_error = 0.0;
  std::int64_t probes = 0;
};

namespace detail {

template <typename T>
T loss_through_network(const model_weights<T>& w, const tensor<T>& x, const tensor<T>& y,
                       const loss_config& cfg) {
  auto logits = forward(w, x);
  return combined_loss(y, logits, cfg).combined;
}

}  // namespace detail

// Finite-difference check of the analytic gradient of the combined loss
// through the whole network, in double precision. Probe coordinates rotate
// across every parameter tensor and the input over the seed sweep, so the
// suite as a whole covers the entire surface. Relative error uses the
// max(1, |analytic|) denominator.
inline gradcheck_report network_gradcheck(const gradcheck_options& opt) {
  if (!(opt.eps > 0)) throw contract_error("gradcheck: eps must be positive");
  if (opt.input_size % 32 != 0) throw contract_error("gradcheck: input size must be divisible by 32");
  gradcheck_report report;
  for (int seed = 0; seed < opt.seeds; ++seed) {
    std::mt19937_64 rng(mix_seed(0x6c0de, static_cast<std::uint64_t>(seed)));
    auto w = build_network<double>(opt.net, mix_seed(7, static_cast<std::uint64_t>(seed)));
    const int S = opt.input_size;
    auto x = tensor<double>::zeros({1, opt.net.in_channels, S, S});
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    for (std::int64_t i = 0; i < x.size(); ++i) x.data()[i] = ud(rng);
    auto y = tensor<double>::zeros({1, 2, S, S});
    for (std::int64_t i = 0; i < y.size(); ++i) y.data()[i] = rng() % 4 == 0 ? 1.0 : 0.0;

    loss_config loss = opt.loss;
    loss.variant = seed % 2 ? jaccard_variant::literal : jaccard_variant::aggregate;

    tape<double> t;
    std::vector<int> nodes;
    auto xv = t.variable(x);  // first leaf on the tape, node 0
    auto logits = forward(w, xv, &t, {}, &nodes);
    auto breakdown = combined_loss(y, logits, loss);
    t.backward(breakdown.node);

    // tensors in rotation: every parameter plus the input (index = params.size())
    const std::size_t n_tensors = w.params.size() + 1;
    for (int probe = 0; probe < opt.coords_per_seed; ++probe) {
      std::size_t tensor_idx =
          (static_cast<std::size_t>(seed) + static_cast<std::size_t>(probe)) % n_tensors;
      bool is_input = tensor_idx == w.params.size();
      tensor<double>& target = is_input ? x : w.params[tensor_idx].value;
      std::int64_t coord = static_cast<std::int64_t>(
          mix_seed(static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(probe), 0xc0) %
          static_cast<std::uint64_t>(target.size()));

      double analytic = 0.0;
      if (is_input) {
        // x was re-wrapped as a tape variable above; its node is 0 (first leaf)
        analytic = t.has_grad(0) ? t.grad(0)[static_cast<std::size_t>(coord)] : 0.0;
      } else {
        int node = nodes[tensor_idx];
        analytic = node >= 0 && t.has_grad(node) ? t.grad(node)[static_cast<std::size_t>(coord)]
                                                 : 0.0;
      }

      double saved = target.data()[coord];
      auto probe_loss = [&](double v) {
        target.data()[coord] = v;
        double out = detail::loss_through_network(w, x, y, loss);
        target.data()[coord] = saved;
        return out;
      };
      double numeric = (probe_loss(saved + opt.eps) - probe_loss(saved - opt.eps)) /
                       (2.0 * opt.eps);
      double denom = std::max(1.0, std::abs(analytic));
      double err = std::abs(analytic - numeric) / denom;
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.probes;
    }
  }
  return report;
}

}  // namespace terrace
