#pragma once

#include <array>
#include <cmath>
#include <string>

#include "terrace/tensor.hpp"

namespace terrace {

enum class jaccard_variant {
  literal,    // per-pixel ratio form, summed and divided by pixel count
  aggregate,  // ratio of channel-wide sums
};

inline std::string to_string(jaccard_variant v) {
  return v == jaccard_variant::literal ? "literal" : "aggregate";
}

inline jaccard_variant jaccard_variant_from_string(const std::string& s) {
  if (s == "literal") return jaccard_variant::literal;
  if (s == "aggregate") return jaccard_variant::aggregate;
  throw contract_error("unknown jaccard variant '" + s + "'");
}

struct loss_config {
  double alpha = 0.7;
  std::array<double, 2> class_weights = {1.0, 1.0};
  jaccard_variant variant = jaccard_variant::aggregate;
  double epsilon = 1e-15;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw contract_error("loss: alpha must lie in [0,1]");
    if (!(epsilon > 0.0)) throw contract_error("loss: epsilon must be positive");
    if (class_weights[0] < 0.0 || class_weights[1] < 0.0)
      throw contract_error("loss: class weights must be non-negative");
    if (class_weights[0] + class_weights[1] <= 0.0)
      throw contract_error("loss: class weights must not both be zero");
  }
};

// Soft Jaccard over two channels.
//   per_channel[c]  unweighted J_c for each channel
//   weighted_sum    sum_c w_c * J_c   (the adapted index as written)
//   weighted_mean   weighted_sum / sum_c w_c, in [0,1]; this is the value
//                   the combined loss consumes and `node` tracks
template <typename T>
struct jaccard_result {
  std::array<T, 2> per_channel{};
  T weighted_sum{};
  T weighted_mean{};
  tensor<T> node;
};

template <typename T>
struct loss_breakdown {
  T combined{};
  T bce{};
  T jaccard{};  // weighted mean over channels
  std::array<T, 2> per_channel_jaccard{};
  std::array<T, 2> per_channel_bce{};
  tensor<T> node;  // scalar; backward() flows through both terms
};

namespace detail {

template <typename T>
void require_pair_shape(const tensor<T>& y, const tensor<T>& p, const char* what) {
  require_nchw(y.shape, what);
  if (y.shape != p.shape)
    throw shape_error(std::string(what) + ": target shape " + shape_str(y.shape) +
                      " does not match prediction shape " + shape_str(p.shape));
  if (y.c() != 2)
    throw shape_error(std::string(what) + ": expected 2 channels, got " + shape_str(y.shape));
}

template <typename T>
void require_binary(const tensor<T>& y, const char* what) {
  for (std::int64_t i = 0; i < y.size(); ++i)
    if (y.at(i) != T(0) && y.at(i) != T(1))
      throw contract_error(std::string(what) + ": targets must be binary");
}

}  // namespace detail

// Differentiable soft Jaccard of binary targets y against probabilities p,
// both {N,2,H,W}.
//
// literal:   J_c = (1/n) * sum_i  y_i p_i / (y_i + p_i - y_i p_i + eps),
//            n = N*H*W. The summand vanishes identically on y_i = 0 pixels,
//            so negatives receive zero gradient; kept for fidelity, with the
//            aggregate form as the training default.
// aggregate: J_c = (sum_i y_i p_i + eps) / (sum_i y_i + sum_i p_i
//            - sum_i y_i p_i + eps); an empty channel matched by an all-zero
//            prediction scores 1.
template <typename T>
jaccard_result<T> soft_jaccard(const tensor<T>& y, const tensor<T>& p, const loss_config& cfg) {
  cfg.validate();
  detail::require_pair_shape(y, p, "soft_jaccard");
  detail::require_binary(y, "soft_jaccard");
  for (std::int64_t i = 0; i < p.size(); ++i)
    if (!(p.at(i) >= T(0) && p.at(i) <= T(1)))
      throw contract_error("soft_jaccard: probabilities must lie in [0,1]");

  const int N = y.n(), H = y.h(), W = y.w();
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const std::int64_t n_pix = static_cast<std::int64_t>(N) * hw;
  const T eps = static_cast<T>(cfg.epsilon);

  jaccard_result<T> res;
  std::array<T, 2> inter{}, sum_y{}, sum_p{};
  for (int c = 0; c < 2; ++c) {
    T literal_acc = T(0);
    for (int n = 0; n < N; ++n) {
      const T* yv = y.data() + (static_cast<std::int64_t>(n) * 2 + c) * hw;
      const T* pv = p.data() + (static_cast<std::int64_t>(n) * 2 + c) * hw;
      for (std::int64_t j = 0; j < hw; ++j) {
        inter[static_cast<std::size_t>(c)] += yv[j] * pv[j];
        sum_y[static_cast<std::size_t>(c)] += yv[j];
        sum_p[static_cast<std::size_t>(c)] += pv[j];
        literal_acc += yv[j] * pv[j] / (yv[j] + pv[j] - yv[j] * pv[j] + eps);
      }
    }
    if (cfg.variant == jaccard_variant::literal)
      res.per_channel[static_cast<std::size_t>(c)] = literal_acc / static_cast<T>(n_pix);
    else
      res.per_channel[static_cast<std::size_t>(c)] =
          (inter[static_cast<std::size_t>(c)] + eps) /
          (sum_y[static_cast<std::size_t>(c)] + sum_p[static_cast<std::size_t>(c)] -
           inter[static_cast<std::size_t>(c)] + eps);
  }
  const T w0 = static_cast<T>(cfg.class_weights[0]);
  const T w1 = static_cast<T>(cfg.class_weights[1]);
  res.weighted_sum = w0 * res.per_channel[0] + w1 * res.per_channel[1];
  res.weighted_mean = res.weighted_sum / (w0 + w1);
  res.node = tensor<T>::scalar(res.weighted_mean);

  if (tape<T>* tp = detail::tape_of(p)) {
    auto yvals = y.values;
    auto pvals = p.values;
    int pn = p.node;
    auto variant = cfg.variant;
    res.node.tp = tp;
    res.node.node = tp->record(
        1, [yvals, pvals, pn, variant, inter, sum_y, sum_p, eps, w0, w1, N, hw,
            n_pix](tape<T>& t, const std::vector<T>& gy) {
          if (pn < 0) return;
          auto& gp = t.grad_buffer(pn);
          for (int c = 0; c < 2; ++c) {
            T wc = (c == 0 ? w0 : w1) / (w0 + w1);
            T g = gy[0] * wc;
            T u_eps = sum_y[static_cast<std::size_t>(c)] + sum_p[static_cast<std::size_t>(c)] -
                      inter[static_cast<std::size_t>(c)] + eps;
            T i_eps = inter[static_cast<std::size_t>(c)] + eps;
            for (int n = 0; n < N; ++n) {
              std::int64_t base = (static_cast<std::int64_t>(n) * 2 + c) * hw;
              const T* yv = yvals->data() + base;
              const T* pv = pvals->data() + base;
              T* gd = gp.data() + base;
              if (variant == jaccard_variant::literal) {
                for (std::int64_t j = 0; j < hw; ++j) {
                  if (yv[j] == T(0)) continue;
                  T denom = yv[j] + pv[j] - yv[j] * pv[j] + eps;
                  gd[j] += g * yv[j] * (yv[j] + eps) / (denom * denom) / static_cast<T>(n_pix);
                }
              } else {
                for (std::int64_t j = 0; j < hw; ++j)
                  gd[j] += g * (yv[j] * u_eps - i_eps * (T(1) - yv[j])) / (u_eps * u_eps);
              }
            }
          }
        });
  }
  return res;
}

// Binary cross entropy on logits, applied independently per channel and
// averaged over every element. Evaluated in the logit-stable form
// max(z,0) - z*y + log1p(exp(-|z|)).
template <typename T>
struct bce_result {
  std::array<T, 2> per_channel{};
  T mean{};
  tensor<T> node;
};

template <typename T>
bce_result<T> bce_with_logits(const tensor<T>& y, const tensor<T>& z) {
  detail::require_pair_shape(y, z, "bce");
  const int N = y.n(), H = y.h(), W = y.w();
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const std::int64_t n_pix = static_cast<std::int64_t>(N) * hw;

  bce_result<T> res;
  for (int c = 0; c < 2; ++c) {
    T acc = T(0);
    for (int n = 0; n < N; ++n) {
      std::int64_t base = (static_cast<std::int64_t>(n) * 2 + c) * hw;
      const T* yv = y.data() + base;
      const T* zv = z.data() + base;
      for (std::int64_t j = 0; j < hw; ++j) {
        T zz = zv[j];
        acc += (zz > T(0) ? zz : T(0)) - zz * yv[j] + std::log1p(std::exp(-std::abs(zz)));
      }
    }
    res.per_channel[static_cast<std::size_t>(c)] = acc / static_cast<T>(n_pix);
  }
  res.mean = (res.per_channel[0] + res.per_channel[1]) / T(2);
  res.node = tensor<T>::scalar(res.mean);

  if (tape<T>* tp = detail::tape_of(z)) {
    auto yvals = y.values;
    auto zvals = z.values;
    int zn = z.node;
    std::int64_t total = z.size();
    res.node.tp = tp;
    res.node.node =
        tp->record(1, [yvals, zvals, zn, total](tape<T>& t, const std::vector<T>& gy) {
          if (zn < 0) return;
          auto& gz = t.grad_buffer(zn);
          T scale = gy[0] / static_cast<T>(total);
          for (std::int64_t i = 0; i < total; ++i) {
            T zz = (*zvals)[static_cast<std::size_t>(i)];
            T sig = zz >= T(0) ? T(1) / (T(1) + std::exp(-zz))
                               : std::exp(zz) / (T(1) + std::exp(zz));
            gz[static_cast<std::size_t>(i)] +=
                scale * (sig - (*yvals)[static_cast<std::size_t>(i)]);
          }
        });
  }
  return res;
}

// L = alpha * H + (1 - alpha) * (1 - J), with J the weighted channel mean of
// the configured soft-Jaccard variant evaluated on sigmoid(logits).
template <typename T>
loss_breakdown<T> combined_loss(const tensor<T>& y, const tensor<T>& logits,
                                const loss_config& cfg) {
  cfg.validate();
  detail::require_pair_shape(y, logits, "combined_loss");
  auto p = sigmoid(logits);
  auto h = bce_with_logits(y, logits);
  auto j = soft_jaccard(y, p, cfg);

  const T alpha = static_cast<T>(cfg.alpha);
  loss_breakdown<T> out;
  out.bce = h.mean;
  out.jaccard = j.weighted_mean;
  out.per_channel_bce = h.per_channel;
  out.per_channel_jaccard = j.per_channel;
  out.node = lincomb<T>({h.node, j.node}, {alpha, -(T(1) - alpha)}, T(1) - alpha);
  out.combined = out.node.at(0);
  return out;
}

}  // namespace terrace
