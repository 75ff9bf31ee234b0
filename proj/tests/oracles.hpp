// Independent reference implementations used as test oracles. Everything in
// this header is deliberately written from the definitions (plain loops,
// queues, exhaustive search) and must stay independent of the library code
// paths it checks.
#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <queue>
#include <random>
#include <vector>

#include "terrace/tensor.hpp"

namespace oracle {

// Seven-loop 3x3 convolution (stride 1, zero pad 1) from the definition.
template <typename T>
terrace::tensor<T> conv3x3_loops(const terrace::tensor<T>& x, const terrace::tensor<T>& w) {
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w(), F = w.dim(0);
  auto out = terrace::tensor<T>::zeros({N, F, H, W});
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          T acc = T(0);
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                int sy = y + ky - 1, sx = xx + kx - 1;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += w.data()[((static_cast<std::int64_t>(f) * C + c) * 3 + ky) * 3 + kx] *
                       x.data()[((static_cast<std::int64_t>(n) * C + c) * H + sy) * W + sx];
              }
          out.data()[((static_cast<std::int64_t>(n) * F + f) * H + y) * W + xx] = acc;
        }
  return out;
}

// Test-only differentiable op: loss = sum_i weights[i] * x[i]. Weighting the
// output elements keeps gradient errors from cancelling in finite-difference
// comparisons.
template <typename T>
terrace::tensor<T> weighted_sum(terrace::tape<T>* tp, const terrace::tensor<T>& x,
                                const std::vector<T>& weights) {
  T s = T(0);
  for (std::int64_t i = 0; i < x.size(); ++i)
    s += weights[static_cast<std::size_t>(i)] * x.at(i);
  auto out = terrace::tensor<T>::scalar(s);
  if (tp && x.node >= 0) {
    int xn = x.node;
    out.tp = tp;
    out.node = tp->record(1, [xn, weights](terrace::tape<T>& t, const std::vector<T>& gy) {
      auto& gx = t.grad_buffer(xn);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += weights[i] * gy[0];
    });
  }
  return out;
}

template <typename T>
std::vector<T> random_values(std::int64_t n, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
  std::vector<T> v(static_cast<std::size_t>(n));
  for (auto& e : v) e = static_cast<T>(d(rng));
  return v;
}

// Scalar-loop binary cross entropy on logits, mean over all elements, plus
// per-channel means. Channel axis is dim 1 of an NCHW layout.
inline double bce_loops(const std::vector<double>& y, const std::vector<double>& z, int N, int C,
                        std::int64_t hw, std::vector<double>* per_channel = nullptr) {
  std::vector<double> ch(static_cast<std::size_t>(C), 0.0);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (std::int64_t j = 0; j < hw; ++j) {
        std::size_t i = static_cast<std::size_t>((static_cast<std::int64_t>(n) * C + c) * hw + j);
        double zz = z[i];
        double h = std::max(zz, 0.0) - zz * y[i] + std::log1p(std::exp(-std::abs(zz)));
        ch[static_cast<std::size_t>(c)] += h;
      }
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    ch[static_cast<std::size_t>(c)] /= static_cast<double>(N) * static_cast<double>(hw);
    total += ch[static_cast<std::size_t>(c)];
  }
  if (per_channel) *per_channel = ch;
  return total / C;
}

// Scalar-loop soft Jaccard, both variants. Returns per-channel values.
inline std::vector<double> jaccard_loops(const std::vector<double>& y, const std::vector<double>& p,
                                         int N, int C, std::int64_t hw, bool aggregate,
                                         double eps) {
  std::vector<double> out;
  for (int c = 0; c < C; ++c) {
    double inter = 0.0, sum_y = 0.0, sum_p = 0.0, literal = 0.0;
    for (int n = 0; n < N; ++n)
      for (std::int64_t j = 0; j < hw; ++j) {
        std::size_t i = static_cast<std::size_t>((static_cast<std::int64_t>(n) * C + c) * hw + j);
        inter += y[i] * p[i];
        sum_y += y[i];
        sum_p += p[i];
        literal += y[i] * p[i] / (y[i] + p[i] - y[i] * p[i] + eps);
      }
    if (aggregate)
      out.push_back((inter + eps) / (sum_y + sum_p - inter + eps));
    else
      out.push_back(literal / (static_cast<double>(N) * static_cast<double>(hw)));
  }
  return out;
}

// BFS flood fill labeling; labels assigned 1..K in row-major first-encounter
// order.
inline std::vector<int> bfs_label(const std::vector<std::uint8_t>& mask, int W, int H,
                                  int connectivity) {
  std::vector<int> labels(mask.size(), 0);
  int next = 1;
  const int dx8[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  const int dy8[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
  const int dx4[4] = {0, 0, -1, 1};
  const int dy4[4] = {-1, 1, 0, 0};
  const int* dx = connectivity == 8 ? dx8 : dx4;
  const int* dy = connectivity == 8 ? dy8 : dy4;
  int nn = connectivity == 8 ? 8 : 4;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (!mask[i] || labels[i]) continue;
      int id = next++;
      std::deque<std::pair<int, int>> q{{x, y}};
      labels[i] = id;
      while (!q.empty()) {
        auto [cx, cy] = q.front();
        q.pop_front();
        for (int k = 0; k < nn; ++k) {
          int nx = cx + dx[k], ny = cy + dy[k];
          if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;
          std::size_t j = static_cast<std::size_t>(ny) * W + nx;
          if (mask[j] && !labels[j]) {
            labels[j] = id;
            q.emplace_back(nx, ny);
          }
        }
      }
    }
  return labels;
}

// Brute-force marker-driven priority flood: the frontier is an append-only
// list scanned linearly for the (max priority, min enqueue seq) element.
// Semantics must match the library watershed exactly: 4-neighbors visited in
// up, down, left, right order; marker pixels enqueue in row-major order.
inline std::vector<int> priority_flood_scan(const std::vector<int>& markers,
                                            const std::vector<std::uint8_t>& region,
                                            const std::vector<float>& priority, int W, int H) {
  struct entry {
    int x, y;
    float prio;
    std::int64_t seq;
    bool done;
  };
  std::vector<int> labels(markers.size(), 0);
  std::vector<entry> frontier;
  std::int64_t seq = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (markers[i] > 0) {
        labels[i] = markers[i];
        frontier.push_back({x, y, priority[i], seq++, false});
      }
    }
  const int dx[4] = {0, 0, -1, 1};
  const int dy[4] = {-1, 1, 0, 0};
  for (;;) {
    int best = -1;
    for (std::size_t k = 0; k < frontier.size(); ++k) {
      if (frontier[k].done) continue;
      if (best < 0 || frontier[k].prio > frontier[static_cast<std::size_t>(best)].prio ||
          (frontier[k].prio == frontier[static_cast<std::size_t>(best)].prio &&
           frontier[k].seq < frontier[static_cast<std::size_t>(best)].seq))
        best = static_cast<int>(k);
    }
    if (best < 0) break;
    frontier[static_cast<std::size_t>(best)].done = true;
    entry e = frontier[static_cast<std::size_t>(best)];  // copy: push_back reallocates
    std::size_t ei = static_cast<std::size_t>(e.y) * W + e.x;
    for (int k = 0; k < 4; ++k) {
      int nx = e.x + dx[k], ny = e.y + dy[k];
      if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;
      std::size_t j = static_cast<std::size_t>(ny) * W + nx;
      if (!region[j] || labels[j] != 0) continue;
      labels[j] = labels[ei];
      frontier.push_back({nx, ny, priority[j], seq++, false});
    }
  }
  return labels;
}

// Touching-border oracle: a pixel belongs to the touch band iff at least two
// distinct instances lie within Chebyshev distance d of it.
inline std::vector<std::uint8_t> touch_band_window_scan(const std::vector<int>& labels, int W,
                                                        int H, int d) {
  std::vector<std::uint8_t> touch(labels.size(), 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int first = 0, second = 0;
      for (int dy = -d; dy <= d && !second; ++dy)
        for (int dx = -d; dx <= d && !second; ++dx) {
          int nx = x + dx, ny = y + dy;
          if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;
          int l = labels[static_cast<std::size_t>(ny) * W + nx];
          if (l == 0) continue;
          if (first == 0)
            first = l;
          else if (l != first)
            second = l;
        }
      touch[static_cast<std::size_t>(y) * W + x] = second != 0;
    }
  return touch;
}

// Even-odd rasterization of a polygon ring over pixel centers; the oracle
// for polygonize -> rasterize round trips.
inline void rasterize_ring(const std::vector<std::array<double, 2>>& ring, int W, int H, int id,
                           std::vector<int>& out) {
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double px = x + 0.5, py = y + 0.5;
      bool in = false;
      for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        double xi = ring[i][0], yi = ring[i][1];
        double xj = ring[j][0], yj = ring[j][1];
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) in = !in;
      }
      if (in) out[static_cast<std::size_t>(y) * W + x] = id;
    }
}

}  // namespace oracle
