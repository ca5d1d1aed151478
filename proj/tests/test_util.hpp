#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "fig/fig.hpp"

namespace fig::testing {

inline Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(r * c);
  for (auto& x : v) x = u(rng);
  return Tensor({r, c}, std::move(v), requires_grad);
}

inline Tensor random_leaf(std::size_t r, std::size_t c, Rng& rng) { return random_matrix(r, c, rng, -1.0, 1.0, true); }

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Random simple undirected graph with `dim` noisy features per node.
inline Graph random_graph(std::size_t n, std::size_t dim, Rng& rng, double edge_p = 0.4) {
  Graph g;
  g.n = n;
  std::bernoulli_distribution coin(edge_p);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (coin(rng)) g.edges.push_back({u, v});
  g.x.rows = n;
  g.x.cols = dim;
  g.x.data = random_values(n * dim, rng);
  g.y = static_cast<double>(std::uniform_int_distribution<int>(0, 1)(rng));
  return g;
}

/// Relabels nodes: node v becomes perm[v]. Edges are re-sorted.
inline Graph permute_graph(const Graph& g, const std::vector<std::size_t>& perm) {
  Graph out = g;
  out.edges.clear();
  for (auto [u, v] : g.edges) out.edges.push_back({std::min(perm[u], perm[v]), std::max(perm[u], perm[v])});
  std::sort(out.edges.begin(), out.edges.end());
  for (std::size_t v = 0; v < g.n; ++v)
    for (std::size_t c = 0; c < g.x.cols; ++c) out.x.data[perm[v] * g.x.cols + c] = g.x.data[v * g.x.cols + c];
  if (g.rationale) {
    out.rationale->clear();
    for (auto v : *g.rationale) out.rationale->push_back(perm[v]);
    std::sort(out.rationale->begin(), out.rationale->end());
  }
  return out;
}

inline Dataset dataset_of(std::vector<Graph> graphs) {
  Dataset d;
  d.graphs = std::move(graphs);
  finalize(d);
  return d;
}

inline TrainConfig small_config(Variant v = Variant::fig_n, std::uint64_t seed = 1) {
  TrainConfig c;
  c.variant = v;
  c.d = 4;
  c.r = 4;
  c.seed = seed;
  c.encoder_layers = 2;
  return c;
}

}  // namespace fig::testing
