#pragma once

// Graph records, JSONL dataset I/O, the planted-motif generator and batching.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fig/errors.hpp"
#include "fig/nn.hpp"
#include "fig/tensor.hpp"

namespace fig {

/// Row-major real matrix without autodiff history.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  Tensor tensor() const { return Tensor::matrix(rows, cols, data); }
  bool operator==(const FeatureMatrix&) const = default;
};

using Edge = std::array<std::size_t, 2>;

struct Neighbor {
  std::size_t node;
  std::size_t edge;
};

struct Graph {
  std::size_t n = 0;
  std::vector<Edge> edges;
  FeatureMatrix x;
  std::optional<FeatureMatrix> e;
  double y = 0.0;
  std::optional<std::vector<std::size_t>> rationale;

  /// Neighbor lists sorted by neighbor index.
  std::vector<std::vector<Neighbor>> adjacency() const {
    std::vector<std::vector<Neighbor>> adj(n);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      adj[edges[i][0]].push_back({edges[i][1], i});
      adj[edges[i][1]].push_back({edges[i][0], i});
    }
    for (auto& a : adj) std::sort(a.begin(), a.end(), [](auto& l, auto& r) { return l.node < r.node; });
    return adj;
  }

  std::size_t label() const {
    if (y < 0 || y != std::floor(y)) throw ArgumentError("graph label " + std::to_string(y) + " is not a class index");
    return static_cast<std::size_t>(y);
  }

  bool operator==(const Graph&) const = default;
};

/// Throws ValidationError naming the graph index and the violated rule.
inline void validate(const Graph& g, std::size_t index) {
  auto fail = [&](const std::string& rule) {
    throw ValidationError(rule + ", graph " + std::to_string(index));
  };
  if (g.n == 0) fail("graph has no nodes");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [u, v] : g.edges) {
    if (u >= g.n || v >= g.n) fail("endpoint out of range");
    if (u == v) fail("self-loop");
    if (!seen.insert({std::min(u, v), std::max(u, v)}).second) fail("duplicate edge");
  }
  if (g.x.rows != g.n) fail("node feature row count differs from n");
  if (g.x.data.size() != g.x.rows * g.x.cols) fail("ragged node features");
  if (g.e) {
    if (g.e->rows != g.edges.size()) fail("edge feature row count differs from edge count");
    if (g.e->data.size() != g.e->rows * g.e->cols) fail("ragged edge features");
  }
  if (g.rationale)
    for (auto v : *g.rationale)
      if (v >= g.n) fail("rationale node out of range");
}

struct Dataset {
  std::vector<Graph> graphs;
  std::size_t dim_x = 0;
  std::size_t dim_e = 0;  // 0 when no graph carries edge features
  /// Node and edge features differ in width, so both are mapped into a common space.
  bool shared_projection = false;
  std::vector<std::string> warnings;

  std::size_t size() const { return graphs.size(); }
  bool empty() const { return graphs.empty(); }

  double mean_nodes() const {
    if (graphs.empty()) return 0.0;
    double s = 0.0;
    for (const auto& g : graphs) s += static_cast<double>(g.n);
    return s / static_cast<double>(graphs.size());
  }

  std::size_t num_classes() const {
    std::size_t c = 0;
    for (const auto& g : graphs) c = std::max(c, g.label() + 1);
    return std::max<std::size_t>(c, 2);
  }

  Dataset subset(std::size_t begin, std::size_t end) const {
    Dataset d = *this;
    d.graphs.assign(graphs.begin() + static_cast<std::ptrdiff_t>(begin),
                    graphs.begin() + static_cast<std::ptrdiff_t>(end));
    d.warnings.clear();
    return d;
  }
};

/// Validates every graph and the cross-graph feature widths; fills the dims.
inline void finalize(Dataset& d) {
  bool any_e = false;
  for (std::size_t i = 0; i < d.graphs.size(); ++i) {
    const auto& g = d.graphs[i];
    validate(g, i);
    if (i == 0) d.dim_x = g.x.cols;
    if (g.x.cols != d.dim_x)
      throw ValidationError("node feature width " + std::to_string(g.x.cols) + " differs from " +
                            std::to_string(d.dim_x) + ", graph " + std::to_string(i));
    if (g.e && g.e->rows > 0) {
      if (any_e && g.e->cols != d.dim_e)
        throw ValidationError("edge feature width differs across graphs, graph " + std::to_string(i));
      any_e = true;
      d.dim_e = g.e->cols;
    }
  }
  for (std::size_t i = 0; i < d.graphs.size() && any_e; ++i) {
    const auto& g = d.graphs[i];
    if (!g.edges.empty() && !g.e)
      throw ValidationError("edge features missing while other graphs have them, graph " + std::to_string(i));
  }
  d.shared_projection = any_e && d.dim_e != d.dim_x;
}

// ---------------------------------------------------------------------------
// JSONL

namespace detail {

inline FeatureMatrix parse_rows(const nlohmann::json& j, const char* key) {
  FeatureMatrix m;
  if (!j.is_array()) throw std::invalid_argument(std::string("'") + key + "' must be an array of arrays");
  m.rows = j.size();
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& row = j[r];
    if (!row.is_array()) throw std::invalid_argument(std::string("'") + key + "' row is not an array");
    if (r == 0) m.cols = row.size();
    if (row.size() != m.cols) throw std::invalid_argument(std::string("'") + key + "' rows have unequal length");
    for (const auto& v : row) m.data.push_back(v.get<double>());
  }
  return m;
}

inline nlohmann::json rows_json(const FeatureMatrix& m) {
  auto out = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows; ++r)
    out.push_back(std::vector<double>(m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols),
                                      m.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols)));
  return out;
}

}  // namespace detail

inline Graph graph_from_json(const nlohmann::json& j) {
  Graph g;
  g.n = j.at("n").get<std::size_t>();
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2) throw std::invalid_argument("edge must be a [u,v] pair");
    g.edges.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
  }
  g.x = detail::parse_rows(j.at("x"), "x");
  if (g.x.rows == 0) g.x.cols = 0;
  if (j.contains("e") && !j["e"].is_null()) g.e = detail::parse_rows(j["e"], "e");
  const auto& y = j.at("y");
  if (!y.is_number()) throw std::invalid_argument("'y' must be a number");
  g.y = y.get<double>();
  if (j.contains("rationale") && !j["rationale"].is_null())
    g.rationale = j["rationale"].get<std::vector<std::size_t>>();
  return g;
}

inline nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["n"] = g.n;
  auto edges = nlohmann::json::array();
  for (const auto& [u, v] : g.edges) edges.push_back({u, v});
  j["edges"] = edges;
  j["x"] = detail::rows_json(g.x);
  if (g.e) j["e"] = detail::rows_json(*g.e);
  if (g.y == std::floor(g.y) && std::abs(g.y) < 9.007199254740992e15)
    j["y"] = static_cast<long long>(g.y);
  else
    j["y"] = g.y;
  if (g.rationale) j["rationale"] = *g.rationale;
  return j;
}

inline Dataset parse_jsonl(std::istream& in) {
  Dataset d;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      d.graphs.push_back(graph_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (d.graphs.empty()) d.warnings.push_back("dataset is empty");
  finalize(d);
  return d;
}

inline Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_jsonl(in);
}

inline void write_jsonl(std::ostream& out, const Dataset& d) {
  for (const auto& g : d.graphs) out << graph_to_json(g).dump() << '\n';
}

inline void save_jsonl(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_jsonl(out, d);
}

// ---------------------------------------------------------------------------
// Planted-motif generator

enum class Motif { house = 0, cycle5 = 1 };
enum class EnvModel { tree, random };

struct MotifConfig {
  std::size_t num_graphs = 100;
  EnvModel env_model = EnvModel::tree;
  std::size_t env_min = 3;
  std::size_t env_max = 15;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// One-hot degree buckets; degrees at or above the last bucket share it.
inline constexpr std::size_t kDegreeBuckets = 8;

inline std::vector<Edge> motif_edges(Motif m) {
  if (m == Motif::house) return {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 4}, {1, 4}};
  return {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}};
}

inline Graph generate_motif_graph(Motif motif, const MotifConfig& cfg, Rng& rng) {
  constexpr std::size_t kMotifSize = 5;
  std::uniform_int_distribution<std::size_t> size_dist(cfg.env_min, cfg.env_max);
  const std::size_t env = size_dist(rng);
  const std::size_t n = kMotifSize + env;

  // Motif occupies local ids [0,5), environment [5,n).
  std::vector<Edge> local = motif_edges(motif);
  for (std::size_t v = 1; v < env; ++v) {
    std::uniform_int_distribution<std::size_t> parent(0, v - 1);
    local.push_back({kMotifSize + parent(rng), kMotifSize + v});
  }
  if (cfg.env_model == EnvModel::random) {
    std::set<std::pair<std::size_t, std::size_t>> have;
    for (auto& [u, v] : local) have.insert({std::min(u, v), std::max(u, v)});
    std::bernoulli_distribution extra(1.0 / static_cast<double>(env));
    for (std::size_t u = 0; u < env; ++u)
      for (std::size_t v = u + 1; v < env; ++v) {
        const bool add = extra(rng);
        if (add && !have.contains({kMotifSize + u, kMotifSize + v})) local.push_back({kMotifSize + u, kMotifSize + v});
      }
  }
  std::uniform_int_distribution<std::size_t> motif_node(0, kMotifSize - 1), env_node(0, env - 1);
  const std::size_t a = motif_node(rng);
  const std::size_t b = kMotifSize + env_node(rng);
  local.push_back({a, b});

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  Graph g;
  g.n = n;
  for (auto [u, v] : local) {
    u = perm[u];
    v = perm[v];
    g.edges.push_back({std::min(u, v), std::max(u, v)});
  }
  std::sort(g.edges.begin(), g.edges.end());

  std::vector<std::size_t> degree(n, 0);
  for (const auto& [u, v] : g.edges) ++degree[u], ++degree[v];
  std::normal_distribution<double> noise(0.0, cfg.noise);
  g.x.rows = n;
  g.x.cols = kDegreeBuckets;
  g.x.data.assign(n * kDegreeBuckets, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    g.x.data[v * kDegreeBuckets + std::min(degree[v], kDegreeBuckets - 1)] = 1.0;
    for (std::size_t c = 0; c < kDegreeBuckets; ++c)
      if (cfg.noise > 0) g.x.data[v * kDegreeBuckets + c] += noise(rng);
  }
  g.y = static_cast<double>(motif);
  std::vector<std::size_t> truth;
  for (std::size_t v = 0; v < kMotifSize; ++v) truth.push_back(perm[v]);
  std::sort(truth.begin(), truth.end());
  g.rationale = truth;
  return g;
}

/// Each graph draws from its own stream mix_seed(seed, i), so index ranges can be
/// generated independently.
inline Dataset gen_motif_dataset(const MotifConfig& cfg) {
  if (cfg.num_graphs < 1) throw ConfigError("num_graphs must be at least 1");
  if (cfg.env_min < 3 || cfg.env_max < cfg.env_min)
    throw ConfigError("invalid environment size range [" + std::to_string(cfg.env_min) + "," +
                      std::to_string(cfg.env_max) + "]");
  if (!(cfg.noise >= 0.0)) throw ConfigError("noise must be non-negative");
  Dataset d;
  for (std::size_t i = 0; i < cfg.num_graphs; ++i) {
    Rng rng(mix_seed(cfg.seed, i));
    std::bernoulli_distribution coin(0.5);
    const Motif m = coin(rng) ? Motif::cycle5 : Motif::house;
    d.graphs.push_back(generate_motif_graph(m, cfg, rng));
  }
  finalize(d);
  return d;
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  std::vector<std::size_t> graphs;   // dataset indices
  std::vector<std::size_t> partner;  // partner[i] indexes into `graphs`
  std::size_t size() const { return graphs.size(); }
};

/// Uniform random derangement by rejection; identity for a single element.
inline std::vector<std::size_t> sample_derangement(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  if (n < 2) return p;
  for (;;) {
    std::shuffle(p.begin(), p.end(), rng);
    bool fixed = false;
    for (std::size_t i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
    if (!fixed) return p;
  }
}

inline std::vector<Batch> make_batches(std::size_t num_graphs, std::size_t batch_size, std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw ArgumentError("batch_size must be at least 1");
  Rng rng(shuffle_seed);
  std::vector<std::size_t> order(num_graphs);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < num_graphs; i += batch_size) {
    Batch b;
    b.graphs.assign(order.begin() + static_cast<std::ptrdiff_t>(i),
                    order.begin() + static_cast<std::ptrdiff_t>(std::min(num_graphs, i + batch_size)));
    b.partner = sample_derangement(b.size(), rng);
    out.push_back(std::move(b));
  }
  return out;
}

inline std::vector<Batch> make_batches(const Dataset& d, std::size_t batch_size, std::uint64_t shuffle_seed) {
  return make_batches(d.size(), batch_size, shuffle_seed);
}

}  // namespace fig
