#pragma once

// Rationale/environment decomposition.
//
// Node level: a sigmoid-scored partitioner whose top-K nodes are selected with a
// straight-through soft argtop-K. Virtual-node level: a learned softmax assignment
// of nodes onto r virtual nodes, the first K of which are the rationale.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fig/nn.hpp"
#include "fig/tensor.hpp"

namespace fig {

/// Subtracted from already-selected scores so later softmax passes ignore them.
inline constexpr double kTopKMask = 1e6;

struct AugmenterNParams {
  Mlp mlp;  // d -> d -> d -> 1

  static AugmenterNParams init(std::size_t d, Rng& rng) { return {Mlp::init({d, d, d, 1}, rng)}; }
  void visit(const std::string& prefix, const ParamVisitor& f) { mlp.visit(prefix + ".mlp", f); }
};

struct AugmenterVNParams {
  Tensor weight;  // r x n_max assignment logits
  std::size_t r = 0;
  std::size_t n_max = 0;

  static AugmenterVNParams init(std::size_t r, std::size_t n_max, Rng& rng) {
    if (r < 2) throw ConfigError("virtual node count r must be at least 2");
    if (n_max < 1) throw ConfigError("n_max must be positive");
    return {init_uniform({r, n_max}, n_max, rng), r, n_max};
  }
  void visit(const std::string& prefix, const ParamVisitor& f) { f(prefix + ".weight", weight); }
};

struct Partition {
  Tensor m;                          // n scores in [0,1]
  std::vector<std::size_t> idx_ra;   // rank order
  std::vector<std::size_t> idx_env;  // ascending
  Tensor h_ra;                       // K x d
  Tensor h_env;                      // (n-K) x d
};

/// K = round(k_hat * count) clamped to [1, count-1] (to 1 when count == 1).
inline std::size_t rationale_size(double k_hat, std::size_t count) {
  if (count <= 1) return 1;
  const auto k = static_cast<long long>(std::llround(k_hat * static_cast<double>(count)));
  return static_cast<std::size_t>(std::clamp<long long>(k, 1, static_cast<long long>(count) - 1));
}

/// m = sigmoid(MLP(H)), one score per node.
inline Tensor partition_scores(const Tensor& h, const AugmenterNParams& p) {
  if (p.mlp.layers.empty() || h.cols() != p.mlp.layers.front().in())
    throw DimensionError("partition_scores: embedding width " + std::to_string(h.cols()) + " does not match augmenter");
  return reshape(sigmoid(p.mlp(h)), {h.rows()});
}

struct TopKSelection {
  Tensor h_ra;
  std::vector<std::size_t> idx;
};

/// Forward rows are H at the K largest entries of m in rank order (ties -> lowest
/// index); gradients reach m through the repeated softmax.
inline TopKSelection soft_arg_top_k(std::size_t k, const Tensor& h, const Tensor& m) {
  const std::size_t n = m.size();
  if (k < 1 || k > n)
    throw ArgumentError("soft_arg_top_k: K=" + std::to_string(k) + " outside [1," + std::to_string(n) + "]");
  if (h.rows() != n)
    throw DimensionError("soft_arg_top_k: H " + shape_str(h.shape()) + " vs m " + shape_str(m.shape()));
  auto* anchors = active_branch_anchors();
  TopKSelection out;
  std::vector<Tensor> rows;
  Tensor work = reshape(m, {n});
  for (std::size_t i = 0; i < k; ++i) {
    Tensor soft = softmax_rows(work);
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (work[j] > work[best]) best = j;
    Tensor frozen = detach(soft);
    if (anchors) {
      best = static_cast<std::size_t>(anchors->branch({static_cast<double>(best)})[0]);
      frozen = Tensor::vector(anchors->branch({soft.data().begin(), soft.data().end()}));
    }
    std::vector<double> onehot(n, 0.0);
    onehot[best] = 1.0;
    Tensor hard = Tensor::vector(onehot);
    rows.push_back(add(sub(hard, frozen), soft));
    work = sub(work, scale(hard, kTopKMask));
    out.idx.push_back(best);
  }
  Tensor select = concat_rows(std::span<const Tensor>(rows));
  out.h_ra = matmul(select, h);
  return out;
}

inline Partition split_node_level(const Tensor& h, const Tensor& m, std::size_t k) {
  auto top = soft_arg_top_k(k, h, m);
  Partition p;
  p.m = m;
  p.idx_ra = std::move(top.idx);
  p.h_ra = std::move(top.h_ra);
  std::vector<bool> taken(m.size(), false);
  for (auto i : p.idx_ra) taken[i] = true;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (!taken[i]) p.idx_env.push_back(i);
  p.h_env = gather_rows(h, p.idx_env);
  return p;
}

/// Row-stochastic r x n assignment, softmax over the first n columns only.
inline Tensor virtual_node_assignment(std::size_t n, const AugmenterVNParams& p) {
  if (n > p.n_max)
    throw std::logic_error("virtual_node_embed: " + std::to_string(n) + " nodes exceed n_max=" +
                           std::to_string(p.n_max) + "; truncate first");
  return softmax_rows(slice_cols(p.weight, 0, n));
}

inline Tensor virtual_node_embed(const Tensor& h, const AugmenterVNParams& p) {
  return matmul(virtual_node_assignment(h.rows(), p), h);
}

/// Keeps the first n_max rows.
inline Tensor truncate_nodes(const Tensor& h, std::size_t n_max) {
  return h.rows() <= n_max ? h : slice_rows(h, 0, n_max);
}

inline std::pair<Tensor, Tensor> split_virtual(const Tensor& h_vn, std::size_t k) {
  const std::size_t r = h_vn.rows();
  if (k < 1 || k >= r)
    throw ArgumentError("split_virtual: K=" + std::to_string(k) + " outside [1," + std::to_string(r) + ")");
  return {slice_rows(h_vn, 0, k), slice_rows(h_vn, k, r)};
}

}  // namespace fig
