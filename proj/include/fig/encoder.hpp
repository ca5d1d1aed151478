#pragma once

// Sum-aggregation message-passing encoder (GIN style).

#include <optional>
#include <string>
#include <vector>

#include "fig/graph.hpp"
#include "fig/nn.hpp"
#include "fig/tensor.hpp"

namespace fig {

struct GinLayer {
  Mlp mlp;      // d -> d -> d
  Tensor eps;   // learnable self weight, scalar
};

struct EncoderParams {
  Linear input;                // d_X -> d
  std::optional<Linear> edge;  // d_E -> d
  std::vector<GinLayer> layers;

  static EncoderParams init(std::size_t dim_x, std::size_t dim_e, std::size_t d, std::size_t num_layers, Rng& rng) {
    if (num_layers < 1) throw ConfigError("encoder needs at least one layer");
    EncoderParams p;
    p.input = Linear::init(dim_x, d, rng);
    if (dim_e > 0) p.edge = Linear::init(dim_e, d, rng);
    for (std::size_t l = 0; l < num_layers; ++l)
      p.layers.push_back({Mlp::init({d, d, d}, rng), Tensor::scalar(0.0, true)});
    return p;
  }

  std::size_t dim() const { return input.out(); }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    input.visit(prefix + ".input", f);
    if (edge) edge->visit(prefix + ".edge", f);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto p = prefix + ".layer" + std::to_string(l);
      layers[l].mlp.visit(p + ".mlp", f);
      f(p + ".eps", layers[l].eps);
    }
  }
};

/// H[v] after L rounds of h_v <- MLP((1 + eps) h_v + sum_{u in N(v)} (h_u + proj(e_uv))),
/// with ReLU between rounds.
inline Tensor encode(const Graph& g, const EncoderParams& p) {
  if (g.x.cols != p.input.in())
    throw ConfigError("encoder expects node features of width " + std::to_string(p.input.in()) + ", graph has " +
                      std::to_string(g.x.cols));
  const bool use_edges = p.edge.has_value() && g.e.has_value() && g.e->rows > 0;
  if (use_edges && g.e->cols != p.edge->in())
    throw ConfigError("encoder expects edge features of width " + std::to_string(p.edge->in()) + ", graph has " +
                      std::to_string(g.e->cols));

  // One message per directed edge, grouped by receiving node.
  std::vector<std::size_t> src, eid;
  std::vector<std::vector<std::size_t>> segments(g.n);
  const auto adj = g.adjacency();
  for (std::size_t v = 0; v < g.n; ++v)
    for (const auto& nb : adj[v]) {
      segments[v].push_back(src.size());
      src.push_back(nb.node);
      eid.push_back(nb.edge);
    }

  Tensor h = p.input(g.x.tensor());
  std::optional<Tensor> edge_msg;
  if (use_edges) edge_msg = gather_rows((*p.edge)(g.e->tensor()), eid);
  const Tensor one = Tensor::scalar(1.0);

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    Tensor msg = gather_rows(h, src);
    if (edge_msg) msg = add(msg, *edge_msg);
    Tensor agg = segment_sum(msg, segments);
    Tensor z = add(mul(h, add(layer.eps, one)), agg);
    h = layer.mlp(z);
    if (l + 1 < p.layers.size()) h = relu(h);
  }
  return h;
}

}  // namespace fig
