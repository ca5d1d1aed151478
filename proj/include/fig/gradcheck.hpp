#pragma once

// Central-difference check of every parameter gradient of the full objective on
// one (graph, partner) pair. ReLU masks and top-K choices are anchored at the
// base point, so the straight-through path and the piecewise-linear units are
// compared against the smooth piece that backward() differentiates.

#include <cstdint>
#include <string>

#include "fig/graph.hpp"
#include "fig/objective.hpp"

namespace fig {

struct ModelGradCheck {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coordinates = 0;
};

inline ModelGradCheck grad_check_model(FigModel& model, const Graph& g, const Graph& partner, double h = 1e-3) {
  BranchAnchors anchors;
  {
    BranchAnchorScope scope(anchors);
    total_loss(g, partner, model);
  }
  anchors.start_replay();
  auto f = [&](const Tensor&) {
    anchors.rewind();
    BranchAnchorScope scope(anchors);
    return total_loss(g, partner, model).total;
  };
  ModelGradCheck out;
  model.visit([&](const std::string& name, Tensor& p) {
    const double err = grad_check(f, p, h);
    out.coordinates += p.size();
    if (err >= out.max_rel_error) {
      out.max_rel_error = err;
      out.worst_param = name;
    }
  });
  return out;
}

struct GradCheckSetup {
  Variant variant = Variant::fig_n;
  std::uint64_t seed = 1;
  std::size_t d = 4;
  std::size_t r = 4;
  double h = 1e-3;
};

/// Small motif graphs (8 nodes each) and a freshly initialized model.
inline ModelGradCheck grad_check_small(const GradCheckSetup& s) {
  MotifConfig mc;
  mc.num_graphs = 2;
  mc.env_min = mc.env_max = 3;
  mc.seed = s.seed;
  const Dataset data = gen_motif_dataset(mc);
  TrainConfig cfg;
  cfg.variant = s.variant;
  cfg.d = s.d;
  cfg.r = s.r;
  cfg.seed = s.seed;
  FigModel model = FigModel::init(cfg, dims_for(data));
  return grad_check_model(model, data.graphs[0], data.graphs[1], s.h);
}

}  // namespace fig
