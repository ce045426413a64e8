#pragma once

#include <memory>
#include <vector>

#include "bipgps/bipgps.hpp"

namespace fixture {

using namespace bipgps;

// The two-type population: S units with one private diversion neighbor
// (weight 1), D units with two private neighbors (weights 1/2, 1/2).
// S units come first. M = n_s + 2 n_d.
inline BipartiteGraph simple_graph(std::size_t n_s, std::size_t n_d) {
  std::vector<std::vector<Edge>> rows;
  std::size_t j = 0;
  for (std::size_t i = 0; i < n_s; ++i) rows.push_back({{j++, 1.0}});
  for (std::size_t i = 0; i < n_d; ++i) {
    rows.push_back({{j, 0.5}, {j + 1, 0.5}});
    j += 2;
  }
  return BipartiteGraph(n_s + n_d, j, rows, true);
}

inline std::shared_ptr<const BipartiteGraph> share(BipartiteGraph g) {
  return std::make_shared<const BipartiteGraph>(std::move(g));
}

inline std::shared_ptr<const GpsTable> exact_table(const BipartiteGraph& g, double p = 0.5) {
  return std::make_shared<const GpsTable>(exact_gps_table(g, AssignmentDesign::bernoulli(p)));
}

// Outcomes of the simple example: S units are unaffected (Y = 0), D units
// respond one for one (Y = E).
inline std::vector<double> simple_outcomes(const std::vector<double>& e, std::size_t n_s) {
  std::vector<double> y(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) y[i] = i < n_s ? 0.0 : e[i];
  return y;
}

// The eight-unit realization used throughout: two of four S units treated;
// among D units one has both neighbors treated, two have one, one has none.
inline Dataset simple_dataset() {
  auto g = share(simple_graph(4, 4));
  Assignment z{{1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 0}};
  auto e = linear_exposure(*g, z).e;
  auto y = simple_outcomes(e, 4);
  return make_dataset(g, exact_table(*g), y, e);
}

inline Dataset dataset_from(const BipartiteGraph& graph, const std::vector<double>& y, const std::vector<double>& e,
                            double p = 0.5) {
  auto g = share(graph);
  return make_dataset(g, exact_table(*g, p), y, e);
}

}  // namespace fixture
