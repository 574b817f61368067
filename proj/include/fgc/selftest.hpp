#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgc/autodiff.hpp"
#include "fgc/cluster.hpp"
#include "fgc/factor_graph.hpp"
#include "fgc/rng.hpp"
#include "fgc/spa.hpp"
#include "fgc/train.hpp"

namespace fgc {

/// P(x_v = +1) per variable by summing the global function over all 2^n
/// assignments. n <= 20.
std::vector<double> exhaustive_marginals(const FactorGraph& graph);

/// Random cycle-free factor graph (a forest) with at most max_variables
/// variables and factor degree at most max_degree; log tables ~ N(0, scale^2).
FactorGraph random_tree_graph(RandomStream& rng, int max_variables, int max_degree, double scale = 1.0);

/// One random full-pipeline gradient instance: box, channel, observation,
/// clustering model and the flat parameter vector (unmasked logits, then NBP).
struct GradientInstance {
  ChannelSpec channel{{1.0}};
  SymbolBlock symbols;
  FactorGraph bfg;
  ClusterPlan plan;
  SpaTopology topology;
  ClusterWeights weights;
  int iterations = 1;
  bool nbp = false;
  LossKind loss = LossKind::SoftBer;
  std::vector<double> params;
};

GradientInstance random_gradient_instance(RandomStream& rng);

/// Loss of the instance as a function of its flat parameters, from logits
/// through softmax, container tables and the SPA.
ad::Computation full_pipeline(const GradientInstance& instance);

/// The same loss evaluated in long double without a tape.
long double extended_pipeline_loss(const GradientInstance& instance, std::span<const long double> params);

/// Tape gradient against central differences of extended_pipeline_loss;
/// relative error as in ad::finite_difference_check.
ad::GradientCheck extended_difference_check(const GradientInstance& instance, double step = 1e-5);

struct SuiteResult {
  std::string name;
  bool passed = false;
  double metric = 0.0;     // worst observed error
  double tolerance = 0.0;
  std::string detail;
};

SuiteResult tree_exactness_suite(int graphs, std::uint64_t seed);
SuiteResult cluster_preservation_suite(int draws, std::uint64_t seed);
SuiteResult one_hot_suite(int draws, std::uint64_t seed);
SuiteResult gradient_suite(int instances, std::uint64_t seed, double step = 1e-5);

}  // namespace fgc
