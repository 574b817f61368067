#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fgc/autodiff.hpp"
#include "fgc/factor_graph.hpp"
#include "fgc/rng.hpp"

namespace fgc {

/// Width of the smallest cyclic window of Z_K containing every variable,
/// minus one. A single variable has span 0, the FFG factor on x_[k-L]..x_k
/// has span L.
int cyclic_span(std::span<const int> sorted_variables, int num_variables);

struct Container {
  std::vector<int> variables;  // ascending
  int span = 0;
  int window_start = 0;        // first variable of the minimal cyclic window

  bool operator==(const Container&) const = default;
};

struct ContainerSet {
  int num_variables = 0;
  int degree = 0;
  int span_limit = 0;
  std::vector<Container> containers;

  std::size_t size() const { return containers.size(); }
  const Container& operator[](std::size_t m) const { return containers[m]; }
  bool operator==(const ContainerSet&) const = default;
};

/// Every variable subset of exactly `degree` elements with cyclic span at
/// most span_limit, ordered by (window start, lexicographic variables).
/// span_limit < 0 selects memory + 1. Requires K >= span_limit + 1 and
/// 2 <= degree <= span_limit + 1.
ContainerSet enumerate_containers(int num_variables, int memory, int degree, int span_limit = -1);

/// options[j] = ascending ids of containers whose variables include all
/// neighbors of factor j. Throws if some factor fits nowhere.
using OptionsList = std::vector<std::vector<int>>;
OptionsList clustering_options(const FactorGraph& bfg, const ContainerSet& containers);

/// Softmax logits per basis factor. A masked entry is pruned: its logit is
/// -inf and its exponent is exactly zero.
struct ClusterWeights {
  std::vector<std::vector<double>> beta;
  std::vector<std::vector<std::uint8_t>> mask;

  static ClusterWeights zeros(const OptionsList& options);
  static ClusterWeights random_normal(const OptionsList& options, RandomStream& rng);

  std::size_t num_entries() const;
  bool masked(std::size_t fn, std::size_t j) const { return mask[fn][j] != 0; }
  bool operator==(const ClusterWeights&) const = default;
};

using Alphas = std::vector<std::vector<double>>;

/// alpha_i = softmax over the unmasked entries of beta_i.
Alphas compute_alphas(const ClusterWeights& weights);

struct Component {
  int fn = 0;
  int option = 0;  // position within options[fn]
  bool operator==(const Component&) const = default;
};

/// M_m: the (factor, option position) pairs pointing at container m.
using AssignmentMap = std::vector<std::vector<Component>>;
AssignmentMap assignment_map(const OptionsList& options, std::size_t num_containers);

/// Precomputed index maps for composing container tables from basis factors.
/// Depends only on graph structure, so one plan serves every observation.
class ClusterPlan {
 public:
  ClusterPlan(const FactorGraph& bfg, const ContainerSet& containers, const OptionsList& options);

  struct Term {
    int fn = 0;
    int option = 0;
    std::size_t slot = 0;                 // flat (fn, option) index
    std::vector<std::uint8_t> projection; // container config -> factor config
  };

  std::size_t num_containers() const { return terms_.size(); }
  std::size_t num_slots() const { return num_slots_; }
  std::size_t slot(int fn, int option) const { return slot_offset_[static_cast<std::size_t>(fn)] + static_cast<std::size_t>(option); }
  const std::vector<Term>& terms(std::size_t m) const { return terms_[m]; }
  const ContainerSet& containers() const { return containers_; }
  const OptionsList& options() const { return options_; }
  int num_bfg_factors() const { return static_cast<int>(slot_offset_.size()); }

  /// Container log tables sum_{(i,j) in M_m} alpha_ij log f_i, skipping zero exponents.
  std::vector<std::vector<double>> tables(const FactorGraph& bfg, const Alphas& alphas) const;

  /// Same composition recorded on a tape; alpha_vars is indexed by slot and
  /// entries with active[slot] == 0 are left out.
  std::vector<std::vector<ad::Var>> tables(ad::Tape& tape, const FactorGraph& bfg,
                                           std::span<const ad::Var> alpha_vars,
                                           std::span<const std::uint8_t> active) const;

  /// Per container, the variables of factors with a nonzero exponent.
  std::vector<std::vector<int>> support(const FactorGraph& bfg, const Alphas& alphas) const;

 private:
  ContainerSet containers_;
  OptionsList options_;
  std::vector<std::size_t> slot_offset_;
  std::size_t num_slots_ = 0;
  std::vector<std::vector<Term>> terms_;
};

/// Every container as a factor (no simplification).
FactorGraph build_clustered_graph(const FactorGraph& bfg, const ContainerSet& containers,
                                  const OptionsList& options, const Alphas& alphas);

/// assignment[i] = container id receiving the whole of basis factor i.
/// Builds the container products directly and simplifies.
FactorGraph apply_discrete_clustering(const FactorGraph& bfg, const ContainerSet& containers,
                                      const OptionsList& options, std::span<const int> assignment);

/// Masks every entry with alpha < threshold. Throws if a factor would lose
/// all of its options.
ClusterWeights prune(const ClusterWeights& weights, double threshold);

struct SimplifiedGraph {
  FactorGraph graph;
  std::vector<int> origin;                    // source factor per kept factor
  std::vector<std::vector<int>> edge_origin;  // source neighbor position per kept edge
};

/// Drops neighbors outside support[f] and factors with empty support.
/// Tables must be constant along dropped axes (std::logic_error otherwise).
SimplifiedGraph simplify(const FactorGraph& graph, std::span<const std::vector<int>> support);

/// Max alpha over the components of each container; 0 when empty.
std::vector<double> relevance(const Alphas& alphas, const AssignmentMap& map);

}  // namespace fgc
