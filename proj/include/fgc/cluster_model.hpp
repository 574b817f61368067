#pragma once

#include <filesystem>
#include <optional>

#include "json.hpp"

#include "fgc/channel.hpp"
#include "fgc/cluster.hpp"
#include "fgc/spa.hpp"

namespace fgc {

/// UFG structure for block length K; tables are those of an all-zero
/// observation at unit noise variance.
FactorGraph ufg_structure(const ChannelSpec& channel, int block_length);

/// A continuous-clustering parametrization of the UFG.
///
/// NBP weights, when present, are indexed by the edges of the unsimplified
/// clustered graph: container-major, then position in the container's
/// variable list.
struct ClusterModel {
  ChannelSpec channel{{1.0}};
  ContainerSet containers;
  OptionsList options;
  ClusterWeights weights;
  std::optional<NbpWeights> nbp;

  int block_length() const { return containers.num_variables; }
  int degree() const { return containers.degree; }

  /// Containers and options for (K, d_max, span_limit) with all-zero logits.
  static ClusterModel create(const ChannelSpec& channel, int block_length, int degree, int span_limit = -1);

  std::size_t num_container_edges() const;
  bool operator==(const ClusterModel&) const = default;
};

nlohmann::json model_to_json(const ClusterModel& model);
/// Validates that containers and options match the stated (K, L, d_max, span_limit).
ClusterModel model_from_json(const nlohmann::json& doc);

void save_model(const ClusterModel& model, const std::filesystem::path& path);
ClusterModel load_model(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path);

}  // namespace fgc
