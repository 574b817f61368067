#include "fgc/cluster_model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace fgc {

FactorGraph ufg_structure(const ChannelSpec& channel, int block_length) {
  ObservationBlock zero;
  zero.samples.assign(static_cast<std::size_t>(block_length), 0.0);
  zero.noise_variance = 1.0;
  return build_ufg(channel, zero);
}

ClusterModel ClusterModel::create(const ChannelSpec& channel, int block_length, int degree, int span_limit) {
  ClusterModel model;
  model.channel = channel;
  model.containers = enumerate_containers(block_length, channel.memory(), degree, span_limit);
  model.options = clustering_options(ufg_structure(channel, block_length), model.containers);
  model.weights = ClusterWeights::zeros(model.options);
  return model;
}

std::size_t ClusterModel::num_container_edges() const {
  std::size_t e = 0;
  for (const auto& c : containers.containers) e += c.variables.size();
  return e;
}

nlohmann::json model_to_json(const ClusterModel& model) {
  nlohmann::json containers = nlohmann::json::array();
  for (const auto& c : model.containers.containers) containers.push_back(c.variables);
  nlohmann::json beta = nlohmann::json::array();
  nlohmann::json mask = nlohmann::json::array();
  for (std::size_t i = 0; i < model.weights.beta.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    nlohmann::json mrow = nlohmann::json::array();
    for (std::size_t j = 0; j < model.weights.beta[i].size(); ++j) {
      const bool masked = model.weights.masked(i, j);
      if (masked)
        row.push_back(nullptr);
      else
        row.push_back(model.weights.beta[i][j]);
      mrow.push_back(masked);
    }
    beta.push_back(std::move(row));
    mask.push_back(std::move(mrow));
  }
  nlohmann::json doc = {
      {"K", model.block_length()},
      {"L", model.channel.memory()},
      {"h", model.channel.taps()},
      {"d_max", model.degree()},
      {"span_limit", model.containers.span_limit},
      {"containers", containers},
      {"options", model.options},
      {"beta", beta},
      {"mask", mask},
  };
  if (model.nbp) {
    nlohmann::json per_iter = nlohmann::json::array();
    for (int t = 0; t < model.nbp->iterations; ++t) {
      const auto begin = model.nbp->values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * model.nbp->num_edges);
      per_iter.push_back(std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(model.nbp->num_edges)));
    }
    doc["nbp_weights"] = {{"iterations", model.nbp->iterations}, {"values", per_iter}};
  }
  return doc;
}

ClusterModel model_from_json(const nlohmann::json& doc) {
  const ChannelSpec channel(doc.at("h").get<std::vector<double>>());
  if (doc.at("L").get<int>() != channel.memory()) throw std::invalid_argument("model: L does not match h");
  ClusterModel model =
      ClusterModel::create(channel, doc.at("K").get<int>(), doc.at("d_max").get<int>(), doc.at("span_limit").get<int>());

  const auto& containers = doc.at("containers");
  if (containers.size() != model.containers.size()) throw std::invalid_argument("model: container count mismatch");
  for (std::size_t m = 0; m < containers.size(); ++m)
    if (containers[m].get<std::vector<int>>() != model.containers[m].variables)
      throw std::invalid_argument("model: container " + std::to_string(m) + " does not match canonical enumeration");
  if (doc.at("options").get<OptionsList>() != model.options) throw std::invalid_argument("model: options mismatch");

  const auto& beta = doc.at("beta");
  const auto& mask = doc.at("mask");
  if (beta.size() != model.options.size() || mask.size() != model.options.size())
    throw std::invalid_argument("model: beta/mask row count mismatch");
  for (std::size_t i = 0; i < model.options.size(); ++i) {
    if (beta[i].size() != model.options[i].size() || mask[i].size() != model.options[i].size())
      throw std::invalid_argument("model: beta/mask row " + std::to_string(i) + " has the wrong length");
    for (std::size_t j = 0; j < model.options[i].size(); ++j) {
      const bool masked = mask[i][j].get<bool>();
      model.weights.mask[i][j] = masked ? 1 : 0;
      model.weights.beta[i][j] = masked ? -std::numeric_limits<double>::infinity() : beta[i][j].get<double>();
    }
  }
  if (doc.contains("nbp_weights")) {
    const auto& nbp = doc.at("nbp_weights");
    NbpWeights w = NbpWeights::ones(model.num_container_edges(), nbp.at("iterations").get<int>());
    const auto& values = nbp.at("values");
    if (static_cast<int>(values.size()) != w.iterations) throw std::invalid_argument("model: NBP iteration mismatch");
    for (int t = 0; t < w.iterations; ++t) {
      const auto row = values[static_cast<std::size_t>(t)].get<std::vector<double>>();
      if (row.size() != w.num_edges) throw std::invalid_argument("model: NBP edge count mismatch");
      for (std::size_t e = 0; e < row.size(); ++e) w.at(t, e) = row[e];
    }
    model.nbp = std::move(w);
  }
  return model;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

void save_model(const ClusterModel& model, const std::filesystem::path& path) {
  write_json_file(model_to_json(model), path);
}

ClusterModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed model file " + path.string() + ": " + e.what());
  }
}

}  // namespace fgc
