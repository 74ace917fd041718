#pragma once

// Briefly trained two-moons models for tests that need realistic gradients.

#include <string>

#include "sphereat/cli/config.hpp"

namespace sphereat::fixtures {

struct TrainedModel {
  ModelParams params;
  HeadConfig head;
  Dataset train;
  Dataset test;
  TrainHistory history;
};

inline cli::ExperimentConfig moons_config(std::uint64_t seed, const std::string& extra = "") {
  cli::ExperimentConfig cfg = cli::parse_config("data = two-moons\nseed = " + std::to_string(seed) +
                                                "\neval.every_epoch = false\neval.limit = 200\n" + extra);
  return cfg;
}

inline TrainedModel trained_moons(std::uint64_t seed, const std::string& extra = "train.framework = standard\n"
                                                                                "train.epochs = 20\n") {
  const cli::ExperimentConfig cfg = moons_config(seed, extra);
  const cli::LoadedData data = cli::load_data(cfg);
  TrainResult r = train(cfg.train, data.train, data.test);
  return {std::move(r.params), cfg.train.head, data.train, data.test, std::move(r.history)};
}

}  // namespace sphereat::fixtures
