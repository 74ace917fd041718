#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sphereat/trainer/trainer.hpp"

namespace sphereat::cli {

/// Rejected configuration; `key` names the offending entry when there is one.
class ConfigError : public ContractViolation {
 public:
  ConfigError(std::string key, const std::string& what) : ContractViolation(what), key(std::move(key)) {}
  std::string key;
};

struct DataConfig {
  std::string source = "two-moons";  // two-moons | mnist
  std::filesystem::path dir;         // IDX directory for mnist
  std::size_t train_size = 0;        // 0 keeps every example
  std::size_t test_size = 0;
  std::size_t moons_train = 1000;
  std::size_t moons_test = 500;
  double moons_noise = 0.1;
};

struct ExperimentConfig {
  std::string name = "run";
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  DataConfig data;
  TrainSpec train;
  bool record_wall_time = false;

  /// Every key with its resolved value, one `key = value` per line, in a fixed order.
  std::string resolved;
};

/// Built-in data directory for the bundled MNIST subset.
std::filesystem::path default_mnist_dir();

/// Parses `key = value` lines; unknown keys, duplicates, and bad values raise ConfigError.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Resolved defaults for a data source, in canonical key order.
std::vector<std::pair<std::string, std::string>> default_entries(std::string_view data_source);

/// Default eps and step for a data source.
std::pair<double, double> default_budget(std::string_view data_source);

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_data(const ExperimentConfig& cfg);

}  // namespace sphereat::cli
