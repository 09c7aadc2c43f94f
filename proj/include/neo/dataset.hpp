#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "neo/defence.hpp"
#include "neo/image.hpp"
#include "neo/oracle.hpp"
#include "neo/simlab.hpp"

// On-disk dataset layout:
//
//   <dir>/manifest.json   {"seed":..,"dims":{"width","height","channels"},
//                          "entries":[{"file","label","poisoned"},..]}
//   <dir>/<file>          PNG per entry, path relative to <dir>
//   <dir>/simlab.json     simulated-classifier parameters (generated datasets only)

namespace neo {

struct ManifestEntry {
  std::string file;
  Label label;
  bool poisoned = false;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<ManifestEntry> entries;

  /// Throws std::invalid_argument on duplicate file names or bad dimensions.
  void validate() const;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::ordered_json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json(const std::filesystem::path& path);

nlohmann::ordered_json world_to_json(const simlab::World& w);
simlab::World world_from_json(const nlohmann::json& j);

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Image> images;
};

/// Reads `<dir>/manifest.json` and every image it lists.
LoadedDataset load_dataset(const std::filesystem::path& dir);

/// Unpoisoned entries of the dataset at `dir`, grouped by label.
CleanReference load_clean_reference(const std::filesystem::path& dir);

}  // namespace neo
