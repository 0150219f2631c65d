#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "viqa/image.hpp"

namespace viqa {

struct TrainSample {
  std::shared_ptr<const ImageBuffer> dist_image;
  std::shared_ptr<const ImageBuffer> ref_image;
  double mos = 0.0;  // 0-100
  std::string scene_id;
  std::string codec;
  double strength = 0.0;
};

// One line of the dataset manifest. Paths are relative to the manifest's
// directory unless absolute.
struct ManifestRow {
  std::string ref_path;
  std::string dist_path;
  double mos = 0.0;
  std::string scene_id;
  std::string codec;
  double strength = 0.0;
};

inline constexpr const char* kManifestHeader = "ref_path,dist_path,mos,scene_id,codec,strength";

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

// Loads every image named by the manifest; rows sharing a reference share
// one buffer. Throws ShapeError when images disagree in dimensions.
std::vector<TrainSample> load_dataset(const std::filesystem::path& manifest);

// Shortest round-trip decimal form, used for every number written to text.
std::string format_number(double v);

}  // namespace viqa
