#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "viqa/image.hpp"

namespace viqa {

enum class DistortionKind { jpegish, blur, noise };

std::string distortion_name(DistortionKind kind);
DistortionKind parse_distortion(const std::string& name);

struct DistortionSpec {
  DistortionKind kind = DistortionKind::jpegish;
  // jpegish: quantization scale; blur and noise: Gaussian sigma.
  double strength = 0.0;
  std::uint64_t seed = 0;  // noise only
};

// AC quantization step per unit of jpegish strength, in [0,1] pixel units.
inline constexpr double kJpegishStepPerStrength = 0.05;
// Upper bound on the DC step (about one 8-bit level of the block mean).
inline constexpr double kJpegishMaxDcStep = 1.0 / 32.0;

// Output always lies in [0,1]; strength 0 reproduces the input.
ImageBuffer distort(const ImageBuffer& img, const DistortionSpec& spec);

// 100 * clamp(ms_ssim(ref, dist), 0, 1)
double synth_mos(const ImageBuffer& ref, const ImageBuffer& dist);

// 3 kinds x 4 strengths.
std::vector<DistortionSpec> default_ladder(std::uint64_t seed = 0);

// Procedural RGB reference scene.
ImageBuffer synth_scene(std::uint64_t seed, int width, int height);

struct BuildOptions {
  int threads = 1;
};

// Writes dist/<scene>_<kind>_<strength>.png for every (ref, spec) pair and
// manifest.csv in out_dir. Scene ids are the reference file stems. Failures
// are collected and reported together. Returns the manifest path.
std::filesystem::path build_dataset(const std::vector<std::filesystem::path>& refs,
                                    const std::vector<DistortionSpec>& specs, const std::filesystem::path& out_dir,
                                    const BuildOptions& opts = {});

// Writes `scenes` synthetic references to out_dir/refs and then runs
// build_dataset on them.
std::filesystem::path build_synthetic_dataset(int scenes, int width, int height, std::uint64_t seed,
                                              const std::vector<DistortionSpec>& specs,
                                              const std::filesystem::path& out_dir, const BuildOptions& opts = {});

}  // namespace viqa
