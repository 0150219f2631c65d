#include "viqa/distortion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "viqa/dataset.hpp"
#include "viqa/error.hpp"
#include "viqa/metrics.hpp"
#include "viqa/parallel.hpp"
#include "viqa/random.hpp"

namespace viqa {

namespace fs = std::filesystem;

std::string distortion_name(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::jpegish: return "jpegish";
    case DistortionKind::blur: return "blur";
    case DistortionKind::noise: return "noise";
  }
  return "unknown";
}

DistortionKind parse_distortion(const std::string& name) {
  if (name == "jpegish") return DistortionKind::jpegish;
  if (name == "blur") return DistortionKind::blur;
  if (name == "noise") return DistortionKind::noise;
  throw InputError("unknown distortion kind: " + name);
}

namespace {

using Block = std::array<double, 64>;

const std::array<double, 64>& dct_basis() {
  // basis[u*8 + x] = c(u) cos((2x+1) u pi / 16)
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u) {
      const double c = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) b[u * 8 + x] = c * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

// Separable orthonormal 2-D DCT (inverse when `inverse` is set).
Block dct8x8(const Block& in, bool inverse) {
  const auto& b = dct_basis();
  Block tmp{}, out{};
  for (int r = 0; r < 8; ++r) {
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += (inverse ? b[x * 8 + u] : b[u * 8 + x]) * in[r * 8 + x];
      tmp[r * 8 + u] = s;
    }
  }
  for (int c = 0; c < 8; ++c) {
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += (inverse ? b[y * 8 + v] : b[v * 8 + y]) * tmp[y * 8 + c];
      out[v * 8 + c] = s;
    }
  }
  return out;
}

ImageBuffer jpegish(const ImageBuffer& img, double strength) {
  const double ac_step = kJpegishStepPerStrength * strength;
  const double dc_step = std::min(ac_step, kJpegishMaxDcStep);
  ImageBuffer out = img;
  const int w = img.width(), h = img.height();
  for (int c = 0; c < img.channels(); ++c) {
    for (int by = 0; by < h; by += 8) {
      for (int bx = 0; bx < w; bx += 8) {
        Block block{};
        for (int y = 0; y < 8; ++y) {
          for (int x = 0; x < 8; ++x) {
            block[y * 8 + x] = img.at(c, std::min(by + y, h - 1), std::min(bx + x, w - 1));
          }
        }
        Block coef = dct8x8(block, false);
        for (int k = 0; k < 64; ++k) {
          const double step = k == 0 ? dc_step : ac_step;
          coef[k] = step * std::round(coef[k] / step);
        }
        const Block rec = dct8x8(coef, true);
        for (int y = 0; y < 8 && by + y < h; ++y) {
          for (int x = 0; x < 8 && bx + x < w; ++x) {
            out.at(c, by + y, bx + x) = static_cast<float>(std::clamp(rec[y * 8 + x], 0.0, 1.0));
          }
        }
      }
    }
  }
  return out;
}

// Rows clamp at the poles, columns wrap around the seam.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += taps[i + radius];
  }
  for (double& t : taps) t /= total;

  const int w = img.width(), h = img.height();
  ImageBuffer out(w, h, img.channels());
  std::vector<double> row_pass(static_cast<std::size_t>(w) * h);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = ((x + i) % w + w) % w;
          s += taps[i + radius] * img.at(c, y, xx);
        }
        row_pass[static_cast<std::size_t>(y) * w + x] = s;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, h - 1);
          s += taps[i + radius] * row_pass[static_cast<std::size_t>(yy) * w + x];
        }
        out.at(c, y, x) = static_cast<float>(std::clamp(s, 0.0, 1.0));
      }
    }
  }
  return out;
}

ImageBuffer gaussian_noise(const ImageBuffer& img, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuffer out = img;
  for (float& v : out.data()) v = static_cast<float>(std::clamp(v + sigma * rng.normal(), 0.0, 1.0));
  return out;
}

}  // namespace

ImageBuffer distort(const ImageBuffer& img, const DistortionSpec& spec) {
  if (!(spec.strength >= 0.0) || !std::isfinite(spec.strength)) {
    throw InputError("distortion strength must be finite and non-negative");
  }
  if (spec.strength == 0.0) return img;
  switch (spec.kind) {
    case DistortionKind::jpegish: return jpegish(img, spec.strength);
    case DistortionKind::blur: return gaussian_blur(img, spec.strength);
    case DistortionKind::noise: return gaussian_noise(img, spec.strength, spec.seed);
  }
  return img;
}

double synth_mos(const ImageBuffer& ref, const ImageBuffer& dist) {
  return 100.0 * std::clamp(ms_ssim(ref, dist).value, 0.0, 1.0);
}

std::vector<DistortionSpec> default_ladder(std::uint64_t seed) {
  std::vector<DistortionSpec> out;
  for (double s : {2.0, 4.0, 8.0, 16.0}) out.push_back({DistortionKind::jpegish, s, seed});
  for (double s : {1.0, 2.0, 3.0, 5.0}) out.push_back({DistortionKind::blur, s, seed});
  for (double s : {0.03, 0.06, 0.1, 0.15}) out.push_back({DistortionKind::noise, s, seed});
  return out;
}

ImageBuffer synth_scene(std::uint64_t seed, int width, int height) {
  if (width < 1 || height < 1) throw InputError("synth_scene: dimensions must be positive");
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  ImageBuffer img(width, height, 3);
  auto color = [&] { return std::array<double, 3>{rng.uniform(), rng.uniform(), rng.uniform()}; };

  // Sky / ground split with vertical gradients.
  const auto sky_top = color(), sky_low = color(), ground_top = color(), ground_low = color();
  const double horizon = rng.uniform(0.35, 0.65) * height;
  for (int y = 0; y < height; ++y) {
    const bool sky = y < horizon;
    const double t = sky ? y / horizon : (y - horizon) / std::max(1.0, height - horizon);
    for (int c = 0; c < 3; ++c) {
      const double v = sky ? sky_top[c] + (sky_low[c] - sky_top[c]) * t : ground_top[c] + (ground_low[c] - ground_top[c]) * t;
      for (int x = 0; x < width; ++x) img.at(c, y, x) = static_cast<float>(v);
    }
  }

  // Flat shapes.
  const int shapes = 6 + static_cast<int>(rng.below(4));
  for (int s = 0; s < shapes; ++s) {
    const auto col = color();
    const double cx = rng.uniform(0, width), cy = rng.uniform(0, height);
    const double rx = rng.uniform(0.02, 0.15) * width, ry = rng.uniform(0.05, 0.3) * height;
    const bool ellipse = rng.uniform() < 0.5;
    for (int y = std::max(0, int(cy - ry)); y < std::min(height, int(cy + ry) + 1); ++y) {
      for (int x = std::max(0, int(cx - rx)); x < std::min(width, int(cx + rx) + 1); ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        if (ellipse && dx * dx + dy * dy > 1.0) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(col[c]);
      }
    }
  }

  // Oriented gratings blended into rectangular regions.
  const int gratings = 2 + static_cast<int>(rng.below(2));
  for (int g = 0; g < gratings; ++g) {
    const double x0 = rng.uniform(0, width * 0.8), y0 = rng.uniform(0, height * 0.8);
    const double gw = rng.uniform(0.1, 0.4) * width, gh = rng.uniform(0.1, 0.4) * height;
    const double freq = rng.uniform(0.05, 0.6), theta = rng.uniform(0, std::numbers::pi);
    const double amp = rng.uniform(0.1, 0.4);
    const double ux = std::cos(theta), uy = std::sin(theta);
    for (int y = int(y0); y < std::min(height, int(y0 + gh)); ++y) {
      for (int x = int(x0); x < std::min(width, int(x0 + gw)); ++x) {
        const double v = amp * std::sin(freq * (ux * x + uy * y));
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(img.at(c, y, x) + v);
      }
    }
  }

  // Fine value-noise texture with a per-scene amplitude.
  const double grain = rng.uniform(0.05, 0.07);
  const int cell = 3;
  const int gw = width / cell + 2, gh = height / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
  for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
  for (int y = 0; y < height; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const int iy = static_cast<int>(fy);
    const double ty = fy - iy;
    for (int x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const int ix = static_cast<int>(fx);
      const double tx = fx - ix;
      auto L = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * gw + a]; };
      const double v = (1 - ty) * ((1 - tx) * L(ix, iy) + tx * L(ix + 1, iy)) +
                       ty * ((1 - tx) * L(ix, iy + 1) + tx * L(ix + 1, iy + 1));
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(std::clamp(img.at(c, y, x) + grain * v, 0.0, 1.0));
      }
    }
  }
  return quantize_8bit(img);
}

namespace {

std::string dist_file_name(const std::string& scene, const DistortionSpec& spec) {
  return scene + "_" + distortion_name(spec.kind) + "_" + format_number(spec.strength) + ".png";
}

}  // namespace

fs::path build_dataset(const std::vector<fs::path>& refs, const std::vector<DistortionSpec>& specs,
                       const fs::path& out_dir, const BuildOptions& opts) {
  if (refs.empty()) throw InputError("build_dataset: no reference images");
  if (specs.empty()) throw InputError("build_dataset: no distortion specs");
  std::error_code ec;
  fs::create_directories(out_dir / "dist", ec);
  if (ec) throw ImageIoError(ImageIoErrc::io_failure, "cannot create " + (out_dir / "dist").string());

  std::vector<std::string> scenes;
  for (const auto& r : refs) scenes.push_back(r.stem().string());
  {
    auto sorted = scenes;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw InputError("build_dataset: reference file stems must be unique");
    }
  }

  const std::size_t total = refs.size() * specs.size();
  std::vector<ManifestRow> rows(total);
  std::vector<std::string> errors(refs.size());

  parallel_for(refs.size(), opts.threads, [&](std::size_t r) {
    try {
      const ImageBuffer ref = load_image(refs[r]);
      const fs::path ref_abs = fs::absolute(refs[r]);
      for (std::size_t s = 0; s < specs.size(); ++s) {
        DistortionSpec spec = specs[s];
        spec.seed = specs[s].seed + 0x9E3779B97F4A7C15ULL * (r + 1);
        const ImageBuffer dist = quantize_8bit(distort(ref, spec));
        const std::string name = dist_file_name(scenes[r], specs[s]);
        save_image(dist, out_dir / "dist" / name);
        ManifestRow& row = rows[r * specs.size() + s];
        row.ref_path = ref_abs.lexically_proximate(fs::absolute(out_dir)).generic_string();
        row.dist_path = "dist/" + name;
        row.mos = synth_mos(ref, dist);
        row.scene_id = scenes[r];
        row.codec = distortion_name(spec.kind);
        row.strength = spec.strength;
      }
    } catch (const std::exception& e) {
      errors[r] = refs[r].string() + ": " + e.what();
    }
  });

  std::string combined;
  for (const auto& e : errors) {
    if (!e.empty()) combined += (combined.empty() ? "" : "; ") + e;
  }
  if (!combined.empty()) throw ImageIoError(ImageIoErrc::io_failure, "build_dataset failed: " + combined);

  std::stable_sort(rows.begin(), rows.end(), [](const ManifestRow& a, const ManifestRow& b) {
    if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
    if (a.codec != b.codec) return a.codec < b.codec;
    return a.strength < b.strength;
  });
  const fs::path manifest = out_dir / "manifest.csv";
  write_manifest(manifest, rows);
  return manifest;
}

fs::path build_synthetic_dataset(int scenes, int width, int height, std::uint64_t seed,
                                 const std::vector<DistortionSpec>& specs, const fs::path& out_dir,
                                 const BuildOptions& opts) {
  if (scenes < 1) throw InputError("build_synthetic_dataset: need at least one scene");
  std::error_code ec;
  fs::create_directories(out_dir / "refs", ec);
  if (ec) throw ImageIoError(ImageIoErrc::io_failure, "cannot create " + (out_dir / "refs").string());
  std::vector<fs::path> refs(static_cast<std::size_t>(scenes));
  parallel_for(refs.size(), opts.threads, [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene%03zu.png", i);
    refs[i] = out_dir / "refs" / name;
    save_image(synth_scene(seed + i, width, height), refs[i]);
  });
  return build_dataset(refs, specs, out_dir, opts);
}

}  // namespace viqa
