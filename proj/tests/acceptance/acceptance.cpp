// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "viqa/dataset.hpp"
#include "viqa/distortion.hpp"
#include "viqa/metrics.hpp"
#include "viqa/model.hpp"
#include "viqa/sphere.hpp"
#include "viqa/spherical_metrics.hpp"
#include "viqa/stats.hpp"
#include "viqa/training.hpp"

namespace fs = std::filesystem;
using namespace viqa;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("[%s] criterion %d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  if (fs::is_directory(p)) return slurp(p / "manifest.csv");
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.patch_size = 8;
  cfg.encoder.feature_dim = 4;
  cfg.encoder.conv_channels = {3};
  cfg.encoder.input_filter_radius = 1;
  return cfg;
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const LossGradCheck r = check_loss_gradients(1);
  const double t = seconds_since(t0);
  const bool ok = r.predictor.max_rel_error < 1e-4 && r.guider.max_rel_error < 1e-4 && t < 30.0 &&
                  r.predictor.checked > 0 && r.guider.checked > 0;
  return {ok, fmt("L_P max rel err %.3g over %zu coords, L_D %.3g over %zu coords, %.2fs", r.predictor.max_rel_error,
                  r.predictor.checked, r.guider.max_rel_error, r.guider.checked, t)};
}

Outcome gradient_isolation() {
  Rng rng(2);
  std::vector<TrainSample> samples;
  for (int i = 0; i < 3; ++i) {
    TrainSample s;
    s.ref_image = std::make_shared<const ImageBuffer>(synth_scene(10 + i, 16, 8));
    s.dist_image = std::make_shared<const ImageBuffer>(distort(*s.ref_image, {DistortionKind::noise, 0.05, 1u + i}));
    s.mos = 30.0 + 20.0 * i;
    samples.push_back(s);
  }
  std::vector<const TrainSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  const PredictorModel p = PredictorModel::create(tiny_config(), 16, 8, rng);
  const GuiderModel d = GuiderModel::create(tiny_config(), rng);
  const PredictorLoss pl = predictor_loss(p, &d, batch, 100.0);
  const GuiderLoss gl = guider_loss(p, d, batch);
  const bool ok = pl.guider_grads && pl.guider_grads->all_zero() && gl.predictor_grads.all_zero() &&
                  !pl.grads.all_zero() && !gl.grads.all_zero();
  return {ok, fmt("guider grads from L_P all zero: %s; predictor grads from L_D all zero: %s",
                  pl.guider_grads && pl.guider_grads->all_zero() ? "yes" : "no",
                  gl.predictor_grads.all_zero() ? "yes" : "no")};
}

Outcome pooling() {
  Rng rng(3);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng.below(64));
    std::vector<double> w(n), q(n);
    for (int i = 0; i < n; ++i) {
      const double a = rng.uniform(-20.0, 20.0);
      w[i] = (a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a))) + kWeightFloor;
      q[i] = rng.uniform(0.0, 100.0);
    }
    const double s = pool_scores(w, q);
    if (s < *std::min_element(q.begin(), q.end()) || s > *std::max_element(q.begin(), q.end())) ++violations;
  }
  const double hand = pool_scores({1.0, 3.0}, {10.0, 20.0});
  return {violations == 0 && hand == 17.5, fmt("%d bound violations in 1000 trials; hand case %.17g", violations, hand)};
}

// Rank of x[i] = 1 + #{x[j] < x[i]} + #{j != i, x[j] == x[i]} / 2.
std::vector<double> brute_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size(), 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) r[i] += 1.0;
      if (j != i && x[j] == x[i]) r[i] += 0.5;
    }
  }
  return r;
}

Outcome metric_oracles() {
  const ImageBuffer x = synth_scene(5, 256, 256);
  const double s = ssim(x, x).value, ms = ms_ssim(x, x).value, v = vifp(x, x).value;
  ImageBuffer base = x;
  for (float& p : base.data()) p *= 0.8f;
  ImageBuffer shifted = base;
  for (float& p : shifted.data()) p += 0.1f;
  const double p = psnr(base, shifted).value;

  long patterns = 0, mismatches = 0;
  Rng rng(4);
  for (int n = 2; n <= 6; ++n) {
    std::vector<double> a(n, 0.0);
    while (true) {
      std::vector<double> b(n);
      for (double& e : b) e = static_cast<double>(rng.below(static_cast<std::uint64_t>(n)));
      const bool const_a = std::all_of(a.begin(), a.end(), [&](double e) { return e == a[0]; });
      const bool const_b = std::all_of(b.begin(), b.end(), [&](double e) { return e == b[0]; });
      if (!const_a && !const_b) {
        ++patterns;
        if (fractional_ranks(a) != brute_ranks(a) || srocc(a, b) != plcc(brute_ranks(a), brute_ranks(b))) {
          ++mismatches;
        }
      }
      int i = 0;
      while (i < n && a[i] == n - 1) a[i++] = 0;
      if (i == n) break;
      a[i] += 1;
    }
  }
  const bool ok = std::abs(s - 1.0) <= 1e-9 && std::abs(ms - 1.0) <= 1e-9 && std::abs(v - 1.0) <= 1e-6 &&
                  std::abs(p - 20.0) <= 1e-3 && mismatches == 0;
  return {ok, fmt("SSIM %.12f, MS-SSIM %.12f, VIFp %.9f, PSNR(+0.1) %.5f dB, SROCC oracle %ld/%ld tie patterns exact", s,
                  ms, v, p, patterns - mismatches, patterns)};
}

ImageBuffer with_block(const ImageBuffer& ref, int top, int size, float amp) {
  ImageBuffer d = ref;
  const int left = ref.width() / 2 - size / 2;
  for (int c = 0; c < d.channels(); ++c) {
    for (int y = top; y < top + size; ++y) {
      for (int x = left; x < left + size; ++x) d.at(c, y, x) += amp;
    }
  }
  return d;
}

Outcome spherical_consistency() {
  const auto t0 = Clock::now();
  const int w = 2048, h = 1024;
  Rng rng(5);
  ImageBuffer ref(w, h, 3);
  for (float& v : ref.data()) v = static_cast<float>(32 + rng.below(160)) / 256.0f;
  ImageBuffer uniform = ref;
  for (float& v : uniform.data()) v += 0.0625f;
  const double p = psnr(ref, uniform).value, ws = ws_psnr(ref, uniform).value;
  const double sp = s_psnr(ref, uniform).value, cp = cpp_psnr(ref, uniform).value;

  const ImageBuffer flat(w, h, 1, 0.5f);
  const ImageBuffer eq = with_block(flat, h / 2 - 64, 128, 0.25f), pole = with_block(flat, 0, 128, 0.25f);
  const double ws_e = ws_psnr(flat, eq).value, ws_p = ws_psnr(flat, pole).value;
  const double s_e = s_psnr(flat, eq).value, s_p = s_psnr(flat, pole).value;
  const double c_e = cpp_psnr(flat, eq).value, c_p = cpp_psnr(flat, pole).value;
  const double p_e = psnr(flat, eq).value, p_p = psnr(flat, pole).value;
  const double t = seconds_since(t0);

  const bool uniform_ok = ws - p == 0.0 && std::abs(sp - ws) < 0.5 && std::abs(cp - p) < 0.1;
  const bool block_ok = ws_p > ws_e && s_p > s_e && c_p > c_e && std::abs(p_p - p_e) < 0.01;
  return {uniform_ok && block_ok && t < 60.0,
          fmt("uniform: |WS-PSNR|=%.3g, |S-WS|=%.3f, |CPP-PSNR|=%.3f dB; equator->pole: WS %.2f->%.2f, S %.2f->%.2f, "
              "CPP %.2f->%.2f, PSNR change %.4f dB; %.1fs at 2048x1024",
              std::abs(ws - p), std::abs(sp - ws), std::abs(cp - p), ws_e, ws_p, s_e, s_p, c_e, c_p,
              std::abs(p_p - p_e), t)};
}

Outcome cpp_equal_area() {
  auto area = [](double lat, double lon) {
    const double h = 1e-6;
    const PlanePoint xp = cpp_forward({lat, lon + h}), xm = cpp_forward({lat, lon - h});
    const PlanePoint yp = cpp_forward({lat + h, lon}), ym = cpp_forward({lat - h, lon});
    const double a = (xp.x - xm.x) / (2 * h), b = (yp.x - ym.x) / (2 * h);
    const double c = (xp.y - xm.y) / (2 * h), d = (yp.y - ym.y) / (2 * h);
    return std::abs(a * d - b * c) / std::cos(lat);
  };
  double lo = 1e300, hi = -1e300;
  for (int i = 0; i < 50; ++i) {
    const double lat = -1.55 + 3.1 * i / 49.0;
    const double s = area(lat, 0.7);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return {hi - lo <= 1e-6, fmt("area scale spread %.3g over 50 latitudes (value %.9f)", hi - lo, lo)};
}

struct Shared {
  fs::path work;
  fs::path manifest;
  std::vector<TrainSample> samples;
  double build_seconds = 0.0;
  CrossValidation plain;
  bool plain_ok = false;
};

constexpr std::uint64_t kSplitSeed = 1;

Outcome end_to_end(Shared& sh) {
  const auto t0 = Clock::now();
  sh.manifest = build_synthetic_dataset(20, 512, 256, 1, default_ladder(1), sh.work / "dataset");
  sh.samples = load_dataset(sh.manifest);
  sh.build_seconds = seconds_since(t0);
  TrainConfig cfg;
  cfg.adversarial = false;
  sh.plain = cross_validate(sh.samples, 5, kSplitSeed, cfg);
  sh.plain_ok = true;
  const double t = seconds_since(t0);
  const EvalMetrics& a = sh.plain.report.aggregate;
  const bool ok = a.plcc >= 0.85 && a.srocc >= 0.80 && t < 600.0 && sh.samples.size() == 240;
  return {ok, fmt("%zu samples, 5-fold without critic, %d epochs: PLCC %.4f, SROCC %.4f, RMSE %.3f; "
                  "%.1fs total (dataset %.1fs)",
                  sh.samples.size(), cfg.epochs, a.plcc, a.srocc, a.rmse, t, sh.build_seconds)};
}

Outcome adversarial_stability(const Shared& sh) {
  if (!sh.plain_ok) return {false, "needs the criterion 7 run"};
  TrainConfig cfg;
  cfg.adversarial = true;
  const CrossValidation adv = cross_validate(sh.samples, 5, kSplitSeed, cfg);
  const double with = adv.report.aggregate.rmse, without = sh.plain.report.aggregate.rmse;
  return {with <= 1.25 * without,
          fmt("with critic (lambda %.0f) RMSE %.3f PLCC %.4f SROCC %.4f; without critic RMSE %.3f; ratio %.3f",
              cfg.lambda, with, adv.report.aggregate.plcc, adv.report.aggregate.srocc, without, with / without)};
}

Outcome saliency_sanity(const Shared& sh) {
  if (sh.samples.empty()) return {false, "needs the criterion 7 dataset"};
  TrainConfig cfg;
  cfg.adversarial = false;
  const TrainResult trained = train(sh.samples, cfg);
  double boundary_total = 0.0, interior_total = 0.0;
  int wins = 0;
  const int scenes = 5;
  for (int s = 0; s < scenes; ++s) {
    const ImageBuffer ref = load_image(sh.work / "dataset" / "refs" / fmt("scene%03d.png", s));
    const ImageBuffer dist = quantize_8bit(distort(ref, {DistortionKind::jpegish, 16.0, 0}));
    const ImageBuffer map = saliency_map(trained.predictor, dist);
    double b = 0.0, in = 0.0;
    long nb = 0, ni = 0;
    for (int y = 0; y < map.height(); ++y) {
      for (int x = 0; x < map.width(); ++x) {
        const bool edge = x % 8 == 0 || x % 8 == 7 || y % 8 == 0 || y % 8 == 7;
        (edge ? b : in) += map.at(0, y, x);
        ++(edge ? nb : ni);
      }
    }
    b /= static_cast<double>(nb);
    in /= static_cast<double>(ni);
    boundary_total += b;
    interior_total += in;
    wins += b > in;
  }
  const double b = boundary_total / scenes, in = interior_total / scenes;
  return {b > in, fmt("jpegish strength 16: mean saliency on 8x8 block boundaries %.4f vs interior %.4f "
                      "(boundary higher on %d/%d scenes)",
                      b, in, wins, scenes)};
}

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const std::string cmd = "'" VIQA_CLI_PATH "' " + args + " 2>/dev/null";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

Outcome determinism(const Shared& sh) {
  const fs::path dir = sh.work / "cli";
  fs::create_directories(dir);
  std::vector<std::string> unstable;
  int runs = 0;
  auto numbered = [&](const fs::path& f, int k) {
    return dir / (f.stem().string() + "." + std::to_string(k) + f.extension().string());
  };
  auto twice = [&](const std::string& label, const std::string& args, const std::vector<fs::path>& files = {}) {
    std::vector<std::string> outs[2];
    for (int k = 0; k < 2; ++k) {
      std::string a = args;
      for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string tag = "{" + std::to_string(i) + "}";
        const fs::path target = numbered(files[i], k);
        for (std::size_t pos; (pos = a.find(tag)) != std::string::npos;) a.replace(pos, tag.size(), q(target));
      }
      const CliRun r = cli(a);
      std::string o = r.out;
      for (std::size_t i = 0; i < files.size(); ++i) {
        const fs::path target = numbered(files[i], k);
        for (std::size_t pos; (pos = o.find(target.string())) != std::string::npos;) o.replace(pos, target.string().size(), "#");
      }
      outs[k].push_back(std::to_string(r.code));
      outs[k].push_back(o);
      for (std::size_t i = 0; i < files.size(); ++i) {
        outs[k].push_back(slurp(numbered(files[i], k)));
      }
    }
    ++runs;
    if (outs[0] != outs[1] || outs[0][0] != "0") unstable.push_back(label);
  };

  const fs::path ds = dir / "ds";
  const CliRun build = cli("build-dataset --synthetic 3 --width 192 --height 192 --seed 3 --out " + q(ds));
  if (build.code != 0) return {false, "build-dataset failed"};
  const fs::path manifest = ds / "manifest.csv";
  const fs::path ref = ds / "refs" / "scene000.png";
  const fs::path dist = ds / "dist" / "scene000_jpegish_8.png";

  twice("train", "train --manifest " + q(manifest) + " --epochs 2 --seed 7 --out {0} --history {1}",
        {"model.viqa", "history.jsonl"});
  const fs::path model = dir / "model.0.viqa";
  const bool model_identical = slurp(dir / "model.0.viqa") == slurp(dir / "model.1.viqa") &&
                               !slurp(dir / "model.0.viqa").empty();
  twice("metrics", "metrics --which all --ref " + q(ref) + " --dist " + q(dist));
  twice("distort", "distort --in " + q(ref) + " --kind noise --strength 0.08 --seed 4 --out {0}", {"noisy.png"});
  twice("build-dataset", "build-dataset --synthetic 2 --width 192 --height 192 --seed 5 --out {0}", {"ds2"});
  twice("score", "score --model " + q(model) + " --image " + q(dist));
  twice("eval", "eval --model " + q(model) + " --manifest " + q(manifest));
  twice("eval-kfold", "eval --kfold 3 --epochs 1 --seed 2 --manifest " + q(manifest));
  twice("saliency", "saliency --model " + q(model) + " --image " + q(dist) + " --out {0}", {"sal.png"});
  twice("gradcheck", "gradcheck --seed 7");

  std::string bad;
  for (const auto& u : unstable) bad += (bad.empty() ? "" : ",") + u;
  return {model_identical && unstable.empty(),
          fmt("train --seed 7 twice: model files %s; %d subcommands run twice, unstable: %s",
              model_identical ? "byte-identical" : "DIFFER", runs, bad.empty() ? "none" : bad.c_str())};
}

}  // namespace

int main() {
  Shared sh;
  sh.work = fs::temp_directory_path() / "viqa_acceptance";
  fs::remove_all(sh.work);
  fs::create_directories(sh.work);

  report(1, "gradient correctness", gradient_correctness);
  report(2, "gradient isolation", gradient_isolation);
  report(3, "pooling bounds", pooling);
  report(4, "metric oracles", metric_oracles);
  report(5, "spherical consistency", spherical_consistency);
  report(6, "CPP equal area", cpp_equal_area);
  report(7, "end-to-end learning", [&] { return end_to_end(sh); });
  report(8, "adversarial stability", [&] { return adversarial_stability(sh); });
  report(9, "saliency sanity", [&] { return saliency_sanity(sh); });
  report(10, "determinism", [&] { return determinism(sh); });

  std::error_code ec;
  fs::remove_all(sh.work, ec);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
