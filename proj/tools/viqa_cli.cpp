// viqa command-line front end. Machine-readable results go to stdout as JSON,
// the resolved configuration and diagnostics go to stderr.
//
// Exit codes: 0 success, 2 input error, 3 numeric failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "viqa/dataset.hpp"
#include "viqa/distortion.hpp"
#include "viqa/error.hpp"
#include "viqa/image.hpp"
#include "viqa/metrics.hpp"
#include "viqa/model.hpp"
#include "viqa/nn.hpp"
#include "viqa/spherical_metrics.hpp"
#include "viqa/stats.hpp"
#include "viqa/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace viqa;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("VIQA_SEED")) {
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(env, &pos);
      if (pos == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw InputError(std::string("VIQA_SEED is not an unsigned integer: ") + env);
  }
  return 1;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::vector<int> parse_int_list(const std::string& text, const std::string& flag) {
  std::vector<int> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const int v = std::stoi(item, &pos);
      if (pos != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw InputError(flag + ": expected comma-separated positive integers, got '" + text + "'");
    }
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

void echo_config(const std::string& subcommand, const json& cfg) {
  json j;
  j["subcommand"] = subcommand;
  j["config"] = cfg;
  std::cerr << j.dump() << '\n';
}

void emit(const json& j) { std::cout << j.dump() << '\n'; }

json metric_value(const MetricResult& r) {
  if (r.infinite) return "inf";
  return r.value;
}

// Training flags shared by `train` and `eval --kfold`.
struct TrainFlags {
  TrainConfig cfg;
  bool no_critic = false;
  std::string conv_channels;
  std::string head_widths;
  std::uint64_t seed = 0;
  bool seed_given = false;

  void attach(CLI::App* app) {
    app->add_option("--batch-size", cfg.batch_size, "Samples per batch")->capture_default_str();
    app->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--lambda", cfg.lambda, "Weight of the adversarial term")->capture_default_str();
    app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    app->add_option("--d-steps-per-p-step", cfg.d_steps_per_p_step, "Guider updates per predictor update")
        ->capture_default_str();
    app->add_flag("--no-critic", no_critic, "Train the predictor alone (lambda = 0, no guider)");
    app->add_option("--patch-size", cfg.model.patch_size, "Patch edge length P")->capture_default_str();
    app->add_option("--feature-dim", cfg.model.encoder.feature_dim, "Encoder feature dimension D")
        ->capture_default_str();
    app->add_option("--input-filter-radius", cfg.model.encoder.input_filter_radius,
                    "Local mean subtraction radius before the encoder (0 = off)")
        ->capture_default_str();
    conv_channels = join_ints(cfg.model.encoder.conv_channels);
    app->add_option("--conv-channels", conv_channels, "Comma-separated conv output channels")->capture_default_str();
    app->add_option("--head-widths", head_widths, "Comma-separated hidden widths of the heads (default: from D)");
    app->add_option("--seed", seed, "PRNG seed (default: $VIQA_SEED or 1)");
  }

  TrainConfig resolve(CLI::App* app, int threads) {
    TrainConfig out = cfg;
    out.adversarial = !no_critic;
    out.model.encoder.conv_channels = parse_int_list(conv_channels, "--conv-channels");
    out.model.head_widths = parse_int_list(head_widths, "--head-widths");
    out.seed = app->count("--seed") ? seed : default_seed();
    out.threads = threads;
    if (out.batch_size < 1 || out.epochs < 0 || !(out.lr > 0.0) || !(out.lambda >= 0.0) ||
        out.d_steps_per_p_step < 1) {
      throw InputError("training flags must be positive (lambda may be zero)");
    }
    return out;
  }
};

json train_config_json(const TrainConfig& c) {
  json j;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["lambda"] = c.adversarial ? c.lambda : 0.0;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["d_steps_per_p_step"] = c.d_steps_per_p_step;
  j["adversarial"] = c.adversarial;
  j["threads"] = c.threads;
  j["patch_size"] = c.model.patch_size;
  j["feature_dim"] = c.model.encoder.feature_dim;
  j["input_filter_radius"] = c.model.encoder.input_filter_radius;
  j["conv_channels"] = c.model.encoder.conv_channels;
  j["head_widths"] = c.model.resolved_head_widths();
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError(ImageIoErrc::io_failure, "cannot write " + path.string());
  out << text;
  if (!out) throw ImageIoError(ImageIoErrc::io_failure, "failed writing " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Omnidirectional image quality toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "Worker threads (0 = all cores)")->capture_default_str();

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "Full-reference metrics between two images");
  std::string m_ref, m_dist, m_which = "all";
  int m_samples = 10000;
  metrics_cmd->add_option("--ref", m_ref, "Reference image")->required();
  metrics_cmd->add_option("--dist", m_dist, "Distorted image")->required();
  metrics_cmd->add_option("--which", m_which, "Comma-separated metric names or 'all'")->capture_default_str();
  metrics_cmd->add_option("--samples", m_samples, "S-PSNR sphere samples")->capture_default_str();

  // distort
  auto* distort_cmd = app.add_subcommand("distort", "Apply a synthetic distortion");
  std::string d_in, d_out, d_kind;
  double d_strength = 0.0;
  std::uint64_t d_seed = 0;
  distort_cmd->add_option("--in", d_in, "Input image")->required();
  distort_cmd->add_option("--out", d_out, "Output image (.png/.pgm/.ppm)")->required();
  distort_cmd->add_option("--kind", d_kind, "jpegish, blur or noise")->required();
  distort_cmd->add_option("--strength", d_strength, "Quantization scale or Gaussian sigma")->required();
  distort_cmd->add_option("--seed", d_seed, "Noise seed (default: $VIQA_SEED or 1)");

  // build-dataset
  auto* build_cmd = app.add_subcommand("build-dataset", "Distort references and write a manifest");
  std::vector<std::string> b_refs;
  std::string b_out;
  int b_synthetic = 0, b_width = 512, b_height = 256;
  std::uint64_t b_seed = 0;
  build_cmd->add_option("--refs", b_refs, "Reference images");
  build_cmd->add_option("--synthetic", b_synthetic, "Generate this many procedural references instead");
  build_cmd->add_option("--width", b_width, "Synthetic reference width")->capture_default_str();
  build_cmd->add_option("--height", b_height, "Synthetic reference height")->capture_default_str();
  build_cmd->add_option("--out", b_out, "Output directory")->required();
  build_cmd->add_option("--seed", b_seed, "Scene and noise seed (default: $VIQA_SEED or 1)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a quality predictor");
  std::string t_manifest, t_out, t_history;
  TrainFlags t_flags;
  train_cmd->add_option("--manifest", t_manifest, "Dataset manifest CSV")->required();
  train_cmd->add_option("--out", t_out, "Model file to write")->required();
  train_cmd->add_option("--history", t_history, "History JSON-lines file (default: <out>.history.jsonl)");
  t_flags.attach(train_cmd);

  // score
  auto* score_cmd = app.add_subcommand("score", "Predict the quality of one image");
  std::string s_model, s_image;
  score_cmd->add_option("--model", s_model, "Model file")->required();
  score_cmd->add_option("--image", s_image, "Distorted image")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "PLCC/SROCC/RMSE against manifest scores");
  std::string e_model, e_manifest, e_mode = "fold_mean";
  int e_kfold = 0;
  TrainFlags e_flags;
  eval_cmd->add_option("--manifest", e_manifest, "Dataset manifest CSV")->required();
  eval_cmd->add_option("--model", e_model, "Model file (without --kfold)");
  eval_cmd->add_option("--kfold", e_kfold, "Train and test with k scene-grouped folds");
  eval_cmd->add_option("--mode", e_mode, "Aggregate: fold_mean or pooled")
      ->check(CLI::IsMember({"fold_mean", "pooled"}))
      ->capture_default_str();
  e_flags.attach(eval_cmd);

  // saliency
  auto* sal_cmd = app.add_subcommand("saliency", "Guided-backprop saliency heatmap");
  std::string g_model, g_image, g_out;
  sal_cmd->add_option("--model", g_model, "Model file")->required();
  sal_cmd->add_option("--image", g_image, "Input image")->required();
  sal_cmd->add_option("--out", g_out, "Output PNG")->required();

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every gradient path");
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  gc_cmd->add_option("--seed", gc_seed, "Seed for the random test networks (default: $VIQA_SEED or 1)");
  gc_cmd->add_option("--tolerance", gc_tol, "Maximum accepted relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    const int threads = resolve_threads(threads_flag);

    if (*metrics_cmd) {
      std::vector<MetricId> ids;
      const std::vector<MetricId> all = {MetricId::psnr,   MetricId::ssim,    MetricId::ms_ssim, MetricId::vifp,
                                         MetricId::s_psnr, MetricId::ws_psnr, MetricId::cpp_psnr};
      if (m_which == "all") {
        ids = all;
      } else {
        std::stringstream ss(m_which);
        std::string name;
        while (std::getline(ss, name, ',')) {
          bool found = false;
          for (MetricId id : all) {
            if (metric_name(id) == name) {
              ids.push_back(id);
              found = true;
            }
          }
          if (!found) throw InputError("unknown metric '" + name + "'");
        }
      }
      json cfg;
      cfg["ref"] = m_ref;
      cfg["dist"] = m_dist;
      cfg["which"] = m_which;
      cfg["samples"] = m_samples;
      echo_config("metrics", cfg);

      const ImageBuffer ref = load_image(m_ref);
      const ImageBuffer dist = load_image(m_dist);
      SphericalMetricConfig scfg;
      scfg.s_psnr_samples = m_samples;
      json out, digests;
      for (MetricId id : ids) {
        MetricResult r;
        switch (id) {
          case MetricId::psnr: r = psnr(ref, dist); break;
          case MetricId::ssim: r = ssim(ref, dist); break;
          case MetricId::ms_ssim: r = ms_ssim(ref, dist); break;
          case MetricId::vifp: r = vifp(ref, dist); break;
          case MetricId::s_psnr: r = s_psnr(ref, dist, scfg); break;
          case MetricId::ws_psnr: r = ws_psnr(ref, dist); break;
          case MetricId::cpp_psnr: r = cpp_psnr(ref, dist, scfg); break;
        }
        const std::string name(metric_name(id));
        out[name] = metric_value(r);
        digests[name] = r.params_digest;
      }
      out["params_digest"] = digests;
      emit(out);
      return 0;
    }

    if (*distort_cmd) {
      DistortionSpec spec{parse_distortion(d_kind), d_strength, distort_cmd->count("--seed") ? d_seed : default_seed()};
      json cfg;
      cfg["in"] = d_in;
      cfg["out"] = d_out;
      cfg["kind"] = d_kind;
      cfg["strength"] = d_strength;
      cfg["seed"] = spec.seed;
      echo_config("distort", cfg);
      const ImageBuffer ref = load_image(d_in);
      save_image(distort(ref, spec), d_out);
      json out;
      out["out"] = d_out;
      out["kind"] = d_kind;
      out["strength"] = d_strength;
      emit(out);
      return 0;
    }

    if (*build_cmd) {
      const std::uint64_t seed = build_cmd->count("--seed") ? b_seed : default_seed();
      if ((b_synthetic > 0) == !b_refs.empty()) throw InputError("give exactly one of --refs or --synthetic");
      const auto ladder = default_ladder(seed);
      json cfg;
      cfg["out"] = b_out;
      cfg["seed"] = seed;
      cfg["threads"] = threads;
      if (b_synthetic > 0) {
        cfg["synthetic"] = b_synthetic;
        cfg["width"] = b_width;
        cfg["height"] = b_height;
      } else {
        cfg["refs"] = b_refs;
      }
      json ladder_json = json::array();
      for (const auto& s : ladder) ladder_json.push_back({{"kind", distortion_name(s.kind)}, {"strength", s.strength}});
      cfg["ladder"] = ladder_json;
      echo_config("build-dataset", cfg);

      BuildOptions opts;
      opts.threads = threads;
      fs::path manifest;
      if (b_synthetic > 0) {
        manifest = build_synthetic_dataset(b_synthetic, b_width, b_height, seed, ladder, b_out, opts);
      } else {
        std::vector<fs::path> refs(b_refs.begin(), b_refs.end());
        manifest = build_dataset(refs, ladder, b_out, opts);
      }
      json out;
      out["manifest"] = manifest.generic_string();
      out["rows"] = read_manifest(manifest).size();
      emit(out);
      return 0;
    }

    if (*train_cmd) {
      const TrainConfig cfg = t_flags.resolve(train_cmd, threads);
      const std::string history_path = t_history.empty() ? t_out + ".history.jsonl" : t_history;
      json cj = train_config_json(cfg);
      cj["manifest"] = t_manifest;
      cj["out"] = t_out;
      cj["history"] = history_path;
      echo_config("train", cj);

      const auto samples = load_dataset(t_manifest);
      TrainResult result = train(samples, cfg, nullptr, [](const EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " loss_p " << r.loss_p << " train_mse " << r.train_mse;
        if (r.loss_d) std::cerr << " loss_d " << *r.loss_d;
        std::cerr << '\n';
      });
      save_model({result.predictor, result.guider}, t_out);
      write_text(history_path, result.history.to_json_lines());
      json out;
      out["model"] = t_out;
      out["history"] = history_path;
      out["epochs"] = result.history.epochs.size();
      if (!result.history.epochs.empty()) out["final_train_mse"] = result.history.epochs.back().train_mse;
      emit(out);
      return 0;
    }

    if (*score_cmd) {
      json cfg;
      cfg["model"] = s_model;
      cfg["image"] = s_image;
      echo_config("score", cfg);
      const VriqaModel model = load_model(s_model);
      const ScoreBreakdown b = predict_score(model.predictor, load_image(s_image));
      json out;
      out["score"] = b.score;
      out["weights"] = b.weights;
      out["qualities"] = b.qualities;
      emit(out);
      return 0;
    }

    if (*eval_cmd) {
      const AggregateMode mode = e_mode == "pooled" ? AggregateMode::pooled : AggregateMode::fold_mean;
      if (e_kfold > 0) {
        if (!e_model.empty()) throw InputError("--model and --kfold are mutually exclusive");
        const TrainConfig cfg = e_flags.resolve(eval_cmd, threads);
        json cj = train_config_json(cfg);
        cj["manifest"] = e_manifest;
        cj["kfold"] = e_kfold;
        cj["mode"] = e_mode;
        echo_config("eval", cj);
        const auto samples = load_dataset(e_manifest);
        const CrossValidation cv = cross_validate(samples, e_kfold, cfg.seed, cfg, mode,
                                                  [](int fold, const EpochRecord& r) {
                                                    std::cerr << "fold " << fold << " epoch " << r.epoch
                                                              << " train_mse " << r.train_mse << '\n';
                                                  });
        std::cout << cv.report.to_json() << '\n';
      } else {
        if (e_model.empty()) throw InputError("eval needs --model or --kfold");
        json cj;
        cj["manifest"] = e_manifest;
        cj["model"] = e_model;
        cj["mode"] = e_mode;
        cj["threads"] = threads;
        echo_config("eval", cj);
        const VriqaModel model = load_model(e_model);
        const auto samples = load_dataset(e_manifest);
        std::vector<double> truth;
        for (const auto& s : samples) truth.push_back(s.mos);
        const auto predicted = predict_all(
            [&](const TrainSample& s) { return predict_score(model.predictor, *s.dist_image).score; }, samples,
            threads);
        std::cout << make_report({predicted}, {truth}, mode).to_json() << '\n';
      }
      return 0;
    }

    if (*sal_cmd) {
      json cfg;
      cfg["model"] = g_model;
      cfg["image"] = g_image;
      cfg["out"] = g_out;
      echo_config("saliency", cfg);
      const VriqaModel model = load_model(g_model);
      const ImageBuffer map = saliency_map(model.predictor, load_image(g_image));
      save_image(map, g_out);
      json out;
      out["out"] = g_out;
      out["width"] = map.width();
      out["height"] = map.height();
      emit(out);
      return 0;
    }

    if (*gc_cmd) {
      const std::uint64_t seed = gc_cmd->count("--seed") ? gc_seed : default_seed();
      json cfg;
      cfg["seed"] = seed;
      cfg["tolerance"] = gc_tol;
      cfg["h"] = 1e-4;
      echo_config("gradcheck", cfg);

      Rng rng(seed);
      json checks = json::array();
      double worst = 0.0;
      auto record = [&](const std::string& name, const nn::GradCheckResult& r) {
        checks.push_back({{"name", name},
                          {"max_rel_error", r.max_rel_error},
                          {"checked", r.checked},
                          {"skipped", r.skipped}});
        worst = std::max(worst, r.max_rel_error);
      };
      auto random_input = [&](std::vector<int> shape) {
        nn::Tensor t(std::move(shape));
        for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
        return t;
      };
      auto random_target = [&](std::size_t n) {
        nn::Tensor t({static_cast<int>(n)});
        for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
        return t;
      };
      {
        nn::Network net({nn::Layer::dense(5, 4)});
        nn::init_parameters(net, rng);
        record("dense_linear", nn::grad_check(net, nn::quadratic_loss(random_target(4)), random_input({5})));
      }
      {
        nn::Network net({nn::Layer::dense(6, 8), nn::Layer::activation(nn::LayerKind::relu), nn::Layer::dense(8, 6),
                         nn::Layer::activation(nn::LayerKind::relu), nn::Layer::dense(6, 3),
                         nn::Layer::activation(nn::LayerKind::softplus), nn::Layer::dense(3, 2),
                         nn::Layer::activation(nn::LayerKind::sigmoid)});
        nn::init_parameters(net, rng);
        record("dense_relu_stack", nn::grad_check(net, nn::quadratic_loss(random_target(2)), random_input({6})));
      }
      {
        nn::Network net({nn::Layer::local_mean_sub(1), nn::Layer::conv2d(2, 3, 3, 2), nn::Layer::activation(nn::LayerKind::relu),
                         nn::Layer::conv2d(3, 4, 3, 1), nn::Layer::activation(nn::LayerKind::relu),
                         nn::Layer::activation(nn::LayerKind::global_avg_pool), nn::Layer::dense(4, 2)});
        nn::init_parameters(net, rng);
        record("conv_pool_stack", nn::grad_check(net, nn::quadratic_loss(random_target(2)), random_input({2, 11, 11})));
      }
      const LossGradCheck losses = check_loss_gradients(seed);
      record("predictor_loss", losses.predictor);
      record("guider_loss", losses.guider);

      json out;
      out["checks"] = checks;
      out["worst_rel_error"] = worst;
      out["pass"] = worst <= gc_tol;
      emit(out);
      return worst <= gc_tol ? 0 : kExitNumeric;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
