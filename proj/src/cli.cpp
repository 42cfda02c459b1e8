#include "rdnet/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <memory>

#include "rdnet/diagnostics.hpp"
#include "rdnet/error.hpp"
#include "rdnet/image_io.hpp"
#include "rdnet/synth.hpp"
#include "rdnet/train.hpp"

namespace rdnet {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Training flags carry the config key with '_' spelled '-'.
constexpr const char* kConfigKeys[] = {
    "learning_rate", "batch_size",   "epochs",     "max_steps", "seed",
    "num_columns",   "num_levels",   "base_channels", "channel_multiplier", "gamma_min",
    "use_prompt",    "adjust_input", "setting",    "c0",        "c1",
    "c2",            "perceptual_weight", "perceptual_layer_weight", "dataset", "checkpoint",
    "stage1_checkpoint", "loss_csv"};

struct TrainFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file; flags override it");
    for (const char* key : kConfigKeys) {
      std::string flag = key;
      for (auto& c : flag) c = c == '_' ? '-' : c;
      options.emplace_back(key, app->add_option("--" + flag, values[key]));
    }
  }

  TrainConfig resolve(int stage) const {
    KeyValues pairs;
    if (!config_file.empty()) pairs = TrainConfig::parse_file(config_file);
    for (const auto& [key, value] : pairs) {
      if (key == "stage" && value != std::to_string(stage)) {
        throw ConfigError("config file sets stage=" + value + " but the command trains stage " +
                          std::to_string(stage));
      }
    }
    pairs.emplace_back("stage", std::to_string(stage));
    for (const auto& [key, option] : options) {
      if (option->count() > 0) pairs.emplace_back(key, values.at(key));
    }
    return TrainConfig::from_pairs(pairs);
  }
};

void write_text_file(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::ostream& open_output(const std::string& path, std::ofstream& file, std::ostream& fallback) {
  if (path.empty() || path == "-") return fallback;
  file.open(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  return file;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reflection removal with a reversible multi-column network"};
  app.require_subcommand(1);

  DatasetOptions synth_opts;
  std::string synth_out, synth_manifest, synth_source;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset container");
  synth->add_option("--out", synth_out, "output container")->required();
  synth->add_option("--manifest", synth_manifest, "output manifest (tab-separated)");
  synth->add_option("--count", synth_opts.count, "number of samples")->required();
  synth->add_option("--seed", synth_opts.seed);
  synth->add_option("--height", synth_opts.height);
  synth->add_option("--width", synth_opts.width);
  synth->add_option("--source-dir", synth_source, "directory of source images; default procedural textures");
  synth->add_flag("--zero-reflection", synth_opts.zero_reflection, "R = 0 and no blur");
  synth->add_option("--max-blur", synth_opts.max_blur_sigma, "largest reflection blur sigma");

  TrainFlags stage1_flags, stage2_flags;
  auto* stage1 = app.add_subcommand("train-stage1", "Train the transmission-rate estimator");
  stage1_flags.attach(stage1);
  auto* stage2 = app.add_subcommand("train-stage2", "Train the decomposition network");
  stage2_flags.attach(stage2);

  std::string infer_ckpt, infer_dir, infer_format = "png";
  std::vector<std::string> infer_inputs;
  auto* infer = app.add_subcommand("infer", "Decompose images into transmission and reflection");
  infer->add_option("--checkpoint", infer_ckpt, "stage-2 checkpoint")->required();
  infer->add_option("--input", infer_inputs, "input image (PNG or PPM); repeatable")->required();
  infer->add_option("--out-dir", infer_dir)->required();
  infer->add_option("--format", infer_format, "png or ppm");

  std::string eval_ckpt, eval_dataset, eval_out;
  auto* eval = app.add_subcommand("eval", "Per-sample metrics CSV over a dataset container");
  eval->add_option("--checkpoint", eval_ckpt, "stage-1 checkpoint: estimator metrics; stage-2: PSNR/SSIM")
      ->required();
  eval->add_option("--dataset", eval_dataset)->required();
  eval->add_option("--out", eval_out, "CSV path; default stdout");

  std::string diag_ckpt, diag_input;
  std::uint64_t diag_seed = kDefaultSeed;
  std::int64_t diag_size = 32;
  ModelConfig diag_model;
  diag_model.mcre.num_columns = 2;
  diag_model.mcre.num_levels = 3;
  diag_model.mcre.base_channels = 8;
  auto* diag = app.add_subcommand("diag-roundtrip", "Per-column reconstruction error of the encoder");
  diag->add_option("--checkpoint", diag_ckpt, "stage-2 checkpoint; omitted: freshly initialised model");
  diag->add_option("--input", diag_input, "image; omitted: seeded uniform noise");
  diag->add_option("--seed", diag_seed);
  diag->add_option("--size", diag_size, "noise image side");
  diag->add_option("--num-columns", diag_model.mcre.num_columns);
  diag->add_option("--num-levels", diag_model.mcre.num_levels);
  diag->add_option("--base-channels", diag_model.mcre.base_channels);

  PipelineCheckOptions gc;
  double gc_tolerance = 1e-4;
  std::string gc_stencil = "five-point";
  auto* gradcheck = app.add_subcommand("grad-check", "Finite-difference check of the full training loss");
  gradcheck->add_option("--num-columns", gc.num_columns);
  gradcheck->add_option("--num-levels", gc.num_levels);
  gradcheck->add_option("--base-channels", gc.base_channels);
  gradcheck->add_option("--size", gc.size);
  gradcheck->add_option("--seed", gc.seed);
  gradcheck->add_option("--eps", gc.eps);
  gradcheck->add_option("--samples", gc.samples_per_param, "coordinates per parameter tensor");
  gradcheck->add_option("--stencil", gc_stencil)->check(CLI::IsMember({"central", "five-point"}));
  gradcheck->add_option("--tolerance", gc_tolerance);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error\tusage\t" << e.what() << '\n';
    return 2;
  }

  try {
    if (synth->parsed()) {
      synth_opts.source_dir = synth_source;
      const auto ds = build_dataset(synth_opts);
      for (const auto& w : ds.warnings) err << "warning\t" << w << '\n';
      ds.container.write(synth_out);
      if (!synth_manifest.empty()) write_text_file(synth_manifest, ds.manifest);
      out << "samples\t" << dataset_size(ds.container) << '\n';
    } else if (stage1->parsed() || stage2->parsed()) {
      const auto cfg = stage1->parsed() ? stage1_flags.resolve(1) : stage2_flags.resolve(2);
      const auto result = run_training(cfg);
      for (std::size_t e = 0; e < result.epoch_means.size(); ++e) {
        out << "epoch\t" << (e + 1) << '\t' << fmt(result.epoch_means[e]) << '\n';
      }
      out << "steps\t" << result.step_losses.size() << '\n';
      out << "final_loss\t" << fmt(result.step_losses.empty() ? 0.0 : result.step_losses.back()) << '\n';
      if (!cfg.checkpoint.empty()) out << "checkpoint\t" << cfg.checkpoint << '\n';
    } else if (infer->parsed()) {
      const auto model = load_model(NamedArrays::read(infer_ckpt));
      for (const auto& input : infer_inputs) {
        const auto paths = infer_to_files(*model, input, infer_dir, infer_format);
        out << input << '\t' << paths.transmission.string() << '\t' << paths.reflection.string() << '\t'
            << paths.rate.string() << '\n';
      }
    } else if (eval->parsed()) {
      const auto ckpt = NamedArrays::read(eval_ckpt);
      const auto samples = load_dataset(NamedArrays::read(eval_dataset));
      std::ofstream file;
      auto& sink = open_output(eval_out, file, out);
      if (checkpoint_stage(ckpt) == 1) {
        write_estimator_csv(sink, evaluate_estimator(*load_estimator_model(ckpt), samples));
      } else {
        write_metrics_csv(sink, evaluate(*load_model(ckpt), samples));
      }
    } else if (diag->parsed()) {
      std::unique_ptr<RdNet<float>> model =
          diag_ckpt.empty() ? std::make_unique<RdNet<float>>(diag_model, diag_seed)
                            : load_model(NamedArrays::read(diag_ckpt));
      Tensor<float> image;
      if (diag_input.empty()) {
        Rng rng(diag_seed);
        std::vector<float> v(static_cast<std::size_t>(3 * diag_size * diag_size));
        for (auto& x : v) x = static_cast<float>(rng.uniform());
        image = Tensor<float>::from_data({3, diag_size, diag_size}, std::move(v));
      } else {
        image = read_image(diag_input);
      }
      const auto errors = roundtrip_errors(*model, image);
      out << "column\tmax_relative_error\n";
      for (std::size_t i = 0; i < errors.size(); ++i) out << (i + 1) << '\t' << fmt(errors[i]) << '\n';
    } else if (gradcheck->parsed()) {
      gc.stencil = gc_stencil == "central" ? Stencil::kCentral : Stencil::kFivePoint;
      const auto report = pipeline_grad_check(gc);
      out << "coordinates\t" << report.coordinates << '\n'
          << "max_relative_error\t" << fmt(report.max_relative_error) << '\n'
          << "worst\t" << report.worst_parameter << '[' << report.worst_index << "]\t"
          << fmt(report.worst_analytic) << '\t' << fmt(report.worst_numeric) << '\n'
          << "step_shrinks\t" << report.step_shrinks << '\n'
          << "kinked_coordinates\t" << report.kinked_coordinates << '\n';
      if (!(report.max_relative_error < gc_tolerance)) {
        err << "error\tgrad_check\tmax relative error " << fmt(report.max_relative_error)
            << " exceeds tolerance " << fmt(gc_tolerance) << '\n';
        return 1;
      }
    }
  } catch (const Error& e) {
    err << "error\t" << e.kind() << '\t' << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error\tinternal\t" << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace rdnet
