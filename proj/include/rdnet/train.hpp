#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rdnet/losses.hpp"
#include "rdnet/metrics.hpp"
#include "rdnet/model.hpp"
#include "rdnet/named_arrays.hpp"
#include "rdnet/synth.hpp"

namespace rdnet {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct TrainConfig {
  int stage = 1;
  double learning_rate = 1e-4;
  int batch_size = 2;
  int epochs = 20;
  std::int64_t max_steps = 0;  // 0: run all epochs
  std::uint64_t seed = kDefaultSeed;
  ModelConfig model;
  LossWeights weights = LossWeights::stage1();
  std::string dataset;
  std::string checkpoint;         // output path
  std::string stage1_checkpoint;  // stage 2 input
  std::string loss_csv;

  // Applies key=value pairs in order on top of the defaults. "stage" is read
  // first so the matching loss preset is in place before explicit
  // coefficients. "setting" expands A/B/C/default into use_prompt and
  // adjust_input. Unknown keys and malformed values raise ConfigError.
  static TrainConfig from_pairs(const KeyValues& pairs);
  // UTF-8 key=value lines; '#' starts a comment; blank lines are skipped.
  static KeyValues parse_text(const std::string& text);
  static KeyValues parse_file(const std::filesystem::path& path);

  // Canonical key=value text; parse_text(to_text()) rebuilds the same config.
  std::string to_text() const;
  void validate() const;
};

inline constexpr const char* kLossCsvHeader = "step,epoch,loss";

struct TrainResult {
  NamedArrays checkpoint;
  std::vector<double> step_losses;
  std::vector<double> epoch_means;
};

// Stage 1: estimator regression onto per-sample closed-form rate fits.
TrainResult train_stage1(const TrainConfig& config, const std::vector<SynthSample>& samples);
// Stage 2: everything except the estimator, which is loaded from the
// stage-1 checkpoint and kept frozen.
TrainResult train_stage2(const TrainConfig& config, const std::vector<SynthSample>& samples,
                         const NamedArrays& stage1_checkpoint);
// Reads config.dataset (and config.stage1_checkpoint for stage 2), trains,
// then writes config.checkpoint and config.loss_csv when set.
TrainResult run_training(const TrainConfig& config);

void write_loss_csv(std::ostream& out, const std::vector<double>& step_losses, std::int64_t steps_per_epoch);

int checkpoint_stage(const NamedArrays& checkpoint);
TrainConfig checkpoint_config(const NamedArrays& checkpoint);
std::int64_t checkpoint_step(const NamedArrays& checkpoint);

// Rebuilds the model recorded in a stage-2 checkpoint.
std::unique_ptr<RdNet<float>> load_model(const NamedArrays& checkpoint);
// Estimator-only view of a stage-1 or stage-2 checkpoint.
std::unique_ptr<RdNet<float>> load_estimator_model(const NamedArrays& checkpoint);
// Loads every parameter and optimizer moment, then serialises again; the
// result must equal the input byte for byte.
NamedArrays reserialize_checkpoint(const NamedArrays& checkpoint);

struct Decomposition {
  Tensor<float> transmission;  // 3 x H x W, unclamped
  Tensor<float> reflection;
  TransmissionRate rate;
};

// Reflect-pads to a multiple of 2^L, runs the final column, crops back.
Decomposition decompose(const RdNet<float>& model, const Tensor<float>& image);

struct InferPaths {
  std::filesystem::path transmission, reflection, rate;
};
// Writes <stem>_T.<ext>, <stem>_R.<ext> (clamped, 8-bit) and <stem>_rate.txt.
InferPaths infer_to_files(const RdNet<float>& model, const std::filesystem::path& image_path,
                          const std::filesystem::path& out_dir, const std::string& extension = "png");

std::vector<MetricsRow> evaluate(const RdNet<float>& model, const std::vector<SynthSample>& samples);

struct EstimatorRow {
  std::string sample_id;
  double mae_fit = 0.0;     // against closed_form_fit(T, I)
  double mae_synth = 0.0;   // against the synthesizer's parameters
  double psnr_input = 0.0;  // PSNR(I, T)
  double psnr_corrected = 0.0;
};
inline constexpr const char* kEstimatorHeader = "sample_id,mae_fit,mae_synth,psnr_input,psnr_corrected";
std::vector<EstimatorRow> evaluate_estimator(const RdNet<float>& model, const std::vector<SynthSample>& samples);
void write_estimator_csv(std::ostream& out, const std::vector<EstimatorRow>& rows);

// Encodes, then walks the reverse path from the last pyramid down to the
// extractor pyramid (index 0), chaining reconstructions. Entry i is the max
// relative error of the rebuilt pyramid of column i against the stored one.
std::vector<double> roundtrip_errors(const RdNet<float>& model, const Tensor<float>& image);

}  // namespace rdnet
