#include "rdnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "rdnet/adam.hpp"
#include "rdnet/error.hpp"
#include "rdnet/image_io.hpp"
#include "rdnet/ops.hpp"

namespace rdnet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid boolean '" + value + "' for key '" + key + "' (use true or false)");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

KeyValues TrainConfig::parse_text(const std::string& text) {
  KeyValues out;
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected key=value, got '" + line + "'");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

KeyValues TrainConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

TrainConfig TrainConfig::from_pairs(const KeyValues& pairs) {
  TrainConfig c;
  for (const auto& [key, value] : pairs) {
    if (key == "stage") c.stage = parse_number<int>(key, value);
  }
  if (c.stage != 1 && c.stage != 2) throw ConfigError("stage must be 1 or 2");
  c.weights = c.stage == 1 ? LossWeights::stage1() : LossWeights::stage2();
  for (const auto& [key, value] : pairs) {
    if (key == "stage") {
    } else if (key == "learning_rate") {
      c.learning_rate = parse_number<double>(key, value);
    } else if (key == "batch_size") {
      c.batch_size = parse_number<int>(key, value);
    } else if (key == "epochs") {
      c.epochs = parse_number<int>(key, value);
    } else if (key == "max_steps") {
      c.max_steps = parse_number<std::int64_t>(key, value);
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "num_columns") {
      c.model.mcre.num_columns = parse_number<int>(key, value);
    } else if (key == "num_levels") {
      c.model.mcre.num_levels = parse_number<int>(key, value);
    } else if (key == "base_channels") {
      c.model.mcre.base_channels = parse_number<std::int64_t>(key, value);
    } else if (key == "channel_multiplier") {
      c.model.mcre.channel_multiplier = parse_number<int>(key, value);
    } else if (key == "gamma_min") {
      c.model.mcre.gamma_min = parse_number<double>(key, value);
    } else if (key == "use_prompt") {
      c.model.use_prompt = parse_bool(key, value);
    } else if (key == "adjust_input") {
      c.model.adjust_input = parse_bool(key, value);
    } else if (key == "setting") {
      if (value == "A") {
        c.model.use_prompt = false, c.model.adjust_input = false;
      } else if (value == "B") {
        c.model.use_prompt = false, c.model.adjust_input = true;
      } else if (value == "C") {
        c.model.use_prompt = true, c.model.adjust_input = true;
      } else if (value == "default") {
        c.model.use_prompt = true, c.model.adjust_input = false;
      } else {
        throw ConfigError("setting must be A, B, C or default, got '" + value + "'");
      }
    } else if (key == "c0") {
      c.weights.c0 = parse_number<double>(key, value);
    } else if (key == "c1") {
      c.weights.c1 = parse_number<double>(key, value);
    } else if (key == "c2") {
      c.weights.c2 = parse_number<double>(key, value);
    } else if (key == "perceptual_weight") {
      c.weights.perceptual = parse_number<double>(key, value);
    } else if (key == "perceptual_layer_weight") {
      c.weights.layer.fill(parse_number<double>(key, value));
    } else if (key == "dataset") {
      c.dataset = value;
    } else if (key == "checkpoint") {
      c.checkpoint = value;
    } else if (key == "stage1_checkpoint") {
      c.stage1_checkpoint = value;
    } else if (key == "loss_csv") {
      c.loss_csv = value;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "stage=" << stage << '\n'
     << "learning_rate=" << format_double(learning_rate) << '\n'
     << "batch_size=" << batch_size << '\n'
     << "epochs=" << epochs << '\n'
     << "max_steps=" << max_steps << '\n'
     << "seed=" << seed << '\n'
     << "num_columns=" << model.mcre.num_columns << '\n'
     << "num_levels=" << model.mcre.num_levels << '\n'
     << "base_channels=" << model.mcre.base_channels << '\n'
     << "channel_multiplier=" << model.mcre.channel_multiplier << '\n'
     << "gamma_min=" << format_double(model.mcre.gamma_min) << '\n'
     << "use_prompt=" << (model.use_prompt ? "true" : "false") << '\n'
     << "adjust_input=" << (model.adjust_input ? "true" : "false") << '\n'
     << "c0=" << format_double(weights.c0) << '\n'
     << "c1=" << format_double(weights.c1) << '\n'
     << "c2=" << format_double(weights.c2) << '\n'
     << "perceptual_weight=" << format_double(weights.perceptual) << '\n'
     << "perceptual_layer_weight=" << format_double(weights.layer[0]) << '\n'
     << "dataset=" << dataset << '\n'
     << "checkpoint=" << checkpoint << '\n'
     << "stage1_checkpoint=" << stage1_checkpoint << '\n'
     << "loss_csv=" << loss_csv << '\n';
  return os.str();
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (weights.layer[1] != weights.layer[0] || weights.layer[2] != weights.layer[0] ||
      weights.layer[3] != weights.layer[0]) {
    throw ConfigError("perceptual layer weights must be equal");
  }
  model.mcre.validate();
  weights.validate();
}

void write_loss_csv(std::ostream& out, const std::vector<double>& step_losses, std::int64_t steps_per_epoch) {
  out << kLossCsvHeader << '\n';
  char buf[64];
  for (std::size_t k = 0; k < step_losses.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.9g", step_losses[k]);
    out << (k + 1) << ',' << (static_cast<std::int64_t>(k) / steps_per_epoch + 1) << ',' << buf << '\n';
  }
}

int checkpoint_stage(const NamedArrays& checkpoint) {
  const auto kind = checkpoint.text("meta/kind");
  if (!kind) throw FormatError("not a checkpoint: missing meta/kind");
  if (*kind == "stage1") return 1;
  if (*kind == "stage2") return 2;
  throw FormatError("unknown checkpoint kind '" + *kind + "'");
}

TrainConfig checkpoint_config(const NamedArrays& checkpoint) {
  const auto text = checkpoint.text("meta/config");
  if (!text) throw FormatError("checkpoint has no meta/config");
  return TrainConfig::from_pairs(TrainConfig::parse_text(*text));
}

std::int64_t checkpoint_step(const NamedArrays& checkpoint) {
  const auto text = checkpoint.text("meta/step");
  if (!text) throw FormatError("checkpoint has no meta/step");
  return parse_number<std::int64_t>("meta/step", *text);
}

namespace {

constexpr const char* kEstimatorPrefix = "tapg/estimator/";

Tensor<float> as_batch(const Tensor<float>& image) {
  return Tensor<float>::from_data({1, image.dim(0), image.dim(1), image.dim(2)},
                                  std::vector<float>(image.data().begin(), image.data().end()));
}

Tensor<float> gather(const std::vector<SynthSample>& samples, const std::vector<std::size_t>& idx,
                     Tensor<float> SynthSample::*field) {
  std::vector<Tensor<float>> items;
  for (auto k : idx) items.push_back(as_batch(samples[k].*field));
  return concat_batch(items);
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<Parameter<float>*> trainable(ParameterStore<float>& store, const TrainConfig& cfg) {
  std::vector<Parameter<float>*> out;
  for (auto& p : store.all()) {
    if (cfg.stage == 1) {
      if (p.name.starts_with(kEstimatorPrefix)) out.push_back(&p);
      continue;
    }
    if (p.name.starts_with(kEstimatorPrefix)) continue;
    if (!cfg.model.use_prompt && p.name.starts_with("tapg/mlp/")) continue;
    out.push_back(&p);
  }
  return out;
}

NamedArrays build_checkpoint(const ParameterStore<float>& store, const Adam<float>& adam, const TrainConfig& cfg,
                             std::string_view prefix) {
  NamedArrays ck;
  ck.add_text("meta/kind", cfg.stage == 1 ? "stage1" : "stage2");
  ck.add_text("meta/step", std::to_string(adam.steps()));
  ck.add_text("meta/config", cfg.to_text());
  store.append_to(ck, prefix);
  adam.append_state(ck);
  return ck;
}

template <typename StepFn>
TrainResult run_loop(const TrainConfig& cfg, std::size_t count, StepFn&& step) {
  if (count == 0) throw ValueError("training dataset is empty");
  TrainResult result;
  Rng order(cfg.seed ^ 0x0D0E5EEDULL);
  std::vector<std::size_t> idx(count);
  for (std::size_t k = 0; k < count; ++k) idx[k] = k;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::int64_t steps = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(idx, order);
    double total = 0;
    int n = 0;
    for (std::size_t b = 0; b < count; b += batch) {
      std::vector<std::size_t> chosen(idx.begin() + static_cast<std::ptrdiff_t>(b),
                                      idx.begin() + static_cast<std::ptrdiff_t>(std::min(count, b + batch)));
      const double loss = step(chosen);
      if (!std::isfinite(loss)) throw NonFiniteError("training loss became non-finite at step " + std::to_string(steps + 1));
      result.step_losses.push_back(loss);
      total += loss;
      ++n;
      if (cfg.max_steps > 0 && ++steps >= cfg.max_steps) break;
    }
    result.epoch_means.push_back(total / n);
    if (cfg.max_steps > 0 && steps >= cfg.max_steps) break;
  }
  return result;
}

}  // namespace

TrainResult train_stage1(const TrainConfig& config, const std::vector<SynthSample>& samples) {
  auto cfg = config;
  cfg.stage = 1;
  cfg.validate();
  std::vector<Tensor<float>> labels;
  for (const auto& s : samples) {
    labels.push_back(rates_to_tensor<float>({closed_form_fit(s.transmission, s.mixture)}));
  }
  ParameterStore<float> store(cfg.seed);
  RateEstimator<float> estimator(store);
  Adam<float> adam(trainable(store, cfg), {cfg.learning_rate});
  auto result = run_loop(cfg, samples.size(), [&](const std::vector<std::size_t>& idx) {
    std::vector<Tensor<float>> y;
    for (auto k : idx) y.push_back(labels[k]);
    store.zero_grad();
    auto loss = mean(square(sub(estimator.forward(gather(samples, idx, &SynthSample::mixture)), concat_batch(y))));
    backward(loss);
    adam.step();
    return static_cast<double>(loss.item());
  });
  result.checkpoint = build_checkpoint(store, adam, cfg, kEstimatorPrefix);
  return result;
}

TrainResult train_stage2(const TrainConfig& config, const std::vector<SynthSample>& samples,
                         const NamedArrays& stage1_checkpoint) {
  auto cfg = config;
  cfg.stage = 2;
  cfg.validate();
  if (checkpoint_stage(stage1_checkpoint) != 1) throw FormatError("stage-2 training needs a stage-1 checkpoint");
  RdNet<float> model(cfg.model, cfg.seed);
  model.parameters().import_arrays(stage1_checkpoint, kEstimatorPrefix);
  for (auto* p : model.parameters().with_prefix(kEstimatorPrefix)) p->tensor.set_requires_grad(false);
  Adam<float> adam(trainable(model.parameters(), cfg), {cfg.learning_rate});
  const PerceptualExtractor<float> extractor;
  if (!samples.empty()) model.encoder().check_image(as_batch(samples[0].mixture));
  auto result = run_loop(cfg, samples.size(), [&](const std::vector<std::size_t>& idx) {
    model.parameters().zero_grad();
    const double loss = model.reversible_backward(gather(samples, idx, &SynthSample::mixture),
                                                  gather(samples, idx, &SynthSample::transmission),
                                                  gather(samples, idx, &SynthSample::reflection), cfg.weights,
                                                  extractor);
    adam.step();
    project_gammas(model.parameters(), cfg.model.mcre.gamma_min);
    return loss;
  });
  result.checkpoint = build_checkpoint(model.parameters(), adam, cfg, "");
  return result;
}

TrainResult run_training(const TrainConfig& config) {
  if (config.dataset.empty()) throw ConfigError("dataset path is required");
  const auto samples = load_dataset(NamedArrays::read(config.dataset));
  TrainResult result;
  if (config.stage == 1) {
    result = train_stage1(config, samples);
  } else {
    if (config.stage1_checkpoint.empty()) throw ConfigError("stage 2 requires stage1_checkpoint");
    result = train_stage2(config, samples, NamedArrays::read(config.stage1_checkpoint));
  }
  if (!config.checkpoint.empty()) result.checkpoint.write(config.checkpoint);
  if (!config.loss_csv.empty()) {
    std::ofstream out(config.loss_csv, std::ios::binary);
    if (!out) throw IoError("cannot write loss log '" + config.loss_csv + "'");
    const auto per_epoch = static_cast<std::int64_t>((samples.size() + config.batch_size - 1) / config.batch_size);
    write_loss_csv(out, result.step_losses, per_epoch);
  }
  return result;
}

std::unique_ptr<RdNet<float>> load_model(const NamedArrays& checkpoint) {
  if (checkpoint_stage(checkpoint) != 2) {
    throw FormatError("a stage-2 checkpoint is required for the full model");
  }
  const auto cfg = checkpoint_config(checkpoint);
  auto model = std::make_unique<RdNet<float>>(cfg.model, cfg.seed);
  model->parameters().import_arrays(checkpoint);
  return model;
}

std::unique_ptr<RdNet<float>> load_estimator_model(const NamedArrays& checkpoint) {
  checkpoint_stage(checkpoint);
  const auto cfg = checkpoint_config(checkpoint);
  auto model = std::make_unique<RdNet<float>>(cfg.model, cfg.seed);
  model->parameters().import_arrays(checkpoint, kEstimatorPrefix);
  return model;
}

NamedArrays reserialize_checkpoint(const NamedArrays& checkpoint) {
  const int stage = checkpoint_stage(checkpoint);
  const auto cfg = checkpoint_config(checkpoint);
  const auto step = checkpoint_step(checkpoint);
  if (stage == 1) {
    ParameterStore<float> store(cfg.seed);
    RateEstimator<float> estimator(store);
    store.import_arrays(checkpoint, kEstimatorPrefix);
    Adam<float> adam(trainable(store, cfg), {cfg.learning_rate});
    adam.load_state(checkpoint, step);
    return build_checkpoint(store, adam, cfg, kEstimatorPrefix);
  }
  auto model = load_model(checkpoint);
  Adam<float> adam(trainable(model->parameters(), cfg), {cfg.learning_rate});
  adam.load_state(checkpoint, step);
  return build_checkpoint(model->parameters(), adam, cfg, "");
}

Decomposition decompose(const RdNet<float>& model, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("decompose expects a 3 x H x W image, got " + to_string(image.shape()));
  }
  const auto div = model.config().mcre.spatial_divisor();
  const auto h = image.dim(1), w = image.dim(2);
  const auto ph = (div - h % div) % div, pw = (div - w % div) % div;
  NoGradGuard guard;
  auto x = as_batch(image);
  if (ph || pw) x = reflect_pad(x, ph, pw);
  Decomposition d;
  d.rate = model.estimator().estimate(x)[0];
  auto pair = model.infer(x);
  auto unbatch = [&](const Tensor<float>& t) {
    auto c = crop(t, h, w);
    return Tensor<float>::from_data({3, h, w}, std::vector<float>(c.data().begin(), c.data().end()));
  };
  d.transmission = unbatch(pair.transmission);
  d.reflection = unbatch(pair.reflection);
  return d;
}

InferPaths infer_to_files(const RdNet<float>& model, const std::filesystem::path& image_path,
                          const std::filesystem::path& out_dir, const std::string& extension) {
  if (extension != "png" && extension != "ppm") throw ConfigError("output format must be png or ppm");
  const auto image = read_image(image_path);
  const auto d = decompose(model, image);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
  const auto stem = image_path.stem().string();
  InferPaths paths{out_dir / (stem + "_T." + extension), out_dir / (stem + "_R." + extension),
                   out_dir / (stem + "_rate.txt")};
  write_image(paths.transmission, d.transmission);
  write_image(paths.reflection, d.reflection);
  std::string text = "alpha_R\talpha_G\talpha_B\tbeta_R\tbeta_G\tbeta_B\n";
  char buf[64];
  const auto values = d.rate.to_array();
  for (std::size_t k = 0; k < values.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%s%.9g", k ? "\t" : "", values[k]);
    text += buf;
  }
  text += '\n';
  write_file_bytes(paths.rate, std::vector<std::uint8_t>(text.begin(), text.end()));
  return paths;
}

std::vector<MetricsRow> evaluate(const RdNet<float>& model, const std::vector<SynthSample>& samples) {
  std::vector<MetricsRow> rows;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto d = decompose(model, samples[k].mixture);
    rows.push_back({"sample" + std::to_string(k), psnr(d.transmission, samples[k].transmission),
                    ssim(d.transmission, samples[k].transmission)});
  }
  return rows;
}

std::vector<EstimatorRow> evaluate_estimator(const RdNet<float>& model, const std::vector<SynthSample>& samples) {
  std::vector<EstimatorRow> rows;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    const auto x = as_batch(s.mixture);
    const auto predicted = model.estimator().forward(x).detach();
    const auto est = rates_from_tensor(predicted)[0].to_array();
    const auto fit = closed_form_fit(s.transmission, s.mixture).to_array();
    const auto truth = s.rate.to_array();
    EstimatorRow row;
    row.sample_id = "sample" + std::to_string(k);
    for (int i = 0; i < 6; ++i) {
      row.mae_fit += std::abs(est[i] - fit[i]) / 6.0;
      row.mae_synth += std::abs(est[i] - truth[i]) / 6.0;
    }
    row.psnr_input = psnr(s.mixture, s.transmission);
    row.psnr_corrected = psnr(adjust_input(x, predicted), as_batch(s.transmission));
    rows.push_back(row);
  }
  return rows;
}

void write_estimator_csv(std::ostream& out, const std::vector<EstimatorRow>& rows) {
  out << kEstimatorHeader << '\n';
  double sums[4] = {0, 0, 0, 0};
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9f,%.9f,%.9f,%.9f", r.mae_fit, r.mae_synth, r.psnr_input, r.psnr_corrected);
    out << r.sample_id << ',' << buf << '\n';
    sums[0] += r.mae_fit, sums[1] += r.mae_synth, sums[2] += r.psnr_input, sums[3] += r.psnr_corrected;
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  std::snprintf(buf, sizeof buf, "%.9f,%.9f,%.9f,%.9f", sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n);
  out << "mean," << buf << '\n';
}

std::vector<double> roundtrip_errors(const RdNet<float>& model, const Tensor<float>& image) {
  NoGradGuard guard;
  const auto x = image.rank() == 3 ? as_batch(image) : image;
  const auto f = model.forward(x);
  const int n = model.config().mcre.num_columns;
  std::vector<double> errors(static_cast<std::size_t>(n), 0.0);
  PyramidState<float> current = f.pyramids.back();
  for (int i = n; i >= 1; --i) {
    current = model.encoder().reconstruct_column(i, current, f.embedding);
    const auto& stored = i == 1 ? f.phe : f.pyramids[static_cast<std::size_t>(i - 2)];
    double worst = 0;
    for (std::size_t j = 0; j < stored.size(); ++j) worst = std::max(worst, max_relative_error(current[j], stored[j]));
    errors[static_cast<std::size_t>(i - 1)] = worst;
  }
  return errors;
}

}  // namespace rdnet
