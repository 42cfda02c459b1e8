// One line per acceptance criterion; exit status is nonzero if any fails.
#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rdnet/cli.hpp"
#include "rdnet/diagnostics.hpp"
#include "rdnet/image_io.hpp"
#include "rdnet/metrics.hpp"
#include "rdnet/ops.hpp"
#include "rdnet/train.hpp"

#include <unistd.h>

namespace fs = std::filesystem;
using namespace rdnet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

ModelConfig desk_model(int columns = 2) {
  ModelConfig m;
  m.mcre.num_columns = columns;
  m.mcre.num_levels = 3;
  m.mcre.base_channels = 8;
  return m;
}

template <typename Real>
Tensor<Real> uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<Real> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(lo, hi));
  return Tensor<Real>::from_data(std::move(shape), std::move(v));
}

Tensor<float> batch1(const Tensor<float>& t) {
  return Tensor<float>::from_data({1, t.dim(0), t.dim(1), t.dim(2)}, std::vector<float>(t.data().begin(), t.data().end()));
}

fs::path scratch_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("rdnet_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string field(const std::string& out, const std::string& key) {
  std::istringstream is(out);
  std::string line;
  while (std::getline(is, line)) {
    if (line.starts_with(key + "\t")) return line.substr(key.size() + 1);
  }
  return "";
}

// 1. level_reverse inverts level_forward on every cell of both columns.
template <typename Real>
double worst_level_round_trip(int draws, std::uint64_t seed) {
  double worst = 0;
  Rng rng(seed);
  for (int d = 0; d < draws; ++d) {
    ParameterStore<Real> store(seed + static_cast<std::uint64_t>(d));
    const auto cfg = desk_model().mcre;
    Mcre<Real> mcre(cfg, store);
    randomize_channel_scales(store, rng);
    const auto emb = uniform<Real>({1, 8, 16, 16}, rng, -1, 1);
    PyramidState<Real> prev;
    for (int j = 0; j < 3; ++j) prev.features.push_back(uniform<Real>({1, 8 << j, 16 >> j, 16 >> j}, rng, -1, 1));
    for (int column = 1; column <= 2; ++column) {
      const auto next = mcre.column_forward(column, emb, prev);
      for (int j = 0; j < 3; ++j) {
        const auto& below = j == 0 ? emb : next[static_cast<std::size_t>(j - 1)];
        const Tensor<Real> above = j < 2 ? prev[static_cast<std::size_t>(j + 1)] : Tensor<Real>();
        const auto back = level_reverse(next[static_cast<std::size_t>(j)], below, above, mcre.level(column, j),
                                        cfg.gamma_min);
        worst = std::max(worst, max_relative_error(back, prev[static_cast<std::size_t>(j)]));
      }
      const auto rebuilt = mcre.reconstruct_column(column, next, emb);
      for (int j = 0; j < 3; ++j) {
        worst = std::max(worst, max_relative_error(rebuilt[static_cast<std::size_t>(j)], prev[static_cast<std::size_t>(j)]));
      }
      prev = next;
    }
  }
  return worst;
}

Outcome reversibility() {
  const double f = worst_level_round_trip<float>(100, 1000);
  const double d = worst_level_round_trip<double>(100, 2000);
  return {f < 1e-5 && d < 1e-10, "float32 " + sci(f) + " < 1e-05, float64 " + sci(d) + " < 1e-10 over 100 draws"};
}

// 2. Gradients through reconstruct_column-based backward against stored activations.
template <typename Real>
double recompute_vs_stored(std::uint64_t seed) {
  RdNet<Real> model(desk_model(), seed);
  Rng rng(seed + 1);
  randomize_channel_scales(model.parameters(), rng);
  const PerceptualExtractor<Real> ext;
  const auto image = uniform<Real>({1, 3, 32, 32}, rng, 0, 1);
  const auto t = uniform<Real>({1, 3, 32, 32}, rng, 0, 1);
  const auto r = uniform<Real>({1, 3, 32, 32}, rng, 0, 1);
  const auto w = LossWeights::stage2();
  auto& params = model.parameters().all();
  model.parameters().zero_grad();
  backward(model.loss(image, t, r, w, ext));
  std::vector<std::vector<double>> stored;
  for (auto& p : params) stored.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  model.parameters().zero_grad();
  model.reversible_backward(image, t, r, w, ext);
  double worst = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (stored[k].empty()) continue;
    const auto g = params[k].tensor.grad();
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < stored[k].size(); ++i) {
      diff = std::max(diff, std::abs(stored[k][i] - static_cast<double>(g[i])));
      scale = std::max(scale, std::abs(stored[k][i]));
    }
    if (scale > 0) worst = std::max(worst, diff / scale);
  }
  return worst;
}

Outcome recomputation() {
  const double f = recompute_vs_stored<float>(31);
  const double d = recompute_vs_stored<double>(31);
  return {f < 1e-4, "worst per-tensor relative gradient difference float32 " + sci(f) + " < 1e-04 (float64 " +
                        sci(d) + ")"};
}

// 3. Finite differences over the full pipeline on 1x3x32x32 in double.
Outcome gradient_check() {
  const auto report = pipeline_grad_check({});
  return {report.max_relative_error < 1e-4,
          "max relative error " + sci(report.max_relative_error) + " < 1e-04 over " +
              std::to_string(report.coordinates) + " coordinates (worst " + report.worst_parameter + ", " +
              std::to_string(report.step_shrinks) + " stencils shrunk at abs kinks, " +
              std::to_string(report.kinked_coordinates) + " unresolved)"};
}

// 4. Closed-form fit against exact pairs and an Eigen normal-equations solve.
Outcome closed_form() {
  Rng rng(4);
  double exact = 0, noisy = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto t = uniform<double>({1, 3, 16, 16}, rng, 0, 1);
    TransmissionRate truth;
    for (int c = 0; c < 3; ++c) truth.alpha[c] = rng.uniform(0.05, 2.0), truth.beta[c] = rng.uniform(-1, 1);
    std::vector<double> clean(t.data().begin(), t.data().end()), dirty = clean;
    for (std::size_t k = 0; k < clean.size(); ++k) {
      const auto c = k / 256;
      clean[k] = truth.alpha[c] * clean[k] + truth.beta[c];
      dirty[k] = clean[k] + 0.01 * rng.normal();
    }
    const auto fit = closed_form_fit(t, Tensor<double>::from_data(t.shape(), clean));
    const auto fit_noisy = closed_form_fit(t, Tensor<double>::from_data(t.shape(), dirty));
    for (int c = 0; c < 3; ++c) {
      exact = std::max({exact, std::abs(fit.alpha[c] - truth.alpha[c]), std::abs(fit.beta[c] - truth.beta[c])});
      Eigen::MatrixXd a(256, 2);
      Eigen::VectorXd y(256);
      for (int i = 0; i < 256; ++i) {
        a(i, 0) = t[c * 256 + i];
        a(i, 1) = 1.0;
        y(i) = dirty[static_cast<std::size_t>(c * 256 + i)];
      }
      const Eigen::Vector2d sol = (a.transpose() * a).ldlt().solve(a.transpose() * y);
      noisy = std::max({noisy, std::abs(fit_noisy.alpha[c] - sol(0)), std::abs(fit_noisy.beta[c] - sol(1))});
    }
  }
  return {exact < 1e-6 && noisy < 1e-6,
          "noiseless max error " + sci(exact) + " < 1e-06, sigma=0.01 vs normal equations " + sci(noisy) + " < 1e-06"};
}

// Shared between criteria 5, 6 and 7.
NamedArrays g_stage1, g_stage2;

// 5. Stage-1 estimator on 200 samples for 5 epochs at the default rate and batch.
Outcome stage1_estimator() {
  const auto train = load_dataset(build_dataset({200, 0}).container);
  const auto held_out = load_dataset(build_dataset({200, 1}).container);
  TrainConfig cfg;
  cfg.seed = 0;
  cfg.epochs = 5;
  cfg.model = desk_model();
  const auto result = train_stage1(cfg, train);
  g_stage1 = result.checkpoint;
  const auto rows = evaluate_estimator(*load_estimator_model(result.checkpoint), held_out);
  double mae = 0, mae_synth = 0, p_in = 0, p_corr = 0;
  for (const auto& r : rows) mae += r.mae_fit, mae_synth += r.mae_synth, p_in += r.psnr_input, p_corr += r.psnr_corrected;
  const double n = static_cast<double>(rows.size());
  mae /= n, mae_synth /= n, p_in /= n, p_corr /= n;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "held-out MAE %.4f < 0.1 (vs synth params %.4f), corrected PSNR %.2f dB > input %.2f dB", mae,
                mae_synth, p_corr, p_in);
  return {mae < 0.1 && p_corr > p_in, buf};
}

// 6. Overfit four pairs for 500 steps.
Outcome overfit() {
  const auto pairs = load_dataset(build_dataset({4, 2}).container);
  TrainConfig cfg = TrainConfig::from_pairs({{"stage", "2"}});
  cfg.model = desk_model();
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 4;
  cfg.epochs = 500;
  cfg.max_steps = 500;
  const auto result = train_stage2(cfg, pairs, g_stage1);
  g_stage2 = result.checkpoint;
  const auto model = load_model(result.checkpoint);
  const auto rows = evaluate(*model, pairs);
  bool all_better = true;
  std::string psnrs;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double base = psnr(pairs[k].mixture, pairs[k].transmission);
    all_better = all_better && rows[k].psnr > base;
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s%.2f>%.2f", k ? " " : "", rows[k].psnr, base);
    psnrs += buf;
  }
  const double ratio = result.step_losses.back() / result.step_losses.front();
  char buf[160];
  std::snprintf(buf, sizeof buf, "; loss step 500 / step 1 = %.4f < 0.2 (%zu steps)", ratio, result.step_losses.size());
  return {all_better && ratio < 0.2 && result.step_losses.size() == 500, "PSNR(T^,T)>PSNR(I,T) dB: " + psnrs + buf};
}

// 7. Estimator entries of the stage-2 checkpoint file equal the stage-1 file's.
Outcome freeze() {
  const auto dir = scratch_dir();
  g_stage1.write(dir / "freeze_s1.rdn");
  g_stage2.write(dir / "freeze_s2.rdn");
  auto estimator_bytes = [](const NamedArrays& ck) {
    NamedArrays subset;
    for (const auto& e : ck.entries()) {
      if (e.name.starts_with("tapg/estimator/")) subset.add(e);
    }
    return subset.serialize();
  };
  const auto a = estimator_bytes(NamedArrays::read(dir / "freeze_s1.rdn"));
  const auto b = estimator_bytes(NamedArrays::read(dir / "freeze_s2.rdn"));
  return {a == b && a.size() > 8, std::to_string(a.size()) + " estimator bytes, identical: " + (a == b ? "yes" : "no")};
}

// 8. Settings A/B/C/default and column counts 2/4/6 through the CLI.
Outcome ablation_harness() {
  const auto dir = scratch_dir() / "ablation";
  fs::create_directories(dir);
  const auto data = (dir / "d.rdn").string();
  const auto s1 = (dir / "s1.rdn").string();
  if (cli({"synth", "--out", data, "--count", "4", "--seed", "5"}).code != 0) return {false, "synth failed"};
  if (cli({"train-stage1", "--dataset", data, "--epochs", "1", "--checkpoint", s1}).code != 0) {
    return {false, "train-stage1 failed"};
  }
  Rng rng(6);
  write_image(dir / "probe.png", uniform<float>({3, 36, 20}, rng, 0, 1));
  struct Variant {
    std::string name, setting, columns;
  };
  const std::vector<Variant> variants{{"A", "A", "2"},         {"B", "B", "2"},         {"C", "C", "2"},
                                      {"default", "default", "2"}, {"N=4", "default", "4"}, {"N=6", "default", "6"}};
  std::string report;
  bool ok = true;
  for (const auto& v : variants) {
    const auto tag = v.setting + v.columns;
    const auto ckpt = (dir / ("s2_" + tag + ".rdn")).string();
    const auto out_dir = dir / ("out_" + tag);
    auto r = cli({"train-stage2", "--dataset", data, "--stage1-checkpoint", s1, "--checkpoint", ckpt, "--setting",
                  v.setting, "--num-columns", v.columns, "--num-levels", "3", "--base-channels", "8", "--max-steps",
                  "2"});
    bool pass = r.code == 0;
    if (pass) r = cli({"infer", "--checkpoint", ckpt, "--input", (dir / "probe.png").string(), "--out-dir", out_dir.string()});
    pass = pass && r.code == 0;
    if (pass) {
      const auto t = read_image(out_dir / "probe_T.png");
      const auto rr = read_image(out_dir / "probe_R.png");
      pass = t.shape() == (Shape{3, 36, 20}) && rr.shape() == t.shape() && fs::exists(out_dir / "probe_rate.txt");
      r = cli({"eval", "--checkpoint", ckpt, "--dataset", data});
      pass = pass && r.code == 0 && std::count(r.out.begin(), r.out.end(), '\n') == 6;
      const auto model = load_model(NamedArrays::read(ckpt));
      pass = pass && model->config().mcre.num_columns == std::stoi(v.columns);
    }
    if (!pass) report += " " + v.name + "(" + r.err.substr(0, r.err.find('\n')) + ")";
    ok = ok && pass;
  }
  return {ok, ok ? "A, B, C, default, N=2/4/6: train-stage2, infer and eval all shape-valid"
                 : "failed:" + report};
}

// 9. Formula spot checks.
Outcome formulas() {
  Rng rng(9);
  const auto t = uniform<double>({1, 3, 16, 16}, rng, 0, 0.8);
  const auto r = uniform<double>({1, 3, 16, 16}, rng, 0, 1);
  const double content = content_loss(add_scalar(t, 0.1), t, r, r, LossWeights::stage2()).item();
  const double content_err = std::abs(content - 0.003);
  const auto tf = uniform<float>({1, 3, 16, 16}, rng, 0.2, 0.8);
  const double p = psnr(add_scalar(tf, 0.1f), tf);
  const auto x = uniform<float>({2, 16, 6, 5}, rng, -1, 1);
  const auto y = uniform<float>({2, 4, 8, 6}, rng, -1, 1);
  const auto xs = pixel_unshuffle(pixel_shuffle(x, 2), 2);
  const auto ys = pixel_shuffle(pixel_unshuffle(y, 2), 2);
  const bool bit_exact = std::equal(xs.data().begin(), xs.data().end(), x.data().begin()) &&
                         std::equal(ys.data().begin(), ys.data().end(), y.data().begin());
  char buf[200];
  std::snprintf(buf, sizeof buf, "content loss %.17g (|d|=%.2g, double), PSNR %.6f dB, pixel shuffle bit-exact: %s",
                content, content_err, p, bit_exact ? "yes" : "no");
  return {content_err < 1e-15 && std::abs(p - 20.0) < 1e-4 && bit_exact, buf};
}

// 10. synth + train-stage1 twice with the same seeds.
Outcome determinism() {
  const auto dir = scratch_dir() / "determinism";
  fs::create_directories(dir);
  std::vector<std::vector<std::uint8_t>> bytes;
  std::vector<double> losses;
  for (int run = 0; run < 2; ++run) {
    const auto data = (dir / ("d" + std::to_string(run) + ".rdn")).string();
    if (cli({"synth", "--out", data, "--count", "40", "--seed", "10"}).code != 0) return {false, "synth failed"};
    const auto r = cli({"train-stage1", "--dataset", data, "--epochs", "2", "--seed", "10", "--checkpoint",
                        (dir / ("s" + std::to_string(run) + ".rdn")).string()});
    if (r.code != 0) return {false, "train-stage1 failed: " + r.err};
    bytes.push_back(read_file_bytes(data));
    losses.push_back(std::stod(field(r.out, "final_loss")));
  }
  const double diff = std::abs(losses[0] - losses[1]);
  return {bytes[0] == bytes[1] && diff <= 1e-6,
          std::string("datasets byte-identical: ") + (bytes[0] == bytes[1] ? "yes" : "no") + ", final loss " +
              sci(losses[0]) + " vs " + sci(losses[1]) + " (|d|=" + sci(diff) + " <= 1e-06)"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "reversibility", 10, reversibility},
      {2, "recomputation equivalence", 30, recomputation},
      {3, "gradient correctness", 120, gradient_check},
      {4, "closed-form fit oracle", 10, closed_form},
      {5, "stage-1 estimator", 600, stage1_estimator},
      {6, "overfit sanity", 900, overfit},
      {7, "freeze contract", 0, freeze},
      {8, "ablation harness parity", 0, ablation_harness},
      {9, "formula spot checks", 0, formulas},
      {10, "determinism", 0, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.limit_s <= 0 || secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    char timing[64];
    if (c.limit_s > 0) {
      std::snprintf(timing, sizeof timing, "%.1f s < %.0f s", secs, c.limit_s);
    } else {
      std::snprintf(timing, sizeof timing, "%.1f s", secs);
    }
    std::printf("%s criterion %d (%s): %s; %s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing);
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(scratch_dir(), ec);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
