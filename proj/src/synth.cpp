#include "rdnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rdnet/error.hpp"
#include "rdnet/image_io.hpp"

namespace rdnet {

TransmissionRate sample_rate(Rng& rng) {
  TransmissionRate r;
  for (auto& a : r.alpha) a = rng.uniform(kAlphaMin, kAlphaMax);
  for (auto& b : r.beta) b = rng.uniform(kBetaMin, kBetaMax);
  return r;
}

namespace {

void require_image(const Tensor<float>& t, const char* what) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw ShapeError(std::string(what) + " must be 3 x H x W, got " + to_string(t.shape()));
  }
}

}  // namespace

Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma) {
  require_image(image, "gaussian_blur input");
  if (!(sigma > 0.0)) return image.detach();
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;

  const std::int64_t h = image.dim(1), w = image.dim(2);
  std::vector<double> tmp(static_cast<std::size_t>(3 * h * w));
  std::vector<float> out(tmp.size());
  for (std::int64_t c = 0; c < 3; ++c) {
    const float* src = image.data().data() + c * h * w;
    double* mid = tmp.data() + c * h * w;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          acc += k[i + radius] * src[y * w + std::clamp<std::int64_t>(x + i, 0, w - 1)];
        }
        mid[y * w + x] = acc;
      }
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          acc += k[i + radius] * mid[std::clamp<std::int64_t>(y + i, 0, h - 1) * w + x];
        }
        out[static_cast<std::size_t>(c * h * w + y * w + x)] = static_cast<float>(acc);
      }
  }
  return Tensor<float>::from_data(image.shape(), std::move(out));
}

SynthSample compose(const Tensor<float>& transmission, const Tensor<float>& reflection,
                    const TransmissionRate& rate, double blur_sigma) {
  require_image(transmission, "transmission");
  require_image(reflection, "reflection");
  if (transmission.shape() != reflection.shape()) {
    throw ShapeError("compose: transmission " + to_string(transmission.shape()) + " and reflection " +
                     to_string(reflection.shape()) + " differ");
  }
  SynthSample s;
  s.transmission = transmission.detach();
  s.reflection = gaussian_blur(reflection, blur_sigma);
  s.rate = rate;
  s.blur_sigma = blur_sigma;
  const std::int64_t hw = transmission.dim(1) * transmission.dim(2);
  std::vector<float> mix(static_cast<std::size_t>(3 * hw));
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < hw; ++i) {
      const double t = transmission[c * hw + i], r = s.reflection[c * hw + i];
      mix[static_cast<std::size_t>(c * hw + i)] =
          static_cast<float>(std::clamp(rate.alpha[c] * t + rate.beta[c] * r - t * r, 0.0, 1.0));
    }
  s.mixture = Tensor<float>::from_data(transmission.shape(), std::move(mix));
  return s;
}

namespace {

// Smoothly interpolated lattice noise summed over octaves, normalised to
// zero mean and unit variance.
std::vector<double> value_noise(Rng& rng, std::int64_t h, std::int64_t w) {
  std::vector<double> field(static_cast<std::size_t>(h * w), 0.0);
  double amplitude = 1.0;
  for (int cells = 2; cells <= 16; cells *= 2, amplitude *= 0.5) {
    const int n = cells + 1;
    std::vector<double> lattice(static_cast<std::size_t>(n * n));
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double fy = static_cast<double>(y) / h * cells, fx = static_cast<double>(x) / w * cells;
        const int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
        const double ty = fy - iy, tx = fx - ix;
        const double sy = ty * ty * (3 - 2 * ty), sx = tx * tx * (3 - 2 * tx);
        auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy * n + xx)]; };
        const double top = at(iy, ix) + sx * (at(iy, ix + 1) - at(iy, ix));
        const double bottom = at(iy + 1, ix) + sx * (at(iy + 1, ix + 1) - at(iy + 1, ix));
        field[static_cast<std::size_t>(y * w + x)] += amplitude * (top + sy * (bottom - top));
      }
  }
  double mean = 0, var = 0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  for (double v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  for (auto& v : field) v = sd > 0 ? (v - mean) / sd : 0.0;
  return field;
}

}  // namespace

Tensor<float> procedural_texture(Rng& rng, std::int64_t height, std::int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("procedural_texture: empty size");
  const auto shared = value_noise(rng, height, width);
  const std::int64_t hw = height * width;
  std::vector<float> out(static_cast<std::size_t>(3 * hw));
  for (int c = 0; c < 3; ++c) {
    const auto own = value_noise(rng, height, width);
    const double mean = rng.uniform(0.3, 0.7), spread = rng.uniform(0.12, 0.2);
    for (std::int64_t i = 0; i < hw; ++i) {
      const double z = 0.6 * shared[i] + 0.8 * own[i];
      out[static_cast<std::size_t>(c * hw + i)] = static_cast<float>(std::clamp(mean + spread * z, 0.0, 1.0));
    }
  }
  return Tensor<float>::from_data({3, height, width}, std::move(out));
}

namespace {

// Random crop when the source is large enough, nearest-neighbour resize
// otherwise.
Tensor<float> fit_source(const Tensor<float>& src, std::int64_t h, std::int64_t w, Rng& rng) {
  const std::int64_t sh = src.dim(1), sw = src.dim(2);
  std::vector<float> out(static_cast<std::size_t>(3 * h * w));
  const bool crop = sh >= h && sw >= w;
  const std::int64_t oy = crop ? static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(sh - h + 1))) : 0;
  const std::int64_t ox = crop ? static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(sw - w + 1))) : 0;
  for (int c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t yy = crop ? oy + y : y * sh / h, xx = crop ? ox + x : x * sw / w;
        out[static_cast<std::size_t>((c * h + y) * w + x)] = src[(c * sh + yy) * sw + xx];
      }
  return Tensor<float>::from_data({3, h, w}, std::move(out));
}

std::vector<std::uint32_t> image_extents(const Tensor<float>& t) {
  return {3, static_cast<std::uint32_t>(t.dim(1)), static_cast<std::uint32_t>(t.dim(2))};
}

std::vector<float> values_of(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

Dataset build_dataset(const DatasetOptions& options) {
  if (options.height < 1 || options.width < 1) throw ConfigError("dataset image size must be positive");
  if (options.max_blur_sigma < 0) throw ConfigError("max_blur_sigma must be non-negative");
  Dataset out;
  Rng rng(options.seed);

  std::vector<Tensor<float>> sources;
  if (!options.source_dir.empty()) {
    std::error_code ec;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(options.source_dir, ec)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    if (ec) throw IoError("cannot list source directory '" + options.source_dir.string() + "': " + ec.message());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        sources.push_back(read_image(f));
      } catch (const Error& e) {
        out.warnings.push_back("skipping '" + f.string() + "': " + e.what());
      }
    }
    if (sources.empty() && options.count > 0) {
      throw IoError("no readable images in '" + options.source_dir.string() + "'");
    }
  }

  char buf[64];
  for (std::size_t k = 0; k < options.count; ++k) {
    Rng local = rng.split();
    Tensor<float> t, r;
    if (sources.empty()) {
      t = procedural_texture(local, options.height, options.width);
      r = procedural_texture(local, options.height, options.width);
    } else {
      t = fit_source(sources[local.below(sources.size())], options.height, options.width, local);
      r = fit_source(sources[local.below(sources.size())], options.height, options.width, local);
    }
    const auto rate = sample_rate(local);
    double sigma = local.uniform(0.0, options.max_blur_sigma);
    if (options.zero_reflection) {
      r = Tensor<float>::zeros(t.shape());
      sigma = 0.0;
    }
    const auto s = compose(t, r, rate, sigma);

    const std::string id = "sample" + std::to_string(k);
    out.container.add(id + "/I", image_extents(s.mixture), values_of(s.mixture));
    out.container.add(id + "/T", image_extents(s.transmission), values_of(s.transmission));
    out.container.add(id + "/R", image_extents(s.reflection), values_of(s.reflection));
    std::vector<float> rv;
    for (double v : rate.to_array()) rv.push_back(static_cast<float>(v));
    out.container.add(id + "/rate", {6}, rv);
    out.container.add(id + "/blur", {1}, {static_cast<float>(sigma)});

    out.manifest += id + "\t" + id + "/I\t" + id + "/T\t" + id + "/R";
    for (float v : rv) {
      std::snprintf(buf, sizeof buf, "\t%.9g", static_cast<double>(v));
      out.manifest += buf;
    }
    std::snprintf(buf, sizeof buf, "\t%.9g\n", static_cast<double>(static_cast<float>(sigma)));
    out.manifest += buf;
  }
  return out;
}

std::size_t dataset_size(const NamedArrays& container) {
  std::size_t n = 0;
  while (container.find("sample" + std::to_string(n) + "/I")) ++n;
  return n;
}

SynthSample load_sample(const NamedArrays& container, std::size_t index) {
  const std::string id = "sample" + std::to_string(index);
  auto image = [&](const std::string& name) {
    const auto& e = container.at(id + "/" + name);
    if (e.extents.size() != 3 || e.extents[0] != 3) {
      throw FormatError("dataset entry '" + e.name + "' is not a 3 x H x W image");
    }
    return Tensor<float>::from_data({3, e.extents[1], e.extents[2]}, e.values);
  };
  SynthSample s;
  s.mixture = image("I");
  s.transmission = image("T");
  s.reflection = image("R");
  if (s.transmission.shape() != s.mixture.shape() || s.reflection.shape() != s.mixture.shape()) {
    throw FormatError("dataset sample '" + id + "' has inconsistent image sizes");
  }
  const auto& rate = container.at(id + "/rate");
  if (rate.values.size() != 6) throw FormatError("dataset entry '" + rate.name + "' must hold 6 values");
  std::array<double, 6> a{};
  for (int k = 0; k < 6; ++k) a[k] = rate.values[k];
  s.rate = TransmissionRate::from_array(a);
  if (const auto* blur = container.find(id + "/blur"); blur && blur->values.size() == 1) {
    s.blur_sigma = blur->values[0];
  }
  return s;
}

std::vector<SynthSample> load_dataset(const NamedArrays& container) {
  std::vector<SynthSample> out;
  const auto n = dataset_size(container);
  for (std::size_t k = 0; k < n; ++k) out.push_back(load_sample(container, k));
  return out;
}

}  // namespace rdnet
