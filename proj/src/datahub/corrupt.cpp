#include <algorithm>
#include <array>
#include <cmath>

#include "sphereat/datahub/dataset.hpp"
#include "sphereat/diffcore/rng.hpp"

namespace sphereat {

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian-noise";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::pixelate: return "pixelate";
  }
  return "gaussian-noise";
}

CorruptionKind parse_corruption(std::string_view text) {
  for (auto k : {CorruptionKind::gaussian_noise, CorruptionKind::brightness, CorruptionKind::contrast,
                 CorruptionKind::pixelate}) {
    if (text == to_string(k)) return k;
  }
  throw ContractViolation("unknown corruption '" + std::string(text) + "'");
}

double corruption_parameter(CorruptionKind kind, int severity) {
  static constexpr std::array<double, 5> noise{0.02, 0.04, 0.08, 0.12, 0.18};
  static constexpr std::array<double, 5> bright{0.05, 0.10, 0.15, 0.20, 0.30};
  static constexpr std::array<double, 5> contrast{0.20, 0.35, 0.50, 0.65, 0.80};
  static constexpr std::array<double, 5> block{2, 3, 4, 5, 7};
  if (severity < 1 || severity > 5) {
    throw ContractViolation("corruption severity must be in 1..5, got " + std::to_string(severity));
  }
  const auto i = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::gaussian_noise: return noise[i];
    case CorruptionKind::brightness: return bright[i];
    case CorruptionKind::contrast: return contrast[i];
    case CorruptionKind::pixelate: return block[i];
  }
  return 0.0;
}

namespace {

void pixelate(std::span<double> img, std::size_t h, std::size_t w, std::size_t k) {
  const std::size_t planes = img.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    double* base = img.data() + p * h * w;
    for (std::size_t bi = 0; bi < h; bi += k)
      for (std::size_t bj = 0; bj < w; bj += k) {
        const auto ei = std::min(h, bi + k), ej = std::min(w, bj + k);
        double s = 0.0;
        for (std::size_t i = bi; i < ei; ++i)
          for (std::size_t j = bj; j < ej; ++j) s += base[i * w + j];
        const double mean = s / static_cast<double>((ei - bi) * (ej - bj));
        for (std::size_t i = bi; i < ei; ++i)
          for (std::size_t j = bj; j < ej; ++j) base[i * w + j] = mean;
      }
  }
}

}  // namespace

Dataset corrupt(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed) {
  const double param = corruption_parameter(spec.kind, spec.severity);
  Dataset out = data;
  out.split = data.split + "+" + std::string(to_string(spec.kind)) + "-" + std::to_string(spec.severity);
  const auto n = data.size();
  const auto ex = data.example_shape();
  if (spec.kind == CorruptionKind::pixelate && ex.size() < 2) {
    throw ContractViolation("pixelate needs image-shaped examples");
  }
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.inputs.row(r);
    switch (spec.kind) {
      case CorruptionKind::gaussian_noise: {
        Rng rng(derive_seed(seed, "corrupt-gaussian", r));
        for (double& v : row) v += param * rng.normal();
        break;
      }
      case CorruptionKind::brightness:
        for (double& v : row) v += param;
        break;
      case CorruptionKind::contrast: {
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(row.size());
        for (double& v : row) v = mean + (v - mean) * (1.0 - param);
        break;
      }
      case CorruptionKind::pixelate:
        pixelate(row, ex[ex.size() - 2], ex[ex.size() - 1], static_cast<std::size_t>(param));
        break;
    }
    for (double& v : row) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

}  // namespace sphereat
