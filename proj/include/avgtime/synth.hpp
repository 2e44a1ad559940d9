#pragma once

// Seeded synthetic multivariate series.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "avgtime/series.hpp"

namespace avgtime {

enum class SynthKind { sinusoids, lagged_copies, independent_noise };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "sinusoids") return SynthKind::sinusoids;
  if (s == "lagged-copies") return SynthKind::lagged_copies;
  if (s == "independent-noise") return SynthKind::independent_noise;
  throw std::invalid_argument("unknown synthetic kind '" + s + "' (sinusoids, lagged-copies, independent-noise)");
}

inline std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::sinusoids: return "sinusoids";
    case SynthKind::lagged_copies: return "lagged-copies";
    case SynthKind::independent_noise: return "independent-noise";
  }
  return "?";
}

struct SynthSpec {
  SynthKind kind = SynthKind::sinusoids;
  std::size_t n_channels = 3;
  std::size_t length = 1000;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

// Period of sinusoid channel i; distinct for every channel.
inline double sinusoid_period(std::size_t channel) { return 16.0 + 9.0 * static_cast<double>(channel); }

inline SeriesMatrix generate(const SynthSpec& spec) {
  if (spec.n_channels < 1 || spec.length < 1) throw std::invalid_argument("synth: channels and length must be >= 1");
  if (!(spec.noise_std >= 0.0)) throw std::invalid_argument("synth: noise_std must be >= 0");
  Rng rng(spec.seed);
  SeriesMatrix s;
  s.channels = spec.n_channels;
  s.steps = spec.length;
  s.values.resize(s.channels * s.steps);
  s.frequency = "synthetic";
  s.source_path = "synth:" + to_string(spec.kind);
  for (std::size_t c = 0; c < s.channels; ++c) s.channel_names.push_back("ch" + std::to_string(c));

  switch (spec.kind) {
    case SynthKind::sinusoids:
      for (std::size_t c = 0; c < s.channels; ++c) {
        const double p = sinusoid_period(c);
        for (std::size_t t = 0; t < s.steps; ++t) {
          s.at(c, t) = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / p);
        }
      }
      break;
    case SynthKind::lagged_copies: {
      // Standardized Gaussian random walk; channel c lags channel 0 by c steps.
      const std::size_t n = s.steps + s.channels - 1;
      std::vector<double> walk(n);
      double level = 0.0;
      for (auto& w : walk) w = (level += rng.normal());
      double mu = 0.0;
      for (double w : walk) mu += w;
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (double w : walk) var += (w - mu) * (w - mu);
      const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-12);
      for (auto& w : walk) w = (w - mu) / sd;
      const std::size_t lead = s.channels - 1;
      for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t t = 0; t < s.steps; ++t) s.at(c, t) = walk[t + lead - c];
      }
      break;
    }
    case SynthKind::independent_noise:
      for (auto& v : s.values) v = rng.normal();
      break;
  }
  if (spec.noise_std > 0.0) {
    for (auto& v : s.values) v += rng.normal(0.0, spec.noise_std);
  }
  return s;
}

}  // namespace avgtime
