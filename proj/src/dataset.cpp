#include "upa/dataset.hpp"

#include <array>
#include <stdexcept>

#include "upa/rng.hpp"

namespace upa::data {

namespace {

struct Colour {
  const char* name;
  std::array<double, 3> rgb;
};

const std::vector<Colour>& palette() {
  static const std::vector<Colour> p{
      {"red", {0.85, 0.12, 0.10}},   {"green", {0.15, 0.70, 0.20}}, {"blue", {0.12, 0.25, 0.85}},
      {"yellow", {0.92, 0.85, 0.15}}, {"purple", {0.55, 0.20, 0.65}}, {"orange", {0.95, 0.55, 0.10}},
      {"white", {0.95, 0.95, 0.95}}, {"black", {0.05, 0.05, 0.05}},
  };
  return p;
}

}  // namespace

const std::vector<std::string>& block_colours() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& c : palette()) out.emplace_back(c.name);
    return out;
  }();
  return names;
}

const std::vector<std::string>& placement_words() {
  static const std::vector<std::string> words{"left", "right", "bottom", "back", "middle", "top", "front"};
  return words;
}

std::vector<attack::Sample> generate(const DatasetSpec& spec) {
  if (spec.count == 0) throw std::invalid_argument("dataset count must be >= 1");
  if (spec.min_blocks < 1 || spec.max_blocks < spec.min_blocks)
    throw std::invalid_argument("dataset block range must satisfy 1 <= min <= max");
  if (spec.height < 4 || spec.width < 4) throw std::invalid_argument("dataset frame must be at least 4x4");
  Rng rng(spec.seed);
  std::vector<attack::Sample> out;
  for (std::size_t n = 0; n < spec.count; ++n) {
    Tensor img({spec.height, spec.width, 3});
    std::array<double, 3> c0{}, c1{};
    for (auto& v : c0) v = rng.uniform(0.2, 0.8);
    for (auto& v : c1) v = rng.uniform(0.2, 0.8);
    const bool vertical = rng.index(2) == 1;
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double t = vertical ? static_cast<double>(y) / (spec.height - 1) : static_cast<double>(x) / (spec.width - 1);
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = (1.0 - t) * c0[ch] + t * c1[ch];
      }
    const std::size_t blocks = spec.min_blocks + rng.index(spec.max_blocks - spec.min_blocks + 1);
    std::size_t target = 0;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t ci = rng.index(palette().size());
      if (b == 0) target = ci;
      const std::size_t bh = 3 + rng.index(spec.height / 4), bw = 3 + rng.index(spec.width / 4);
      const std::size_t y0 = rng.index(spec.height - bh + 1), x0 = rng.index(spec.width - bw + 1);
      for (std::size_t y = y0; y < y0 + bh; ++y)
        for (std::size_t x = x0; x < x0 + bw; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = palette()[ci].rgb[ch];
    }
    const auto& place = placement_words()[rng.index(placement_words().size())];
    out.push_back({std::move(img), "put the " + std::string(palette()[target].name) + " block on the " + place});
  }
  return out;
}

}  // namespace upa::data
