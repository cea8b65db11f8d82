#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "upa/attack.hpp"

namespace upa::data {

// Seeded synthetic tabletop scenes: a two-colour gradient background with a
// few solid coloured blocks, each paired with
// "put the <colour> block on the <place>".
struct DatasetSpec {
  std::size_t count = 16;
  std::uint64_t seed = 100;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t min_blocks = 2;
  std::size_t max_blocks = 3;
};

std::vector<attack::Sample> generate(const DatasetSpec& spec);

const std::vector<std::string>& block_colours();
const std::vector<std::string>& placement_words();

}  // namespace upa::data
