#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "axi/ingest/manifest.hpp"

namespace axi::ingest {

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct BoardSplit {
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
  /// board_type -> 0 (train), 1 (val) or 2 (test)
  std::map<std::string, int> assignment;
};

/// Assigns whole board types to splits. Boards are visited largest first
/// (seeded tie-break) and each goes to the split furthest below its target
/// joint count; a split left empty claims a board once only enough boards
/// remain to fill the empty splits.
BoardSplit split_by_board(const DatasetManifest& manifest, const SplitFractions& fractions, std::uint64_t seed);

/// Keeps every defect record and a seeded sample of normals, without
/// replacement, equal in number to the defects. If there are fewer normals
/// than defects all of them are kept. Record order is preserved.
DatasetManifest balance_downsample(const DatasetManifest& train, std::uint64_t seed);

}  // namespace axi::ingest
