#include "axi/ingest/split.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "axi/rng.hpp"

namespace axi::ingest {

BoardSplit split_by_board(const DatasetManifest& manifest, const SplitFractions& fractions, std::uint64_t seed) {
  const std::array<double, 3> frac{fractions.train, fractions.val, fractions.test};
  for (double f : frac) {
    if (!(f > 0.0)) throw std::invalid_argument("split fractions must be positive");
  }
  if (std::abs(frac[0] + frac[1] + frac[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }

  std::map<std::string, std::size_t> sizes;
  for (const auto& r : manifest.records) ++sizes[r.board_type];
  if (sizes.size() < 3) {
    throw std::invalid_argument("board-disjoint split needs at least 3 board types, got " +
                                std::to_string(sizes.size()));
  }

  struct Board {
    std::string name;
    std::size_t joints;
    std::uint64_t tie;
  };
  std::vector<Board> boards;
  Rng rng(derive_seed(seed, 0x5b11'7u));
  for (const auto& [name, n] : sizes) boards.push_back({name, n, rng.next()});
  std::sort(boards.begin(), boards.end(), [](const Board& a, const Board& b) {
    return a.joints != b.joints ? a.joints > b.joints : a.tie < b.tie;
  });

  const double total = static_cast<double>(manifest.records.size());
  std::array<double, 3> filled{0.0, 0.0, 0.0};
  std::array<std::size_t, 3> members{0, 0, 0};
  BoardSplit split;
  for (std::size_t b = 0; b < boards.size(); ++b) {
    const std::size_t remaining = boards.size() - b;
    const std::size_t empty = static_cast<std::size_t>(std::count(members.begin(), members.end(), 0u));
    int best = -1;
    double best_deficit = 0.0;
    for (int s = 0; s < 3; ++s) {
      if (remaining <= empty && members[s] != 0) continue;
      const double deficit = frac[s] * total - filled[s];
      if (best < 0 || deficit > best_deficit) {
        best = s;
        best_deficit = deficit;
      }
    }
    filled[best] += static_cast<double>(boards[b].joints);
    ++members[best];
    split.assignment[boards[b].name] = best;
  }

  for (DatasetManifest* m : {&split.train, &split.val, &split.test}) {
    m->image_bound = manifest.image_bound;
    m->base_dir = manifest.base_dir;
  }
  for (const auto& r : manifest.records) {
    switch (split.assignment.at(r.board_type)) {
      case 0: split.train.records.push_back(r); break;
      case 1: split.val.records.push_back(r); break;
      default: split.test.records.push_back(r); break;
    }
  }
  return split;
}

DatasetManifest balance_downsample(const DatasetManifest& train, std::uint64_t seed) {
  std::vector<std::size_t> normals;
  std::size_t defects = 0;
  for (std::size_t i = 0; i < train.records.size(); ++i) {
    if (train.records[i].label == Label::kDefect) {
      ++defects;
    } else {
      normals.push_back(i);
    }
  }
  if (defects == 0) throw std::invalid_argument("cannot balance a split with no defect records");

  std::vector<bool> keep(train.records.size(), false);
  for (std::size_t i = 0; i < train.records.size(); ++i) keep[i] = train.records[i].label == Label::kDefect;
  Rng rng(derive_seed(seed, 0xba1a'ceu));
  rng.shuffle(normals.begin(), normals.end());
  for (std::size_t k = 0; k < std::min(defects, normals.size()); ++k) keep[normals[k]] = true;

  DatasetManifest out;
  out.image_bound = train.image_bound;
  out.base_dir = train.base_dir;
  for (std::size_t i = 0; i < train.records.size(); ++i) {
    if (keep[i]) out.records.push_back(train.records[i]);
  }
  return out;
}

}  // namespace axi::ingest
