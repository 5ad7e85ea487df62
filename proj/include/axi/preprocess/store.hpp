#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "axi/preprocess/patch.hpp"

namespace axi::preprocess {

inline constexpr char kPatchMagic[4] = {'A', 'X', 'P', 'T'};
inline constexpr std::uint32_t kPatchVersion = 1;

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-joint file: magic, u32 version, u32 id length, id bytes, label byte,
/// then side*side*6 little-endian float32 values (y, x, channel order).
std::string encode_patch(const Patch& patch);
Patch decode_patch(const std::string& bytes);

void write_patch(const std::filesystem::path& path, const Patch& patch);
Patch read_patch(const std::filesystem::path& path);

/// A store directory holds one file per joint plus index.tsv (joint order,
/// crop window, real slice count) and errors.tsv.
void write_store(const std::filesystem::path& dir, const PreprocessResult& result);
PreprocessResult read_store(const std::filesystem::path& dir);

/// preprocess_records followed by write_store.
PreprocessResult preprocess_dataset(const ingest::DatasetManifest& manifest, const std::filesystem::path& out_dir,
                                    const PreprocessConfig& config = {});

}  // namespace axi::preprocess
