#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "axi/models/model.hpp"

namespace axi::models {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelSpec spec;
  std::int64_t image_bound = 1024;  // preprocessing settings the model was trained with
  ParamSet<float> params;
};

/// Header (magic, version, architecture, variant, dims, dropout, batch-norm
/// constants, preprocessing) then named blocks of little-endian float32.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace axi::models
