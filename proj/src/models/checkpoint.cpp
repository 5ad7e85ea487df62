#include "axi/models/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "axi/bytes.hpp"

namespace axi::models {

namespace {

constexpr char kMagic[4] = {'A', 'X', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  const ModelSpec& s = ck.spec;
  std::string out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_str(out, to_string(s.arch));
  put_str(out, s.variant);
  put_u32(out, static_cast<std::uint32_t>(s.side));
  for (std::size_t w : s.widths) put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, static_cast<std::uint32_t>(s.dense_hidden));
  put_u32(out, static_cast<std::uint32_t>(s.encoder_features));
  put_u32(out, static_cast<std::uint32_t>(s.lstm_units));
  put_u32(out, static_cast<std::uint32_t>(s.head_hidden));
  put_f64(out, s.dropout);
  put_f64(out, s.batchnorm.epsilon);
  put_f64(out, s.batchnorm.momentum);
  put_u64(out, static_cast<std::uint64_t>(ck.image_bound));
  put_u32(out, static_cast<std::uint32_t>(ck.params.entries.size()));
  for (const auto& e : ck.params.entries) {
    put_str(out, e.name);
    out.push_back(e.trainable ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.value.data()) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  try {
    ByteReader in(bytes);
    if (std::memcmp(in.take(4).data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint file");
    if (const auto v = in.u32(); v != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
    Checkpoint ck;
    ModelSpec& s = ck.spec;
    s.arch = parse_arch(in.str());
    s.variant = in.str();
    s.side = in.u32();
    for (auto& w : s.widths) w = in.u32();
    s.dense_hidden = in.u32();
    s.encoder_features = in.u32();
    s.lstm_units = in.u32();
    s.head_hidden = in.u32();
    s.dropout = in.f64();
    s.batchnorm.epsilon = in.f64();
    s.batchnorm.momentum = in.f64();
    ck.image_bound = static_cast<std::int64_t>(in.u64());
    s.validate();

    // Blocks must match the architecture's layout exactly.
    const std::vector<ParamInfo> expected = param_layout(s);
    const std::uint32_t blocks = in.u32();
    if (blocks != expected.size()) {
      throw CheckpointError("expected " + std::to_string(expected.size()) + " parameter blocks, found " +
                            std::to_string(blocks));
    }
    for (const auto& want : expected) {
      Param<float> p;
      p.name = in.str();
      p.trainable = in.u8() != 0;
      nn::Shape shape(in.u32());
      for (auto& d : shape) d = in.u32();
      if (p.name != want.name || shape != want.shape || p.trainable != want.trainable) {
        throw CheckpointError("block '" + p.name + "' " + nn::shape_str(shape) + " does not match expected '" +
                              want.name + "' " + nn::shape_str(want.shape));
      }
      p.value = nn::Tensor<float>(shape);
      for (float& v : p.value.data()) v = in.f32();
      ck.params.entries.push_back(std::move(p));
    }
    if (in.remaining() != 0) throw CheckpointError("trailing bytes after last block");
    return ck;
  } catch (const std::out_of_range&) {
    throw CheckpointError("truncated checkpoint");
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace axi::models
