#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sphereat/spherehead/model.hpp"

namespace sphereat {

/// On-disk layout (all integers little-endian):
///   "SPHEREAT"                      8-byte magic
///   u32 format version
///   u32 header length, header bytes  `key = value` text
///   u32 tensor count
///   per tensor, in declaration order:
///     u32 name length, name bytes
///     u32 rank, u64 extent[rank]
///     u64 element count, f64 element[count]
inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'H', 'E', 'R', 'E', 'A', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raised when a checkpoint was written by an incompatible format version.
class CheckpointVersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct TensorArchive {
  std::string header;  // key = value text
  std::vector<NamedTensor> tensors;
};

void write_archive(std::ostream& os, const TensorArchive& archive);
TensorArchive read_archive(std::istream& is);
void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

struct Checkpoint {
  ModelParams params;
  HeadConfig head;
};

TensorArchive to_archive(const ModelParams& params, const HeadConfig& head);
Checkpoint from_archive(const TensorArchive& archive);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const HeadConfig& head);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sphereat
