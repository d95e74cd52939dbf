#pragma once
// HFMF1 checkpoint files: magic "HFMF1", u32 format version, config JSON,
// metrics JSON, then a named tensor table. All integers are little-endian;
// values are IEEE-754 binary64, row-major.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hfmf/nn.hpp"

namespace hfmf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_json = "{}";
  std::string metrics_json = "{}";
  std::vector<NamedTensor> tensors;
};

/// Copies the current parameter values (no gradient state).
Checkpoint make_checkpoint(const ParamList& params, std::string config_json,
                           std::string metrics_json);

std::string encode_checkpoint(const Checkpoint& ckpt);
/// FormatError on a bad magic, unsupported version or truncation.
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Overwrites `params` in place. Names and shapes must match exactly
/// (FormatError otherwise); the order of the stored table is irrelevant.
void load_parameters(const Checkpoint& ckpt, const ParamList& params);

}  // namespace hfmf
