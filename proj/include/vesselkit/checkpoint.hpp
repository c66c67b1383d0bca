#pragma once

// VKCP1 checkpoint files:
//
//   VKCP1
//   arch <architecture string>
//   fingerprint <16 hex digits>
//   tensors <count>
//   <name> <n>x<c>x<h>x<w> f32        (one line per tensor)
//   end
//   <little-endian float32 payload, tensors in header order>

#include <string>
#include <vector>

#include "vesselkit/params.hpp"
#include "vesselkit/tensor.hpp"

namespace vk {

struct CheckpointEntry {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  std::string architecture;
  std::string fingerprint;
  std::vector<CheckpointEntry> tensors;
};

template <typename T>
Checkpoint make_checkpoint(const std::string& architecture, const std::string& fingerprint,
                           const std::vector<Parameter<T>*>& params);

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError("not a checkpoint ..." / "payload length mismatch ...").
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Human-readable per-key diff of two "key=value;..." architecture strings.
std::string architecture_diff(const std::string& expected, const std::string& found);

/// Copies the checkpoint into params. Throws ConfigError with an explicit diff
/// when the fingerprint differs, and FormatError for missing or misshapen tensors.
template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, const std::string& architecture,
                      const std::string& fingerprint, const std::vector<Parameter<T>*>& params);

}  // namespace vk
