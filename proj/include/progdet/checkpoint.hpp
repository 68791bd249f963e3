#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>

#include "progdet/tensor.hpp"

namespace progdet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named matrices in the binary checkpoint layout (see docs/FORMATS.md).
using ParamMap = std::map<std::string, Tensor2>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ParamMap& params);
ParamMap decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const Param* const> params);
ParamMap load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into matching params; every param must be present
/// with the same shape.
void restore_params(const ParamMap& stored, std::span<Param* const> params);

}  // namespace progdet
