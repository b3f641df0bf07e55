#pragma once

#include <filesystem>

#include "subsel/params.hpp"

namespace subsel {

// Checkpoints are a JSON manifest (name -> shape, dtype, byte offset) next to
// one flat blob of little-endian IEEE-754 32-bit floats, row-major.

void save_checkpoint(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& blob_path, const ParamSet& params);

// Fills an already-constructed ParamSet; every manifest entry must match an
// existing parameter's shape, and vice versa.
void load_checkpoint(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& blob_path, ParamSet& params);

// Snaps values to f32 precision in place. Applied after training and before
// computing any stored outputs so a reload reproduces them bit-exactly.
void round_to_f32(ParamSet& params);

}  // namespace subsel
