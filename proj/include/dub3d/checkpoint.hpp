#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dub3d/nn.hpp"
#include "dub3d/tensor.hpp"

namespace dub3d {

// Container layout: magic "DUB3D\0", one UTF-8 JSON header line terminated by '\n', then
// little-endian float32 tensor payloads. The payload section starts at the first 64-byte
// aligned file offset after the header; every tensor offset (relative to that section)
// is 64-byte aligned too.
struct CheckpointHeader {
    std::string variant;
    std::string config_hash;
    std::int64_t step = 0;
    nlohmann::json config = nlohmann::json::object();
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Checkpoint {
    CheckpointHeader header;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const std::vector<NamedTensor>& tensors);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> named_tensors(const std::vector<Param>& params);

// Copies stored values into params (names must match one to one). Rejects a header whose
// variant differs from `expected_variant`.
void load_checkpoint_into(const Checkpoint& ckpt, std::vector<Param>& params, const std::string& expected_variant);

// 64-bit FNV-1a, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace dub3d
