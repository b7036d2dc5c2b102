#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mdiff/model.hpp"
#include "mdiff/tensor.hpp"

namespace mdiff {

// Binary tensor container:
//   magic "MD4S" | version u32 LE | config text (u32 length + UTF-8 bytes) |
//   tensor count u32 | per tensor: name length u32, name bytes, rank u32,
//   dims u32 each, raw little-endian f32 data.
// Round-trips bit-exactly; read errors name the failing byte offset.
constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    std::string config_text;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    int64_t step = 0;  // stored as a scalar tensor named "__step"
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Model weights <-> container. Loading checks that every expected tensor is
// present with the right shape.
Checkpoint checkpoint_from_params(const Params<float>& params, const std::string& config_text,
                                  int64_t step);
Params<float> params_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg);

}  // namespace mdiff
