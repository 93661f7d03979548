#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stfl/common.hpp"

namespace stfl {

// One named parameter block (a conv weight or bias).
struct ParamBlock {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
};

// Flat named parameter state of a model. Parameters are held in double so
// that aggregation and optimizer math stay exact enough for the reproducing
// checks; compute-side tensors convert to float on binding.
struct ParamVector {
    std::vector<ParamBlock> blocks;

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& b : blocks) n += b.numel();
        return n;
    }

    // Digest of (names, shapes, order); equality gates aggregation.
    std::uint64_t layout_hash() const;

    // Digest of layout plus values, for round records and audits.
    std::uint64_t value_digest() const;

    const ParamBlock* find(const std::string& name) const;
    ParamBlock* find(const std::string& name);

    void check_finite(const std::string& context) const;
};

// ---------------------------------------------------------------------------
// Checkpoint file format: magic "STFLCKPT1", little-endian u64 header length,
// JSON header describing sections/layers (name, shape, dtype, byte offsets),
// then the raw little-endian payload.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ParamVector>>& sections);

std::vector<std::pair<std::string, ParamVector>> load_checkpoint(const std::string& path);

void save_checkpoint(const std::string& path, const ParamVector& params);
ParamVector load_single_checkpoint(const std::string& path);

}  // namespace stfl
