#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "difftts/nn.hpp"
#include "difftts/optimizer.hpp"
#include "difftts/schedule.hpp"

namespace difftts {

inline constexpr int kCheckpointFormatVersion = 1;

// Versioned named-parameter snapshot of a trainable module: kind, config,
// parameter/buffer tensors, optimizer moments, schedule descriptor and RNG
// state. Binary container: magic + version + JSON manifest + raw little-
// endian double blobs; round-trips bit-exactly.
struct Checkpoint {
    std::string module_kind;
    nlohmann::json config;            // module-specific
    bool has_schedule = false;
    ScheduleDescriptor schedule;
    std::string rng_state;
    int64_t step = 0;                 // training progress

    struct NamedTensor {
        std::string name;
        std::vector<int> shape;
        std::vector<double> values;
    };
    std::vector<NamedTensor> params;
    std::vector<NamedTensor> buffers;
    Adam::State opt;

    // registry <-> checkpoint
    void capture(const nn::ParamRegistry& reg);
    void restore(nn::ParamRegistry& reg) const;  // strict name/shape match
};

// atomic: writes to a temp file in the same directory, then renames
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace difftts
