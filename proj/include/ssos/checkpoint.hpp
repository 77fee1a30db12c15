#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssos/nn.hpp"

namespace ssos {

// One named tensor inside an "SSOSCKPT" file: name length + name + dims +
// little-endian f64 payload.
struct CheckpointSection {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<double> data;
};

using Checkpoint = std::vector<CheckpointSection>;

void write_checkpoint(const std::string& path, const Checkpoint& sections);
Checkpoint read_checkpoint(const std::string& path);

const CheckpointSection* find_section(const Checkpoint& ckpt, const std::string& name);
const CheckpointSection& require_section(const Checkpoint& ckpt, const std::string& name);

// DenseNet <-> sections, names "<prefix>.layer<i>.weight" / ".bias".
void append_net_sections(Checkpoint& ckpt, const std::string& prefix, const DenseNet& net);
DenseNet net_from_sections(const Checkpoint& ckpt, const std::string& prefix,
                           const std::vector<Activation>& acts);

}  // namespace ssos
