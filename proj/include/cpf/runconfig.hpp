#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cpf/data.hpp"
#include "cpf/model_config.hpp"
#include "cpf/train.hpp"

namespace cpf {

// Flat key=value run configuration. `profile=desk|paper` selects the base
// model profile; later keys override individual fields. '#' starts a comment.
struct RunConfig {
    std::string profile = "desk";
    ModelConfig model = ModelConfig::desk();
    TrainConfig train;
    SplitPlan split;
    std::string signals_dir;
    std::string labels_path;
    std::string labelmap_path;       // empty -> builtin label map
    std::string out_dir = "out";

    void set_seed(std::uint64_t seed);
    void validate() const;

    static RunConfig load(const std::string& path);
    static RunConfig from_pairs(
        const std::vector<std::pair<std::string, std::string>>& pairs);
};

} // namespace cpf
