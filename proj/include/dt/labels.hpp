#pragma once

#include <cstdint>
#include <vector>

#include "dt/error.hpp"

namespace dt {

// Frame-level speaker activity: activity[s][t] != 0 means speaker s talks in
// frame t. Overlap is any column with more than one active row.
struct DiarizationLabels {
    std::vector<std::vector<std::uint8_t>> activity;
    double frame_shift_s = 0.01;

    int num_spk() const { return static_cast<int>(activity.size()); }
    int frames() const { return activity.empty() ? 0 : static_cast<int>(activity[0].size()); }

    void check_rectangular() const {
        for (const auto& row : activity)
            if (row.size() != activity[0].size())
                throw ContractError("DiarizationLabels: ragged activity rows");
    }
};

}  // namespace dt
