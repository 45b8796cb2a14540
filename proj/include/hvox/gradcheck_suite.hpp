#pragma once

#include <string>
#include <vector>

#include "hvox/common.hpp"

namespace hvox {

struct GradCheckEntry {
    std::string op;
    double max_rel_err = 0;
    bool pass = false;
    std::string note;
};

struct GradCheckOptions {
    double h = 1e-5;
    double tol = 1e-4;
    uint64_t seed = 7;
    int instances = 3;        // random instances per op
    bool inject_fault = false;  // adds a fixture op with a corrupted adjoint
};

/// Checks every differentiable op plus the end-to-end generator+losses graph
/// against central finite differences, in 64-bit. One entry per op, holding
/// the worst relative error over its instances.
std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckOptions& opts = {});

bool all_passed(const std::vector<GradCheckEntry>& entries);

}  // namespace hvox
