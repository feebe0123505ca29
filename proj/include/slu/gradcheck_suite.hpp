#pragma once

// Named gradient-check scenarios covering every differentiable operation.
// Shared by the CLI `gradcheck` command and the acceptance suite.

#include <string>
#include <vector>

namespace slu {

struct GradCheckCase {
    std::string module;
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Runs every scenario whose module matches the filter (empty = all). Each
// scenario checks five random instances with eps 1e-6.
std::vector<GradCheckCase> run_gradcheck_suite(const std::string& module_filter = "");

}  // namespace slu
