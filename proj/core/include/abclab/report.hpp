#pragma once

#include <string>
#include <vector>

#include "abclab/experiment.hpp"

namespace abclab {

// Pivot of eval reports into the tasks x models x lengths layout used by the
// result tables: one block per task, one row per model, one column per
// length. Missing cells render as "-".
std::string render_results_table(const std::vector<EvalReport>& reports);

// Same pivot as CSV: task,model,<L1>,<L2>,...
std::string render_results_csv(const std::vector<EvalReport>& reports);

}  // namespace abclab
