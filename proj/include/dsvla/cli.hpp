#pragma once

// Command-line entry point and the handlers behind each subcommand.
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime or numeric
// error. Every run writes a manifest with the resolved configuration and
// content hashes of the artifacts it produced or consumed.

#include <string>
#include <vector>

#include "dsvla/config.hpp"

namespace dsvla::cli {

int run(int argc, const char* const* argv);

// Reusable pieces (the ablation driver and the acceptance suite call these
// directly).

struct AblationCell {
  std::string cell;
  double success_mean = 0.0;
  double success_var = 0.0;
  double hz_mean = 0.0;
};

// Trains and evaluates every cell of one ablation axis on a shared dataset;
// returns one row per cell (averaged over `seeds` paired seeds).
std::vector<AblationCell> run_ablation_axis(const RunConfig& base,
                                            const std::string& axis,
                                            int seeds,
                                            const std::string& out_dir);

void write_ablation_csv(const std::string& axis,
                        const std::vector<AblationCell>& cells,
                        const std::string& path);

// Applies one ablation cell to a config; exposed for tests.
RunConfig apply_ablation_cell(const RunConfig& base, const std::string& axis,
                              const std::string& cell);

std::vector<std::string> ablation_cells(const std::string& axis);

}  // namespace dsvla::cli
