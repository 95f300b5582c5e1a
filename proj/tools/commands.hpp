#ifndef QDSLAB_TOOLS_COMMANDS_HPP
#define QDSLAB_TOOLS_COMMANDS_HPP

#include "qdslab/config.hpp"
#include "qdslab/photon_sim.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

#include "json.hpp"

namespace qdslab::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kValidation = 2, kSecurityAbort = 3 };

// Every command writes into config.out_dir and logs one line per output file.
// Errors propagate as exceptions; run_guarded maps them to exit codes.

/// simulate.csv: pair,basis,loss_db,qber,gain
/// security.csv: pair,loss_db,qber,length,rate,aborted
int cmd_simulate(const ExperimentConfig& config, std::ostream& log);

/// sweep.csv: pair,loss_db,distance_km,qber_z,qber_x,qber,length,rate,aborted
int cmd_sweep(const ExperimentConfig& config, std::ostream& log);

/// alice.tags, bob.tags, charlie.tags, truth.json, mux.json
int cmd_gen(const ExperimentConfig& config, std::ostream& log);

/// Reads the gen outputs from `in_dir` and writes, per pair P:
/// histogram_P.csv, crosstalk_P.csv, qber_P.json
int cmd_analyze(const ExperimentConfig& config, const std::filesystem::path& in_dir, std::ostream& log);

/// calibration.json
int cmd_calibrate(const ExperimentConfig& config, std::ostream& log);

/// extraction.json
int cmd_extract(const ExperimentConfig& config, std::ostream& log);

/// transcript.json; exit code 3 unless both verifiers accept
int cmd_qds(const ExperimentConfig& config, std::ostream& log);

nlohmann::json mux_json(const MuxLayout& mux, double window_ps);
MuxLayout mux_from_json(const nlohmann::json& j);

/// Locale-independent shortest round-trip formatting for CSV cells.
std::string format_number(double x);

}  // namespace qdslab::cli

#endif
