#pragma once

#include <string>
#include <vector>

#include "advkit/dataset.hpp"

namespace advkit {

/// Train/test material resolved from a declarative dataset spec.
struct DatasetBundle {
    LabeledImages train;
    LabeledImages test;
};

/// Resolves {"kind":"synth"|"idx"|"mnist", ...}. "mnist" reads the standard
/// IDX file names under `root` (default: the ADVKIT_DATA environment
/// variable).
DatasetBundle load_dataset_spec(const std::string& spec_json);

struct ExperimentOutcome {
    std::vector<std::string> files;    // artifacts written (absolute or out-dir relative)
    std::vector<std::string> warnings;
    std::string result_json;           // headline numbers, also written to result.json
};

/// Runs one declarative experiment (kind: train | attack | transfer |
/// sweep-sigma-m | sweep-step-size | robustness | similarity | boundary)
/// and writes its artifacts plus resolved_config.json under out_dir.
/// Reruns with the same config and seed produce byte-identical CSV bodies;
/// wall-clock metadata goes to run_meta.json only.
ExperimentOutcome run_experiment(const std::string& config_json, const std::string& out_dir,
                                 int workers = 0);

/// Merges every success-rate CSV found under `dir` into report.csv /
/// report.json and renders report.md (rows = source, columns = target,
/// "left / right" cells when exactly two methods are present). Malformed
/// files are listed as warnings; conflicting duplicate keys are an error.
ExperimentOutcome render_report(const std::string& dir);

} // namespace advkit
