#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clipfit/analyze.hpp"
#include "clipfit/jsonutil.hpp"
#include "clipfit/train.hpp"

namespace clipfit {

inline constexpr char kToolName[] = "clipfit";
inline constexpr char kToolVersion[] = "0.1.0";

// Reports are deterministic: no timestamps, fixed key order, fixed float
// formatting (nlohmann shortest round-trip). Identical runs produce
// byte-identical files. CSV files open with a "# schema: ..." header row.

json eval_result_to_json(const EvalResult& r);
json pretrain_report_to_json(const PretrainReport& r, const EvalResult* zero_shot);
json train_report_to_json(const TrainReport& r);  // snapshots not embedded
json change_report_to_json(const std::vector<ChangeRow>& rows);
json gradient_report_to_json(const std::vector<GradientRow>& rows);
json ablation_to_json(const AblationOutcome& o);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const json& j);

std::string loss_csv(const TrainReport& r);          // clipfit.loss.v1
std::string changes_csv(const TrainReport& r);       // clipfit.changes.v1
std::string per_class_csv(const EvalResult& r);      // clipfit.per_class.v1
std::string features_csv(const FeatureExport& fx);   // clipfit.features.v1

// Every run directory gets exactly one manifest.json describing the command,
// resolved configuration, input hashes, and produced files.
struct RunManifest {
  std::string command;
  json config;                                 // fully resolved
  std::map<std::string, std::string> inputs;   // path -> fnv1a64 hex
  std::vector<std::string> outputs;            // file names within the dir

  void add_input(const std::filesystem::path& p);
  json to_json() const;
};

void write_manifest(const std::filesystem::path& dir, const RunManifest& m);

}  // namespace clipfit
