#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "sdd/acoustics.hpp"
#include "sdd/config.hpp"
#include "sdd/corpus_io.hpp"
#include "sdd/perturb.hpp"
#include "sdd/train.hpp"

namespace sdd::cli {

struct PipelineOptions {
  std::string stage = "all";  // all|synth|train|evaluate|interpret|features|perturb|summary
  std::string variant = "both";  // for stage=train: speech|segment|both
};

// Runs synth -> train(speech) -> train(segment) -> evaluate -> interpret ->
// features -> perturb -> summary under out_dir. Returns a process exit code;
// on failure a stage marker file is left next to the partial artifacts.
int run_pipeline(const RunConfig& cfg, const std::string& out_dir, const PipelineOptions& opt);

// Individual stages (also backing the standalone subcommands).
void stage_synth(const RunConfig& cfg, const std::string& out_dir);
std::string stage_train(const RunConfig& cfg, const std::string& out_dir,
                        const std::string& variant);
void stage_evaluate(const RunConfig& cfg, const std::string& out_dir);
void stage_interpret(const RunConfig& cfg, const std::string& out_dir);
void stage_features(const RunConfig& cfg, const std::string& out_dir);
void stage_perturb(const RunConfig& cfg, const std::string& out_dir);
void stage_summary(const RunConfig& cfg, const std::string& out_dir);

// Provenance block embedded in every artifact.
nlohmann::json provenance(const RunConfig& cfg);

nlohmann::json evaluate_report(const RunConfig& cfg, const Corpus& corpus,
                               const model::Net<float>& segment_net,
                               const model::Net<float>& speech_net);

nlohmann::json interpretation_report(const RunConfig& cfg, const Corpus& corpus,
                                     const model::Net<float>& speech_net);

nlohmann::json significance_report(const RunConfig& cfg,
                                   const std::vector<acoustics::AcousticFeatureRow>& rows);

nlohmann::json curves_report(const RunConfig& cfg, const perturb::SuiteResult& suite);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

}  // namespace sdd::cli
