// Command-line driver: corpus synthesis, training, evaluation,
// interpretation, acoustic feature analysis and perturbation testing.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sdd/checkpoint.hpp"
#include "sdd/common.hpp"
#include "sdd/config.hpp"
#include "sdd/corpus_io.hpp"
#include "sdd/pipeline.hpp"
#include "sdd/relevancy.hpp"
#include "sdd/stats.hpp"
#include "sdd/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string preset = "toy";
  std::optional<uint64_t> seed;
};

sdd::cli::RunConfig build_config(const CommonOpts& opts) {
  auto cfg = sdd::cli::make_preset(opts.preset);
  if (!opts.config_path.empty()) sdd::cli::apply_config_file(cfg, opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  sdd::cli::finalize(cfg);
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Config file (key = value lines)");
  cmd->add_option("--preset", opts.preset, "Preset: toy | paper-scale")
      ->check(CLI::IsMember({"toy", "paper-scale"}));
  cmd->add_option("--seed", opts.seed, "Master seed");
}

sdd::model::Net<float> load_net(const std::string& path) {
  auto ckpt = sdd::model::load_checkpoint(path);
  return sdd::model::Net<float>(ckpt.config, std::move(ckpt.params));
}

sdd::dsp::DspConfig dsp_from_ckpt(const std::string& path) {
  return sdd::model::dsp_config_from_kv(sdd::model::load_checkpoint(path).meta);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech-level depression detection with frame-based attention interpretation"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string out, corpus_dir, ckpt_path, ckpt_a, ckpt_b, speaker, table, variant = "speech";
  std::string stage = "all", pipeline_variant = "both";
  int k = 5, n_seeds = 5, step = 0, m_override = 0;
  double tau = 0.3;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  add_common(synth, opts);
  synth->add_option("--out", out, "Output corpus directory")->required();

  auto* train = app.add_subcommand("train", "Train one model variant");
  add_common(train, opts);
  train->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  train->add_option("--variant", variant, "speech | segment")
      ->check(CLI::IsMember({"speech", "segment"}));
  train->add_option("--out", ckpt_path, "Checkpoint output path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "AUCs, bootstrap CIs, DeLong test");
  add_common(evaluate, opts);
  evaluate->add_option("--ckpt-a", ckpt_a, "Segment-level checkpoint")->required();
  evaluate->add_option("--ckpt-b", ckpt_b, "Speech-level checkpoint")->required();
  evaluate->add_option("--corpus", corpus_dir)->required();
  evaluate->add_option("--out", out, "Report JSON path")->required();

  auto* interpret = app.add_subcommand("interpret", "Relevancy interpretation for one speaker");
  interpret->add_option("--ckpt", ckpt_path)->required();
  interpret->add_option("--corpus", corpus_dir)->required();
  interpret->add_option("--speaker", speaker, "Speaker id")->required();
  interpret->add_option("--k", k, "Top sentences");
  interpret->add_option("--tau", tau, "Relevancy threshold");
  interpret->add_option("--out", out, "Output JSON path")->required();

  auto* features = app.add_subcommand("features", "Acoustic feature table over the dev split");
  features->add_option("--ckpt", ckpt_path)->required();
  features->add_option("--corpus", corpus_dir)->required();
  features->add_option("--k", k);
  features->add_option("--tau", tau);
  features->add_option("--out", out, "CSV output path")->required();

  auto* compare = app.add_subcommand("compare-features", "Mann-Whitney tests on a feature table");
  add_common(compare, opts);
  compare->add_option("--table", table, "features.csv path")->required();
  compare->add_option("--m", m_override, "Bonferroni m (0 = number of features)");
  compare->add_option("--out", out, "Output JSON path")->required();

  auto* perturb = app.add_subcommand("perturb", "Faithfulness perturbation curves");
  add_common(perturb, opts);
  perturb->add_option("--ckpt", ckpt_path)->required();
  perturb->add_option("--corpus", corpus_dir)->required();
  perturb->add_option("--step", step, "Sentences removed per step (0 = config value)");
  perturb->add_option("--tau", tau);
  perturb->add_option("--seeds", n_seeds, "Number of random-baseline seeds");
  perturb->add_option("--out", out, "Output JSON path")->required();

  auto* pipeline = app.add_subcommand("pipeline", "Run the full experiment end to end");
  add_common(pipeline, opts);
  pipeline->add_option("--out", out, "Output directory")->required();
  pipeline->add_option("--stage", stage,
                       "all | synth | train | evaluate | interpret | features | perturb | summary");
  pipeline->add_option("--variant", pipeline_variant, "For --stage train: speech | segment | both");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      auto cfg = build_config(opts);
      sdd::synth::generate_corpus(cfg.synth, cfg.seed, out);
      return 0;
    }
    if (train->parsed()) {
      auto cfg = build_config(opts);
      const auto corpus = sdd::load_corpus(corpus_dir, cfg.dsp, false);
      sdd::model::TrainConfig tcfg = cfg.train;
      tcfg.variant = variant;
      auto result = sdd::model::train(corpus, cfg.model, tcfg);
      auto meta = sdd::model::dsp_config_to_kv(cfg.dsp);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", corpus.prevalence());
      meta["train.prevalence"] = buf;
      meta["train.best_epoch"] = std::to_string(result.best_epoch);
      meta["train.seed"] = std::to_string(cfg.seed);
      meta["run.config_hash"] = sdd::cli::config_hash_hex(cfg);
      sdd::model::save_checkpoint(ckpt_path, result.model_config, result.best_params, meta);
      std::printf("best epoch %d, dev loss %.6f\n", result.best_epoch, result.best_dev_loss);
      return 0;
    }
    if (evaluate->parsed()) {
      auto cfg = build_config(opts);
      cfg.dsp = dsp_from_ckpt(ckpt_b);
      sdd::cli::finalize(cfg);
      const auto corpus = sdd::load_corpus(corpus_dir, cfg.dsp, false);
      auto seg = load_net(ckpt_a);
      auto spe = load_net(ckpt_b);
      sdd::cli::write_json(out, sdd::cli::evaluate_report(cfg, corpus, seg, spe));
      return 0;
    }
    if (interpret->parsed()) {
      const auto dcfg = dsp_from_ckpt(ckpt_path);
      auto net = load_net(ckpt_path);
      const auto corpus = sdd::load_corpus(corpus_dir, dcfg, false);
      const sdd::Speech* speech = nullptr;
      for (const auto& s : corpus.speeches)
        if (s.speaker_id == speaker) speech = &s;
      if (!speech) throw std::runtime_error("speaker not found: " + speaker);
      std::vector<const sdd::dsp::MelSpectrogram*> specs;
      for (const auto& s : speech->sentences) specs.push_back(&s.spectrogram);
      const double prob = sdd::model::speech_probability(net, *speech);
      const double threshold = corpus.prevalence();
      const int predicted = prob > threshold ? 1 : 0;
      const auto interp = sdd::relevancy::interpret(net, specs, k, tau, predicted, dcfg);
      json per_sentence = json::array();
      const int sr = dcfg.sample_rate;
      for (const auto& si : interp.per_sentence) {
        const auto& sent = speech->sentences[si.sentence_index];
        json spans = json::array();
        for (const auto& span : si.spans) {
          spans.push_back(json::array({sent.start_ms + 1000 * span.begin / sr,
                                       sent.start_ms + 1000 * span.end / sr}));
        }
        per_sentence.push_back(json{{"sentence_index", si.sentence_index},
                                    {"score", si.score},
                                    {"frames", si.frames},
                                    {"frame_scores", si.frame_scores},
                                    {"relevant_frames", si.relevant_frames},
                                    {"spans_ms", spans},
                                    {"degenerate_minmax", si.degenerate_minmax}});
      }
      sdd::cli::write_json(out, json{{"speaker_id", speaker},
                                     {"probability", prob},
                                     {"target_class", interp.target_class},
                                     {"k", k},
                                     {"tau", tau},
                                     {"sentence_scores", interp.sentence_scores},
                                     {"top_sentences", interp.top_sentences},
                                     {"k_truncated", interp.k_truncated},
                                     {"sentences", per_sentence}});
      return 0;
    }
    if (features->parsed()) {
      const auto dcfg = dsp_from_ckpt(ckpt_path);
      auto net = load_net(ckpt_path);
      const auto corpus = sdd::load_corpus(corpus_dir, dcfg, true);
      const auto rows = sdd::acoustics::cohort_feature_table(net, corpus, k, tau);
      sdd::acoustics::write_feature_csv(out, rows);
      return 0;
    }
    if (compare->parsed()) {
      auto cfg = build_config(opts);
      if (m_override > 0) cfg.bonferroni_m = m_override;
      const auto rows = sdd::acoustics::read_feature_csv(table);
      sdd::cli::write_json(out, sdd::cli::significance_report(cfg, rows));
      return 0;
    }
    if (perturb->parsed()) {
      auto cfg = build_config(opts);
      cfg.dsp = dsp_from_ckpt(ckpt_path);
      sdd::cli::finalize(cfg);
      if (step > 0) cfg.perturb_sentence_step = step;
      cfg.interpret_tau = tau;
      cfg.perturb_n_seeds = n_seeds;
      const auto corpus = sdd::load_corpus(corpus_dir, cfg.dsp, false);
      auto net = load_net(ckpt_path);
      std::vector<uint64_t> seeds;
      for (int i = 0; i < cfg.perturb_n_seeds; ++i)
        seeds.push_back(sdd::splitmix64(cfg.seed ^ (0xFEED + i)));
      const auto suite = sdd::perturb::perturbation_suite(
          net, corpus, cfg.perturb_sentence_step, cfg.interpret_tau, seeds,
          cfg.perturb_random_frame_fraction);
      sdd::cli::write_json(out, sdd::cli::curves_report(cfg, suite));
      return 0;
    }
    if (pipeline->parsed()) {
      auto cfg = build_config(opts);
      sdd::cli::PipelineOptions popt;
      popt.stage = stage;
      popt.variant = pipeline_variant;
      return sdd::cli::run_pipeline(cfg, out, popt);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
