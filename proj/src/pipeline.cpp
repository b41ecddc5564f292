#include "sdd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>

#include "sdd/checkpoint.hpp"
#include "sdd/common.hpp"
#include "sdd/relevancy.hpp"
#include "sdd/stats.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace sdd::cli {

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("short write: " + path);
}

json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read: " + path);
  return json::parse(in);
}

json provenance(const RunConfig& cfg) {
  json conf = json::object();
  for (const auto& [k, v] : config_items(cfg)) conf[k] = v;
  return json{{"config", conf}, {"config_hash", config_hash_hex(cfg)}, {"seed", cfg.seed}};
}

namespace {

std::string corpus_dir(const std::string& out_dir) {
  return (fs::path(out_dir) / "corpus").string();
}

Corpus load_pipeline_corpus(const RunConfig& cfg, const std::string& out_dir,
                            bool keep_waveforms) {
  return load_corpus(corpus_dir(out_dir), cfg.dsp, keep_waveforms);
}

model::Net<float> load_net(const std::string& path) {
  auto ckpt = model::load_checkpoint(path);
  return model::Net<float>(ckpt.config, std::move(ckpt.params));
}

json roc_to_json(const std::vector<std::pair<double, double>>& pts) {
  json arr = json::array();
  for (const auto& [fpr, tpr] : pts) arr.push_back(json::array({fpr, tpr}));
  return arr;
}

}  // namespace

void stage_synth(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  synth::generate_corpus(cfg.synth, cfg.seed, corpus_dir(out_dir));
}

std::string stage_train(const RunConfig& cfg, const std::string& out_dir,
                        const std::string& variant) {
  const auto corpus = load_pipeline_corpus(cfg, out_dir, /*keep_waveforms=*/false);
  model::TrainConfig tcfg = cfg.train;
  tcfg.variant = variant;
  auto result = model::train(corpus, cfg.model, tcfg);

  std::map<std::string, std::string> meta = model::dsp_config_to_kv(cfg.dsp);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", corpus.prevalence());
  meta["train.prevalence"] = buf;
  meta["train.best_epoch"] = std::to_string(result.best_epoch);
  std::snprintf(buf, sizeof buf, "%.17g", result.best_dev_loss);
  meta["train.best_dev_loss"] = buf;
  meta["train.seed"] = std::to_string(cfg.seed);
  meta["run.config_hash"] = config_hash_hex(cfg);

  const std::string ckpt_path = (fs::path(out_dir) / (variant + ".ckpt")).string();
  model::save_checkpoint(ckpt_path, result.model_config, result.best_params, meta);

  json history = json::array();
  for (const auto& e : result.history) {
    history.push_back(json{{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"dev_loss", e.dev_loss},
                           {"lr", e.lr}});
  }
  json report = provenance(cfg);
  report["variant"] = variant;
  report["best_epoch"] = result.best_epoch;
  report["best_dev_loss"] = result.best_dev_loss;
  report["history"] = history;
  write_json((fs::path(out_dir) / ("train_" + variant + ".json")).string(), report);
  return ckpt_path;
}

json evaluate_report(const RunConfig& cfg, const Corpus& corpus,
                     const model::Net<float>& segment_net, const model::Net<float>& speech_net) {
  const auto cohort_a = model::score_split(segment_net, corpus, "dev");
  const auto cohort_b = model::score_split(speech_net, corpus, "dev");

  const double auc_a = stats::auc(cohort_a);
  const double auc_b = stats::auc(cohort_b);
  const auto ci_a =
      stats::bootstrap_auc_ci(cohort_a, cfg.eval_n_boot, cfg.eval_alpha, splitmix64(cfg.seed ^ 0xB001));
  const auto ci_b =
      stats::bootstrap_auc_ci(cohort_b, cfg.eval_n_boot, cfg.eval_alpha, splitmix64(cfg.seed ^ 0xB002));
  const auto delong = stats::delong_test(cohort_a.scores, cohort_b.scores, cohort_a.labels);

  const auto dev = corpus.split_indices("dev");
  json speakers = json::array();
  for (size_t i = 0; i < dev.size(); ++i) {
    speakers.push_back(json{{"speaker_id", corpus.speeches[dev[i]].speaker_id},
                            {"label", cohort_a.labels[i]},
                            {"score_segment", cohort_a.scores[i]},
                            {"score_speech", cohort_b.scores[i]}});
  }

  json report = provenance(cfg);
  report["n_dev"] = dev.size();
  report["prevalence"] = corpus.prevalence();
  report["segment"] = json{{"auc", auc_a},
                           {"ci", json::array({ci_a.lo, ci_a.hi})},
                           {"roc", roc_to_json(stats::roc_points(cohort_a))}};
  report["speech"] = json{{"auc", auc_b},
                          {"ci", json::array({ci_b.lo, ci_b.hi})},
                          {"roc", roc_to_json(stats::roc_points(cohort_b))}};
  report["delong"] = json{{"z", delong.z}, {"p", delong.p}, {"degenerate", delong.degenerate}};
  report["n_boot"] = cfg.eval_n_boot;
  report["alpha"] = cfg.eval_alpha;
  report["speakers"] = speakers;
  return report;
}

void stage_evaluate(const RunConfig& cfg, const std::string& out_dir) {
  const auto corpus = load_pipeline_corpus(cfg, out_dir, false);
  auto segment_net = load_net((fs::path(out_dir) / "segment.ckpt").string());
  auto speech_net = load_net((fs::path(out_dir) / "speech.ckpt").string());
  write_json((fs::path(out_dir) / "evaluate.json").string(),
             evaluate_report(cfg, corpus, segment_net, speech_net));
}

json interpretation_report(const RunConfig& cfg, const Corpus& corpus,
                           const model::Net<float>& speech_net) {
  const double threshold = corpus.prevalence();
  const int sr = corpus.dsp_config.sample_rate;

  json speakers = json::array();
  double marked_fraction_sum = 0.0;
  int n_tp = 0;
  for (size_t idx : corpus.split_indices("dev")) {
    const auto& speech = corpus.speeches[idx];
    std::vector<const dsp::MelSpectrogram*> specs;
    for (const auto& s : speech.sentences) specs.push_back(&s.spectrogram);

    const double prob = model::speech_probability(speech_net, speech);
    const int predicted = prob > threshold ? 1 : 0;
    const auto interp = relevancy::interpret(speech_net, specs, cfg.interpret_k,
                                             cfg.interpret_tau, predicted, corpus.dsp_config);

    int marked_in_top = 0;
    json per_sentence = json::array();
    for (const auto& si : interp.per_sentence) {
      const auto& sent = speech.sentences[si.sentence_index];
      if (sent.marked) ++marked_in_top;
      json spans = json::array();
      for (const auto& span : si.spans) {
        const int64_t a = sent.start_ms + 1000 * span.begin / sr;
        const int64_t b = sent.start_ms + 1000 * span.end / sr;
        spans.push_back(json::array({a, b}));
      }
      per_sentence.push_back(json{{"sentence_index", si.sentence_index},
                                  {"score", si.score},
                                  {"marked", sent.marked},
                                  {"frames", si.frames},
                                  {"frame_scores", si.frame_scores},
                                  {"relevant_frames", si.relevant_frames},
                                  {"spans_ms", spans},
                                  {"degenerate_minmax", si.degenerate_minmax}});
    }
    const double frac = interp.top_sentences.empty()
                            ? 0.0
                            : static_cast<double>(marked_in_top) /
                                  static_cast<double>(interp.top_sentences.size());
    const bool is_tp = predicted == 1 && speech.label == 1;
    if (is_tp) {
      marked_fraction_sum += frac;
      ++n_tp;
    }
    speakers.push_back(json{{"speaker_id", speech.speaker_id},
                            {"label", speech.label},
                            {"predicted", predicted},
                            {"probability", prob},
                            {"target_class", interp.target_class},
                            {"sentence_scores", interp.sentence_scores},
                            {"top_sentences", interp.top_sentences},
                            {"marked_fraction_topk", frac},
                            {"k_truncated", interp.k_truncated},
                            {"sentences", per_sentence}});
  }

  json report = provenance(cfg);
  report["k"] = cfg.interpret_k;
  report["tau"] = cfg.interpret_tau;
  report["threshold"] = threshold;
  report["n_tp"] = n_tp;
  report["mean_marked_fraction_topk_tp"] =
      n_tp > 0 ? marked_fraction_sum / static_cast<double>(n_tp) : 0.0;
  report["speakers"] = speakers;
  return report;
}

void stage_interpret(const RunConfig& cfg, const std::string& out_dir) {
  const auto corpus = load_pipeline_corpus(cfg, out_dir, false);
  auto speech_net = load_net((fs::path(out_dir) / "speech.ckpt").string());
  write_json((fs::path(out_dir) / "interpretations.json").string(),
             interpretation_report(cfg, corpus, speech_net));
}

json significance_report(const RunConfig& cfg,
                         const std::vector<acoustics::AcousticFeatureRow>& rows) {
  struct Feature {
    std::string name;
    std::function<std::optional<double>(const acoustics::AcousticFeatureRow&)> get;
  };
  const std::vector<Feature> features = {
      {"loudness_db", [](const auto& r) { return std::optional<double>(r.loudness_db); }},
      {"f0_hz", [](const auto& r) { return r.f0_hz; }},
      {"spectral_centroid_hz",
       [](const auto& r) { return std::optional<double>(r.spectral_centroid_hz); }},
      {"zcr", [](const auto& r) { return std::optional<double>(r.zcr); }},
  };

  json per_feature = json::object();
  std::vector<double> p_values;
  std::vector<std::string> tested;
  for (const auto& feat : features) {
    std::vector<double> values;
    std::vector<int> covariates;
    std::vector<int> groups;  // 1 = TP, 0 = TN
    for (const auto& r : rows) {
      if (r.empty_spans) continue;
      if (r.outcome != acoustics::Outcome::TP && r.outcome != acoustics::Outcome::TN) continue;
      const auto v = feat.get(r);
      if (!v) continue;
      values.push_back(*v);
      covariates.push_back(r.covariate);
      groups.push_back(r.outcome == acoustics::Outcome::TP ? 1 : 0);
    }
    json entry{{"n_tp", std::count(groups.begin(), groups.end(), 1)},
               {"n_tn", std::count(groups.begin(), groups.end(), 0)}};
    std::vector<double> tp_vals, tn_vals;
    bool tested_ok = false;
    try {
      const auto resid = stats::residualize_standardize(values, covariates);
      for (size_t i = 0; i < resid.values.size(); ++i)
        (groups[i] ? tp_vals : tn_vals).push_back(resid.values[i]);
      const auto mw = stats::mann_whitney_u(tp_vals, tn_vals);
      auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const size_t n = v.size();
        return n == 0 ? 0.0 : (n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
      };
      entry["u"] = mw.u;
      entry["p"] = mw.p;
      entry["exact"] = mw.exact;
      entry["median_tp"] = median(tp_vals);
      entry["median_tn"] = median(tn_vals);
      entry["direction"] = median(tp_vals) < median(tn_vals) ? "lower" : "higher";
      entry["degenerate_residuals"] = resid.degenerate;
      entry["violin"] = json{{"tp", tp_vals}, {"tn", tn_vals}};
      p_values.push_back(mw.p);
      tested.push_back(feat.name);
      tested_ok = true;
    } catch (const std::exception& e) {
      entry["error"] = e.what();
    }
    entry["tested"] = tested_ok;
    per_feature[feat.name] = entry;
  }

  json report = provenance(cfg);
  if (!p_values.empty()) {
    std::vector<double> padded = p_values;
    const int m = cfg.bonferroni_m > 0 ? cfg.bonferroni_m : static_cast<int>(p_values.size());
    while (static_cast<int>(padded.size()) < m) padded.push_back(1.0);
    const auto bonf = stats::bonferroni(padded, 0.05);
    report["m"] = bonf.m;
    report["tiers"] = json{{"one", bonf.t1}, {"two", bonf.t2}, {"three", bonf.t3}};
    const char* tier_names[] = {"ns", "*", "**", "***"};
    for (size_t i = 0; i < tested.size(); ++i) {
      per_feature[tested[i]]["tier"] = tier_names[static_cast<int>(bonf.tiers[i])];
    }
  }
  report["features"] = per_feature;
  return report;
}

void stage_features(const RunConfig& cfg, const std::string& out_dir) {
  const auto corpus = load_pipeline_corpus(cfg, out_dir, /*keep_waveforms=*/true);
  auto speech_net = load_net((fs::path(out_dir) / "speech.ckpt").string());
  const auto rows =
      acoustics::cohort_feature_table(speech_net, corpus, cfg.interpret_k, cfg.interpret_tau);
  acoustics::write_feature_csv((fs::path(out_dir) / "features.csv").string(), rows);
  write_json((fs::path(out_dir) / "significance.json").string(),
             significance_report(cfg, rows));
}

json curves_report(const RunConfig& cfg, const perturb::SuiteResult& suite) {
  json curves = json::object();
  for (const auto& c : suite.curves) {
    curves[perturb::mode_name(c.mode)] = json{{"x", c.x}, {"y", c.y}, {"tau", c.tau}};
  }
  json report = provenance(cfg);
  report["prevalence"] = suite.prevalence;
  report["accuracy_floor"] = suite.accuracy_floor;
  report["curves"] = curves;
  report["n_seeds"] = cfg.perturb_n_seeds;
  report["sentence_step"] = cfg.perturb_sentence_step;
  return report;
}

void stage_perturb(const RunConfig& cfg, const std::string& out_dir) {
  const auto corpus = load_pipeline_corpus(cfg, out_dir, false);
  auto speech_net = load_net((fs::path(out_dir) / "speech.ckpt").string());
  std::vector<uint64_t> seeds;
  for (int i = 0; i < cfg.perturb_n_seeds; ++i) seeds.push_back(splitmix64(cfg.seed ^ (0xFEED + i)));
  const auto suite =
      perturb::perturbation_suite(speech_net, corpus, cfg.perturb_sentence_step,
                                  cfg.interpret_tau, seeds, cfg.perturb_random_frame_fraction);
  write_json((fs::path(out_dir) / "curves.json").string(), curves_report(cfg, suite));
}

void stage_summary(const RunConfig& cfg, const std::string& out_dir) {
  const fs::path out(out_dir);
  const auto manifest = synth::read_manifest((out / "corpus" / "manifest.jsonl").string());
  int n_dep = 0, n_train = 0, n_dev = 0;
  for (const auto& s : manifest.speakers) {
    n_dep += s.label;
    if (s.split == "train") ++n_train;
    if (s.split == "dev") ++n_dev;
  }

  const auto train_speech = read_json((out / "train_speech.json").string());
  const auto train_segment = read_json((out / "train_segment.json").string());
  const auto evaluation = read_json((out / "evaluate.json").string());
  const auto interpretation = read_json((out / "interpretations.json").string());
  const auto significance = read_json((out / "significance.json").string());
  const auto curves = read_json((out / "curves.json").string());

  json summary = provenance(cfg);
  summary["corpus"] = json{{"n_speakers", manifest.speakers.size()},
                           {"n_depressed", n_dep},
                           {"n_train", n_train},
                           {"n_dev", n_dev},
                           {"prevalence", manifest.prevalence()}};
  summary["training"] = json{
      {"speech", json{{"best_epoch", train_speech.at("best_epoch")},
                      {"best_dev_loss", train_speech.at("best_dev_loss")},
                      {"history", train_speech.at("history")}}},
      {"segment", json{{"best_epoch", train_segment.at("best_epoch")},
                       {"best_dev_loss", train_segment.at("best_dev_loss")},
                       {"history", train_segment.at("history")}}}};
  summary["evaluation"] = json{{"segment_auc", evaluation.at("segment").at("auc")},
                               {"segment_ci", evaluation.at("segment").at("ci")},
                               {"speech_auc", evaluation.at("speech").at("auc")},
                               {"speech_ci", evaluation.at("speech").at("ci")},
                               {"delong", evaluation.at("delong")}};
  summary["interpretation"] =
      json{{"n_tp", interpretation.at("n_tp")},
           {"mean_marked_fraction_topk_tp", interpretation.at("mean_marked_fraction_topk_tp")},
           {"k", interpretation.at("k")},
           {"tau", interpretation.at("tau")}};
  summary["features"] = json{{"m", significance.value("m", 0)},
                             {"per_feature", json::object()}};
  for (auto& [name, entry] : significance.at("features").items()) {
    json slim = json::object();
    for (const char* key : {"p", "tier", "direction", "median_tp", "median_tn", "tested"}) {
      if (entry.contains(key)) slim[key] = entry.at(key);
    }
    summary["features"]["per_feature"][name] = slim;
  }
  summary["perturbation"] = json{{"prevalence", curves.at("prevalence")},
                                 {"accuracy_floor", curves.at("accuracy_floor")},
                                 {"curves", curves.at("curves")}};
  write_json((out / "summary.json").string(), summary);
}

int run_pipeline(const RunConfig& cfg, const std::string& out_dir, const PipelineOptions& opt) {
  struct Stage {
    std::string name;
    std::function<void()> run;
  };
  std::vector<Stage> stages;
  const bool all = opt.stage == "all";
  if (all || opt.stage == "synth")
    stages.push_back({"synth", [&] { stage_synth(cfg, out_dir); }});
  if (all || opt.stage == "train") {
    if (all || opt.variant == "both" || opt.variant == "speech")
      stages.push_back({"train-speech", [&] { stage_train(cfg, out_dir, "speech"); }});
    if (all || opt.variant == "both" || opt.variant == "segment")
      stages.push_back({"train-segment", [&] { stage_train(cfg, out_dir, "segment"); }});
  }
  if (all || opt.stage == "evaluate")
    stages.push_back({"evaluate", [&] { stage_evaluate(cfg, out_dir); }});
  if (all || opt.stage == "interpret")
    stages.push_back({"interpret", [&] { stage_interpret(cfg, out_dir); }});
  if (all || opt.stage == "features")
    stages.push_back({"features", [&] { stage_features(cfg, out_dir); }});
  if (all || opt.stage == "perturb")
    stages.push_back({"perturb", [&] { stage_perturb(cfg, out_dir); }});
  if (all || opt.stage == "summary")
    stages.push_back({"summary", [&] { stage_summary(cfg, out_dir); }});

  if (stages.empty()) {
    std::fprintf(stderr, "pipeline: unknown stage '%s'\n", opt.stage.c_str());
    return 2;
  }
  fs::create_directories(out_dir);
  for (const auto& stage : stages) {
    try {
      std::fprintf(stderr, "[pipeline] stage %s\n", stage.name.c_str());
      stage.run();
    } catch (const std::exception& e) {
      std::fprintf(stderr, "[pipeline] stage %s failed: %s\n", stage.name.c_str(), e.what());
      std::ofstream marker(fs::path(out_dir) / "failed_stage.txt");
      marker << stage.name << "\n" << e.what() << "\n";
      return 1;
    }
  }
  return 0;
}

}  // namespace sdd::cli
