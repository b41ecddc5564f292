#include "sdd/corpus_io.hpp"

#include <filesystem>
#include <stdexcept>

#include "sdd/wav.hpp"

namespace fs = std::filesystem;

namespace sdd {

Corpus load_corpus(const std::string& dir, const dsp::DspConfig& cfg, bool keep_waveforms) {
  cfg.validate();
  Corpus corpus;
  corpus.dsp_config = cfg;
  corpus.manifest = synth::read_manifest((fs::path(dir) / "manifest.jsonl").string());

  corpus.speeches.reserve(corpus.manifest.speakers.size());
  for (const auto& rec : corpus.manifest.speakers) {
    Speech speech;
    speech.speaker_id = rec.speaker_id;
    speech.label = rec.label;
    speech.covariate = rec.covariate;
    speech.split = rec.split;
    if (rec.sentences.empty())
      throw std::runtime_error("corpus: speaker " + rec.speaker_id + " has no sentences");

    int64_t prev_end = -1;
    for (const auto& meta : rec.sentences) {
      if (meta.end_ms <= meta.start_ms || meta.start_ms < prev_end)
        throw std::runtime_error("corpus: non-increasing timestamps for " + rec.speaker_id);
      prev_end = meta.end_ms;

      Sentence s;
      s.start_ms = meta.start_ms;
      s.end_ms = meta.end_ms;
      s.marked = meta.marked;
      s.waveform = wav::read_wav16((fs::path(dir) / meta.path).string());
      auto spec = dsp::log_mel_spectrogram(s.waveform, cfg);
      s.spectrogram = dsp::pad_or_truncate(spec, cfg.target_frames, cfg.pad_value());
      if (!keep_waveforms) {
        s.waveform.samples.clear();
        s.waveform.samples.shrink_to_fit();
      }
      speech.sentences.push_back(std::move(s));
    }
    corpus.speeches.push_back(std::move(speech));
  }
  return corpus;
}

}  // namespace sdd
