// demux: synthetic corpora, speaker-encoder pretraining, training,
// inference, scoring and gradient checks from one binary.
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "demux/checkpoint.hpp"
#include "demux/config.hpp"
#include "demux/corpus_io.hpp"
#include "demux/gradcheck_suite.hpp"
#include "demux/metrics.hpp"
#include "demux/rttm.hpp"
#include "demux/speaker_encoder.hpp"
#include "demux/synth.hpp"
#include "demux/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace demux;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string preset = "desk";
  std::string out;
  std::string dump_config;
};

void add_common(CLI::App* cmd, Common& c, bool with_preset = true) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for every random choice of the run");
  if (with_preset) cmd->add_option("--preset", c.preset, "hyperparameter preset")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--out", c.out, "output path");
  cmd->add_option("--dump-config", c.dump_config, "write the effective config to this file and exit");
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Preset defaults, then the config file, then explicit flags.
template <typename T>
T layered(json base, const Common& c) {
  if (!c.config.empty()) base.merge_patch(read_json(c.config));
  try {
    return base.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

bool dump(const json& j, const Common& c) {
  if (c.dump_config.empty()) return false;
  std::ofstream out(c.dump_config);
  if (!out) throw ConfigError("cannot write " + c.dump_config);
  out << j.dump(2) << "\n";
  std::cout << "config written to " << c.dump_config << "\n";
  return true;
}

int cmd_synth(const Common& c) {
  SynthJob job;
  if (c.preset == "full") job.synth.feature_dim = 80;
  job = layered<SynthJob>(json(job), c);
  if (c.seed) job.synth.seed = *c.seed;
  if (!c.out.empty()) job.out = c.out;
  if (dump(json(job), c)) return kOk;

  const Corpus corpus = generate_corpus(job.synth);
  const CorpusSplit split = split_corpus(corpus, job.split, job.synth.seed, job.hold_out_speakers);
  const fs::path out(job.out);
  write_corpus(split.train, out / "train");
  write_corpus(split.dev, out / "dev");
  write_corpus(split.test, out / "test");
  const json report = {{"sequences", corpus.samples.size()},
                       {"train", split.train.samples.size()},
                       {"dev", split.dev.samples.size()},
                       {"test", split.test.samples.size()},
                       {"overlap_ratio", corpus.overlap_ratio()},
                       {"speakers", corpus.speakers.size()}};
  std::ofstream(out / "synth_report.json") << report.dump(2) << "\n";
  std::cout << "wrote " << corpus.samples.size() << " sequences (" << split.train.samples.size() << " train, "
            << split.dev.samples.size() << " dev, " << split.test.samples.size() << " test), overlap ratio "
            << corpus.overlap_ratio() << "\nreport: " << (out / "synth_report.json").string() << "\n";
  return kOk;
}

int cmd_pretrain(const Common& c, const std::string& corpus_dir) {
  PretrainConfig base;
  base.model = model_preset(c.preset);
  PretrainConfig cfg = layered<PretrainConfig>(json(base), c);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (!corpus_dir.empty()) cfg.corpus = corpus_dir;
  if (dump(json(cfg), c)) return kOk;
  if (cfg.corpus.empty()) throw ConfigError("pretrain-spk: no corpus given (--corpus or config key 'corpus')");

  const Corpus corpus = read_corpus(cfg.corpus);
  if (corpus.feature_dim != cfg.model.feature_dim) {
    throw DimensionError("corpus has F=" + std::to_string(corpus.feature_dim) + " but the encoder expects F=" +
                         std::to_string(cfg.model.feature_dim));
  }
  const PretrainResult r = pretrain_speaker_encoder(corpus, cfg, [](std::size_t step, Real loss) {
    if (!std::isfinite(loss)) throw ad::DomainError("pretrain", "non-finite loss at step " + std::to_string(step));
    if (step % 50 == 0) std::cerr << "step " << step << " loss " << loss << "\n";
  });
  Checkpoint ckpt = make_checkpoint(r.encoder);
  ckpt.step = r.step_losses.size();
  save_checkpoint(ckpt, cfg.out);
  std::cout << "speaker encoder trained on " << r.classes.size() << " speakers for " << r.step_losses.size()
            << " steps, final loss " << r.step_losses.back() << "\ncheckpoint: " << cfg.out << "\n";
  return kOk;
}

struct TrainFlags {
  std::string train, dev, speaker_encoder, init;
  std::optional<std::size_t> max_steps;
};

int cmd_train(const Common& c, const TrainFlags& f) {
  TrainConfig cfg = layered<TrainConfig>(json(train_preset(c.preset)), c);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!f.train.empty()) cfg.train_corpus = f.train;
  if (!f.dev.empty()) cfg.dev_corpus = f.dev;
  if (!f.speaker_encoder.empty()) cfg.speaker_encoder = f.speaker_encoder;
  if (!f.init.empty()) cfg.init_checkpoint = f.init;
  if (f.max_steps) cfg.max_steps = *f.max_steps;
  if (dump(json(cfg), c)) return kOk;

  const TrainResult r = run_training(cfg, &std::cerr);
  std::cout << "trained " << r.log.size() << " steps, final loss " << r.log.back().total;
  if (r.best_dev_der) std::cout << ", best dev DER " << *r.best_dev_der * 100 << "% at step " << r.best_step;
  std::cout << "\nlog: " << (fs::path(cfg.out_dir) / "train_log.jsonl").string() << "\n";
  return kOk;
}

struct InferFlags {
  std::string checkpoint, features;
  Real threshold = 0.5;
  std::size_t median_window = 1;
};

int cmd_infer(const Common& c, const InferFlags& f) {
  if (c.out.empty()) throw ConfigError("infer: --out <rttm> is required");
  if (f.median_window % 2 == 0) throw ConfigError("infer: --median-window must be odd");
  const EendDemux model = model_from_checkpoint(load_checkpoint(f.checkpoint));
  const Corpus corpus = read_corpus(f.features);
  std::vector<SegmentList> lists;
  std::size_t empty = 0;
  for (const auto& s : corpus.samples) {
    InferResult r = infer(model, s.features, corpus.frame_duration, s.id, f.threshold, f.median_window);
    empty += r.segments.segments.empty();
    lists.push_back(std::move(r.segments));
  }
  rttm_write(lists, c.out);
  std::cout << "wrote " << lists.size() << " recordings (" << empty << " without speech) to " << c.out << "\n";
  return kOk;
}

int cmd_score(const Common& c, const std::string& ref_path, const std::string& hyp_path, Real frame_duration) {
  if (!(frame_duration > 0)) throw ConfigError("score: --frame-duration must be positive");
  const auto refs = rttm_read(ref_path);
  const auto hyps = rttm_read(hyp_path);
  std::map<std::string, const SegmentList*> hyp_of;
  for (const auto& h : hyps) hyp_of[h.recording] = &h;
  std::vector<DerReport> reports;
  for (const auto& ref : refs) {
    SegmentList hyp;
    hyp.recording = ref.recording;
    if (auto it = hyp_of.find(ref.recording); it != hyp_of.end()) hyp = *it->second;
    Real end = 0;
    for (const SegmentList* list : std::initializer_list<const SegmentList*>{&ref, &hyp})
      for (const auto& seg : list->segments) end = std::max(end, seg.onset + seg.duration);
    const auto frames = static_cast<std::size_t>(std::llround(end / frame_duration));
    reports.push_back(der(activity_from_segments(ref, frame_duration, ref.speakers(), frames),
                          activity_from_segments(hyp, frame_duration, hyp.speakers(), frames), frame_duration));
  }
  if (reports.empty()) throw DerError("score: reference RTTM contains no recordings");
  const DerReport total = combine(reports);
  std::cout << "DER " << std::fixed << std::setprecision(2) << total.der * 100 << "% over " << reports.size()
            << " recordings\n"
            << total.to_table();
  if (!c.out.empty()) {
    std::ofstream(c.out) << total.to_json() << "\n";
    std::cout << "report: " << c.out << "\n";
  }
  return kOk;
}

int cmd_gradcheck(const std::string& component, std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_gradcheck(component, seed)) {
    std::cout << r.name << ": " << r.report.summary();
    if (r.redraws) std::cout << " [" << r.redraws << " kinked draws skipped]";
    std::cout << "\n";
    ok = ok && r.report.passed;
  }
  std::cout << (ok ? "all gradient checks passed" : "gradient check FAILED") << "\n";
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEND-DEMUX speaker diarization toolkit"};
  app.require_subcommand(1);

  Common synth_c, pre_c, train_c, infer_c, score_c;
  auto* synth = app.add_subcommand("synth", "generate and split a synthetic corpus");
  add_common(synth, synth_c);

  std::string pre_corpus;
  auto* pretrain = app.add_subcommand("pretrain-spk", "pretrain and freeze the speaker encoder");
  add_common(pretrain, pre_c);
  pretrain->add_option("--corpus", pre_corpus, "corpus directory");

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "train or adapt a diarization model");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--train", tf.train, "training corpus directory");
  train_cmd->add_option("--dev", tf.dev, "dev corpus directory");
  train_cmd->add_option("--speaker-encoder", tf.speaker_encoder, "frozen speaker encoder checkpoint");
  train_cmd->add_option("--init", tf.init, "checkpoint to adapt from");
  train_cmd->add_option("--max-steps", tf.max_steps, "stop after this many optimizer steps");

  InferFlags inf;
  auto* infer_cmd = app.add_subcommand("infer", "diarize every sequence of a corpus directory");
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--features", inf.features, "corpus directory")->required()->check(CLI::ExistingDirectory);
  infer_cmd->add_option("--out", infer_c.out, "hypothesis RTTM")->required();
  infer_cmd->add_option("--threshold", inf.threshold, "posterior decision threshold")->check(CLI::Range(0.0, 1.0));
  infer_cmd->add_option("--median-window", inf.median_window, "odd median filter length in frames");

  std::string ref, hyp;
  Real frame_duration = 0.01;
  auto* score = app.add_subcommand("score", "frame-level DER of a hypothesis RTTM (collar 0)");
  score->add_option("--ref", ref, "reference RTTM")->required()->check(CLI::ExistingFile);
  score->add_option("--hyp", hyp, "hypothesis RTTM")->required()->check(CLI::ExistingFile);
  score->add_option("--frame-duration", frame_duration, "seconds per frame");
  score->add_option("--out", score_c.out, "JSON report path");

  std::string component = "all";
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("component", component, "all, or one of the checked ops and losses")
      ->check(CLI::IsMember([] {
        auto names = gradcheck_components();
        names.push_back("all");
        return names;
      }()));
  gc->add_option("--seed", gc_seed, "seed for the random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*pretrain) return cmd_pretrain(pre_c, pre_corpus);
    if (*train_cmd) return cmd_train(train_c, tf);
    if (*infer_cmd) return cmd_infer(infer_c, inf);
    if (*score) return cmd_score(score_c, ref, hyp, frame_duration);
    if (*gc) return cmd_gradcheck(component, gc_seed);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ad::DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
