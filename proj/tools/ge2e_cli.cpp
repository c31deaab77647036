// Command-line front end: corpus synthesis, preprocessing, training,
// d-vector extraction, and the evaluation protocols.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ge2e/ge2e.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

std::ofstream open_report(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ge2e::Error(ge2e::ErrorKind::IoError, "cannot write " + path);
  out << "experiment,subset,m,eer,far,frr,threshold\n";
  return out;
}

std::string stem_of(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

void cmd_synth(const std::string& out_dir, const ge2e::SynthSpec& spec) {
  const auto manifest = ge2e::generate_synthetic_corpus(spec, out_dir);
  std::cout << "wrote " << manifest.entries.size() << " utterances to "
            << out_dir << "\n";
}

void cmd_preprocess(const std::string& manifest_path, const std::string& out_dir,
                    const std::string& mode) {
  const auto manifest = ge2e::ingest(manifest_path);
  std::filesystem::create_directories(out_dir);
  const ge2e::VadConfig vad;
  const ge2e::FrameSpec spec;
  ge2e::Manifest out_manifest;
  std::size_t kept = 0, dropped = 0;
  for (const auto& e : manifest.entries) {
    const ge2e::Waveform w = ge2e::read_wav(e.path);
    if (w.sample_rate != 16000)
      throw ge2e::Error(ge2e::ErrorKind::FormatError,
                        e.path + ": expected 16 kHz audio, got " +
                            std::to_string(w.sample_rate));
    if (mode == "train") {
      const auto partials = ge2e::preprocess_training_utterance(w, vad, spec);
      int seg = 0;
      for (const auto& pu : partials) {
        ge2e::ManifestEntry fe = e;
        fe.utterance_id = e.utterance_id + "#" + std::to_string(seg);
        fe.path = out_dir + "/" + e.speaker_id + "_" + e.utterance_id + "_seg" +
                  std::to_string(seg) + ".fmx";
        fe.duration_seconds =
            static_cast<double>(pu.features.frames()) * spec.frame_step;
        ge2e::write_feature_matrix(fe.path, pu.features);
        out_manifest.entries.push_back(std::move(fe));
        ++seg;
        ++kept;
      }
      if (partials.empty()) ++dropped;
    } else {
      try {
        const auto fm = ge2e::preprocess_eval_utterance(w, vad, spec);
        ge2e::ManifestEntry fe = e;
        fe.path = out_dir + "/" + e.speaker_id + "_" + e.utterance_id + ".fmx";
        ge2e::write_feature_matrix(fe.path, fm);
        out_manifest.entries.push_back(std::move(fe));
        ++kept;
      } catch (const ge2e::Error& err) {
        if (err.kind() != ge2e::ErrorKind::NoSpeech) throw;
        ++dropped;
      }
    }
  }
  ge2e::write_manifest(out_dir + "/manifest.tsv", out_manifest);
  std::cout << "kept " << kept << " segments, dropped " << dropped
            << " utterances; manifest at " << out_dir << "/manifest.tsv\n";
}

ge2e::TrainCorpus load_corpus(const ge2e::Manifest& manifest) {
  std::map<std::string, ge2e::TrainCorpus::size_type> index;
  ge2e::TrainCorpus corpus;
  for (const auto& e : manifest.entries) {
    auto [it, fresh] = index.try_emplace(e.speaker_id, corpus.size());
    if (fresh) corpus.push_back({e.speaker_id, {}});
    ge2e::FeatureMatrix fm = ge2e::read_feature_matrix(e.path);
    fm.source_id = {e.speaker_id, e.utterance_id, 0};
    corpus[it->second].partials.push_back(std::move(fm));
  }
  return corpus;
}

void cmd_train(const std::string& manifest_path, const std::string& out_dir,
               const ge2e::NetConfig& net_cfg, const ge2e::TrainConfig& cfg) {
  const auto manifest = ge2e::ingest(manifest_path);
  auto entries = manifest.with_split("train");
  if (entries.empty())
    throw ge2e::Error(ge2e::ErrorKind::EmptyManifest, "no train-split entries");
  ge2e::Manifest train_only;
  train_only.entries = std::move(entries);
  const ge2e::TrainCorpus corpus = load_corpus(train_only);
  const auto result = ge2e::train(corpus, net_cfg, cfg, out_dir);
  std::cout << "trained " << result.metrics.size() << " steps; final loss "
            << (result.metrics.empty() ? 0.0 : result.metrics.back().loss)
            << "; checkpoints in " << out_dir << "\n";
}

void cmd_embed(const std::string& checkpoint_path, const std::string& manifest_path,
               const std::string& out_path) {
  const ge2e::Checkpoint ckpt = ge2e::read_checkpoint(checkpoint_path);
  const auto manifest = ge2e::ingest(manifest_path);
  ge2e::DVectorStore store;
  store.dim = ckpt.params.cfg.embedding_dim;
  for (const auto& e : manifest.entries) {
    ge2e::FeatureMatrix fm = ge2e::read_feature_matrix(e.path);
    fm.source_id = {e.speaker_id, e.utterance_id, 0};
    const ge2e::DVector d = ge2e::utterance_dvector(ckpt.params, fm);
    store.records.push_back(
        {e.speaker_id, e.utterance_id, e.duration_seconds, d.vector});
  }
  ge2e::write_dvector_store(out_path, store);
  std::cout << "wrote " << store.records.size() << " d-vectors to " << out_path
            << "\n";
}

void dump_curve(const std::string& path, const ge2e::ErrorRateCurve& curve) {
  std::ofstream out(path);
  if (!out) throw ge2e::Error(ge2e::ErrorKind::IoError, "cannot write " + path);
  out << "threshold,far,frr\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
    out << curve.thresholds[i] << ',' << curve.far[i] << ',' << curve.frr[i]
        << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GE2E text-independent speaker verification"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  ge2e::SynthSpec synth_spec;
  std::string synth_out = "synth_corpus";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--speakers", synth_spec.n_speakers);
  synth->add_option("--utts", synth_spec.utterances_per_speaker);
  synth->add_option("--dur-min", synth_spec.duration_min);
  synth->add_option("--dur-max", synth_spec.duration_max);
  synth->add_option("--noise", synth_spec.noise_level);
  synth->add_option("--seed", synth_spec.seed);
  synth->add_option("--prefix", synth_spec.speaker_prefix);
  synth->add_option("--split", synth_spec.split)
      ->check(CLI::IsMember({"train", "dev", "test"}));
  synth->set_config("--config");

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "WAV manifest to feature files");
  std::string prep_manifest, prep_out = "features", prep_mode = "train";
  std::uint64_t prep_seed = 1;
  prep->add_option("--manifest", prep_manifest)->required();
  prep->add_option("--out", prep_out);
  prep->add_option("--mode", prep_mode)->check(CLI::IsMember({"train", "eval"}));
  prep->add_option("--seed", prep_seed, "unused; accepted for uniformity");
  prep->set_config("--config");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the embedding network");
  std::string train_manifest, train_out = "run";
  ge2e::NetConfig net_cfg;
  ge2e::TrainConfig train_cfg;
  std::string reduction = "mean";
  train_cmd->add_option("--manifest", train_manifest)->required();
  train_cmd->add_option("--out", train_out);
  train_cmd->add_option("--n", train_cfg.batch.n_speakers);
  train_cmd->add_option("--m", train_cfg.batch.m_utterances);
  train_cmd->add_option("--lr", train_cfg.learning_rate);
  train_cmd->add_option("--epochs", train_cfg.epochs);
  train_cmd->add_option("--batches-per-epoch", train_cfg.batches_per_epoch);
  train_cmd->add_option("--checkpoint-interval", train_cfg.checkpoint_interval);
  train_cmd->add_option("--seed", train_cfg.seed);
  train_cmd->add_option("--reduction", reduction)
      ->check(CLI::IsMember({"mean", "sum"}));
  train_cmd->add_option("--hidden", net_cfg.hidden_dim);
  train_cmd->add_option("--embedding", net_cfg.embedding_dim);
  train_cmd->add_option("--layers", net_cfg.num_layers);
  train_cmd->set_config("--config");

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "extract utterance d-vectors");
  std::string emb_ckpt, emb_manifest, emb_out = "dvectors.dvs";
  std::uint64_t emb_seed = 1;
  embed_cmd->add_option("--checkpoint", emb_ckpt)->required();
  embed_cmd->add_option("--manifest", emb_manifest)->required();
  embed_cmd->add_option("--out", emb_out);
  embed_cmd->add_option("--seed", emb_seed, "unused; accepted for uniformity");
  embed_cmd->set_config("--config");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "EER/FAR/FRR at a single M");
  std::string eval_store, eval_report = "report.csv", eval_curve;
  int eval_m = 2, eval_iters = 1000;
  std::uint64_t eval_seed = 1;
  eval_cmd->add_option("--store", eval_store)->required();
  eval_cmd->add_option("--m", eval_m);
  eval_cmd->add_option("--iters", eval_iters);
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--report", eval_report);
  eval_cmd->add_option("--curve", eval_curve, "dump threshold,far,frr CSV");
  eval_cmd->set_config("--config");

  // sweep-m
  auto* sweep_cmd = app.add_subcommand("sweep-m", "mean EER per enrollment size");
  std::string sweep_store, sweep_report = "sweep.csv", sweep_list = "2,3,4,7,10,15";
  int sweep_iters = 1000;
  std::uint64_t sweep_seed = 1;
  sweep_cmd->add_option("--store", sweep_store)->required();
  sweep_cmd->add_option("--m-list", sweep_list);
  sweep_cmd->add_option("--iters", sweep_iters);
  sweep_cmd->add_option("--seed", sweep_seed);
  sweep_cmd->add_option("--report", sweep_report);
  sweep_cmd->set_config("--config");

  // fixed-threshold
  auto* fixed_cmd = app.add_subcommand("fixed-threshold",
                                       "transfer the dev EER threshold to a test set");
  std::string fixed_dev, fixed_test, fixed_report = "fixed.csv";
  int fixed_m = 2, fixed_iters = 1000;
  std::uint64_t fixed_seed = 1;
  fixed_cmd->add_option("--dev", fixed_dev)->required();
  fixed_cmd->add_option("--test", fixed_test)->required();
  fixed_cmd->add_option("--m", fixed_m);
  fixed_cmd->add_option("--iters", fixed_iters);
  fixed_cmd->add_option("--seed", fixed_seed);
  fixed_cmd->add_option("--report", fixed_report);
  fixed_cmd->set_config("--config");

  // duration-split
  auto* dur_cmd = app.add_subcommand("duration-split",
                                     "EER for short/long/all test utterances");
  std::string dur_store, dur_report = "duration.csv";
  double dur_boundary = 4.0;
  int dur_m = 2, dur_iters = 1000;
  std::uint64_t dur_seed = 1;
  dur_cmd->add_option("--store", dur_store)->required();
  dur_cmd->add_option("--boundary", dur_boundary);
  dur_cmd->add_option("--m", dur_m);
  dur_cmd->add_option("--iters", dur_iters);
  dur_cmd->add_option("--seed", dur_seed);
  dur_cmd->add_option("--report", dur_report);
  dur_cmd->set_config("--config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      cmd_synth(synth_out, synth_spec);
    } else if (prep->parsed()) {
      cmd_preprocess(prep_manifest, prep_out, prep_mode);
    } else if (train_cmd->parsed()) {
      train_cfg.reduction =
          reduction == "sum" ? ge2e::Reduction::Sum : ge2e::Reduction::Mean;
      cmd_train(train_manifest, train_out, net_cfg, train_cfg);
    } else if (embed_cmd->parsed()) {
      cmd_embed(emb_ckpt, emb_manifest, emb_out);
    } else if (eval_cmd->parsed()) {
      const auto store = ge2e::read_dvector_store(eval_store);
      const auto report =
          ge2e::run_fixed_threshold(store, store, eval_m, eval_iters, eval_seed);
      auto out = open_report(eval_report);
      out << "evaluate," << stem_of(eval_store) << ',' << eval_m << ','
          << report.dev_eer << ',' << report.far << ',' << report.frr << ','
          << report.threshold << '\n';
      std::cout << "EER " << report.dev_eer << " at threshold "
                << report.threshold << "\n";
      if (!eval_curve.empty()) {
        ge2e::Rng rng = ge2e::Rng::derive(eval_seed, 0);
        const auto split =
            ge2e::detail::sample_split(store.by_speaker(), eval_m, rng);
        dump_curve(eval_curve,
                   ge2e::compute_error_curve(ge2e::detail::score_trials(split)));
      }
    } else if (sweep_cmd->parsed()) {
      const auto store = ge2e::read_dvector_store(sweep_store);
      const auto result = ge2e::run_m_sweep(store, parse_int_list(sweep_list),
                                            sweep_iters, sweep_seed);
      auto out = open_report(sweep_report);
      for (const auto& [m, eer] : result) {
        out << "sweep-m," << stem_of(sweep_store) << ',' << m << ',' << eer
            << ",,,\n";
        std::cout << "M=" << m << " mean EER " << eer << "\n";
      }
    } else if (fixed_cmd->parsed()) {
      const auto dev = ge2e::read_dvector_store(fixed_dev);
      const auto test = ge2e::read_dvector_store(fixed_test);
      const auto report =
          ge2e::run_fixed_threshold(dev, test, fixed_m, fixed_iters, fixed_seed);
      auto out = open_report(fixed_report);
      out << "fixed-threshold," << stem_of(fixed_test) << ',' << fixed_m << ','
          << report.eer << ',' << report.far << ',' << report.frr << ','
          << report.threshold << '\n';
      std::cout << "threshold " << report.threshold << " -> test EER "
                << report.eer << " FAR " << report.far << " FRR " << report.frr
                << "\n";
    } else if (dur_cmd->parsed()) {
      const auto store = ge2e::read_dvector_store(dur_store);
      const auto report = ge2e::run_duration_split(store, dur_boundary, dur_m,
                                                   dur_iters, dur_seed);
      auto out = open_report(dur_report);
      const std::string base = stem_of(dur_store);
      out << "duration-split," << base << "-short," << dur_m << ','
          << report.eer_short << ",,,\n";
      out << "duration-split," << base << "-long," << dur_m << ','
          << report.eer_long << ",,,\n";
      out << "duration-split," << base << "-all," << dur_m << ','
          << report.eer_all << ",,,\n";
      std::cout << "short " << report.eer_short << " long " << report.eer_long
                << " all " << report.eer_all << "\n";
    }
  } catch (const ge2e::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.numerical() ? kExitNumerical : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
