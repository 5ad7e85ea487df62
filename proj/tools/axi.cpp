// axi: command-line pipeline over the library (synth, split, preprocess,
// train, eval, threshold, workload, serve).

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "axi/ingest/split.hpp"
#include "axi/ingest/synth.hpp"
#include "axi/preprocess/store.hpp"
#include "axi/service/server.hpp"
#include "axi/train/report.hpp"
#include "axi/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace axi;

namespace {

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw CliError(std::string(what) + " " + p.string() + " does not exist");
}

// Rewrites slice paths so the manifest can live in `dir` and still find images.
ingest::DatasetManifest relocate(ingest::DatasetManifest m, const fs::path& dir) {
  const fs::path base = fs::weakly_canonical(dir);
  for (auto& r : m.records) {
    for (auto& s : r.slices) s.path = fs::weakly_canonical(m.resolve(s)).lexically_relative(base).generic_string();
  }
  m.base_dir = dir;
  return m;
}

void print_counts(const char* name, const ingest::DatasetManifest& m) {
  std::cout << name << '\t' << m.records.size() << " joints\t" << m.count(ingest::Label::kDefect) << " defect\n";
}

// joint_id <TAB> score <TAB> label(0/1), '#' comments allowed
train::EvalReport report_from_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CliError("cannot read scores " + path.string());
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> labels;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    std::string id, label;
    double s = 0;
    if (!(f >> id >> s >> label) || (label != "0" && label != "1" && label != "normal" && label != "defect")) {
      throw CliError(path.string() + " line " + std::to_string(n) + ": expected joint_id, score, label");
    }
    ids.push_back(id);
    scores.push_back(s);
    labels.push_back(label == "1" || label == "defect");
  }
  return train::make_report(ids, scores, labels);
}

std::vector<std::pair<std::string, fs::path>> named_paths(const std::vector<std::string>& specs) {
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw CliError("expected NAME=PATH, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

axi::service::TriageService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Solder-joint X-ray defect classification pipeline"};
  app.require_subcommand(1);

  // synth
  ingest::SynthConfig synth;
  fs::path synth_out;
  auto* c_synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
  c_synth->add_option("--seed", synth.seed, "generator seed");
  c_synth->add_option("--joints", synth.joints, "number of joints");
  c_synth->add_option("--defect-fraction", synth.defect_fraction);
  c_synth->add_option("--roi-noise", synth.roi_noise, "probability a recorded ROI is shifted or shrunk");
  c_synth->add_option("--image-bound", synth.image_bound, "slice images are bound x bound pixels");
  c_synth->add_option("--boards", synth.board_types, "number of board types");
  c_synth->add_option("--out", synth_out, "output directory")->required();

  // split
  fs::path split_manifest, split_out;
  ingest::SplitFractions fractions;
  std::uint64_t split_seed = 0;
  bool no_balance = false;
  auto* c_split = app.add_subcommand("split", "board-disjoint train/val/test split; balances train");
  c_split->add_option("--manifest", split_manifest)->required();
  c_split->add_option("--seed", split_seed);
  c_split->add_option("--train", fractions.train);
  c_split->add_option("--val", fractions.val);
  c_split->add_option("--test", fractions.test);
  c_split->add_flag("--no-balance", no_balance, "keep the training split's class ratio");
  c_split->add_option("--out", split_out)->required();

  // preprocess
  fs::path pre_manifest, pre_out;
  preprocess::PreprocessConfig pre;
  auto* c_pre = app.add_subcommand("preprocess", "crop, pad and resize every joint into a patch store");
  c_pre->add_option("--manifest", pre_manifest)->required();
  c_pre->add_option("--side", pre.side, "patch side (must match the model variant)");
  c_pre->add_option("--out", pre_out)->required();

  // train
  std::string arch = "cnn3d", variant = "full";
  fs::path train_store, val_store, ckpt_out, log_out;
  train::TrainConfig tc;
  auto* c_train = app.add_subcommand("train", "train a model on a patch store");
  c_train->add_option("--arch", arch)->check(CLI::IsMember({"cnn3d", "lstm"}));
  c_train->add_option("--variant", variant)->check(CLI::IsMember({"full", "shrunken", "desk"}));
  c_train->add_option("--train", train_store, "training patch store")->required();
  c_train->add_option("--val", val_store, "validation patch store")->required();
  c_train->add_option("--lr", tc.adam.learning_rate);
  c_train->add_option("--decay", tc.adam.decay);
  c_train->add_option("--batch", tc.batch_size);
  c_train->add_option("--epochs", tc.epochs);
  c_train->add_option("--seed", tc.seed);
  c_train->add_flag("--keep-best", tc.keep_best_val, "keep the epoch with the best validation AUROC");
  c_train->add_option("--out", ckpt_out, "checkpoint file")->required();
  c_train->add_option("--log", log_out, "per-epoch training log (tsv)");

  // eval
  fs::path ev_ckpt, ev_store, ev_manifest, ev_scores, ev_out, ev_roc;
  auto* c_eval = app.add_subcommand("eval", "score a split and write an evaluation report");
  auto* o_ck = c_eval->add_option("--checkpoint", ev_ckpt);
  auto* o_store = c_eval->add_option("--store", ev_store, "patch store to score");
  auto* o_man = c_eval->add_option("--manifest", ev_manifest, "manifest to preprocess and score");
  auto* o_scores = c_eval->add_option("--scores", ev_scores, "precomputed joint_id/score/label tsv");
  o_store->excludes(o_man)->excludes(o_scores)->needs(o_ck);
  o_man->excludes(o_scores)->needs(o_ck);
  o_scores->excludes(o_ck);
  c_eval->add_option("--out", ev_out, "report json");
  c_eval->add_option("--roc", ev_roc, "roc tsv");

  // threshold
  fs::path th_report, th_apply;
  double th_target = 0.90;
  auto* c_th = app.add_subcommand("threshold", "pick the operating threshold for a recall target");
  c_th->add_option("--report", th_report, "report the threshold is chosen on (validation)")->required();
  c_th->add_option("--target", th_target, "minimum recall");
  c_th->add_option("--apply", th_apply, "report to measure the chosen threshold on (test)");

  // workload
  std::vector<std::string> wl_models, wl_vals;
  std::vector<double> wl_targets{0.90, 0.95};
  auto* c_wl = app.add_subcommand("workload", "false-call workload table per model");
  c_wl->add_option("--model", wl_models, "NAME=test_report.json")->required();
  c_wl->add_option("--val", wl_vals, "NAME=val_report.json; thresholds come from here when given");
  c_wl->add_option("--targets", wl_targets)->delimiter(',');

  // serve
  std::string listen = "127.0.0.1:8080";
  fs::path sv_ckpt, sv_log, sv_static;
  double sv_threshold = 0.5;
  auto* c_serve = app.add_subcommand("serve", "HTTP scoring and triage service");
  c_serve->add_option("--listen", listen, "host:port")->envname("AXI_LISTEN");
  c_serve->add_option("--checkpoint", sv_ckpt)->envname("AXI_CHECKPOINT")->required();
  c_serve->add_option("--threshold", sv_threshold)->envname("AXI_THRESHOLD")->required();
  c_serve->add_option("--log", sv_log, "append-only triage event log")->envname("AXI_LOG")->required();
  c_serve->add_option("--static", sv_static, "UI bundle directory")->envname("AXI_STATIC");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "axi: error: " << e.what() << '\n';
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    std::cout << std::setprecision(6) << std::fixed;
    if (*c_synth) {
      const auto m = ingest::generate_synthetic(synth, synth_out);
      print_counts("synth", m);
    } else if (*c_split) {
      require_file(split_manifest, "manifest");
      const auto m = ingest::parse_manifest(split_manifest);
      const auto split = ingest::split_by_board(m, fractions, split_seed);
      fs::create_directories(split_out);
      auto train = no_balance ? split.train : ingest::balance_downsample(split.train, split_seed);
      ingest::write_manifest(split_out / "train.tsv", relocate(train, split_out));
      ingest::write_manifest(split_out / "val.tsv", relocate(split.val, split_out));
      ingest::write_manifest(split_out / "test.tsv", relocate(split.test, split_out));
      {
        std::ofstream boards(split_out / "boards.tsv");
        boards << "#board_type\tsplit\n";
        static const char* kNames[] = {"train", "val", "test"};
        for (const auto& [b, s] : split.assignment) boards << b << '\t' << kNames[s] << '\n';
      }
      print_counts("train", train);
      print_counts("val", split.val);
      print_counts("test", split.test);
    } else if (*c_pre) {
      require_file(pre_manifest, "manifest");
      const auto m = ingest::parse_manifest(pre_manifest);
      const auto r = preprocess::preprocess_dataset(m, pre_out, pre);
      std::cout << "preprocess\t" << r.patches.size() << " patches\t" << r.errors.size() << " failed\n";
      for (const auto& e : r.errors) std::cerr << "axi: warning: joint " << e.joint_id << ": " << e.message << '\n';
    } else if (*c_train) {
      require_file(train_store / "index.tsv", "store");
      require_file(val_store / "index.tsv", "store");
      const auto spec = models::ModelSpec::preset(variant, models::parse_arch(arch));
      const auto tr = preprocess::read_store(train_store);
      const auto va = preprocess::read_store(val_store);
      if (tr.image_bound != va.image_bound) throw CliError("train and val stores have different image bounds");
      const auto t0 = std::chrono::steady_clock::now();
      const auto result = train::train(spec, tr.patches, va.patches, tc, tr.image_bound, [&](const train::EpochLog& e) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "epoch " << e.epoch << "\tloss " << e.train_loss << "\tval_recall@0.5 " << e.val_recall
                  << "\tval_fpr@0.5 " << e.val_fpr << "\tval_auroc " << e.val_auroc << "\t" << std::setprecision(1) << s << "s" << std::setprecision(6)
                  << std::endl;
      });
      models::save_checkpoint(ckpt_out, result.checkpoint);
      if (!log_out.empty()) {
        std::ofstream log(log_out);
        if (!log) throw CliError("cannot write log " + log_out.string());
        train::write_training_log(log, tc, result.log);
      }
      std::cout << "train\tloss " << result.initial_loss << " -> " << result.final_loss << "\tepoch "
                << result.best_epoch << "\t" << ckpt_out.string() << '\n';
    } else if (*c_eval) {
      train::EvalReport report;
      if (!ev_scores.empty()) {
        require_file(ev_scores, "scores");
        report = report_from_scores(ev_scores);
      } else {
        if (ev_ckpt.empty() || (ev_store.empty() && ev_manifest.empty())) {
          throw CliError("eval needs --checkpoint with --store or --manifest, or --scores");
        }
        require_file(ev_ckpt, "checkpoint");
        auto ck = models::load_checkpoint(ev_ckpt);
        preprocess::PreprocessResult data;
        if (!ev_store.empty()) {
          require_file(ev_store / "index.tsv", "store");
          data = preprocess::read_store(ev_store);
        } else {
          require_file(ev_manifest, "manifest");
          data = preprocess::preprocess_records(ingest::parse_manifest(ev_manifest), {ck.spec.side});
        }
        if (data.image_bound != ck.image_bound) {
          throw CliError("images are " + std::to_string(data.image_bound) + " pixels but the model was trained on " +
                         std::to_string(ck.image_bound));
        }
        report = train::evaluate(ck, data.patches);
      }
      if (!ev_out.empty()) train::write_report(ev_out, report);
      if (!ev_roc.empty()) {
        std::ofstream roc(ev_roc);
        train::write_roc_tsv(roc, report);
      }
      std::cout << "auroc\t" << report.auroc << "\tpositives " << report.positives << "\tnegatives "
                << report.negatives << '\n'
                << train::format_threshold_table(report);
    } else if (*c_th) {
      require_file(th_report, "report");
      const auto val = train::read_report(th_report);
      const double tau = train::select_threshold(val, th_target);
      const auto on_val = train::confusion_at(val.scores, val.labels, tau);
      std::cout << "threshold\t" << tau << "\tval_recall " << on_val.recall() << "\tval_fpr " << on_val.fpr() << '\n';
      if (!th_apply.empty()) {
        require_file(th_apply, "report");
        const auto test = train::read_report(th_apply);
        const auto c = train::confusion_at(test.scores, test.labels, tau);
        std::cout << "applied\trecall " << c.recall() << "\tfpr " << c.fpr() << '\n';
      }
    } else if (*c_wl) {
      const auto tests = named_paths(wl_models);
      const auto vals = named_paths(wl_vals);
      std::vector<train::WorkloadRow> rows;
      for (const auto& [name, path] : tests) {
        require_file(path, "report");
        const auto test = train::read_report(path);
        auto v = std::find_if(vals.begin(), vals.end(), [&](const auto& p) { return p.first == name; });
        if (v == vals.end()) {
          rows.push_back(train::workload_row(name, test, wl_targets));
        } else {
          require_file(v->second, "report");
          const auto val = train::read_report(v->second);
          std::vector<double> taus;
          for (double t : wl_targets) taus.push_back(train::select_threshold(val, t));
          rows.push_back(train::workload_row_at(name, test, wl_targets, taus));
        }
      }
      std::cout << train::format_workload(rows);
    } else if (*c_serve) {
      require_file(sv_ckpt, "checkpoint");
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) throw CliError("--listen must be host:port");
      const std::string host = listen.substr(0, colon);
      int port = 0;
      try {
        port = std::stoi(listen.substr(colon + 1));
      } catch (const std::exception&) {
        throw CliError("bad port in --listen " + listen);
      }
      service::ServiceOptions opt;
      opt.threshold = sv_threshold;
      opt.log_path = sv_log;
      opt.static_dir = sv_static;
      service::TriageService svc(models::load_checkpoint(sv_ckpt), opt);
      const int bound = svc.bind(host, port);
      if (bound < 0) throw CliError("cannot listen on " + listen);
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving on " << host << ':' << bound << "\tthreshold " << sv_threshold << "\tqueued "
                << svc.queue().size() << std::endl;
      svc.run();
      g_service = nullptr;
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "axi: error: " << msg << '\n';
    return 1;
  }
  return 0;
}
