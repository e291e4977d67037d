// dwiz: corpus preparation, training, evaluation, offline analysis and the
// two HTTP servers.

#include <csignal>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>

#include "dwiz/analysis.hpp"
#include "dwiz/corpus.hpp"
#include "dwiz/gateway.hpp"
#include "dwiz/model_io.hpp"
#include "dwiz/model_server.hpp"
#include "dwiz/training.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string with_commas(std::size_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dwiz::Error("cannot write " + path.string());
  out << text;
  if (!out) throw dwiz::Error("write failed: " + path.string());
}

std::string read_text(std::istream& in) { return {std::istreambuf_iterator<char>(in), {}}; }

// Blocks SIGINT/SIGTERM in every thread created afterwards so the main
// thread can sigwait() for them.
sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_shutdown(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
}

// prepare-corpus

struct PrepareArgs {
  std::string swda_dir;
  std::string out;
  std::string train_list;
  std::string test_list;
  std::string exclude_list;
  std::size_t validation_count = 19;
};

int prepare_corpus(const PrepareArgs& a) {
  const auto all = dwiz::load_swda(a.swda_dir);
  const auto test_ids = a.test_list.empty() ? dwiz::default_test_ids() : dwiz::read_id_list(a.test_list);
  const auto exclude = a.exclude_list.empty() ? std::vector<std::string>{} : dwiz::read_id_list(a.exclude_list);
  const auto train_ids =
      a.train_list.empty() ? dwiz::default_train_ids(all, test_ids, exclude) : dwiz::read_id_list(a.train_list);
  const auto split = dwiz::split_corpus(all, train_ids, test_ids, a.validation_count);
  dwiz::save_prepared_corpus(a.out, split);

  const auto train = dwiz::count(split.train);
  const auto val = dwiz::count(split.validation);
  const auto test = dwiz::count(split.test);
  const dwiz::SplitCounts full{train.conversations + val.conversations, train.utterances + val.utterances};

  Json stats;
  stats["train"] = {{"conversations", full.conversations}, {"utterances", full.utterances}};
  stats["train_after_validation"] = {{"conversations", train.conversations}, {"utterances", train.utterances}};
  stats["validation"] = {{"conversations", val.conversations}, {"utterances", val.utterances}};
  stats["test"] = {{"conversations", test.conversations}, {"utterances", test.utterances}};
  write_text(fs::path(a.out) / "stats.json", stats.dump(2) + "\n");

  char line[128];
  std::snprintf(line, sizeof line, "%-24s %10s %8s\n", "", "Train", "Test");
  std::cout << line;
  std::snprintf(line, sizeof line, "%-24s %10s %8s\n", "Number of conversations", with_commas(full.conversations).c_str(),
                with_commas(test.conversations).c_str());
  std::cout << line;
  std::snprintf(line, sizeof line, "%-24s %10s %8s\n", "Number of utterances", with_commas(full.utterances).c_str(),
                with_commas(test.utterances).c_str());
  std::cout << line;
  std::cout << "(validation held out of train: " << val.conversations << " conversations, "
            << with_commas(val.utterances) << " utterances)\n";
  return 0;
}

// train / sweep

struct TrainArgs {
  std::string phase;
  std::string corpus;
  std::string config;
  std::string encoder;
  std::string out_model;
  std::string report;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
  std::optional<std::string> boundary;
  bool quiet = false;
};

dwiz::TrainConfig resolve_config(const std::string& config_path, const std::optional<std::size_t>& n,
                                 const std::optional<std::uint64_t>& seed,
                                 const std::optional<std::size_t>& max_epochs,
                                 const std::optional<std::string>& boundary) {
  dwiz::TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw dwiz::InvalidArgument("cannot read config " + config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw dwiz::InvalidArgument(config_path + ": " + e.what());
    }
    cfg = dwiz::TrainConfig::from_json(j);
  }
  if (n) cfg.context_size = *n;
  if (seed) cfg.seed = *seed;
  if (max_epochs) cfg.max_epochs = *max_epochs;
  if (boundary) cfg.boundary_policy = dwiz::parse_boundary_policy(*boundary);
  cfg.validate();
  return cfg;
}

Json history_json(const std::vector<dwiz::EpochRecord>& history) {
  Json arr = Json::array();
  for (const auto& r : history) {
    arr.push_back({{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"validation_accuracy", r.validation_accuracy},
                   {"improved", r.improved}});
  }
  return arr;
}

dwiz::TrainingHooks progress_hooks(bool quiet) {
  dwiz::TrainingHooks hooks;
  if (!quiet) {
    hooks.on_epoch = [](const dwiz::EpochRecord& r) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %2zu  loss %.4f  validation %.4f%s\n", r.epoch, r.train_loss,
                    r.validation_accuracy, r.improved ? "  *" : "");
      std::cerr << buf;
    };
  }
  return hooks;
}

int train(const TrainArgs& a) {
  const auto cfg = resolve_config(a.config, a.n, a.seed, a.max_epochs, a.boundary);
  const auto split = dwiz::load_prepared_corpus(a.corpus);
  Json report;
  report["phase"] = a.phase;
  report["config"] = cfg.to_json();

  if (a.phase == "no-context") {
    auto result = dwiz::train_no_context(split, cfg, progress_hooks(a.quiet));
    dwiz::save_model(*result.model, a.out_model);
    const auto& tags = result.model->tags();
    report["model_id"] = result.model->id();
    report["model_file"] = a.out_model;
    report["file_checksum"] = dwiz::hex32(dwiz::file_crc32(a.out_model));
    report["vocabulary_size"] = result.model->vocabulary().size();
    report["best_epoch"] = result.best_epoch;
    report["initial_loss"] = result.initial_loss;
    report["first_epoch_final_loss"] = result.first_epoch_final_loss;
    report["history"] = history_json(result.history);
    report["validation"] = dwiz::to_json(result.validation, tags);
    report["test"] = dwiz::to_json(result.test, tags);
  } else {
    if (a.encoder.empty()) throw dwiz::InvalidArgument("--phase context requires --encoder <no-context model>");
    auto encoder = dwiz::load_no_context_model(a.encoder);
    auto result = dwiz::train_context(split, encoder, cfg, progress_hooks(a.quiet));
    dwiz::save_model(*result.model, a.out_model);
    const auto& tags = encoder->tags();
    report["model_id"] = result.model->id();
    report["model_file"] = a.out_model;
    report["file_checksum"] = dwiz::hex32(dwiz::file_crc32(a.out_model));
    report["context_size"] = result.model->context_size();
    report["encoder_checksum_before"] = dwiz::hex32(result.encoder_checksum_before);
    report["encoder_checksum_after"] = dwiz::hex32(result.encoder_checksum_after);
    report["best_epoch"] = result.best_epoch;
    report["initial_loss"] = result.initial_loss;
    report["first_epoch_final_loss"] = result.first_epoch_final_loss;
    report["history"] = history_json(result.history);
    report["validation"] = dwiz::to_json(result.validation, tags);
    report["test"] = dwiz::to_json(result.test, tags);
  }
  const std::string text = report.dump(2) + "\n";
  if (!a.report.empty()) write_text(a.report, text);
  std::cout << text;
  return 0;
}

struct SweepArgs {
  std::string corpus;
  std::string encoder;
  std::string config;
  std::string out_dir;
  std::string report;
  std::vector<std::size_t> sizes{1, 2, 3, 4};
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
  std::optional<std::string> boundary;
  bool sequential = false;
  bool quiet = false;
};

int sweep(const SweepArgs& a) {
  const auto cfg = resolve_config(a.config, std::nullopt, a.seed, a.max_epochs, a.boundary);
  const auto split = dwiz::load_prepared_corpus(a.corpus);
  auto encoder = dwiz::load_no_context_model(a.encoder);
  if (!a.quiet) std::cerr << "training " << a.sizes.size() << " context models\n";
  const auto rows = dwiz::context_sweep(split, encoder, a.sizes, cfg, !a.sequential);

  dwiz::ResultsTable table;
  table.most_common_class = dwiz::most_common_class_baseline(split);
  table.no_context = dwiz::evaluate(*encoder, split.test).accuracy;
  Json per_n = Json::array();
  for (const auto& row : rows) {
    table.context.emplace_back(row.context_size, row.accuracy);
    Json item{{"context_size", row.context_size}, {"test", dwiz::to_json(row.test, encoder->tags())}};
    if (!a.out_dir.empty()) {
      const auto path = fs::path(a.out_dir) / ("context-n" + std::to_string(row.context_size) + ".dwm");
      fs::create_directories(a.out_dir);
      dwiz::save_model(*row.model, path);
      item["model_file"] = path.string();
    }
    per_n.push_back(std::move(item));
  }
  if (!a.report.empty()) {
    Json report{{"config", cfg.to_json()}, {"table", dwiz::to_json(table)}, {"runs", per_n}};
    write_text(a.report, report.dump(2) + "\n");
  }
  std::cout << dwiz::render_results_table(table);
  return 0;
}

// evaluate

struct EvaluateArgs {
  std::string model;
  std::string corpus;
  std::string split = "test";
  std::string report;
  std::string boundary = "skip";
  bool baseline = false;
};

int evaluate(const EvaluateArgs& a) {
  if (a.model.empty() && !a.baseline) throw dwiz::InvalidArgument("give --model, --baseline or both");
  const auto split = dwiz::load_prepared_corpus(a.corpus);
  const std::vector<dwiz::Conversation>* convs = nullptr;
  if (a.split == "test") convs = &split.test;
  else if (a.split == "validation") convs = &split.validation;
  else if (a.split == "train") convs = &split.train;
  else throw dwiz::InvalidArgument("--split must be train, validation or test");

  dwiz::ResultsTable table;
  Json report;
  report["split"] = a.split;
  if (a.baseline) {
    std::vector<dwiz::Conversation> pool = split.train;
    pool.insert(pool.end(), split.validation.begin(), split.validation.end());
    const int tag = dwiz::most_common_tag(pool);
    const auto r = dwiz::evaluate_constant(tag, *convs, a.split);
    table.most_common_class = r.accuracy;
    report["baseline"] = {{"tag", dwiz::TagSet::swda().at(tag).mnemonic}, {"accuracy", r.accuracy}};
  }
  if (!a.model.empty()) {
    const auto loaded = dwiz::load_model(a.model);
    dwiz::EvalReport r;
    if (loaded.kind == dwiz::ModelKind::NoContext) {
      r = dwiz::evaluate(*loaded.no_context, *convs, a.split);
      table.no_context = r.accuracy;
      report["model_kind"] = "no_context";
      report["model_id"] = loaded.no_context->id();
    } else {
      r = dwiz::evaluate(*loaded.context, *convs, dwiz::parse_boundary_policy(a.boundary), a.split);
      table.context.emplace_back(loaded.context->context_size(), r.accuracy);
      report["model_kind"] = "context";
      report["model_id"] = loaded.context->id();
      report["context_size"] = loaded.context->context_size();
    }
    report["file_checksum"] = dwiz::hex32(dwiz::file_crc32(a.model));
    report["evaluation"] = dwiz::to_json(r, loaded.no_context->tags());
  }
  report["table"] = dwiz::to_json(table);
  if (!a.report.empty()) write_text(a.report, report.dump(2) + "\n");
  std::cout << dwiz::render_results_table(table);
  return 0;
}

// analyze

struct AnalyzeArgs {
  std::string no_context_model;
  std::string context_model;
  std::string input = "-";
  std::size_t top_k = dwiz::kDefaultTopK;
};

int analyze(const AnalyzeArgs& a) {
  std::string text;
  if (a.input == "-") {
    text = read_text(std::cin);
  } else {
    std::ifstream in(a.input, std::ios::binary);
    if (!in) throw dwiz::InvalidArgument("cannot read " + a.input);
    text = read_text(in);
  }
  dwiz::AnalysisRequest request;
  request.utterances = dwiz::split_lines(text);
  request.top_k = a.top_k;
  dwiz::Analyzer analyzer(dwiz::load_no_context_model(a.no_context_model),
                          dwiz::load_context_model(a.context_model));
  std::cout << dwiz::to_json_string(analyzer.analyze(request), analyzer.tags()) << '\n';
  return 0;
}

// servers

struct ServeModelArgs {
  std::string bind = "127.0.0.1:8081";
  dwiz::ServerConfig config;
};

int serve_model(ServeModelArgs a) {
  std::tie(a.config.host, a.config.port) = dwiz::parse_bind_address(a.bind);
  auto service = dwiz::ModelService::load(a.config);
  const auto signals = block_shutdown_signals();
  dwiz::ModelServer server(service, a.config.host, a.config.port);
  std::cerr << "model server listening on " << a.config.host << ":" << server.port() << std::endl;
  wait_for_shutdown(signals);
  server.stop();
  return 0;
}

struct ServeWebArgs {
  std::string bind = "127.0.0.1:8080";
  std::string config;
  std::string assets_dir;
};

int serve_web(const ServeWebArgs& a) {
  const auto [host, port] = dwiz::parse_bind_address(a.bind);
  auto config = dwiz::GatewayConfig::load(a.config);
  std::optional<fs::path> assets =
      a.assets_dir.empty() ? dwiz::default_assets_dir() : std::optional<fs::path>(a.assets_dir);
  if (!assets) std::cerr << "warning: no UI assets found; static paths will answer 503\n";
  auto gateway = std::make_shared<dwiz::Gateway>(std::move(config), assets);
  const auto signals = block_shutdown_signals();
  dwiz::GatewayServer server(gateway, host, port);
  std::cerr << "web gateway listening on " << host << ":" << server.port() << " with "
            << gateway->config().backends.size() << " backend(s)" << std::endl;
  wait_for_shutdown(signals);
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue-act recognition: corpus tools, training, analysis and serving"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(DWIZ_VERSION));

  PrepareArgs prep;
  auto* cmd_prep = app.add_subcommand("prepare-corpus", "Normalize SwDA CSVs into JSONL splits");
  cmd_prep->add_option("--swda-dir", prep.swda_dir, "Directory holding the SwDA release CSVs")->required();
  cmd_prep->add_option("--out", prep.out, "Output directory")->required();
  cmd_prep->add_option("--train-list", prep.train_list, "Train conversation ids, one per line");
  cmd_prep->add_option("--test-list", prep.test_list, "Test conversation ids (default: bundled list)");
  cmd_prep->add_option("--exclude-list", prep.exclude_list, "Ids left out of the default train list");
  cmd_prep->add_option("--validation-count", prep.validation_count, "Train conversations held out for validation")
      ->capture_default_str();

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Train a model");
  cmd_train->add_option("--phase", tr.phase, "no-context or context")
      ->required()
      ->check(CLI::IsMember({"no-context", "context"}));
  cmd_train->add_option("--corpus", tr.corpus, "Directory written by prepare-corpus")->required();
  cmd_train->add_option("--out-model", tr.out_model, "Model file to write (.dwm)")->required();
  cmd_train->add_option("--config", tr.config, "Training config JSON; flags override it");
  cmd_train->add_option("--encoder", tr.encoder, "Trained no-context model (context phase)");
  cmd_train->add_option("--n", tr.n, "Context size for the context phase");
  cmd_train->add_option("--seed", tr.seed, "Random seed");
  cmd_train->add_option("--max-epochs", tr.max_epochs, "Epoch limit");
  cmd_train->add_option("--boundary", tr.boundary, "skip or pad")->check(CLI::IsMember({"skip", "pad"}));
  cmd_train->add_option("--report", tr.report, "Also write the JSON report here");
  cmd_train->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  EvaluateArgs ev;
  auto* cmd_eval = app.add_subcommand("evaluate", "Score a model on a split");
  cmd_eval->add_option("--model", ev.model, "Model file");
  cmd_eval->add_option("--corpus", ev.corpus, "Directory written by prepare-corpus")->required();
  cmd_eval->add_option("--split", ev.split, "train, validation or test")->capture_default_str();
  cmd_eval->add_option("--boundary", ev.boundary, "skip or pad")->check(CLI::IsMember({"skip", "pad"}));
  cmd_eval->add_option("--report", ev.report, "JSON report file");
  cmd_eval->add_flag("--baseline", ev.baseline, "Include the most-common-class predictor");

  SweepArgs sw;
  std::string sweep_range = "1..4";
  auto* cmd_sweep = app.add_subcommand("sweep", "Train context models for several n on one encoder");
  cmd_sweep->add_option("--corpus", sw.corpus, "Directory written by prepare-corpus")->required();
  cmd_sweep->add_option("--encoder", sw.encoder, "Trained no-context model")->required();
  cmd_sweep->add_option("--n", sweep_range, "Range a..b or comma list")->capture_default_str();
  cmd_sweep->add_option("--config", sw.config, "Training config JSON");
  cmd_sweep->add_option("--seed", sw.seed, "Random seed");
  cmd_sweep->add_option("--max-epochs", sw.max_epochs, "Epoch limit");
  cmd_sweep->add_option("--boundary", sw.boundary, "skip or pad")->check(CLI::IsMember({"skip", "pad"}));
  cmd_sweep->add_option("--out-dir", sw.out_dir, "Save each context model here");
  cmd_sweep->add_option("--report", sw.report, "JSON report file");
  cmd_sweep->add_flag("--sequential", sw.sequential, "Train one n at a time");
  cmd_sweep->add_flag("--quiet", sw.quiet, "No progress on stderr");

  AnalyzeArgs an;
  auto* cmd_an = app.add_subcommand("analyze", "Analyze a conversation, one utterance per line");
  cmd_an->add_option("--no-context-model", an.no_context_model, "No-context model file")->required();
  cmd_an->add_option("--context-model", an.context_model, "Context model file")->required();
  cmd_an->add_option("--top-k", an.top_k, "Predictions per model")->capture_default_str();
  cmd_an->add_option("input", an.input, "Input file, or - for stdin")->capture_default_str();

  ServeModelArgs sm;
  auto* cmd_sm = app.add_subcommand("serve-model", "Run the model server");
  cmd_sm->add_option("--bind", sm.bind, "host:port")->capture_default_str();
  cmd_sm->add_option("--no-context-model", sm.config.no_context_model, "No-context model file")->required();
  cmd_sm->add_option("--context-model", sm.config.context_model, "Context model file")->required();
  cmd_sm->add_option("--top-k", sm.config.top_k, "Default predictions per model")->capture_default_str();
  cmd_sm->add_option("--max-utterances", sm.config.limits.max_utterances, "Utterances per request")
      ->capture_default_str();
  cmd_sm->add_option("--max-chars", sm.config.limits.max_utterance_chars, "Characters per utterance")
      ->capture_default_str();

  ServeWebArgs ws;
  auto* cmd_ws = app.add_subcommand("serve-web", "Run the web gateway");
  cmd_ws->add_option("--bind", ws.bind, "host:port")->capture_default_str();
  cmd_ws->add_option("--config", ws.config, "Backend list JSON")->required();
  cmd_ws->add_option("--assets-dir", ws.assets_dir, "Built UI directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*cmd_prep) return prepare_corpus(prep);
    if (*cmd_train) return train(tr);
    if (*cmd_eval) return evaluate(ev);
    if (*cmd_sweep) {
      sw.sizes.clear();
      if (const auto dots = sweep_range.find(".."); dots != std::string::npos) {
        const auto lo = std::stoul(sweep_range.substr(0, dots));
        const auto hi = std::stoul(sweep_range.substr(dots + 2));
        if (lo < 1 || hi < lo) throw dwiz::InvalidArgument("bad --n range " + sweep_range);
        for (auto k = lo; k <= hi; ++k) sw.sizes.push_back(k);
      } else {
        std::stringstream ss(sweep_range);
        std::string item;
        while (std::getline(ss, item, ',')) sw.sizes.push_back(std::stoul(item));
      }
      return sweep(sw);
    }
    if (*cmd_an) return analyze(an);
    if (*cmd_sm) return serve_model(sm);
    if (*cmd_ws) return serve_web(ws);
  } catch (const std::invalid_argument&) {
    std::cerr << "dwiz: error: bad number in --n\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dwiz: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
