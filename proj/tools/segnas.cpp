#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "segnas/config.hpp"
#include "segnas/graph.hpp"
#include "segnas/report.hpp"
#include "segnas/search.hpp"

namespace {

using namespace segnas;

RunConfig load_run_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  return load_config(config_path);
}

std::vector<std::string> read_genome_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open genome file " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw std::runtime_error(path + " holds no genomes");
  return lines;
}

void pretty_print(const Genome& genome) {
  std::cout << "genome:    " << encode(genome) << "\n";
  std::cout << "canonical: " << encode(canonicalize(genome)) << "\n";
  std::cout << "connectivity:\n";
  for (int k = 0; k < kNumPairs; ++k) {
    const auto& pair = genome.connectivity.pairs[k];
    std::cout << "  pair " << k << ": inputs " << pair[0] << ", " << pair[1]
              << "  (pool size " << connectivity_pool_size(k) << ")\n";
  }
  std::cout << "cell:\n";
  std::cout << "  op0: " << op_abbrev(genome.cell.op0) << "\n";
  for (int b = 0; b < kNumBranches; ++b) {
    const auto& br = genome.cell.branches[b];
    std::cout << "  branch " << b << ": (" << br.in_a << ", "
              << op_abbrev(br.op_a) << ") + (" << br.in_b << ", "
              << op_abbrev(br.op_b) << ")  (pool size " << cell_pool_size(b)
              << ")\n";
  }
}

AuxMode parse_aux(const std::string& name) {
  if (name == "none") return AuxMode::None;
  if (name == "classifier") return AuxMode::Classifier;
  if (name == "cell") return AuxMode::Cell;
  throw ConfigError("aux mode must be none|classifier|cell, got '" + name + "'");
}

int run(int argc, char** argv) {
  CLI::App app{"decoder architecture search on a synthetic dense-labelling task"};
  app.require_subcommand(1);

  std::string config_path, work_dir = "segnas_work";

  // --- decode ---------------------------------------------------------------
  auto* cmd_decode = app.add_subcommand("decode", "validate and pretty-print genomes");
  std::string decode_arg;
  bool decode_is_file = false;
  cmd_decode->add_option("genome", decode_arg, "genome text, or a file with --file")
      ->required();
  cmd_decode->add_flag("--file", decode_is_file, "treat the argument as a file, one genome per line");

  // --- enumerate ------------------------------------------------------------
  auto* cmd_enumerate = app.add_subcommand(
      "enumerate", "write every canonical decoder connectivity plus a count line");
  std::string enum_out;
  cmd_enumerate->add_option("--out", enum_out, "output file (stdout when omitted)");

  // --- export-dot -----------------------------------------------------------
  auto* cmd_dot = app.add_subcommand("export-dot", "write a genome's graph as DOT");
  std::string dot_genome, dot_out = "graph.dot", dot_aux = "cell";
  bool dot_strip = false;
  cmd_dot->add_option("genome", dot_genome, "genome text")->required();
  cmd_dot->add_option("--out", dot_out, "output path");
  cmd_dot->add_option("--aux", dot_aux, "aux mode: none|classifier|cell");
  cmd_dot->add_flag("--strip", dot_strip, "strip auxiliary nodes before export");
  cmd_dot->add_option("--config", config_path, "config file");

  // --- search ---------------------------------------------------------------
  auto* cmd_search = app.add_subcommand("search", "run the architecture search");
  std::string search_mode, search_out = "search_log.jsonl", resume_path;
  int search_archs = -1, search_workers = -1, search_max_new = -1;
  std::int64_t search_seed = -1;
  cmd_search->add_option("--config", config_path, "config file");
  cmd_search->add_option("--mode", search_mode, "rl|random");
  cmd_search->add_option("--archs", search_archs, "architectures to evaluate");
  cmd_search->add_option("--max-new", search_max_new,
                         "stop after this many new evaluations (resumable)");
  cmd_search->add_option("--seed", search_seed, "seed override");
  cmd_search->add_option("--workers", search_workers, "worker threads");
  cmd_search->add_option("--out", search_out, "JSONL log path");
  cmd_search->add_option("--resume", resume_path, "resume from an existing log");
  cmd_search->add_option("--work-dir", work_dir, "task artifact cache directory");

  // --- train ----------------------------------------------------------------
  auto* cmd_train = app.add_subcommand("train", "fully train one genome");
  std::string train_genome, train_aux, train_out = "model.bin", train_log;
  bool train_genome_is_file = false;
  std::int64_t train_seed = -1;
  cmd_train->add_option("genome", train_genome, "genome text, or a file with --file")
      ->required();
  cmd_train->add_flag("--file", train_genome_is_file, "read the first genome from a file");
  cmd_train->add_option("--config", config_path, "config file");
  cmd_train->add_option("--aux", train_aux, "ablation arm: none|classifier|cell");
  cmd_train->add_option("--out", train_out, "model checkpoint path");
  cmd_train->add_option("--log", train_log, "per-epoch training log (CSV)");
  cmd_train->add_option("--seed", train_seed, "seed override");
  cmd_train->add_option("--work-dir", work_dir, "task artifact cache directory");

  // --- eval -------------------------------------------------------------------
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a model checkpoint");
  std::string eval_ckpt, eval_split = "holdout";
  cmd_eval->add_option("checkpoint", eval_ckpt, "model checkpoint")->required();
  cmd_eval->add_option("--config", config_path, "config file");
  cmd_eval->add_option("--split", eval_split, "meta-train|meta-val|holdout");
  cmd_eval->add_option("--work-dir", work_dir, "task artifact cache directory");

  // --- report -----------------------------------------------------------------
  auto* cmd_report = app.add_subcommand("report", "summarise search logs");
  std::vector<std::string> report_logs;
  std::string report_dir = "report";
  int report_window = 50;
  cmd_report->add_option("logs", report_logs, "JSONL logs")->required();
  cmd_report->add_option("--out-dir", report_dir, "output directory");
  cmd_report->add_option("--window", report_window, "window size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  if (cmd_decode->parsed()) {
    const auto lines = decode_is_file ? read_genome_lines(decode_arg)
                                      : std::vector<std::string>{decode_arg};
    for (const auto& line : lines) {
      pretty_print(segnas::decode(line));
      if (lines.size() > 1) std::cout << "\n";
    }
    return 0;
  }

  if (cmd_enumerate->parsed()) {
    const auto specs = enumerate_connectivities();
    std::ostringstream body;
    for (const auto& spec : specs) body << encode_connectivity(spec) << "\n";
    body << "count=" << specs.size() << "\n";
    if (enum_out.empty()) {
      std::cout << body.str();
    } else {
      std::ofstream out(enum_out, std::ios::trunc);
      if (!out) throw std::runtime_error("cannot open " + enum_out);
      out << body.str();
    }
    std::cerr << "cell space upper bound (per-decision product, before symmetry "
                 "reduction): "
              << cell_space_upper_bound() << "\n";
    return 0;
  }

  if (cmd_dot->parsed()) {
    RunConfig config = load_run_config(config_path);
    const Genome genome = segnas::decode(dot_genome);
    std::array<FeatureDesc, 4> sources;
    {
      EncoderStub probe;  // descs depend only on the image size
      sources = probe.feature_descs(config.task.image_size);
    }
    GraphIR ir = build(genome, sources, config.search.adapt_channels,
                       config.task.num_classes, parse_aux(dot_aux));
    if (dot_strip) ir = strip_aux(ir);
    std::ofstream out(dot_out, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + dot_out);
    out << export_dot(ir);
    const auto cost = estimate(ir, {3, config.task.image_size, config.task.image_size, 1});
    std::cout << "nodes: " << ir.nodes.size() << "\nparams: " << cost.params
              << "\nmadds: " << cost.madds << "\n";
    return 0;
  }

  if (cmd_search->parsed()) {
    RunConfig config = load_run_config(config_path);
    if (!search_mode.empty()) {
      if (search_mode == "rl") config.search.mode = SearchMode::Rl;
      else if (search_mode == "random") config.search.mode = SearchMode::Random;
      else throw ConfigError("mode must be rl|random, got '" + search_mode + "'");
    }
    if (search_archs > 0) config.search.total_architectures = search_archs;
    if (search_seed >= 0) {
      config.search.seed = static_cast<std::uint64_t>(search_seed);
      config.task.seed = static_cast<std::uint64_t>(search_seed);
    }
    if (search_workers > 0) config.search.workers = search_workers;
    if (search_max_new >= 0) config.search.max_new_architectures = search_max_new;

    std::cout << echo_config(config);
    TaskContext ctx = build_task_context(config.task, work_dir, true);

    const bool resume = !resume_path.empty();
    const std::string log_path = resume ? resume_path : search_out;
    SearchOutcome outcome = run_search(config.search, ctx, log_path, resume);

    const std::string top_path = log_path + ".top";
    std::ofstream top(top_path, std::ios::trunc);
    for (const auto& genome : outcome.top_genomes) top << genome << "\n";
    std::cout << "architectures: " << outcome.records.size() << "\n";
    std::cout << "running mean reward1: " << outcome.running.mean << "\n";
    std::cout << "top genomes -> " << top_path << "\n";
    for (const auto& genome : outcome.top_genomes) std::cout << "  " << genome << "\n";
    return 0;
  }

  if (cmd_train->parsed()) {
    RunConfig config = load_run_config(config_path);
    if (!train_aux.empty()) config.train.aux = parse_aux(train_aux);
    if (train_seed >= 0) config.train.seed = static_cast<std::uint64_t>(train_seed);
    const std::string text = train_genome_is_file
                                 ? read_genome_lines(train_genome).front()
                                 : train_genome;
    const Genome genome = segnas::decode(text);

    std::cout << echo_config(config);
    TaskContext ctx = build_task_context(config.task, work_dir, true);
    FullTrainResult result = full_train(genome, ctx, config.train, train_out);

    if (!train_log.empty()) {
      std::ofstream out(train_log, std::ios::trunc);
      out << "phase,epoch,decoder_lr,encoder_lr,train_loss,val_reward,bn_frozen\n";
      for (const auto& e : result.epochs)
        out << e.phase << "," << e.epoch << "," << e.decoder_lr << ","
            << e.encoder_lr << "," << e.train_loss << "," << e.val_reward << ","
            << (e.bn_frozen ? 1 : 0) << "\n";
    }
    std::cout << "holdout reward: " << result.holdout_reward << "\n";
    std::cout << "holdout mIoU: " << result.holdout_miou << "  fwIoU: "
              << result.holdout_fwiou << "  mPA: " << result.holdout_mpa << "\n";
    std::cout << "checkpoint -> " << train_out << "\n";
    return 0;
  }

  if (cmd_eval->parsed()) {
    RunConfig config = load_run_config(config_path);
    TaskContext ctx = build_task_context(config.task, work_dir, true);
    LoadedModel model = load_model(eval_ckpt, ctx);
    Split split;
    if (eval_split == "meta-train") split = ctx.data.meta_train();
    else if (eval_split == "meta-val") split = ctx.data.meta_val();
    else if (eval_split == "holdout") split = ctx.data.holdout();
    else throw ConfigError("split must be meta-train|meta-val|holdout");
    RewardBreakdown r = evaluate_model(model.decoder, model.encoder, ctx, split);
    std::cout << "split: " << eval_split << "\n";
    std::cout << "mIoU: " << r.miou << "\n";
    std::cout << "fwIoU: " << r.fwiou << "\n";
    std::cout << "mPA: " << r.mpa << "\n";
    std::cout << "reward: " << r.reward << "\n";
    return 0;
  }

  if (cmd_report->parsed()) {
    ReportOptions options;
    options.window = report_window;
    write_report(report_logs, report_dir, options);
    std::cout << "report -> " << report_dir << "\n";
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const segnas::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::ParseError&) {
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
