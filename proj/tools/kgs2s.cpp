// Command-line front end: preprocessing, vocabulary building, training,
// evaluation, prediction and beam-width sweeps. All data goes to files or
// stdout, diagnostics to stderr; exit status 0 iff no error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kgs2s/kgs2s.hpp"

namespace fs = std::filesystem;
using namespace kgs2s;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path.string());
  out << content;
  if (!out) fail("write failure on " + path.string());
}

RunConfig load_run_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = parse_config(path);
  if (seed) cfg.seed = *seed;
  fs::create_directories(cfg.out_dir);
  return cfg;
}

struct Bundle {
  KnowledgeGraph graph;
  Vocab vocab;
};

Vocab load_or_build_vocab(const RunConfig& cfg, const KnowledgeGraph& g, bool build_if_missing) {
  const fs::path vocab_path = fs::path(cfg.out_dir) / "vocab.txt";
  if (fs::exists(vocab_path)) return Vocab::load(vocab_path);
  if (!build_if_missing) fail("missing file: " + vocab_path.string());
  Vocab v = build_vocab(g, cfg.desc_len);
  v.save(vocab_path);
  return v;
}

Bundle load_bundle(const RunConfig& cfg, bool build_vocab_if_missing) {
  Bundle b{load_graph(cfg.data_dir, cfg.meta_kind), Vocab()};
  const auto collisions = name_collisions(b.graph);
  if (!collisions.empty())
    std::cerr << "warning: " << collisions.size()
              << " entity name(s) shared by multiple ids; colliding ids share scores\n";
  b.vocab = load_or_build_vocab(cfg, b.graph, build_vocab_if_missing);
  return b;
}

ModelConfig model_config(const RunConfig& cfg, const KnowledgeGraph& g, const Vocab& v) {
  ModelConfig mc;
  mc.d_model = cfg.d_model;
  mc.n_heads = cfg.n_heads;
  mc.n_enc_layers = cfg.n_enc_layers;
  mc.n_dec_layers = cfg.n_dec_layers;
  mc.d_ff = cfg.d_ff;
  mc.max_len = cfg.max_len;
  mc.vocab_size = v.size();
  mc.n_relations = g.num_relations();
  mc.seq2seq_dropout_p = cfg.seq2seq_dropout_p;
  mc.seed = cfg.seed;
  mc.validate();
  return mc;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "valid") return Split::Valid;
  if (name == "test") return Split::Test;
  fail("bad split '" + name + "' (expected train/valid/test)");
}

// Owns the per-run inference structures the InferenceContext points into.
struct InferenceBundle {
  Bundle data;
  Checkpoint ckpt;
  CountedTrie entity_trie;
  std::unordered_map<std::string, std::vector<EntityId>> name_index;
  KnownTrueIndex block_index;
  KnownTrueIndex filter_index;
  int max_name = 1;

  InferenceContext context(const RunConfig& cfg) const {
    return {&data.graph, &data.vocab, &ckpt.params, &entity_trie,
            &name_index, &block_index, cfg.desc_len,  max_name};
  }
};

InferenceBundle load_inference_bundle(const RunConfig& cfg) {
  InferenceBundle ib{load_bundle(cfg, false), {}, {}, {}, {}, {}, 1};
  ib.ckpt = load_checkpoint(fs::path(cfg.out_dir) / "model.ckpt", &ib.data.vocab);
  ib.entity_trie = build_entity_trie(ib.data.graph, ib.data.vocab);
  ib.name_index = build_name_index(ib.data.graph);
  ib.block_index = build_known_true_index(ib.data.graph, cfg.block_splits());
  ib.filter_index = build_known_true_index(ib.data.graph, SplitMask::all());
  ib.max_name = max_entity_name_len(ib.data.graph);
  return ib;
}

EvalOptions eval_options(const RunConfig& cfg, int beam_width) {
  EvalOptions opt;
  opt.predict.beam_width = beam_width;
  opt.predict.constrained = cfg.constrained;
  opt.hits_ns = cfg.metrics_n;
  opt.seed = cfg.seed;
  opt.threads = cfg.threads;
  return opt;
}

std::string join_rows(const std::vector<std::string>& rows) {
  std::string out;
  for (const std::string& r : rows) {
    out += r;
    out += '\n';
  }
  return out;
}

// --- subcommands -----------------------------------------------------------

int cmd_preprocess(const std::string& kind, const std::string& in_path,
                   const std::string& out_path, int name_col, int sector_col, int country_col,
                   int desc_col, const std::string& config_path) {
  if (kind == "zero-shot-check") {
    RunConfig cfg = load_run_config(config_path, std::nullopt);
    KnowledgeGraph g = load_graph(cfg.data_dir, cfg.meta_kind);
    auto violations = validate_zero_shot_split(g);
    if (violations.empty()) {
      std::cout << "ok: train and dev/test relation sets are disjoint\n";
    } else {
      std::cout << "violations:";
      for (RelationId r : violations) std::cout << ' ' << r;
      std::cout << '\n';
    }
    return 0;
  }

  std::ifstream in(in_path);
  if (!in) fail("missing file: " + in_path);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) fail("cannot write " + out_path);

  auto field = [&](const std::vector<std::string>& fields, int col, std::size_t lineno) {
    if (col < 0 || col >= static_cast<int>(fields.size()))
      fail("line " + std::to_string(lineno) + " in " + in_path + ": no column " +
           std::to_string(col));
    return fields[static_cast<std::size_t>(col)];
  };

  std::string line;
  std::size_t lineno = 0;
  long next_id = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = split_on(line, '\t');
    std::string name, desc;
    if (kind == "icews") {
      name = field(fields, name_col, lineno);
      desc = build_icews_description(field(fields, sector_col, lineno),
                                     field(fields, country_col, lineno));
    } else if (kind == "nell") {
      name = reformat_nell_name(field(fields, name_col, lineno));
      if (desc_col >= 0) desc = field(fields, desc_col, lineno);
    } else {
      fail("bad --kind '" + kind + "' (expected icews/nell/zero-shot-check)");
    }
    out << next_id++ << '\t' << name << '\t' << desc << '\n';
  }
  return 0;
}

int cmd_build_vocab(const std::string& config_path, const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = load_run_config(config_path, seed);
  KnowledgeGraph g = load_graph(cfg.data_dir, cfg.meta_kind);
  Vocab v = build_vocab(g, cfg.desc_len);
  v.save(fs::path(cfg.out_dir) / "vocab.txt");
  std::cout << "vocab_size=" << v.size() << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = load_run_config(config_path, seed);
  Bundle b = load_bundle(cfg, true);
  ModelConfig mc = model_config(cfg, b.graph, b.vocab);

  TrainPlan plan;
  plan.batch_size = cfg.batch_size;
  plan.lr = cfg.lr;
  plan.desc_len = cfg.desc_len;
  plan.seq2seq_dropout_p = cfg.seq2seq_dropout_p;
  plan.max_epochs = cfg.max_epochs;
  plan.eval_every = cfg.eval_every;
  plan.beam_width_for_valid = cfg.beam_width_for_valid;
  plan.seed = cfg.seed;
  plan.block_splits = cfg.block_splits();
  plan.hits_ns = cfg.metrics_n;
  plan.threads = cfg.threads;

  TrainResult result = train(b.graph, b.vocab, mc, plan);
  save_checkpoint(fs::path(cfg.out_dir) / "model.ckpt", result.best);
  write_file(fs::path(cfg.out_dir) / "train_log.tsv", format_train_log(result.log));
  std::cout << "best_epoch=" << result.best_epoch << '\n'
            << "best_valid_mrr=" << format_fixed6(result.best_valid_mrr) << '\n';
  return 0;
}

int cmd_eval(const std::string& config_path, const std::optional<std::uint64_t>& seed,
             const std::string& split_name) {
  RunConfig cfg = load_run_config(config_path, seed);
  InferenceBundle ib = load_inference_bundle(cfg);
  EvalResult r = evaluate_split(ib.context(cfg), parse_split(split_name), ib.filter_index,
                                eval_options(cfg, cfg.beam_width));
  write_file(fs::path(cfg.out_dir) / "metrics.txt", format_metrics(r.metrics));
  write_file(fs::path(cfg.out_dir) / "metrics.tsv", metrics_tsv(r.metrics));
  write_file(fs::path(cfg.out_dir) / "predictions.tsv", join_rows(r.prediction_rows));
  std::cout << format_metrics(r.metrics);
  return 0;
}

int cmd_predict(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                const std::string& query_str) {
  RunConfig cfg = load_run_config(config_path, seed);
  InferenceBundle ib = load_inference_bundle(cfg);

  auto fields = split_on(query_str, ',');
  if (fields.size() != 4)
    fail("bad --query '" + query_str + "': expected head,rel,tail,meta with one '?'");
  QuerySpec q;
  const bool head_query = trim(fields[0]) == "?";
  const bool tail_query = trim(fields[2]) == "?";
  if (head_query == tail_query)
    fail("bad --query '" + query_str + "': exactly one of head/tail must be '?'");
  q.dir = tail_query ? Direction::Tail : Direction::Head;
  q.known = static_cast<EntityId>(
      detail_config::parse_ll("query", trim(tail_query ? fields[0] : fields[2])));
  q.rel = static_cast<RelationId>(detail_config::parse_ll("query", trim(fields[1])));
  const std::string meta_text = trim(fields[3]);
  if (cfg.meta_kind == MetaKind::None) {
    if (!meta_text.empty()) fail("query meta text given but meta_kind=none");
  } else {
    q.meta = {cfg.meta_kind, meta_text};
  }

  PredictOptions opt;
  opt.beam_width = cfg.beam_width;
  opt.constrained = cfg.constrained;
  CandidateList cands = predict_topk(ib.context(cfg), q, std::nullopt, opt);
  std::string row = "0\t" + std::string(direction_name(q.dir)) + "\t-\t-\t";
  for (std::size_t i = 0; i < cands.items.size(); ++i) {
    if (i) row += ',';
    row += std::to_string(cands.items[i].id) + ":" + format_fixed6(cands.items[i].score);
  }
  std::cout << row << '\n';
  return 0;
}

int cmd_sweep_beam(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                   const std::string& split_name) {
  RunConfig cfg = load_run_config(config_path, seed);
  InferenceBundle ib = load_inference_bundle(cfg);
  const Split split = parse_split(split_name);

  std::string report;
  for (int k : {1, 5, 10, 40}) {
    EvalResult r = evaluate_split(ib.context(cfg), split, ib.filter_index,
                                  eval_options(cfg, k));
    report += "beam_width=" + std::to_string(k) + "\n" + format_metrics(r.metrics) + "\n";
    write_file(fs::path(cfg.out_dir) / ("predictions_beam" + std::to_string(k) + ".tsv"),
               join_rows(r.prediction_rows));
  }
  write_file(fs::path(cfg.out_dir) / "sweep.txt", report);
  std::cout << report;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KG-S2S: generative knowledge graph completion at desk scale"};
  app.require_subcommand(1);

  std::string config_path, split_name = "test", query_str;
  std::string pre_kind, pre_in, pre_out;
  int name_col = 0, sector_col = -1, country_col = -1, desc_col = -1;
  std::uint64_t seed_value = 0;

  auto add_config = [&](CLI::App* sub, bool required = true) {
    auto* o = sub->add_option("--config", config_path, "run config file");
    if (required) o->required();
    return sub->add_option("--seed", seed_value, "override the config seed");
  };

  auto* pre = app.add_subcommand("preprocess", "build entities.tsv from a raw dump");
  pre->add_option("--kind", pre_kind, "icews | nell | zero-shot-check")->required();
  pre->add_option("--in", pre_in, "raw TSV input");
  pre->add_option("--out", pre_out, "entities.tsv output path");
  pre->add_option("--name-col", name_col, "0-based column holding the entity name");
  pre->add_option("--sector-col", sector_col, "icews: sector column");
  pre->add_option("--country-col", country_col, "icews: country column");
  pre->add_option("--desc-col", desc_col, "nell: optional description column");
  pre->add_option("--config", config_path, "run config (zero-shot-check)");

  auto* bv = app.add_subcommand("build-vocab", "build and save the vocabulary");
  auto* bv_seed = add_config(bv);
  auto* tr = app.add_subcommand("train", "train and keep the best-valid-MRR checkpoint");
  auto* tr_seed = add_config(tr);
  auto* ev = app.add_subcommand("eval", "rank a split and write metric reports");
  auto* ev_seed = add_config(ev);
  ev->add_option("--split", split_name, "train | valid | test (default test)");
  auto* pr = app.add_subcommand("predict", "top-K candidates for one query");
  auto* pr_seed = add_config(pr);
  pr->add_option("--query", query_str, "h_id,rel_id,?,meta or ?,rel_id,t_id,meta")->required();
  auto* sw = app.add_subcommand("sweep-beam", "evaluate at beam widths 1, 5, 10, 40");
  auto* sw_seed = add_config(sw);
  sw->add_option("--split", split_name, "train | valid | test (default test)");

  CLI11_PARSE(app, argc, argv);

  auto seed_of = [&](CLI::Option* o) {
    return o->count() ? std::optional<std::uint64_t>(seed_value) : std::nullopt;
  };

  try {
    if (pre->parsed())
      return cmd_preprocess(pre_kind, pre_in, pre_out, name_col, sector_col, country_col,
                            desc_col, config_path);
    if (bv->parsed()) return cmd_build_vocab(config_path, seed_of(bv_seed));
    if (tr->parsed()) return cmd_train(config_path, seed_of(tr_seed));
    if (ev->parsed()) return cmd_eval(config_path, seed_of(ev_seed), split_name);
    if (pr->parsed()) return cmd_predict(config_path, seed_of(pr_seed), query_str);
    if (sw->parsed()) return cmd_sweep_beam(config_path, seed_of(sw_seed), split_name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
