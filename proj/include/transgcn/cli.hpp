#pragma once

// Command-line front end. `run_cli` is the whole program; tools/transgcn.cpp
// only forwards argv. Errors are reported as one line
//
//   transgcn: <kind> error: <detail>
//
// on the error stream, with exit code 2 for usage, config, data, format and
// lookup problems and 3 for a numeric abort during training.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "transgcn/checkpoint.hpp"
#include "transgcn/config.hpp"
#include "transgcn/encoder.hpp"
#include "transgcn/error.hpp"
#include "transgcn/evaluator.hpp"
#include "transgcn/kg.hpp"
#include "transgcn/log.hpp"
#include "transgcn/toy.hpp"
#include "transgcn/trainer.hpp"

namespace transgcn::cli {

inline constexpr const char* kToolVersion = "0.1.0";

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage error: " + what) {}
};

class LookupError : public Error {
 public:
  explicit LookupError(const std::string& what) : Error("lookup error: " + what) {}
};

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
inline std::string fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

/// Fixed-point text for report tables.
inline std::string fixed(double x, int digits = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << x;
  return out.str();
}

/// Options shared by commands that train.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

/// Flags that map one-to-one onto config keys.
inline const std::vector<std::pair<std::string, std::string>>& config_flag_keys() {
  static const std::vector<std::pair<std::string, std::string>> flags{
      {"--assumption", "assumption"}, {"--layers", "layers"},   {"--dim", "dim"},
      {"--gamma", "gamma"},           {"--alpha", "alpha"},     {"--negatives", "negatives"},
      {"--lr", "lr"},                 {"--epochs", "epochs"},   {"--batch", "batch"},
      {"--seed", "seed"},             {"--norm", "norm"},       {"--sampling", "sampling"},
      {"--eval-every", "eval-every"}, {"--pretrain-epochs", "pretrain-epochs"},
      {"--clip", "clip"},             {"--filter-negatives", "filter-negatives"},
      {"--activation", "activation"}};
  return flags;
}

inline void add_config_flags(CLI::App& cmd, ConfigFlags& flags) {
  cmd.add_option("--config", flags.config_file, "flat `key = value` config file; flags override it");
  for (const auto& [flag, key] : config_flag_keys()) {
    cmd.add_option_function<std::string>(
        flag, [&flags, key = key](const std::string& v) { flags.overrides[key] = v; }, "config key '" + key + "'");
  }
}

/// Resolves defaults < config file < flags. The file may also carry `data`
/// and `out`, which are returned through the pointers when not set by flags.
inline TrainConfig resolve_config(const ConfigFlags& flags, std::string* data, std::string* out) {
  TrainConfig c;
  if (!flags.config_file.empty()) {
    for (const auto& [k, v] : TrainConfig::read_file(flags.config_file)) {
      if (k == "data") {
        if (data && data->empty()) *data = v;
      } else if (k == "out") {
        if (out && out->empty()) *out = v;
      } else {
        c.set(k, v);
      }
    }
  }
  for (const auto& [k, v] : flags.overrides) c.set(k, v);
  c.validate();
  return c.resolved();
}

inline KnowledgeGraph load_data(const std::string& dir) {
  if (dir.empty()) throw UsageError("--data is required");
  return KnowledgeGraph::load_directory(dir);
}

/// Checks that a dataset was built over the same vocabularies as a checkpoint.
inline void check_vocabularies(const KnowledgeGraph& kg, const Checkpoint& ck) {
  auto compare = [](const Vocabulary& data, const Vocabulary& model, const char* what) {
    if (data.size() != model.size()) {
      throw FormatError(std::string("vocabulary mismatch: ") + what + " count " + std::to_string(data.size()) +
                        " in dataset vs " + std::to_string(model.size()) + " in checkpoint");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.name(i) != model.name(i)) {
        throw FormatError(std::string("vocabulary mismatch: ") + what + " " + std::to_string(i) + " is '" +
                          data.name(i) + "' in dataset vs '" + model.name(i) + "' in checkpoint");
      }
    }
  };
  compare(kg.entities(), ck.entities, "entity");
  compare(kg.relations(), ck.relations, "relation");
}

inline nlohmann::ordered_json config_json(const TrainConfig& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : TrainConfig::parse_key_values(c.to_text())) j[k] = v;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

// ---- commands ----

struct TrainArgs {
  std::string data;
  std::string out;
  std::size_t threads = 1;
  ConfigFlags flags;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::string data = a.data, out_dir = a.out;
  const TrainConfig config = resolve_config(a.flags, &data, &out_dir);
  if (data.empty()) throw UsageError("--data is required");
  if (out_dir.empty()) out_dir = "run";
  const KnowledgeGraph kg = load_data(data);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  const fs::path ckpt_path = dir / "checkpoint.bin", log_path = dir / "train.log", manifest_path = dir / "manifest.json";

  nlohmann::ordered_json manifest;
  manifest["tool"] = "transgcn";
  manifest["version"] = kToolVersion;
  manifest["command"] = "train";
  manifest["config"] = config_json(config);
  manifest["seed"] = config.seed;
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  for (const char* name : {"train.txt", "valid.txt", "test.txt", "entities.dict", "relations.dict"}) {
    const fs::path p = fs::path(data) / name;
    if (!fs::exists(p) && std::string_view(name).ends_with(".dict")) continue;
    files[name] = {{"path", p.string()}, {"bytes", fs::file_size(p)}, {"fnv1a64", fnv1a64_file(p)}};
  }
  manifest["dataset"] = {{"dir", data},
                         {"entities", kg.num_entities()},
                         {"relations", kg.num_relations()},
                         {"train", kg.train().size()},
                         {"valid", kg.valid().size()},
                         {"test", kg.test().size()},
                         {"files", files}};
  manifest["artifacts"] = {
      {"checkpoint", ckpt_path.string()}, {"log", log_path.string()}, {"manifest", manifest_path.string()}};
  write_text(manifest_path, manifest.dump(2) + "\n");

  std::ofstream log_file(log_path, std::ios::trunc);
  if (!log_file) throw FormatError("cannot write " + log_path.string());
  TrainOptions opts;
  opts.log = &log_file;
  opts.threads = a.threads;
  opts.on_epoch = [](const EpochRecord& r) {
    if (r.evaluated) log::info("epoch ", r.epoch, " loss ", r.mean_loss, " valid_mrr ", r.valid_mrr);
  };
  try {
    const TrainResult res = train(kg, config, opts);
    save_checkpoint(res.best, ckpt_path);
    out << "best_epoch\t" << res.best.epoch << '\n'
        << "best_valid_mrr\t" << TrainConfig::format_double(res.best.best_valid_mrr) << '\n'
        << "checkpoint\t" << ckpt_path.string() << '\n';
  } catch (const TrainingAborted& e) {
    const fs::path salvage = dir / "checkpoint.last_good.bin";
    save_checkpoint(e.last_good(), salvage);
    err << "transgcn: " << e.what() << " (last good checkpoint: " << salvage.string() << ")\n";
    return 3;
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string out;
  bool buckets = false;
  std::size_t threads = 1;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const auto split = parse_split(a.split);
  if (!split) throw UsageError("--split must be train, valid or test");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const KnowledgeGraph kg = load_data(a.data);
  check_vocabularies(kg, ck);
  const NeighborhoodIndex index = build_index(kg);
  const KnownTriples known(kg);
  RankingReport rep = evaluate(kg, *split, encode_frozen(ck.state, index), known, ck.config.norm, a.threads);
  if (a.buckets) rep.buckets = degree_bucket_report(rep, index);

  std::ostringstream table;
  table << "split\tqueries\tmrr\thits1\thits3\thits10\n"
        << split_name(*split) << '\t' << rep.num_queries() << '\t' << fixed(rep.mrr) << '\t' << fixed(rep.hits1)
        << '\t' << fixed(rep.hits3) << '\t' << fixed(rep.hits10) << '\n';
  if (a.buckets) {
    table << "\ndegree_lo\tdegree_hi\tqueries\tmrr\n";
    for (const auto& b : rep.buckets) table << b.lo << '\t' << b.hi << '\t' << b.count << '\t' << fixed(b.mrr) << '\n';
  }
  out << table.str();

  nlohmann::ordered_json j;
  j["split"] = split_name(*split);
  j["queries"] = rep.num_queries();
  j["mrr"] = rep.mrr;
  j["hits1"] = rep.hits1;
  j["hits3"] = rep.hits3;
  j["hits10"] = rep.hits10;
  j["buckets"] = nlohmann::ordered_json::array();
  for (const auto& b : rep.buckets) j["buckets"].push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mrr", b.mrr}});

  namespace fs = std::filesystem;
  const fs::path dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  if (!dir.empty()) fs::create_directories(dir);
  const std::string stem = "eval-" + std::string(split_name(*split));
  write_text(dir / (stem + ".tsv"), table.str());
  write_text(dir / (stem + ".json"), j.dump(2) + "\n");
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string query;
  std::size_t k = 10;
  bool unfiltered = false;
};

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream&) {
  if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const auto toks = split_ws(a.query);
  if (toks.size() != 3 || (toks[0] == "?") == (toks[2] == "?")) {
    throw UsageError("--query must be 'head relation ?' or '? relation tail'");
  }
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const KnowledgeGraph kg = load_data(a.data);
  check_vocabularies(kg, ck);

  const Side side = toks[2] == "?" ? Side::tail : Side::head;
  auto entity = [&](const std::string& name) {
    auto id = kg.entities().find(name);
    if (!id) throw LookupError("unknown entity '" + name + "'");
    return *id;
  };
  const auto rel = kg.relations().find(toks[1]);
  if (!rel) throw LookupError("unknown relation '" + toks[1] + "'");
  Triple q{0, *rel, 0};
  if (side == Side::tail) {
    q.head = entity(toks[0]);
  } else {
    q.tail = entity(toks[2]);
  }

  const NeighborhoodIndex index = build_index(kg);
  const auto scores = candidate_scores(encode_frozen(ck.state, index), q, side, ck.config.norm);
  std::vector<char> mask(scores.size(), 0);
  if (!a.unfiltered) mask = filter_mask(scores.size(), q, side, KnownTriples(kg));
  std::vector<EntityId> cands;
  for (EntityId e = 0; e < scores.size(); ++e)
    if (!mask[e]) cands.push_back(e);
  // Higher score first; ties by id so the listing is deterministic.
  std::stable_sort(cands.begin(), cands.end(), [&](EntityId x, EntityId y) { return scores[x] > scores[y]; });
  const std::size_t n = std::min(a.k, cands.size());
  for (std::size_t i = 0; i < n; ++i) {
    out << kg.entities().name(cands[i]) << '\t' << TrainConfig::format_double(scores[cands[i]]) << '\t' << i + 1
        << '\n';
  }
  return 0;
}

/// Largest |modulus - 1| over the final relation embeddings. Relations do not
/// depend on the graph, so an edge-free index suffices.
inline double relation_modulus_deviation(const ModelState& state) {
  const auto index = NeighborhoodIndex::build({}, state.num_entities(), state.num_relations());
  const Matrix rel = encode_frozen(state, index).relations;
  const std::size_t k = rel.cols() / 2;
  double worst = 0.0;
  for (std::size_t i = 0; i < rel.rows(); ++i) {
    for (std::size_t j = 0; j < k; ++j) worst = std::max(worst, std::abs(std::hypot(rel(i, j), rel(i, j + k)) - 1.0));
  }
  return worst;
}

struct InspectArgs {
  std::string checkpoint;
  std::size_t bases = 2;
};

inline int cmd_inspect(const InspectArgs& a, std::ostream& out, std::ostream&) {
  if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const ModelState& s = ck.state;
  const ParamReport p = param_count_report(ck.config, s.num_entities(), s.num_relations(), a.bases);
  out << "# config\n" << ck.config.to_text() << "\n# model\n"
      << "entities\t" << s.num_entities() << '\n'
      << "relations\t" << s.num_relations() << '\n'
      << "dim\t" << s.dim << '\n'
      << "relation_width\t" << s.relation_width() << '\n'
      << "layers\t" << s.layers.size() << '\n'
      << "epoch\t" << ck.epoch << '\n'
      << "best_valid_mrr\t" << TrainConfig::format_double(ck.best_valid_mrr) << '\n'
      << "parameters\t" << p.own_count << "\t= E*d + R*" << (s.assumption == Assumption::rotation ? "d/2" : "d")
      << " + L*2*d^2\n"
      << "\n# parameter saving vs R-GCN with B=" << a.bases << '\n'
      << "translation_basis\t" << p.translation_basis_saving << "\t= (B-1)*L*d^2 + 2*B*R*L\n"
      << "translation_block\t" << TrainConfig::format_double(p.translation_block_saving)
      << "\t= 2*B*R*L*(d/B)^2 - L*d^2\n"
      << "rotation_basis\t" << p.rotation_basis_saving << "\t= (B-5)*L*d^2 + 2*B*R*L - E*d\n"
      << "rotation_block\t" << TrainConfig::format_double(p.rotation_block_saving)
      << "\t= 2*B*R*L*(d/B)^2 - 5*L*d^2 - E*d\n"
      << "\n# rotation modulus audit\n";
  if (s.assumption == Assumption::rotation) {
    out << "max_modulus_deviation\t" << TrainConfig::format_double(relation_modulus_deviation(s)) << '\n';
  } else {
    out << "max_modulus_deviation\tn/a (translation)\n";
  }
  return 0;
}

struct SweepArgs {
  std::string data;
  std::string layer_counts = "0,1,2";
  std::string split = "test";
  std::size_t threads = 1;
  ConfigFlags flags;
};

inline int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream&) {
  std::string data = a.data;
  const TrainConfig config = resolve_config(a.flags, &data, nullptr);
  const auto split = parse_split(a.split);
  if (!split) throw UsageError("--split must be train, valid or test");
  std::vector<std::size_t> counts;
  std::string item;
  std::istringstream list(a.layer_counts);
  while (std::getline(list, item, ',')) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) throw UsageError("bad layer count '" + item + "'");
    counts.push_back(v);
  }
  const KnowledgeGraph kg = load_data(data);
  TrainOptions opts;
  opts.threads = a.threads;
  out << "layers\tmrr\thits1\thits3\thits10\n";
  for (const auto& r : layer_sweep(kg, config, counts, *split, opts)) {
    out << r.layers << '\t' << fixed(r.mrr) << '\t' << fixed(r.hits1) << '\t' << fixed(r.hits3) << '\t'
        << fixed(r.hits10) << '\n';
  }
  return 0;
}

struct GenToyArgs {
  std::string out;
  std::uint64_t seed = 42;
};

inline int cmd_gen_toy(const GenToyArgs& a, std::ostream& out, std::ostream&) {
  if (a.out.empty()) throw UsageError("--out is required");
  const KnowledgeGraph kg = toy::generate_kinship(a.seed);
  kg.write_directory(a.out);
  out << "entities\t" << kg.num_entities() << "\nrelations\t" << kg.num_relations() << "\ntrain\t"
      << kg.train().size() << "\nvalid\t" << kg.valid().size() << "\ntest\t" << kg.test().size() << '\n';
  return 0;
}

// ---- dispatch ----

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"TransGCN knowledge graph embedding toolkit", "transgcn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint, manifest and log");
  train_cmd->add_option("--data", train_args.data, "dataset directory with train.txt, valid.txt, test.txt");
  train_cmd->add_option("--out", train_args.out, "output directory (default: run)");
  train_cmd->add_option("--threads", train_args.threads, "worker threads for evaluation")->check(CLI::PositiveNumber);
  add_config_flags(*train_cmd, train_args.flags);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "filtered ranking metrics of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file");
  eval_cmd->add_option("--data", eval_args.data, "dataset directory");
  eval_cmd->add_option("--split", eval_args.split, "train, valid or test (default: test)");
  eval_cmd->add_option("--out", eval_args.out, "report directory (default: next to the checkpoint)");
  eval_cmd->add_flag("--buckets", eval_args.buckets, "add the per-degree MRR table");
  eval_cmd->add_option("--threads", eval_args.threads, "worker threads")->check(CLI::PositiveNumber);

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "top-k completions of 'h r ?' or '? r t'");
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint, "checkpoint file");
  predict_cmd->add_option("--data", predict_args.data, "dataset directory");
  predict_cmd->add_option("--query,query", predict_args.query, "query, e.g. 'alice parent_of ?'");
  predict_cmd->add_option("--k", predict_args.k, "number of rows (default: 10)");
  predict_cmd->add_flag("--unfiltered", predict_args.unfiltered, "keep candidates that form known triples");

  InspectArgs inspect_args;
  auto* inspect_cmd = app.add_subcommand("inspect", "summarize a checkpoint");
  inspect_cmd->add_option("--checkpoint,checkpoint", inspect_args.checkpoint, "checkpoint file");
  inspect_cmd->add_option("--bases", inspect_args.bases, "R-GCN bases or blocks B for the savings (default: 2)")
      ->check(CLI::PositiveNumber);

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "train one model per layer count and compare");
  sweep_cmd->add_option("--data", sweep_args.data, "dataset directory");
  sweep_cmd->add_option("--layer-counts", sweep_args.layer_counts, "comma-separated layer counts (default: 0,1,2)");
  sweep_cmd->add_option("--split", sweep_args.split, "split to report (default: test)");
  sweep_cmd->add_option("--threads", sweep_args.threads, "worker threads for evaluation")->check(CLI::PositiveNumber);
  add_config_flags(*sweep_cmd, sweep_args.flags);

  GenToyArgs toy_args;
  auto* toy_cmd = app.add_subcommand("gen-toy", "write the synthetic kinship dataset");
  toy_cmd->add_option("--out", toy_args.out, "output directory");
  toy_cmd->add_option("--seed", toy_args.seed, "generator seed (default: 42)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "transgcn: usage error: " << e.what() << '\n' << app.help();
    return 2;
  } catch (const ConfigError& e) {
    err << "transgcn: " << e.what() << '\n';
    return 2;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == train_cmd) return cmd_train(train_args, out, err);
    if (active == eval_cmd) return cmd_eval(eval_args, out, err);
    if (active == predict_cmd) return cmd_predict(predict_args, out, err);
    if (active == inspect_cmd) return cmd_inspect(inspect_args, out, err);
    if (active == sweep_cmd) return cmd_sweep(sweep_args, out, err);
    return cmd_gen_toy(toy_args, out, err);
  } catch (const UsageError& e) {
    err << "transgcn: " << e.what() << '\n' << active->help();
    return 2;
  } catch (const TrainingAborted& e) {
    err << "transgcn: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    err << "transgcn: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    err << "transgcn: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "transgcn: io error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "transgcn: internal error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace transgcn::cli
