#include "txnlink/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "txnlink/analytics.hpp"
#include "txnlink/baselines.hpp"
#include "txnlink/datagen.hpp"
#include "txnlink/errors.hpp"
#include "txnlink/evaluation.hpp"
#include "txnlink/graph.hpp"
#include "txnlink/model.hpp"
#include "txnlink/training.hpp"

namespace txnlink::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error(ErrorKind::data, "sha256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

json default_config() {
  json data = datagen::SyntheticConfig{};
  data["test_days"] = 30;
  json training = training::TrainingConfig::defaults_for(model::EncoderKind::gat);
  const baselines::MlpConfig mlp;
  const baselines::DgiConfig dgi;
  const training::ScoringOptions scoring;
  return json{{"data", data},
              {"training", training},
              {"mlp",
               {{"widths", mlp.widths},
                {"dropout", mlp.dropout},
                {"batch_norm", mlp.batch_norm},
                {"learning_rate", mlp.learning_rate},
                {"batch_size", mlp.batch_size},
                {"max_epochs", mlp.max_epochs},
                {"patience", mlp.patience},
                {"validation_fraction", mlp.validation_fraction},
                {"seed", mlp.seed}}},
              {"dgi",
               {{"seeds_per_type", dgi.seeds_per_type},
                {"max_epochs", dgi.max_epochs},
                {"patience", dgi.patience},
                {"learning_rate", dgi.learning_rate}}},
              {"scoring", {{"fanout", scoring.fanout}, {"seed", scoring.seed}, {"chunk", scoring.chunk}}},
              {"evaluation", {{"seed", 99}}},
              {"analytics", {{"threshold", 0.8}, {"layer", 0}}}};
}

namespace {

void merge(json& base, const json& patch) {
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && base.contains(k) && base[k].is_object())
      merge(base[k], v);
    else
      base[k] = v;
  }
}

}  // namespace

json resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    try {
      merge(cfg, json::parse(in));
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &cfg;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
        throw ConfigError("override '" + key + "' names an unknown section");
      node = &(*node)[parts[i]];
    }
    if (parts.size() < 2 || !node->contains(parts.back()))
      throw ConfigError("override '" + key + "' names an unknown setting");
    (*node)[parts.back()] = value;
  }
  return cfg;
}

namespace {

// ---------------------------------------------------------------------------
// Manifests

struct Manifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void write(const std::string& path) const {
    json j;
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["seed"] = seed;
    j["config"] = config;
    j["inputs"] = json::array();
    for (const auto& p : inputs) j["inputs"].push_back({{"path", p}, {"sha256", sha256_file(p)}});
    j["outputs"] = json::array();
    for (const auto& p : outputs) j["outputs"].push_back({{"path", p}, {"sha256", sha256_file(p)}});
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path);
    out << j.dump(2) << '\n';
  }
};

std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

template <class T>
T section_value(const json& cfg, const char* section, const char* key) {
  try {
    return cfg.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

baselines::MlpConfig mlp_config(const json& cfg) {
  baselines::MlpConfig m;
  try {
    const auto& j = cfg.at("mlp");
    m.widths = j.value("widths", m.widths);
    m.dropout = j.value("dropout", m.dropout);
    m.batch_norm = j.value("batch_norm", m.batch_norm);
    m.learning_rate = j.value("learning_rate", m.learning_rate);
    m.batch_size = j.value("batch_size", m.batch_size);
    m.max_epochs = j.value("max_epochs", m.max_epochs);
    m.patience = j.value("patience", m.patience);
    m.validation_fraction = j.value("validation_fraction", m.validation_fraction);
    m.seed = j.value("seed", m.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config mlp: ") + e.what());
  }
  m.validate();
  return m;
}

baselines::DgiConfig dgi_config(const json& cfg, const training::TrainingConfig& encoder) {
  baselines::DgiConfig d;
  d.encoder = encoder;
  try {
    const auto& j = cfg.at("dgi");
    d.seeds_per_type = j.value("seeds_per_type", d.seeds_per_type);
    d.max_epochs = j.value("max_epochs", d.max_epochs);
    d.patience = j.value("patience", d.patience);
    d.learning_rate = j.value("learning_rate", d.learning_rate);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config dgi: ") + e.what());
  }
  return d;
}

training::ScoringOptions scoring_options(const json& cfg) {
  training::ScoringOptions o;
  o.fanout = section_value<std::size_t>(cfg, "scoring", "fanout");
  o.seed = section_value<std::uint64_t>(cfg, "scoring", "seed");
  o.chunk = section_value<std::size_t>(cfg, "scoring", "chunk");
  if (o.fanout == 0 || o.chunk == 0) throw ConfigError("scoring fanout and chunk must be positive");
  return o;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_data(const json& cfg, const std::string& out_dir, std::ostream& out) {
  const auto dc = datagen::synthetic_config_from_json(cfg.at("data"));
  const auto test_days = section_value<std::int64_t>(cfg, "data", "test_days");
  if (test_days < 0 || test_days > dc.days) throw ConfigError("test_days must lie in [0, days]");
  const auto ds = datagen::generate(dc);
  const auto boundary = dc.start_time + (dc.days - test_days) * 86400;
  const auto split = datagen::holdout_split(ds.transactions, boundary);
  fs::create_directories(out_dir);
  const auto p = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  graph::write_profiles(p("profiles.jsonl"), ds.profiles);
  graph::write_transactions(p("transactions.jsonl"), ds.transactions);
  graph::write_transactions(p("train_transactions.jsonl"), split.train);
  graph::write_transactions(p("test_transactions.jsonl"), split.test);
  datagen::write_labels(p("labels.json"), ds.labels);
  Manifest m{"gen-data", cfg.at("data"), dc.seed, {},
             {p("profiles.jsonl"), p("transactions.jsonl"), p("train_transactions.jsonl"),
              p("test_transactions.jsonl"), p("labels.json")}};
  m.config["boundary"] = boundary;
  m.write(p("manifest.json"));
  out << "generated " << ds.profiles.size() << " customers, " << split.train.size() << " train and "
      << split.test.size() << " test transactions in " << out_dir << '\n';
}

void cmd_build_graph(const std::string& txns, const std::string& profiles, const std::string& output,
                     std::ostream& out) {
  const auto t = graph::read_transactions(txns);
  const auto p = graph::read_profiles(profiles);
  const auto g = graph::BipartiteGraph::build(t, p);
  ensure_parent(output);
  g.save(output);
  Manifest{"build-graph", json::object(), 0, {txns, profiles}, {output}}.write(manifest_path(output));
  out << "graph: " << g.num_customers() << " customers, " << g.num_transactions() << " transactions, "
      << g.num_edges(graph::Direction::outgoing) << " outgoing and " << g.num_edges(graph::Direction::incoming)
      << " incoming edges\n";
}

void write_metrics_line(std::ostream& log, const training::EpochMetrics& e) {
  log << json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}}.dump()
      << '\n';
  log.flush();
}

void cmd_train(json cfg, const std::string& graph_path, const std::string& requested, const std::string& output,
               std::ostream& out) {
  const auto g = graph::BipartiteGraph::load(graph_path);
  ensure_parent(output);
  const std::string metrics_path = output + ".metrics.jsonl";
  std::ofstream log(metrics_path);
  if (!log) throw IngestionError("cannot write " + metrics_path);
  auto progress = [&](const training::EpochMetrics& e) {
    write_metrics_line(log, e);
    out << "epoch " << e.epoch << " train " << e.train_loss << " validation " << e.validation_loss << '\n';
  };
  Manifest m{"train", json::object(), 0, {graph_path}, {}};
  const std::string kind = requested.empty() ? section_value<std::string>(cfg, "training", "encoder") : requested;
  if (kind == "mlp") {
    const auto mc = mlp_config(cfg);
    const auto r = baselines::mlp_fit(g, mc, progress);
    baselines::save_mlp(r.model, output);
    m.config = {{"kind", "mlp"}, {"mlp", cfg.at("mlp")}};
    m.seed = mc.seed;
  } else {
    if (kind != "dgi") cfg["training"]["encoder"] = kind;
    auto tc = training::training_config_from_json(cfg.at("training"));
    const auto split = graph::split_edges(g, tc.split, tc.seed);
    m.seed = tc.seed;
    if (kind == "dgi") {
      if (tc.kind != model::EncoderKind::gat) throw ConfigError("the DGI baseline uses a GAT encoder");
      const auto dc = dgi_config(cfg, tc);
      graph::SeveredEdges hidden;
      for (const auto& e : split.validation) hidden.add(e);
      const auto d = baselines::dgi_pretrain(g, dc, hidden, [&](std::size_t epoch, double loss) {
        log << json{{"stage", "pretrain"}, {"epoch", epoch}, {"loss", loss}}.dump() << '\n';
        out << "pretrain epoch " << epoch << " loss " << loss << '\n';
      });
      const auto r = baselines::dgi_downstream(d, g, split, tc, {false, progress});
      model::save_model(r.model, output);
      m.config = {{"kind", "dgi"}, {"training", json(tc)}, {"dgi", cfg.at("dgi")}};
    } else {
      const auto r = training::fit(g, split, tc, {false, progress});
      model::save_model(r.model, output);
      m.config = {{"kind", kind}, {"training", json(tc)}};
      out << "best epoch " << r.best_epoch << " validation loss " << r.best_validation_loss << '\n';
    }
  }
  log.close();
  m.outputs = {output, metrics_path};
  m.write(manifest_path(output));
}

/// Scores with either checkpoint family; results follow score() ordering.
std::vector<training::AnomalyResult> score_any(const std::string& checkpoint, const graph::BipartiteGraph& g,
                                               std::span<const graph::RawTransaction> txns, const json& cfg) {
  if (model::peek_checkpoint(checkpoint).kind != "mlp") {
    training::Scorer s(model::load_model(checkpoint), g, scoring_options(cfg));
    return s.score(txns);
  }
  auto mlp = baselines::load_mlp(checkpoint);
  std::vector<training::AnomalyResult> results;
  std::vector<training::PairQuery> queries;
  std::vector<std::size_t> slot;
  for (std::size_t i = 0; i < txns.size(); ++i) {
    for (auto d : {graph::Direction::outgoing, graph::Direction::incoming}) {
      const auto& cid = d == graph::Direction::outgoing ? txns[i].source : txns[i].dest;
      if (cid == graph::kExternal) continue;
      training::AnomalyResult r{txns[i].txn_id, d, cid, false, {}, {}};
      const auto c = g.find_customer(cid);
      if (c < 0) {
        r.cold_start = true;
      } else {
        queries.push_back({i, d, c});
        slot.push_back(results.size());
      }
      results.push_back(r);
    }
  }
  // Unknown counterparts are treated as EXTERNAL by the feature builder.
  std::vector<graph::RawTransaction> clean(txns.begin(), txns.end());
  for (auto& t : clean) {
    if (t.source != graph::kExternal && g.find_customer(t.source) < 0) t.source = graph::kExternal;
    if (t.dest != graph::kExternal && g.find_customer(t.dest) < 0) t.dest = graph::kExternal;
  }
  const auto p = baselines::mlp_score_pairs(mlp, g, clean, queries);
  for (std::size_t k = 0; k < p.size(); ++k) {
    results[slot[k]].likelihood = p[k];
    results[slot[k]].anomaly_score = model::anomaly_score(p[k]);
  }
  return results;
}

void cmd_score(const json& cfg, const std::string& checkpoint, const std::string& graph_path,
               const std::string& txns_path, const std::string& output, std::ostream& out) {
  const auto g = graph::BipartiteGraph::load(graph_path);
  const auto txns = graph::read_transactions(txns_path);
  const auto results = score_any(checkpoint, g, txns, cfg);
  ensure_parent(output);
  training::write_results(output, results);
  const auto cold = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.cold_start; });
  Manifest{"score", {{"scoring", cfg.at("scoring")}}, section_value<std::uint64_t>(cfg, "scoring", "seed"),
           {checkpoint, graph_path, txns_path}, {output}}
      .write(manifest_path(output));
  out << "scored " << results.size() << " transaction sides (" << cold << " cold start) into " << output << '\n';
}

void write_report(const std::string& path, json report) {
  ensure_parent(path);
  std::ofstream o(path);
  if (!o) throw IngestionError("cannot write " + path);
  o << report.dump(2) << '\n';
}

void cmd_evaluate(const json& cfg, const std::string& scores_csv, const std::string& checkpoint,
                  const std::string& graph_path, const std::string& test_path, const std::string& output,
                  const std::string& roc_path, std::ostream& out) {
  std::vector<double> scores;
  std::vector<int> labels;
  Manifest m{"evaluate", json::object(), 0, {}, {}};
  json report;
  if (!scores_csv.empty()) {
    evaluation::read_scored_csv(scores_csv, scores, labels);
    m.inputs = {scores_csv};
  } else {
    if (checkpoint.empty() || graph_path.empty() || test_path.empty())
      throw UsageError("evaluate needs --scores, or --checkpoint with --graph and --test");
    const auto g = graph::BipartiteGraph::load(graph_path);
    const auto test = graph::read_transactions(test_path);
    m.seed = section_value<std::uint64_t>(cfg, "evaluation", "seed");
    const auto hq = training::holdout_queries(g, test, m.seed);
    const auto kind = model::peek_checkpoint(checkpoint).kind;
    if (kind == "mlp") {
      auto mlp = baselines::load_mlp(checkpoint);
      scores = baselines::mlp_score_pairs(mlp, g, test, hq.queries);
    } else {
      training::Scorer s(model::load_model(checkpoint), g, scoring_options(cfg));
      scores = s.score_pairs(test, hq.queries);
    }
    labels = hq.labels;
    report["model"] = kind;
    m.inputs = {checkpoint, graph_path, test_path};
    m.config = {{"evaluation", cfg.at("evaluation")}, {"scoring", cfg.at("scoring")}};
  }
  const auto r = evaluation::evaluate(scores, labels);
  merge(report, json(r));
  write_report(output, report);
  m.outputs = {output};
  if (!roc_path.empty()) {
    ensure_parent(roc_path);
    evaluation::write_roc_csv(roc_path, evaluation::roc_curve(scores, labels));
    m.outputs.push_back(roc_path);
  }
  m.write(manifest_path(output));
  out << "roc_auc " << r.roc_auc << " average_precision " << r.average_precision << " over " << r.examples
      << " examples\n";
}

graph::NodeType parse_node_type(const std::string& s) {
  if (s == "customer") return graph::NodeType::customer;
  if (s == "transaction") return graph::NodeType::transaction;
  throw UsageError("node type must be customer or transaction, got '" + s + "'");
}

model::Model load_graph_model(const std::string& checkpoint) {
  if (model::peek_checkpoint(checkpoint).kind == "mlp") throw UsageError("the MLP baseline has no node embeddings");
  return model::load_model(checkpoint);
}

void cmd_embed(const std::string& checkpoint, const std::string& graph_path, const std::string& type,
               std::size_t layer, const std::string& output, std::ostream& out) {
  auto m = load_graph_model(checkpoint);
  const auto g = graph::BipartiteGraph::load(graph_path);
  const auto t = parse_node_type(type);
  const auto z = analytics::export_embeddings(m, g, t, layer);
  ensure_parent(output);
  analytics::write_embeddings(output, t == graph::NodeType::customer ? g.customer_ids() : g.txn_ids(), z);
  Manifest{"embed", {{"node_type", type}, {"layer", layer == 0 ? m.config.layers : layer}}, 0, {checkpoint, graph_path},
           {output}}
      .write(manifest_path(output));
  out << "exported " << z.rows() << " " << type << " embeddings of width " << z.cols() << '\n';
}

void cmd_diverge(const json& cfg, const std::vector<std::string>& snapshots, const std::vector<std::string>& customers,
                 const std::string& output, std::ostream& out) {
  if (snapshots.size() < 2) throw UsageError("diverge needs at least two --snapshot checkpoint,graph pairs");
  if (customers.empty()) throw UsageError("diverge needs at least one --customer");
  const auto threshold = section_value<double>(cfg, "analytics", "threshold");
  const auto layer = section_value<std::size_t>(cfg, "analytics", "layer");
  std::vector<analytics::SnapshotEmbeddings> snaps;
  Manifest m{"diverge", {{"analytics", cfg.at("analytics")}}, 0, {}, {output}};
  for (const auto& s : snapshots) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw UsageError("--snapshot expects checkpoint,graph");
    const std::string ckpt = s.substr(0, comma), gpath = s.substr(comma + 1);
    auto model = load_graph_model(ckpt);
    const auto g = graph::BipartiteGraph::load(gpath);
    snaps.push_back(analytics::snapshot_embeddings(model, g, s, layer));
    m.inputs.push_back(ckpt);
    m.inputs.push_back(gpath);
  }
  ensure_parent(output);
  std::ofstream o(output);
  if (!o) throw IngestionError("cannot write " + output);
  std::size_t diverging = 0;
  for (const auto& c : customers) {
    const auto r = analytics::divergence_report(snaps, c, threshold);
    diverging += r.diverging;
    o << json(r).dump() << '\n';
  }
  o.close();
  m.write(manifest_path(output));
  out << diverging << " of " << customers.size() << " customers diverging\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised link prediction over customer-transaction graphs"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config value, e.g. training.max_epochs=5");
    sub->add_option("--seed", seed, "Seed for the command's stochastic stages");
  };

  std::string out_dir, txns, profiles, output, graph_path, kind, checkpoint, scores, test, roc, node_type = "customer";
  std::size_t layer = 0;
  std::vector<std::string> snapshots, customers;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  common(gen);
  gen->add_option("-o,--out", out_dir, "Output directory")->required();

  auto* build = app.add_subcommand("build-graph", "Build a graph snapshot from ingestion files");
  build->add_option("--transactions", txns)->required()->check(CLI::ExistingFile);
  build->add_option("--profiles", profiles)->required()->check(CLI::ExistingFile);
  build->add_option("-o,--out", output)->required();

  auto* train = app.add_subcommand("train", "Train an encoder-decoder or a baseline");
  common(train);
  train->add_option("--graph", graph_path)->required()->check(CLI::ExistingFile);
  train->add_option("--kind", kind, "gat | sage | gin | mlp | dgi (default: training.encoder)")
      ->check(CLI::IsMember({"gat", "sage", "gin", "mlp", "dgi"}));
  train->add_option("-o,--out", output, "Checkpoint path")->required();

  auto* score = app.add_subcommand("score", "Score new transactions against a reference graph");
  common(score);
  score->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  score->add_option("--graph", graph_path)->required()->check(CLI::ExistingFile);
  score->add_option("--transactions", txns)->required()->check(CLI::ExistingFile);
  score->add_option("-o,--out", output)->required();

  auto* evaluate = app.add_subcommand("evaluate", "Link-prediction metrics");
  common(evaluate);
  evaluate->add_option("--scores", scores, "Delimited file with score,label columns")->check(CLI::ExistingFile);
  evaluate->add_option("--checkpoint", checkpoint)->check(CLI::ExistingFile);
  evaluate->add_option("--graph", graph_path)->check(CLI::ExistingFile);
  evaluate->add_option("--test", test, "Held-out transactions")->check(CLI::ExistingFile);
  evaluate->add_option("-o,--out", output, "Metrics report")->required();
  evaluate->add_option("--roc", roc, "ROC curve export");

  auto* embed = app.add_subcommand("embed", "Export node embeddings");
  embed->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  embed->add_option("--graph", graph_path)->required()->check(CLI::ExistingFile);
  embed->add_option("--type", node_type)->check(CLI::IsMember({"customer", "transaction"}));
  embed->add_option("--layer", layer, "Encoder layer 1..L (default L)");
  embed->add_option("-o,--out", output)->required();

  auto* diverge = app.add_subcommand("diverge", "Cross-snapshot customer divergence");
  common(diverge);
  diverge->add_option("--snapshot", snapshots, "checkpoint,graph (repeatable, in time order)")->required();
  diverge->add_option("--customer", customers, "Customer id (repeatable)")->required();
  diverge->add_option("-o,--out", output)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(ErrorKind::usage);
  }

  try {
    auto cfg = resolve_config(config_path, overrides);
    if (seed) {
      for (const char* s : {"data", "training", "mlp", "scoring", "evaluation"}) cfg[s]["seed"] = *seed;
    }
    if (*gen) cmd_gen_data(cfg, out_dir, out);
    if (*build) cmd_build_graph(txns, profiles, output, out);
    if (*train) cmd_train(cfg, graph_path, kind, output, out);
    if (*score) cmd_score(cfg, checkpoint, graph_path, txns, output, out);
    if (*evaluate) cmd_evaluate(cfg, scores, checkpoint, graph_path, test, output, roc, out);
    if (*embed) cmd_embed(checkpoint, graph_path, node_type, layer, output, out);
    if (*diverge) cmd_diverge(cfg, snapshots, customers, output, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(ErrorKind::data);
  } catch (const nlohmann::json::exception& e) {
    err << "error: config: " << e.what() << '\n';
    return exit_code_for(ErrorKind::config);
  }
  return 0;
}

}  // namespace txnlink::cli
