#include "nfembed/cli/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nfembed/datamodel/container.hpp"
#include "nfembed/datamodel/labels.hpp"
#include "nfembed/errors.hpp"
#include "nfembed/eval/config.hpp"
#include "nfembed/eval/experiment.hpp"
#include "nfembed/eval/report.hpp"
#include "nfembed/io/binary.hpp"
#include "nfembed/pipeline/bundle.hpp"
#include "nfembed/pipeline/lstm.hpp"
#include "nfembed/pipeline/p2a.hpp"
#include "nfembed/prediction/classifier.hpp"
#include "nfembed/synthgen/generator.hpp"
#include "nfembed/version.hpp"

namespace nfembed {
namespace {

using nlohmann::json;

enum Stream : std::uint64_t { kSplitStream = 0, kP2AStream = 1, kCondStream = 2, kVanillaStream = 3 };

json read_json(const std::string& path, std::string_view what) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + " " + path + ": " + e.what());
  }
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  ExperimentConfig c = path.empty() ? ExperimentConfig::preset("default") : ExperimentConfig::from_json(read_json(path, "config"));
  if (seed) c.seed = *seed;
  return c;
}

// A generator file is either a bare generator object or an experiment config.
GeneratorConfig load_generator(const std::string& path) {
  if (path.empty()) return ExperimentConfig::preset("default").generator;
  const json j = read_json(path, "config");
  if (j.is_object() && (j.contains("generator") || j.contains("preset") || j.contains("schema")))
    return ExperimentConfig::from_json(j).generator;
  return GeneratorConfig::from_json(j);
}

json split_json(const SplitSpec& s) {
  return {{"seed", s.seed}, {"train", s.train}, {"eval", s.eval}, {"test", s.test}};
}

SplitSpec split_from(const json& meta) {
  try {
    const json& j = meta.at("split");
    return {j.at("seed").get<std::uint64_t>(), j.at("train").get<std::vector<std::string>>(),
            j.at("eval").get<std::vector<std::string>>(), j.at("test").get<std::vector<std::string>>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("bundle metadata carries no split: ") + e.what(), 0);
  }
}

void add_provenance(ModelBundle& b, const ExperimentConfig& cfg, const SplitSpec& split, const std::string& data) {
  b.meta["code_version"] = std::string(kVersion);
  b.meta["config"] = cfg.to_json();
  b.meta["master_seed"] = cfg.seed;
  b.meta["data"] = data;
  b.meta["split"] = split_json(split);
}

ModelBundle require_bundle(const std::string& path, std::string_view stage, std::string_view kind) {
  if (path.empty())
    throw PrerequisiteError("stage " + std::string(stage) + " needs a " + std::string(kind) +
                            " bundle (--model-in); run `nfembed train --stage " + std::string(kind) + "` first");
  ModelBundle b;
  try {
    b = load_bundle(path);
  } catch (const IoError& e) {
    throw PrerequisiteError("stage " + std::string(stage) + " needs a " + std::string(kind) + " bundle: " + e.what());
  }
  if (b.kind() != kind)
    throw PrerequisiteError("stage " + std::string(stage) + " needs a " + std::string(kind) + " bundle, " + path +
                            " holds '" + b.kind() + "'");
  return b;
}

// LSTM bundles written by the CLI carry the translator they were trained on.
P2ATranslator embedded_p2a(const ModelBundle& b) {
  if (!b.meta.contains("p2a")) throw FormatError("LSTM bundle carries no p2a translator", 0);
  ModelBundle p;
  p.meta = b.meta.at("p2a");
  for (const auto& [name, t] : b.tensors)
    if (name.starts_with("p2a.")) p.add(name, t);
  return P2ATranslator::from_bundle(p);
}

std::vector<double> with_leading_gap(const std::vector<double>& v) {
  std::vector<double> out{std::numeric_limits<double>::quiet_NaN()};
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

void write_curves(const std::string& model_out, const std::vector<double>& train, const std::vector<double>& eval) {
  io::write_file(model_out + ".loss.csv", curves_csv({"train_loss", "eval_loss"}, {with_leading_gap(train), eval}));
}

std::string percent(double v) {
  if (std::isnan(v)) return "   n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << std::setw(5) << 100 * v << '%';
  return s.str();
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string model_in;
  std::string model_out;
  std::string stage;
  std::string variant = "conditioned";
  std::string model;
  std::string subject_id;
  std::string out_dir;
  std::optional<std::size_t> repeats;
  std::size_t threads = 0;
  std::string in;
  std::string format = "text";
  std::string task = std::string(kNextFrameTask);
};

int cmd_generate(const Options& o, std::ostream& out) {
  GeneratorConfig g = load_generator(o.config);
  if (o.seed) g.seed = *o.seed;
  const Dataset ds = generate(g);
  save_dataset(ds, o.out);
  const auto& l = ds.layout;
  out << "wrote " << o.out << ": " << ds.subjects.size() << " subjects, frames " << l.dims.h << "x" << l.dims.w << "x"
      << l.dims.d << ", " << l.runs << " runs of " << l.passive_len << " passive + " << l.active_len
      << " active frames, seed " << g.seed << "\n  traits:";
  for (Trait t : kAllTraits) out << ' ' << trait_name(t);
  out << "\n  checksum " << io::hex64(io::fnv1a64(encode_dataset(ds))) << '\n';
  return kExitOk;
}

int train_p2a_stage(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(o.config, o.seed);
  const Dataset ds = load_dataset(o.data);
  const auto split = split_subjects(ds, derive_seed(cfg.seed, kSplitStream));
  auto pc = cfg.p2a;
  pc.seed = derive_seed(cfg.seed, kP2AStream);
  err << "training p2a on " << split.train.size() << " subjects\n";
  const auto res = train_p2a(prepare_subjects(ds, split.train), prepare_subjects(ds, split.eval), pc);
  ModelBundle b = res.model.to_bundle();
  add_provenance(b, cfg, split, o.data);
  b.meta["train_loss"] = res.train_loss;
  b.meta["eval_loss"] = res.eval_loss;
  b.meta["best_epoch"] = res.best_epoch;
  save_bundle(b, o.model_out);
  write_curves(o.model_out, res.train_loss, res.eval_loss);
  out << "p2a: best epoch " << res.best_epoch << ", eval loss " << res.eval_loss[res.best_epoch] << "\nwrote "
      << o.model_out << '\n';
  return kExitOk;
}

int train_lstm_stage(const Options& o, std::ostream& out, std::ostream& err) {
  const LstmVariant variant = parse_variant(o.variant);
  const ModelBundle pb = require_bundle(o.model_in, "lstm", "p2a");
  const auto cfg = load_config(o.config, o.seed);
  const Dataset ds = load_dataset(o.data);
  const auto split = split_from(pb.meta);
  const P2ATranslator phi = P2ATranslator::from_bundle(pb);
  const auto train = build_inputs(phi, prepare_subjects(ds, split.train));
  const auto eval = build_inputs(phi, prepare_subjects(ds, split.eval));
  auto lc = cfg.lstm;
  lc.seed = derive_seed(cfg.seed, variant == LstmVariant::conditioned ? kCondStream : kVanillaStream);
  err << "training " << variant_name(variant) << " lstm on " << train.size() << " subjects\n";
  const auto res = train_lstm(variant, train, eval, lc);

  ModelBundle b = lstm_bundle(res.model, variant == LstmVariant::conditioned ? &res.table : nullptr);
  for (const auto& [name, t] : pb.tensors) b.add(name, t);
  b.meta["p2a"] = {{"kind", "p2a"}, {"frame_size", pb.meta.at("frame_size")}, {"dropout", pb.meta.at("dropout")}};
  add_provenance(b, cfg, split, o.data);
  b.meta["train_loss"] = res.train_loss;
  b.meta["eval_loss"] = res.eval_loss;
  b.meta["best_epoch"] = res.best_epoch;
  save_bundle(b, o.model_out);
  write_curves(o.model_out, res.train_loss, res.eval_loss);
  out << "lstm (" << variant_name(variant) << "): best epoch " << res.best_epoch << ", eval loss "
      << res.eval_loss[res.best_epoch] << "\nwrote " << o.model_out << '\n';
  return kExitOk;
}

int train_classifier_stage(const Options& o, std::ostream& out, std::ostream& err) {
  const ModelBundle lb = require_bundle(o.model_in, "classifier", "lstm");
  auto [model, table] = lstm_from_bundle(lb);
  if (!model.conditioned() || table.size() == 0)
    throw PrerequisiteError("stage classifier needs embeddings from a conditioned lstm bundle; " + o.model_in +
                            " holds the " + std::string(variant_name(model.variant())) + " variant");
  const auto cfg = load_config(o.config, o.seed);
  const Dataset ds = load_dataset(o.data);
  const auto split = split_from(lb.meta);
  const P2ATranslator phi = embedded_p2a(lb);

  Tensor train_e({table.size(), table.dim()});
  for (std::size_t i = 0; i < table.size(); ++i) {
    const Tensor row = table.row(table.ids[i]);
    std::copy(row.values().begin(), row.values().end(), train_e.row(i).begin());
  }
  err << "fitting " << split.eval.size() << " eval embeddings\n";
  const auto eval_in = build_inputs(phi, prepare_subjects(ds, split.eval));
  const Tensor eval_e = fit_embeddings(model, eval_in, table.centroid(), cfg.fit).embeddings;

  std::vector<TraitTargets> targets;
  std::vector<TraitLabeler> labelers;
  json bins = json::object();
  for (Trait t : cfg.resolved_traits()) {
    std::vector<std::optional<double>> raw;
    std::vector<double> present;
    for (const auto& id : table.ids) {
      raw.push_back(ds.subject(id).traits.value(t));
      if (raw.back()) present.push_back(*raw.back());
    }
    if (present.empty()) continue;
    const auto labeler = TraitLabeler::fit(t, present);
    TraitTargets tt{t, labeler.classes(), {}};
    for (const auto& v : raw) tt.labels.push_back(v ? labeler.label(*v) : -1);
    targets.push_back(std::move(tt));
    labelers.push_back(labeler);
    const auto& qb = labeler.bins();
    bins[std::string(trait_name(t))] = qb ? json{{"mu", qb->mu}, {"sigma", qb->sigma}} : json(nullptr);
  }
  if (targets.empty()) throw DataError("no training subject carries a trait value");
  const LinearClassifier rho = train_classifier(train_e, targets, cfg.classifier);

  auto accuracy_on = [&](const Tensor& e, std::span<const std::string> ids, std::size_t h) {
    std::vector<int> truth, pred;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto v = ds.subject(ids[r]).traits.value(targets[h].trait);
      truth.push_back(v ? labelers[h].label(*v) : -1);
      pred.push_back(predict_traits(rho, e.row(r))[h].label);
    }
    return accuracy(truth, pred);
  };
  out << "trait           train    eval\n";
  json acc = json::object();
  for (std::size_t h = 0; h < targets.size(); ++h) {
    const double a_train = accuracy_on(train_e, table.ids, h);
    const double a_eval = accuracy_on(eval_e, split.eval, h);
    const std::string name(trait_name(targets[h].trait));
    out << std::left << std::setw(14) << name << std::right << ' ' << percent(a_train) << ' ' << percent(a_eval)
        << '\n';
    acc[name] = {{"train", std::isnan(a_train) ? json(nullptr) : json(a_train)},
                 {"eval", std::isnan(a_eval) ? json(nullptr) : json(a_eval)}};
  }
  ModelBundle b = rho.to_bundle();
  add_provenance(b, cfg, split, o.data);
  b.meta["bins"] = bins;
  b.meta["accuracy"] = acc;
  save_bundle(b, o.model_out);
  out << "wrote " << o.model_out << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.stage == "p2a") return train_p2a_stage(o, out, err);
  if (o.stage == "lstm") return train_lstm_stage(o, out, err);
  return train_classifier_stage(o, out, err);
}

int cmd_fit_embedding(const Options& o, std::ostream& out) {
  ModelBundle b;
  try {
    b = load_bundle(o.model);
  } catch (const IoError& e) {
    throw PrerequisiteError(std::string("fit-embedding needs a trained lstm bundle: ") + e.what());
  }
  if (b.kind() != "lstm") throw PrerequisiteError("fit-embedding needs an lstm bundle, " + o.model + " holds '" + b.kind() + "'");
  auto [model, table] = lstm_from_bundle(b);
  if (!model.conditioned() || table.size() == 0)
    throw PrerequisiteError("fit-embedding needs a conditioned lstm bundle");
  const auto cfg = load_config(o.config, o.seed);
  const Dataset ds = load_dataset(o.data);
  ds.subject(o.subject_id);  // LookupError for an unknown id
  const P2ATranslator phi = embedded_p2a(b);
  const std::vector<std::string> ids{o.subject_id};
  const auto inputs = build_inputs(phi, prepare_subjects(ds, ids));

  const FitResult fit = fit_new_subject_embedding(model, inputs[0], table.centroid(), cfg.fit);
  json j = {{"subject_id", o.subject_id},
            {"embedding", fit.embeddings.values()},
            {"final_loss", fit.final_loss.at(0)},
            {"loss_curve", fit.loss_curve},
            {"fit", hyper_json(cfg.fit)},
            {"model", o.model},
            {"model_checksum", io::hex64(parameter_checksum(std::as_const(model).parameters()))},
            {"code_version", std::string(kVersion)}};
  const auto& known = table.ids;
  if (std::find(known.begin(), known.end(), o.subject_id) != known.end()) {
    const Tensor e = table.row(o.subject_id);
    j["trained_embedding_loss"] = sequence_loss(model, inputs, &e).at(0);
  }
  io::write_file(o.out, j.dump(2) + "\n");
  out << "embedding of " << o.subject_id << " (dim " << fit.embeddings.size() << "), final loss " << fit.final_loss[0];
  if (j.contains("trained_embedding_loss")) out << ", trained embedding loss " << j["trained_embedding_loss"].get<double>();
  out << "\nwrote " << o.out << '\n';
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  auto cfg = load_config(o.config, o.seed);
  if (o.repeats) cfg.repeats = *o.repeats;
  cfg.validate();
  RunOptions ro;
  ro.threads = o.threads;
  ro.progress = [&err](const std::string& s) { err << s << '\n'; };
  const EvalReport r = run_experiment(cfg, ro);
  emit_report(r, o.out_dir);
  out << report_text(r);
  if (!r.complete()) {
    for (const auto& rep : r.repeats)
      if (!rep.complete) err << "repeat " << rep.index << " failed in " << rep.error << '\n';
    return kExitInternal;
  }
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  const EvalReport r = load_report(o.in);
  if (!o.out_dir.empty()) emit_report(r, o.out_dir);
  if (o.format == "json")
    out << r.to_json().dump(2) << '\n';
  else if (o.format == "csv")
    out << report_csv(r, o.task);
  else
    out << report_text(r);
  return kExitOk;
}

std::string env_name(std::string_view option) {
  std::string s = "NFEMBED_";
  for (char c : option) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

template <class T>
CLI::Option* option(CLI::App* app, const std::string& name, T& target, const std::string& help) {
  return app->add_option("--" + name, target, help)->envname(env_name(name));
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const PrerequisiteError*>(&e)) return kExitPrerequisite;
  if (dynamic_cast<const Error*>(&e)) return kExitData;
  return kExitInternal;
}

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Per-subject fMRI embeddings: data generation, staged training, embedding fitting, evaluation"};
  app.name("nfembed");
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset container");
  option(gen, "config", o.config, "generator or experiment config (JSON)");
  option(gen, "out", o.out, "output container path")->required();
  option(gen, "seed", o.seed, "generator seed");

  auto* train = app.add_subcommand("train", "Train one pipeline stage");
  option(train, "stage", o.stage, "p2a, lstm or classifier")
      ->required()
      ->check(CLI::IsMember({"p2a", "lstm", "classifier"}));
  option(train, "data", o.data, "dataset container")->required();
  option(train, "model-in", o.model_in, "bundle of the previous stage");
  option(train, "model-out", o.model_out, "output bundle path")->required();
  option(train, "config", o.config, "experiment config (JSON)");
  option(train, "seed", o.seed, "master seed");
  option(train, "variant", o.variant, "lstm variant")->check(CLI::IsMember({"conditioned", "vanilla"}));

  auto* fit = app.add_subcommand("fit-embedding", "Fit a subject embedding against a frozen model");
  option(fit, "model", o.model, "conditioned lstm bundle")->required();
  option(fit, "data", o.data, "dataset container")->required();
  option(fit, "subject-id", o.subject_id, "subject to fit")->required();
  option(fit, "out", o.out, "output JSON path")->required();
  option(fit, "config", o.config, "experiment config (JSON); its fit block is used");

  auto* eval = app.add_subcommand("evaluate", "Run the repeated-split experiment and write the report set");
  option(eval, "config", o.config, "experiment config (JSON); default preset when absent");
  option(eval, "out-dir", o.out_dir, "report directory")->required();
  option(eval, "seed", o.seed, "master seed");
  option(eval, "repeats", o.repeats, "number of random splits");
  option(eval, "threads", o.threads, "parallel repeats; 0 uses every core");

  auto* rep = app.add_subcommand("report", "Print or re-emit a written report");
  option(rep, "in", o.in, "report directory or report.json")->required();
  option(rep, "format", o.format, "text, csv or json")->check(CLI::IsMember({"text", "csv", "json"}));
  option(rep, "task", o.task, "task of the csv table")
      ->check(CLI::IsMember({std::string(kNextFrameTask), std::string(kTraitTask)}));
  option(rep, "out-dir", o.out_dir, "also write the report set here");

  std::vector<std::string> argv_store{"nfembed"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "nfembed: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(o, out);
    if (train->parsed()) return cmd_train(o, out, err);
    if (fit->parsed()) return cmd_fit_embedding(o, out);
    if (eval->parsed()) return cmd_evaluate(o, out, err);
    return cmd_report(o, out);
  } catch (const std::exception& e) {
    err << "nfembed: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace nfembed
