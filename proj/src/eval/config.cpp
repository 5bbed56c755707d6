#include "nfembed/eval/config.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "nfembed/errors.hpp"
#include "nfembed/io/binary.hpp"

namespace nfembed {
namespace {

class Fields {
 public:
  Fields(const nlohmann::json& j, std::string_view prefix, std::initializer_list<std::string_view> known)
      : j_(j), prefix_(prefix) {
    if (!j.is_object()) throw ConfigError(prefix_ + ": expected a JSON object");
    for (const auto& [key, _] : j.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw ConfigError(prefix_ + "." + key + ": unknown field");
  }

  template <class T>
  void get(const char* key, T& out) const {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(prefix_ + "." + key + ": wrong type (" + it->type_name() + ")");
    }
  }

  const nlohmann::json* sub(const char* key) const {
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string name(const char* key) const { return prefix_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
};

}  // namespace

bool is_next_frame_method(std::string_view m) { return std::ranges::find(kNextFrameMethods, m) != std::end(kNextFrameMethods); }
bool is_trait_method(std::string_view m) { return std::ranges::find(kTraitMethods, m) != std::end(kTraitMethods); }

nlohmann::json hyper_json(const P2ATrainConfig& c) {
  return {{"epochs", c.epochs}, {"patience", c.patience}, {"batch_size", c.batch_size}, {"lr", c.lr},
          {"dropout", c.dropout}};
}

nlohmann::json hyper_json(const LstmTrainConfig& c) {
  nlohmann::json j{{"hidden", c.hidden},
                   {"embedding_dim", c.embedding_dim},
                   {"epochs", c.epochs},
                   {"patience", c.patience},
                   {"batch_subjects", c.batch_subjects},
                   {"lr", c.lr},
                   {"weight_decay", c.weight_decay},
                   {"embedding_init_sd", c.embedding_init_sd},
                   {"eval_refit_steps", c.eval_refit_steps},
                   {"eval_refit_lr", c.eval_refit_lr}};
  j["embedding_lr"] = c.embedding_lr ? nlohmann::json(*c.embedding_lr) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json hyper_json(const FitConfig& c) { return {{"steps", c.steps}, {"lr", c.lr}}; }

nlohmann::json hyper_json(const ClassifierConfig& c) {
  return {{"epochs", c.epochs}, {"lr", c.lr}, {"weight_decay", c.weight_decay}};
}

nlohmann::json hyper_json(const CnnConfig& c) {
  return {{"filters", c.filters}, {"hidden1", c.hidden1}, {"hidden2", c.hidden2},
          {"epochs", c.epochs},   {"lr", c.lr},           {"weight_decay", c.weight_decay}};
}

nlohmann::json hyper_json(const SvrConfig& c) {
  return {{"epsilon", c.epsilon}, {"c", c.c}, {"epochs", c.epochs}, {"lr", c.lr}};
}

void read_hyper(const nlohmann::json& j, std::string_view prefix, P2ATrainConfig& c) {
  const Fields f(j, prefix, {"epochs", "patience", "batch_size", "lr", "dropout"});
  f.get("epochs", c.epochs);
  f.get("patience", c.patience);
  f.get("batch_size", c.batch_size);
  f.get("lr", c.lr);
  f.get("dropout", c.dropout);
}

void read_hyper(const nlohmann::json& j, std::string_view prefix, LstmTrainConfig& c) {
  const Fields f(j, prefix,
                 {"hidden", "embedding_dim", "epochs", "patience", "batch_subjects", "lr", "embedding_lr",
                  "weight_decay", "embedding_init_sd", "eval_refit_steps", "eval_refit_lr"});
  f.get("hidden", c.hidden);
  f.get("embedding_dim", c.embedding_dim);
  f.get("epochs", c.epochs);
  f.get("patience", c.patience);
  f.get("batch_subjects", c.batch_subjects);
  f.get("lr", c.lr);
  if (const auto* e = f.sub("embedding_lr")) {
    if (e->is_null())
      c.embedding_lr.reset();
    else if (e->is_number())
      c.embedding_lr = e->get<double>();
    else
      throw ConfigError(f.name("embedding_lr") + ": expected a number or null");
  }
  f.get("weight_decay", c.weight_decay);
  f.get("embedding_init_sd", c.embedding_init_sd);
  f.get("eval_refit_steps", c.eval_refit_steps);
  f.get("eval_refit_lr", c.eval_refit_lr);
}

void read_hyper(const nlohmann::json& j, std::string_view prefix, FitConfig& c) {
  const Fields f(j, prefix, {"steps", "lr"});
  f.get("steps", c.steps);
  f.get("lr", c.lr);
}

void read_hyper(const nlohmann::json& j, std::string_view prefix, ClassifierConfig& c) {
  const Fields f(j, prefix, {"epochs", "lr", "weight_decay"});
  f.get("epochs", c.epochs);
  f.get("lr", c.lr);
  f.get("weight_decay", c.weight_decay);
}

void read_hyper(const nlohmann::json& j, std::string_view prefix, CnnConfig& c) {
  const Fields f(j, prefix, {"filters", "hidden1", "hidden2", "epochs", "lr", "weight_decay"});
  f.get("filters", c.filters);
  f.get("hidden1", c.hidden1);
  f.get("hidden2", c.hidden2);
  f.get("epochs", c.epochs);
  f.get("lr", c.lr);
  f.get("weight_decay", c.weight_decay);
}

void read_hyper(const nlohmann::json& j, std::string_view prefix, SvrConfig& c) {
  const Fields f(j, prefix, {"epsilon", "c", "epochs", "lr"});
  f.get("epsilon", c.epsilon);
  f.get("c", c.c);
  f.get("epochs", c.epochs);
  f.get("lr", c.lr);
}

ExperimentConfig ExperimentConfig::preset(std::string_view name) {
  ExperimentConfig c;
  // Shared by both presets: a few P2A epochs reach the eval minimum on these
  // cohorts, and mini-batches of 12 subjects at lr 3e-3 train the LSTMs in
  // 150 epochs.
  c.p2a.epochs = 3;
  c.p2a.patience = 3;
  c.lstm.lr = 3e-3;
  c.lstm.batch_subjects = 12;
  c.lstm.epochs = 150;
  if (name == "default") return c;
  if (name == "tiny") {
    c.repeats = 2;
    c.generator.n_subjects = 10;
    c.generator.dims = {3, 3, 3};
    c.generator.runs = 2;
    c.generator.passive_len = 6;
    c.generator.active_len = 6;
    c.p2a.epochs = 5;
    c.p2a.batch_size = 16;
    c.lstm.hidden = 16;
    c.lstm.epochs = 30;
    c.lstm.batch_subjects = 0;
    c.fit.steps = 100;
    c.classifier.epochs = 200;
    c.cnn.filters = 3;
    c.cnn.hidden1 = 16;
    c.cnn.hidden2 = 8;
    c.cnn.epochs = 20;
    c.svr.epochs = 300;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected default or tiny)");
}

std::vector<std::string> ExperimentConfig::resolved_methods() const {
  if (!methods.empty()) return methods;
  std::vector<std::string> all(std::begin(kNextFrameMethods), std::end(kNextFrameMethods));
  all.insert(all.end(), std::begin(kTraitMethods), std::end(kTraitMethods));
  return all;
}

std::vector<Trait> ExperimentConfig::resolved_traits() const {
  return traits.empty() ? std::vector<Trait>(kAllTraits.begin(), kAllTraits.end()) : traits;
}

bool ExperimentConfig::runs(std::string_view method) const {
  return methods.empty() || std::ranges::find(methods, method) != methods.end();
}

void ExperimentConfig::validate() const {
  if (repeats < 2) throw ConfigError("experiment.repeats: must be at least 2 (the t-test needs a variance)");
  std::set<std::string> seen;
  for (const auto& m : methods) {
    if (!is_next_frame_method(m) && !is_trait_method(m))
      throw ConfigError("experiment.methods: unknown method '" + m + "'");
    if (!seen.insert(m).second) throw ConfigError("experiment.methods: '" + m + "' listed twice");
  }
  std::set<Trait> traits_seen;
  for (Trait t : traits)
    if (!traits_seen.insert(t).second)
      throw ConfigError("experiment.traits: '" + std::string(trait_name(t)) + "' listed twice");
  if (dataset.empty()) generator.validate();
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string("experiment.") + field + ": must be positive");
  };
  auto positive_real = [](double v, const char* field) {
    if (!(v > 0)) throw ConfigError(std::string("experiment.") + field + ": must be positive");
  };
  positive(p2a.epochs, "p2a.epochs");
  positive(p2a.batch_size, "p2a.batch_size");
  positive_real(p2a.lr, "p2a.lr");
  if (!(p2a.dropout >= 0 && p2a.dropout < 1)) throw ConfigError("experiment.p2a.dropout: must lie in [0, 1)");
  positive(lstm.hidden, "lstm.hidden");
  positive(lstm.embedding_dim, "lstm.embedding_dim");
  positive(lstm.epochs, "lstm.epochs");
  positive_real(lstm.lr, "lstm.lr");
  if (lstm.embedding_lr && !(*lstm.embedding_lr >= 0))
    throw ConfigError("experiment.lstm.embedding_lr: must be non-negative");
  positive_real(fit.lr, "fit.lr");
  positive(classifier.epochs, "classifier.epochs");
  positive_real(classifier.lr, "classifier.lr");
  positive(cnn.filters, "cnn.filters");
  positive(cnn.hidden1, "cnn.hidden1");
  positive(cnn.hidden2, "cnn.hidden2");
  positive_real(cnn.lr, "cnn.lr");
  positive_real(svr.c, "svr.c");
  positive_real(svr.lr, "svr.lr");
  if (!(svr.epsilon >= 0)) throw ConfigError("experiment.svr.epsilon: must be non-negative");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json trait_names = nlohmann::json::array();
  for (Trait t : traits) trait_names.push_back(trait_name(t));
  return {{"schema", kExperimentSchema},
          {"dataset", dataset},
          {"generator", generator.to_json()},
          {"repeats", repeats},
          {"seed", seed},
          {"methods", methods},
          {"traits", trait_names},
          {"p2a", hyper_json(p2a)},
          {"lstm", hyper_json(lstm)},
          {"fit", hyper_json(fit)},
          {"classifier", hyper_json(classifier)},
          {"cnn", hyper_json(cnn)},
          {"svr", hyper_json(svr)}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const ExperimentConfig& base) {
  const Fields f(j, "experiment",
                 {"schema", "preset", "dataset", "generator", "repeats", "seed", "methods", "traits", "p2a", "lstm",
                  "fit", "classifier", "cnn", "svr"});
  int schema = kExperimentSchema;
  f.get("schema", schema);
  if (schema != kExperimentSchema)
    throw ConfigError("experiment.schema: version " + std::to_string(schema) + " is not supported (expected " +
                      std::to_string(kExperimentSchema) + ")");
  ExperimentConfig c = base;
  if (const auto* p = f.sub("preset")) {
    if (!p->is_string()) throw ConfigError("experiment.preset: expected a string");
    c = preset(p->get<std::string>());
  }
  f.get("dataset", c.dataset);
  if (const auto* g = f.sub("generator")) {
    // Overlay on the current generator settings.
    nlohmann::json merged = c.generator.to_json();
    if (!g->is_object()) throw ConfigError("experiment.generator: expected a JSON object");
    if (g->contains("latent_dim") && !g->contains("trait_weights")) merged.erase("trait_weights");
    merged.update(*g);
    c.generator = GeneratorConfig::from_json(merged);
  }
  f.get("repeats", c.repeats);
  f.get("seed", c.seed);
  f.get("methods", c.methods);
  if (f.sub("traits")) {
    std::vector<std::string> names;
    f.get("traits", names);
    c.traits.clear();
    try {
      for (const auto& n : names) c.traits.push_back(parse_trait(n));
    } catch (const Error& e) {
      throw ConfigError(std::string("experiment.traits: ") + e.what());
    }
  }
  if (const auto* s = f.sub("p2a")) read_hyper(*s, "experiment.p2a", c.p2a);
  if (const auto* s = f.sub("lstm")) read_hyper(*s, "experiment.lstm", c.lstm);
  if (const auto* s = f.sub("fit")) read_hyper(*s, "experiment.fit", c.fit);
  if (const auto* s = f.sub("classifier")) read_hyper(*s, "experiment.classifier", c.classifier);
  if (const auto* s = f.sub("cnn")) read_hyper(*s, "experiment.cnn", c.cnn);
  if (const auto* s = f.sub("svr")) read_hyper(*s, "experiment.svr", c.svr);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) { return from_json(j, preset("default")); }

std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(io::fnv1a64(config.dump())));
  return buf;
}

}  // namespace nfembed
