#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nfembed/pipeline/lstm.hpp"
#include "nfembed/pipeline/p2a.hpp"
#include "nfembed/prediction/baselines.hpp"
#include "nfembed/prediction/classifier.hpp"
#include "nfembed/synthgen/generator.hpp"

namespace nfembed {

// Method names. The first three are compared on next-frame error, the rest on
// trait accuracy. embedding_permuted is the label-permutation control.
inline constexpr std::string_view kP2AOnly = "p2a_only";
inline constexpr std::string_view kVanillaLstm = "vanilla_lstm";
inline constexpr std::string_view kCondLstm = "cond_lstm";
inline constexpr std::string_view kEmbedding = "embedding";
inline constexpr std::string_view kEmbeddingPermuted = "embedding_permuted";
inline constexpr std::string_view kDummy = "dummy";
inline constexpr std::string_view kFmriStats = "fmri_stats";
inline constexpr std::string_view kFmriCnn = "fmri_cnn";
inline constexpr std::string_view kClinicalSvr = "clinical_svr";

inline constexpr std::string_view kNextFrameMethods[] = {kP2AOnly, kVanillaLstm, kCondLstm};
inline constexpr std::string_view kTraitMethods[] = {kEmbedding, kEmbeddingPermuted, kDummy,
                                                     kFmriStats, kFmriCnn,           kClinicalSvr};

bool is_next_frame_method(std::string_view m);
bool is_trait_method(std::string_view m);

// Hyperparameter blocks as JSON objects. Seeds are not serialized: experiment
// runs derive them per repeat and the CLI takes --seed. Readers keep defaults
// for missing keys and throw ConfigError naming `prefix.key` for unknown keys
// or wrong types.
nlohmann::json hyper_json(const P2ATrainConfig& c);
nlohmann::json hyper_json(const LstmTrainConfig& c);
nlohmann::json hyper_json(const FitConfig& c);
nlohmann::json hyper_json(const ClassifierConfig& c);
nlohmann::json hyper_json(const CnnConfig& c);
nlohmann::json hyper_json(const SvrConfig& c);
void read_hyper(const nlohmann::json& j, std::string_view prefix, P2ATrainConfig& c);
void read_hyper(const nlohmann::json& j, std::string_view prefix, LstmTrainConfig& c);
void read_hyper(const nlohmann::json& j, std::string_view prefix, FitConfig& c);
void read_hyper(const nlohmann::json& j, std::string_view prefix, ClassifierConfig& c);
void read_hyper(const nlohmann::json& j, std::string_view prefix, CnnConfig& c);
void read_hyper(const nlohmann::json& j, std::string_view prefix, SvrConfig& c);

inline constexpr int kExperimentSchema = 1;

struct ExperimentConfig {
  /// Dataset container path; empty means generate from `generator`.
  std::string dataset;
  GeneratorConfig generator;
  std::size_t repeats = 10;
  /// Master of the per-repeat seed stream.
  std::uint64_t seed = 1;
  std::vector<std::string> methods;  // empty: all
  std::vector<Trait> traits;         // empty: all
  P2ATrainConfig p2a;
  LstmTrainConfig lstm;
  FitConfig fit;
  ClassifierConfig classifier;
  CnnConfig cnn;
  SvrConfig svr;

  /// "default" (the 60-subject protocol) or "tiny" (smoke runs). Throws ConfigError.
  static ExperimentConfig preset(std::string_view name);

  std::vector<std::string> resolved_methods() const;
  std::vector<Trait> resolved_traits() const;
  bool runs(std::string_view method) const;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Overlays `j` on `base`; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base);
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// FNV-1a of the canonical JSON text, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

}  // namespace nfembed
