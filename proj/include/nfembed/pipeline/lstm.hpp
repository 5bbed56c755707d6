#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nfembed/numerics/ops.hpp"
#include "nfembed/pipeline/bundle.hpp"
#include "nfembed/pipeline/p2a.hpp"

namespace nfembed {

/// Recurrence inputs of one subject: row r of `inputs` is (phi(p[r]), a[r-1])
/// and row r of `targets` is a[r], runs laid out back to back. a[-1] is the
/// zero frame; a run start sees the last active frame of the previous run.
struct SubjectInputs {
  std::string id;
  Tensor inputs;   // [M*T_active x 2F]
  Tensor targets;  // [M*T_active x F]
  std::size_t runs = 1;

  std::size_t steps() const { return targets.rows() / runs; }
};

SubjectInputs build_inputs(const P2ATranslator& phi, const PreparedSubject& subject);
std::vector<SubjectInputs> build_inputs(const P2ATranslator& phi, std::span<const PreparedSubject> subjects);

/// Runs of several subjects stacked time-major: row t*rows + b holds step t of
/// sequence b. Each sequence is one run, so state starts at zero in every row.
struct SequenceBatch {
  std::size_t rows = 0;
  std::size_t steps = 0;
  Tensor inputs;                   // [steps*rows x 2F]
  Tensor targets;                  // [steps*rows x F]
  std::vector<std::size_t> owner;  // sequence -> index into the subject list
};

/// Throws DataError if the chosen subjects disagree on run length or width.
SequenceBatch make_batch(std::span<const SubjectInputs> subjects, std::span<const std::size_t> which);
SequenceBatch make_batch(std::span<const SubjectInputs> subjects);

enum class LstmVariant { conditioned, vanilla };
std::string_view variant_name(LstmVariant v);
LstmVariant parse_variant(std::string_view name);

struct LstmShape {
  std::size_t frame_size = 0;
  std::size_t hidden = 64;
  std::size_t embedding_dim = 12;
  LstmVariant variant = LstmVariant::conditioned;

  std::size_t input_width() const { return 2 * frame_size; }
  /// Width of the concatenated gate input (x_t, h_{t-1}, e_n).
  std::size_t gate_input_width() const;
};

struct LstmStep {
  Tensor h;
  Tensor c;
};

struct TapedStep {
  Var h;
  Var c;
};

struct GateValues {
  Tensor f, i, u, o;
};

/// Next-active-frame predictor: an LSTM whose four gates read (x_t, h_{t-1})
/// and, in the conditioned variant, the subject embedding e_n; an affine
/// readout maps h_t to a frame. The gate matrix [W^f; W^i; W^u; W^o] is stored
/// in column blocks acting on x, h and e.
class LstmPredictor {
 public:
  LstmPredictor() = default;
  LstmPredictor(const LstmShape& shape, Rng& rng);
  static LstmPredictor zeros(const LstmShape& shape);

  const LstmShape& shape() const noexcept { return shape_; }
  LstmVariant variant() const noexcept { return shape_.variant; }
  bool conditioned() const noexcept { return shape_.variant == LstmVariant::conditioned; }

  Parameter& gates_x() { return gx_; }
  Parameter& gates_h() { return gh_; }
  Parameter& gates_e() { return ge_; }
  Parameter& gates_bias() { return gb_; }
  Parameter& readout_w() { return rw_; }
  Parameter& readout_b() { return rb_; }
  const Parameter& gates_x() const { return gx_; }
  const Parameter& gates_h() const { return gh_; }
  const Parameter& gates_e() const { return ge_; }
  const Parameter& gates_bias() const { return gb_; }
  const Parameter& readout_w() const { return rw_; }
  const Parameter& readout_b() const { return rb_; }

  /// Gate activations for a batch of rows; `e` is ignored by the vanilla variant.
  GateValues gates(const Tensor& x, const Tensor& h_prev, const Tensor* e) const;
  /// c = c_prev * f + u * i, h = o * tanh(c). Throws DimensionError on widths.
  LstmStep cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, const Tensor* e) const;
  Tensor readout(const Tensor& h) const;
  /// Recorded cell step from explicit state; `e` is ignored by the vanilla variant.
  TapedStep step(Tape& tape, Var x, Var h_prev, Var c_prev, Var e);

  /// inputs * W_x^T + bias for a whole batch, reusable while weights are fixed.
  Tensor input_projection(const SequenceBatch& batch) const;

  /// Recorded forward pass. `row_embeddings` is [rows x E] (ignored when
  /// vanilla). With `track` false the network enters as constants.
  /// Returns time-major predictions [steps*rows x F].
  Var forward(Tape& tape, const SequenceBatch& batch, Var row_embeddings, bool track,
              const Tensor* cached_projection = nullptr);

  /// Tape-free forward; `subject_embeddings` rows are indexed by batch.owner.
  Tensor predict(const SequenceBatch& batch, const Tensor* subject_embeddings) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  void check_embeddings(const Tensor* e, std::size_t rows) const;

  LstmShape shape_;
  Parameter gx_, gh_, ge_, gb_, rw_, rb_;
};

/// Lookup table of trainable per-subject embeddings.
struct EmbeddingTable {
  std::vector<std::string> ids;
  Parameter table;  // [n x E]

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return table.value.cols(); }
  /// Throws LookupError for an unknown id.
  std::size_t index_of(std::string_view id) const;
  Tensor row(std::string_view id) const;
  Tensor centroid() const;
};

struct LstmTrainConfig {
  std::size_t hidden = 64;
  std::size_t embedding_dim = 12;
  std::size_t epochs = 300;
  std::size_t patience = 30;
  std::size_t batch_subjects = 0;  // 0: all training subjects in one batch
  double lr = 1e-3;
  std::optional<double> embedding_lr;  // defaults to lr
  double weight_decay = 0.0;
  double embedding_init_sd = 0.01;
  /// Eval subjects get embeddings refit for this many steps per epoch with the
  /// network frozen, so checkpoints compare like with like.
  std::size_t eval_refit_steps = 5;
  double eval_refit_lr = 1e-2;
  std::uint64_t seed = 0;
};

struct LstmTrainResult {
  LstmPredictor model;
  EmbeddingTable table;            // empty for the vanilla variant
  std::vector<double> train_loss;  // per epoch
  std::vector<double> eval_loss;   // index 0 is the untrained model
  std::size_t best_epoch = 0;
};

/// Trains the predictor (and, conditioned, the embedding table) on the
/// training subjects, keeping the best eval-loss checkpoint. `initial_table`
/// seeds the embeddings; a training subject missing from it throws LookupError.
LstmTrainResult train_lstm(LstmVariant variant, std::span<const SubjectInputs> train,
                           std::span<const SubjectInputs> eval, const LstmTrainConfig& config,
                           const EmbeddingTable* initial_table = nullptr);
LstmTrainResult train_cond_lstm(std::span<const SubjectInputs> train, std::span<const SubjectInputs> eval,
                                const LstmTrainConfig& config, const EmbeddingTable* initial_table = nullptr);
LstmTrainResult train_vanilla_lstm(std::span<const SubjectInputs> train, std::span<const SubjectInputs> eval,
                                   const LstmTrainConfig& config);

struct FitConfig {
  std::size_t steps = 500;
  double lr = 1e-2;
};

struct FitResult {
  Tensor embeddings;               // [n x E]
  std::vector<double> loss_curve;  // mean loss before each step, then the final loss
  std::vector<double> final_loss;  // per subject
};

/// Fits embeddings for unseen subjects with every network weight frozen,
/// starting from `init` ([E], normally the training centroid). Subjects are
/// independent, so fitting several at once equals fitting them one by one.
/// Throws DataError for empty sequences.
FitResult fit_embeddings(LstmPredictor& model, std::span<const SubjectInputs> subjects, const Tensor& init,
                         const FitConfig& config);
FitResult fit_new_subject_embedding(LstmPredictor& model, const SubjectInputs& subject, const Tensor& init,
                                    const FitConfig& config);

/// Mean over frames of the summed squared error, per subject. Conditioned
/// models need one embedding row per subject.
std::vector<double> sequence_loss(const LstmPredictor& model, std::span<const SubjectInputs> subjects,
                                  const Tensor* embeddings);

/// Prediction of a[t] from the teacher-forced history, running the recurrence
/// from the start of t's run. Throws IndexError when t is out of range.
Tensor predict_next_active(const LstmPredictor& model, const SubjectInputs& subject, const Tensor* embedding,
                           std::size_t t);

ModelBundle lstm_bundle(const LstmPredictor& model, const EmbeddingTable* table);
/// Throws FormatError for a bundle of another kind.
std::pair<LstmPredictor, EmbeddingTable> lstm_from_bundle(const ModelBundle& b);

}  // namespace nfembed
