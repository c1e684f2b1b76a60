#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "styleproto/corpus.hpp"
#include "styleproto/lexicon.hpp"
#include "styleproto/model.hpp"

namespace styleproto {

// Defaults are the documented regime (Adam, batch 64, lr 2e-5, 3 epochs);
// the "desk" preset swaps in from-scratch-friendly values.
struct TrainConfig {
  double lr = 2e-5;
  int batch_size = 64;
  int epochs = 3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  double alpha = 0.2;  // stylistic-word loss boost: weight 1+alpha
  double beta = 1.0;   // auxiliary query-LM weight
  double corruption_rate = 0.4;
  double mask_prob = 0.5;   // MASK share of corrupted positions
  double grad_clip = 1.0;   // global-norm cap; 0 disables
  uint64_t max_steps = 0;   // 0 = no cap
  int warmup_epochs = 0;    // leading epochs trained as a plain LM
                            // (no style embedding, alpha forced to 0)
  bool style_specific_weighting = false;  // weight by SV_style, not union SV

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// "default" (the defaults above) or "desk" (lr 3e-4, batch 8, until-overfit).
TrainConfig train_preset(const std::string& name);
std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const std::string& text);

// One flat JSON object may carry both model and training keys (the train
// subcommand's --config); each key routes to the struct that owns it.
std::pair<ModelConfig, TrainConfig> combined_config_from_json(
    const std::string& text);
std::string combined_config_to_json(const ModelConfig& mc,
                                    const TrainConfig& tc);

struct AdamState {
  // aligned index-for-index with ModelParams::named_arrays()
  std::vector<Mat> m, v;
  uint64_t step = 0;

  static AdamState zeros(const ModelConfig& config);
  bool operator==(const AdamState&) const = default;
};

// Bias-corrected Adam update in place; increments state.step. Throws on
// non-finite gradients (names the offending array). A zero gradient with
// zero moments leaves parameters bit-identical.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& cfg);

// Global-norm clipping: scales grads by clip/norm when norm > clip > 0.
// Returns the pre-clip norm.
double clip_gradients(ModelParams& grads, double clip);

struct TrainingExample {
  std::vector<int> query_ids, proto_ids, response_ids;
  StyleId style = 0;
  std::vector<uint8_t> response_sv;  // per response token, from raw strings
  InputSeq input;
};

// Builds the examples for `indices` of `data`: encode, corrupt the reference
// into a fresh prototype (stream seed mixed from seed/epoch/pair index),
// flag stylistic targets, assemble. Over-long sequences are truncated
// prototype-tail first, then query-head; the response is never cut (over-long
// responses throw). warmup disables the style embedding (style -1).
std::vector<TrainingExample> make_batch(
    const Dataset& data, const std::vector<size_t>& indices,
    const StyleLexicon& lexicon, const Vocab& vocab, const ModelConfig& mcfg,
    const TrainConfig& tcfg, uint64_t epoch, bool warmup = false);

// Mean loss over the batch; grads receives the mean gradient. Examples are
// reduced serially in batch order (parallelism lives inside each example's
// kernels), so results are bit-identical at any thread count.
LossBreakdown batch_loss_grad(const ModelParams& params,
                              const std::vector<TrainingExample>& batch,
                              double alpha, double beta, ModelParams& grads,
                              uint64_t dropout_seed = 0);

// ---------------------------------------------------------------------------
// checkpoints: versioned binary — magic, version, config, epochs completed,
// then the named parameter arrays in fixed order as little-endian float32;
// optimizer moments optional (flag bit 0)

struct Checkpoint {
  ModelParams params;
  AdamState opt;
  bool has_optimizer = false;
  uint64_t epochs_completed = 0;
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState* opt = nullptr,
                     uint64_t epochs_completed = 0);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// training loop

struct LossRow {
  uint64_t step = 0;   // Adam step counter after the update
  uint64_t epoch = 0;
  double s_mle = 0.0;
  double lm = 0.0;
  double total = 0.0;
};

struct TrainOutput {
  ModelParams params;
  AdamState opt;
  uint64_t epochs_completed = 0;
  std::vector<LossRow> log;
};

// Runs the full regime: per-epoch seeded shuffle, fresh per-epoch corruption,
// Adam with clipping, per-step loss rows. Parameters and moments are rounded
// to float32 at every epoch boundary, so resuming from an epoch checkpoint
// reproduces the uninterrupted run bit for bit. With out_dir non-empty,
// writes epoch-N.ckpt per epoch, final.ckpt, and loss.csv
// (step,epoch,s_mle,lm,total). Divergence (non-finite loss or gradient)
// throws with the offending step in the message.
TrainOutput train(const Dataset& data, const TrainConfig& tcfg,
                  const ModelConfig& mcfg, const StyleLexicon& lexicon,
                  const Vocab& vocab, const std::string& out_dir = "",
                  const Checkpoint* resume = nullptr);

// ---------------------------------------------------------------------------
// finite-difference gradient verification

struct GradCheckReport {
  struct ArrayError {
    std::string name;
    double max_rel_err = 0.0;
  };
  std::vector<ArrayError> per_array;
  double max_rel_err = 0.0;
};

// Central differences with step `epsilon` on every parameter array of a
// randomly initialized model against the analytic gradients, on a random
// example drawn from `seed`. Relative error uses denominator
// max(|analytic|, |numeric|, 1e-3).
GradCheckReport grad_check(const ModelConfig& cfg, uint64_t seed,
                           double epsilon = 1e-5, double alpha = 0.2,
                           double beta = 1.0);

}  // namespace styleproto
