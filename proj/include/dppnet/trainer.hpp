// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppnet/data.hpp"
#include "dppnet/model.hpp"
#include "dppnet/random.hpp"

namespace dppnet {

inline constexpr std::size_t kNoClass = std::numeric_limits<std::size_t>::max();

/// A dataset mapped onto a vocabulary and answer space. Examples whose
/// answer is outside the answer space get target kNoClass and always count
/// as wrong.
template <typename T>
struct EncodedSet {
  Tensor<T> features;  // rows × F
  std::vector<TokenSeq> questions;
  std::vector<std::size_t> targets;

  std::size_t size() const { return questions.size(); }
  Batch<T> gather(std::span<const std::size_t> rows) const;
};

template <typename T>
EncodedSet<T> encode_dataset(const Dataset& data, const Vocabulary& vocab, const AnswerSpace& answers);

/// Eval-mode argmax for every example, computed in chunks.
template <typename T>
std::vector<std::size_t> predict_all(const Model<T>& model, const EncodedSet<T>& set,
                                     std::size_t chunk = 512);

template <typename T>
double accuracy(const Model<T>& model, const EncodedSet<T>& set);

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moments per registered parameter. Each parameter counts its own steps, so
/// a group unfrozen late starts with a fresh bias correction. `lr_scale`
/// multiplies the learning rate per parameter.
template <typename T>
struct AdamState {
  AdamOptions options;
  std::vector<Tensor<T>> m, v;
  std::vector<std::uint64_t> steps;
  std::vector<double> lr_scale;

  void set_group_lr_scale(const ParamStore<T>& store, std::string_view group, double scale);

  AdamState(const ParamStore<T>& store, AdamOptions opts);
};

/// One bias-corrected update of a single tensor; `step` is the 1-based count
/// after this update.
template <typename T>
void adam_update(Tensor<T>& value, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::uint64_t step, const AdamOptions& options);

/// Updates every trainable (unfrozen, non-buffer) parameter.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state);

/// Global-norm clipping; returns the norm before clipping.
template <typename T>
double clip_gradients(std::span<Tensor<T>* const> grads, double threshold);
template <typename T>
double clip_gradients(ParamStore<T>& store, double threshold);

struct TrainSchedule {
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  double clip_threshold = 0.1;
  std::size_t batch_size = 32;
  bool bucket_by_length = false;
  AdamOptions adam;
  bool adapter_initially_frozen = true;
  bool unfreeze_adapter = true;
  std::size_t unfreeze_patience = 3;
  double adapter_lr_scale = 0.1;  // applied once the adapter is unfrozen
  bool freeze_encoder_on_overfit = true;
  double overfit_gap = 0.10;
  std::size_t overfit_epochs = 2;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainSchedule& s);
/// Fields missing from `j` keep the values of `base`.
TrainSchedule train_schedule_from_json(const nlohmann::json& j, TrainSchedule base = {});

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
  std::vector<std::string> frozen;
};

nlohmann::json to_json(const EpochLog& log);

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  bool early_stopped = false;
  bool aborted = false;  // non-finite loss; weights are the last good ones
  std::string abort_reason;
};

nlohmann::json to_json(const TrainResult& r);

/// Epoch-level schedule rules: best-epoch tracking, early stopping, adapter
/// unfreezing and encoder freezing. Kept separate from the loop so the rules
/// can be traced without training.
class TrainingMonitor {
 public:
  struct Decision {
    bool improved = false;
    bool unfreeze_adapter = false;
    bool freeze_encoder = false;
    bool stop = false;
  };

  explicit TrainingMonitor(const TrainSchedule& schedule) : schedule_(schedule) {}

  Decision observe(std::size_t epoch, double train_acc, double val_acc, bool adapter_frozen,
                   bool encoder_frozen);

  std::size_t best_epoch() const { return best_epoch_; }
  double best_val_acc() const { return best_val_ < 0.0 ? 0.0 : best_val_; }
  std::size_t epochs_since_best() const { return since_best_; }

 private:
  TrainSchedule schedule_;
  double best_val_ = -1.0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  std::size_t overfit_streak_ = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Batches of equal question length: each length bucket is shuffled and cut
/// into chunks; a lone leftover joins the previous chunk (or, if a bucket has
/// a single example, a shared remainder batch); batch order is shuffled.
/// Without length bucketing all rows form one bucket.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<TokenSeq>& questions,
                                                   std::span<const std::size_t> rows,
                                                   std::size_t batch_size, bool by_length, Rng& rng);

template <typename T>
TrainResult train(Model<T>& model, const EncodedSet<T>& train_set, const EncodedSet<T>& val_set,
                  const TrainSchedule& schedule, const EpochCallback& on_epoch = {});

/// Multinomial logistic regression on features alone.
struct ProbeOptions {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double lr = 0.01;
  std::uint64_t seed = 1;
};

struct ProbeResult {
  double train_acc = 0.0;
  double test_acc = 0.0;
  double majority_acc = 0.0;  // most frequent training class, scored on test
};

ProbeResult linear_probe(const EncodedSet<double>& train_set, const EncodedSet<double>& test_set,
                         std::size_t num_classes, const ProbeOptions& options = {});

}  // namespace dppnet
