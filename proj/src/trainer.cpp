// SPDX-License-Identifier: Apache-2.0
#include "dppnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dppnet/random.hpp"

namespace dppnet {

using nlohmann::json;

template <typename T>
Batch<T> EncodedSet<T>::gather(std::span<const std::size_t> rows) const {
  Batch<T> b;
  b.features = Tensor<T>({rows.size(), features.cols()});
  b.questions.reserve(rows.size());
  b.targets.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < size(), ErrorCode::InvalidArgument, "example index out of range");
    auto src = features.row(rows[i]);
    std::copy(src.begin(), src.end(), b.features.row(i).begin());
    b.questions.push_back(questions[rows[i]]);
    b.targets.push_back(targets[rows[i]]);
  }
  return b;
}

template <typename T>
EncodedSet<T> encode_dataset(const Dataset& data, const Vocabulary& vocab, const AnswerSpace& answers) {
  require(!data.empty(), ErrorCode::InvalidArgument, "dataset is empty");
  EncodedSet<T> set;
  set.features = Tensor<T>({data.size(), data.feature_dim});
  for (std::size_t i = 0; i < data.size(); ++i) {
    const QAExample& ex = data.examples[i];
    auto row = set.features.row(i);
    for (std::size_t j = 0; j < ex.features.size(); ++j) row[j] = static_cast<T>(ex.features[j]);
    TokenSeq q = vocab.encode_question(ex.question);
    require(!q.empty(), ErrorCode::InvalidArgument,
            "example '" + ex.id + "' has a question with no tokens: \"" + ex.question + "\"");
    set.questions.push_back(std::move(q));
    set.targets.push_back(answers.find(ex.primary_answer()).value_or(kNoClass));
  }
  return set;
}

template <typename T>
std::vector<std::size_t> predict_all(const Model<T>& model, const EncodedSet<T>& set, std::size_t chunk) {
  std::vector<std::size_t> out;
  out.reserve(set.size());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < set.size(); start += chunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + chunk); ++i) rows.push_back(i);
    const auto pred = model.predict(set.gather(rows));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

template <typename T>
double accuracy(const Model<T>& model, const EncodedSet<T>& set) {
  if (set.size() == 0) return 0.0;
  const auto pred = predict_all(model, set);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += (pred[i] == set.targets[i]);
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

template <typename T>
AdamState<T>::AdamState(const ParamStore<T>& store, AdamOptions opts) : options(opts) {
  for (const auto& p : store.entries()) {
    m.emplace_back(p.value->shape());
    v.emplace_back(p.value->shape());
    steps.push_back(0);
    lr_scale.push_back(1.0);
  }
}

template <typename T>
void AdamState<T>::set_group_lr_scale(const ParamStore<T>& store, std::string_view group, double scale) {
  require(scale > 0.0, ErrorCode::InvalidArgument, "learning-rate scale must be positive");
  const auto& entries = store.entries();
  for (std::size_t i = 0; i < entries.size() && i < lr_scale.size(); ++i)
    if (entries[i].group == group) lr_scale[i] = scale;
}

template <typename T>
void adam_update(Tensor<T>& value, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::uint64_t step, const AdamOptions& o) {
  require_same_shape(value, grad, "adam: gradient");
  require_same_shape(value, m, "adam: first moment");
  require_same_shape(value, v, "adam: second moment");
  require(step >= 1, ErrorCode::InvalidArgument, "adam: step count starts at 1");
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  auto w = value.data();
  auto g = grad.data();
  auto mm = m.data();
  auto vv = v.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i];
    const double mi = o.beta1 * mm[i] + (1.0 - o.beta1) * gi;
    const double vi = o.beta2 * vv[i] + (1.0 - o.beta2) * gi * gi;
    mm[i] = static_cast<T>(mi);
    vv[i] = static_cast<T>(vi);
    w[i] = static_cast<T>(w[i] - o.lr * (mi / c1) / (std::sqrt(vi / c2) + o.epsilon));
  }
}

template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state) {
  auto& entries = store.entries();
  require(entries.size() == state.m.size(), ErrorCode::ShapeMismatch,
          "adam state does not match the parameter store");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i];
    if (!p.trainable()) continue;
    AdamOptions o = state.options;
    o.lr *= state.lr_scale[i];
    adam_update(*p.value, *p.grad, state.m[i], state.v[i], ++state.steps[i], o);
  }
}

template <typename T>
double clip_gradients(std::span<Tensor<T>* const> grads, double threshold) {
  require(threshold > 0.0, ErrorCode::InvalidArgument, "clip threshold must be positive");
  double sq = 0.0;
  for (const Tensor<T>* g : grads)
    for (T x : g->data()) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const double scale = threshold / norm;
    for (Tensor<T>* g : grads)
      for (T& x : g->data()) x = static_cast<T>(x * scale);
  }
  return norm;
}

template <typename T>
double clip_gradients(ParamStore<T>& store, double threshold) {
  std::vector<Tensor<T>*> grads;
  for (auto& p : store.entries())
    if (p.trainable()) grads.push_back(p.grad);
  return clip_gradients<T>(std::span<Tensor<T>* const>(grads), threshold);
}

void TrainSchedule::validate() const {
  require(max_epochs >= 1, ErrorCode::Config, "max_epochs must be >= 1");
  require(patience >= 1, ErrorCode::Config, "patience must be >= 1");
  require(clip_threshold > 0.0, ErrorCode::Config, "clip_threshold must be > 0");
  require(batch_size >= 2, ErrorCode::Config, "batch_size must be >= 2 (batch norm needs two rows)");
  require(adam.lr > 0.0, ErrorCode::Config, "lr must be > 0");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
          ErrorCode::Config, "adam betas must lie in [0, 1)");
  require(adam.epsilon > 0.0, ErrorCode::Config, "adam epsilon must be > 0");
  require(unfreeze_patience >= 1, ErrorCode::Config, "unfreeze_patience must be >= 1");
  require(adapter_lr_scale > 0.0, ErrorCode::Config, "adapter_lr_scale must be > 0");
  require(overfit_epochs >= 1, ErrorCode::Config, "overfit_epochs must be >= 1");
}

json to_json(const TrainSchedule& s) {
  return {{"max_epochs", s.max_epochs},
          {"patience", s.patience},
          {"clip_threshold", s.clip_threshold},
          {"batch_size", s.batch_size},
          {"bucket_by_length", s.bucket_by_length},
          {"lr", s.adam.lr},
          {"beta1", s.adam.beta1},
          {"beta2", s.adam.beta2},
          {"adam_epsilon", s.adam.epsilon},
          {"adapter_initially_frozen", s.adapter_initially_frozen},
          {"unfreeze_adapter", s.unfreeze_adapter},
          {"unfreeze_patience", s.unfreeze_patience},
          {"adapter_lr_scale", s.adapter_lr_scale},
          {"freeze_encoder_on_overfit", s.freeze_encoder_on_overfit},
          {"overfit_gap", s.overfit_gap},
          {"overfit_epochs", s.overfit_epochs},
          {"seed", s.seed}};
}

TrainSchedule train_schedule_from_json(const json& j, TrainSchedule s) {
  try {
    s.max_epochs = j.value("max_epochs", s.max_epochs);
    s.patience = j.value("patience", s.patience);
    s.clip_threshold = j.value("clip_threshold", s.clip_threshold);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.bucket_by_length = j.value("bucket_by_length", s.bucket_by_length);
    s.adam.lr = j.value("lr", s.adam.lr);
    s.adam.beta1 = j.value("beta1", s.adam.beta1);
    s.adam.beta2 = j.value("beta2", s.adam.beta2);
    s.adam.epsilon = j.value("adam_epsilon", s.adam.epsilon);
    s.adapter_initially_frozen = j.value("adapter_initially_frozen", s.adapter_initially_frozen);
    s.unfreeze_adapter = j.value("unfreeze_adapter", s.unfreeze_adapter);
    s.unfreeze_patience = j.value("unfreeze_patience", s.unfreeze_patience);
    s.adapter_lr_scale = j.value("adapter_lr_scale", s.adapter_lr_scale);
    s.freeze_encoder_on_overfit = j.value("freeze_encoder_on_overfit", s.freeze_encoder_on_overfit);
    s.overfit_gap = j.value("overfit_gap", s.overfit_gap);
    s.overfit_epochs = j.value("overfit_epochs", s.overfit_epochs);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string("malformed training schedule: ") + e.what());
  }
  return s;
}

json to_json(const EpochLog& log) {
  return {{"epoch", log.epoch},         {"train_loss", log.train_loss}, {"train_acc", log.train_acc},
          {"val_acc", log.val_acc},     {"lr", log.lr},                 {"frozen", log.frozen}};
}

json to_json(const TrainResult& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) epochs.push_back(to_json(e));
  return {{"epochs_run", r.epochs.size()}, {"best_epoch", r.best_epoch},
          {"best_val_acc", r.best_val_acc}, {"early_stopped", r.early_stopped},
          {"aborted", r.aborted},           {"abort_reason", r.abort_reason}};
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<TokenSeq>& questions,
                                                   std::span<const std::size_t> rows,
                                                   std::size_t batch_size, bool by_length, Rng& rng) {
  require(batch_size >= 2, ErrorCode::InvalidArgument, "batch size must be >= 2");
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t r : rows) buckets[by_length ? questions.at(r).size() : 0].push_back(r);

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> remainder;
  for (auto& [length, members] : buckets) {
    rng.shuffle(std::span<std::size_t>(members));
    if (members.size() == 1) {
      remainder.push_back(members.front());
      continue;
    }
    for (std::size_t start = 0; start < members.size(); start += batch_size) {
      const std::size_t end = std::min(members.size(), start + batch_size);
      if (end - start == 1) {
        batches.back().push_back(members[start]);
      } else {
        batches.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(start),
                             members.begin() + static_cast<std::ptrdiff_t>(end));
      }
    }
  }
  if (remainder.size() >= 2) {
    batches.push_back(std::move(remainder));
  } else if (remainder.size() == 1) {
    if (batches.empty()) fail(ErrorCode::InvalidArgument, "training needs at least two examples");
    batches.back().push_back(remainder.front());
  }
  rng.shuffle(std::span<std::vector<std::size_t>>(batches));
  return batches;
}

namespace {

template <typename T>
bool params_finite(const ParamStore<T>& store) {
  for (const auto& p : store.entries())
    if (!p.value->all_finite()) return false;
  return true;
}

}  // namespace

TrainingMonitor::Decision TrainingMonitor::observe(std::size_t epoch, double train_acc, double val_acc,
                                                   bool adapter_frozen, bool encoder_frozen) {
  Decision d;
  if (val_acc > best_val_) {
    best_val_ = val_acc;
    best_epoch_ = epoch;
    since_best_ = 0;
    d.improved = true;
  } else {
    ++since_best_;
  }
  // the stale counter keeps running after the unfreeze
  d.unfreeze_adapter =
      schedule_.unfreeze_adapter && adapter_frozen && since_best_ >= schedule_.unfreeze_patience;
  if (schedule_.freeze_encoder_on_overfit && !encoder_frozen) {
    overfit_streak_ = (train_acc - val_acc > schedule_.overfit_gap) ? overfit_streak_ + 1 : 0;
    d.freeze_encoder = overfit_streak_ >= schedule_.overfit_epochs;
  }
  d.stop = since_best_ >= schedule_.patience;
  return d;
}

template <typename T>
TrainResult train(Model<T>& model, const EncodedSet<T>& train_set, const EncodedSet<T>& val_set,
                  const TrainSchedule& schedule, const EpochCallback& on_epoch) {
  schedule.validate();
  require(train_set.size() > 0, ErrorCode::InvalidArgument, "training set is empty");
  require(val_set.size() > 0, ErrorCode::InvalidArgument, "validation set is empty");

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    if (train_set.targets[i] != kNoClass) rows.push_back(i);
  require(rows.size() >= 2, ErrorCode::InvalidArgument,
          "training needs at least two examples with known answers");

  ParamStore<T>& store = model.params();
  if (schedule.adapter_initially_frozen) store.set_group_frozen("adapter", true);
  AdamState<T> adam(store, schedule.adam);
  Rng rng(schedule.seed);

  TrainResult result;
  TrainingMonitor monitor(schedule);
  std::vector<Tensor<T>> best = store.snapshot();
  std::vector<Tensor<T>> last_good = best;
  std::vector<std::size_t> predictions;

  for (std::size_t epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    const auto batches = make_batches(train_set.questions, rows, schedule.batch_size,
                                      schedule.bucket_by_length, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (const auto& idx : batches) {
      const Batch<T> batch = train_set.gather(idx);
      store.zero_grad();
      const T loss = model.loss_and_backward(batch, Mode::Train, &predictions);
      if (!std::isfinite(static_cast<double>(loss))) {
        result.aborted = true;
        result.abort_reason = "non-finite loss in epoch " + std::to_string(epoch);
        break;
      }
      clip_gradients(store, schedule.clip_threshold);
      adam_step(store, adam);
      loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) correct += (predictions[i] == batch.targets[i]);
      seen += idx.size();
    }
    if (!result.aborted && !params_finite(store)) {
      result.aborted = true;
      result.abort_reason = "non-finite parameters after epoch " + std::to_string(epoch);
    }
    if (result.aborted) {
      store.restore(last_good);
      break;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    log.val_acc = accuracy(model, val_set);
    log.lr = schedule.adam.lr;
    log.frozen = store.frozen_names();
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    last_good = store.snapshot();

    const auto decision = monitor.observe(epoch, log.train_acc, log.val_acc, store.group_frozen("adapter"),
                                          store.group_frozen("encoder"));
    if (decision.improved) {
      best = last_good;
      result.best_epoch = epoch;
    }
    if (decision.unfreeze_adapter) {
      store.set_group_frozen("adapter", false);
      adam.set_group_lr_scale(store, "adapter", schedule.adapter_lr_scale);
    }
    if (decision.freeze_encoder) store.set_group_frozen("encoder", true);
    if (decision.stop) {
      result.early_stopped = true;
      break;
    }
  }

  if (result.best_epoch > 0) store.restore(best);
  result.best_val_acc = monitor.best_val_acc();
  return result;
}

ProbeResult linear_probe(const EncodedSet<double>& train_set, const EncodedSet<double>& test_set,
                         std::size_t num_classes, const ProbeOptions& options) {
  require(num_classes >= 1, ErrorCode::InvalidArgument, "probe needs at least one class");
  require(options.batch_size >= 1 && options.epochs >= 1, ErrorCode::Config, "probe options must be positive");
  const std::size_t f = train_set.features.cols();
  Tensor<double> w({num_classes, f}), b({num_classes});
  Tensor<double> gw({num_classes, f}), gb({num_classes});
  Rng rng(options.seed);
  const double a = 1.0 / std::sqrt(static_cast<double>(f));
  for (double& x : w.data()) x = rng.uniform(-a, a);

  ParamStore<double> store;
  store.add("probe.w", "probe", ParamRole::Static, w, &gw);
  store.add("probe.b", "probe", ParamRole::Static, b, &gb);
  AdamOptions adam_options;
  adam_options.lr = options.lr;
  AdamState<double> adam(store, adam_options);

  std::vector<std::size_t> rows, counts(num_classes, 0);
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (train_set.targets[i] == kNoClass) continue;
    rows.push_back(i);
    ++counts[train_set.targets[i]];
  }
  require(!rows.empty(), ErrorCode::InvalidArgument, "probe training set has no labelled examples");

  auto logits_of = [&](const Tensor<double>& x) {
    Tensor<double> z = matmul_nt(x, w);
    add_row_broadcast(z, b);
    return z;
  };
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(rows));
    for (std::size_t start = 0; start < rows.size(); start += options.batch_size) {
      const std::span<const std::size_t> idx(rows.data() + start,
                                             std::min(options.batch_size, rows.size() - start));
      const Batch<double> batch = train_set.gather(idx);
      const auto xent = softmax_xent(logits_of(batch.features), batch.targets);
      store.zero_grad();
      matmul_tn_accumulate(xent.dlogits, batch.features, gw);
      accumulate_column_sums(xent.dlogits, gb);
      adam_step(store, adam);
    }
  }

  auto score = [&](const EncodedSet<double>& set) {
    if (set.size() == 0) return 0.0;
    const Tensor<double> z = logits_of(set.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i)
      correct += (Model<double>::argmax(z.row(i)) == set.targets[i]);
    return static_cast<double>(correct) / static_cast<double>(set.size());
  };
  ProbeResult r;
  r.train_acc = score(train_set);
  r.test_acc = score(test_set);
  const std::size_t majority =
      static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  std::size_t hits = 0;
  for (std::size_t t : test_set.targets) hits += (t == majority);
  r.majority_acc = test_set.size() ? static_cast<double>(hits) / static_cast<double>(test_set.size()) : 0.0;
  return r;
}

#define DPPNET_INSTANTIATE(T)                                                                     \
  template struct EncodedSet<T>;                                                                 \
  template EncodedSet<T> encode_dataset<T>(const Dataset&, const Vocabulary&, const AnswerSpace&); \
  template std::vector<std::size_t> predict_all(const Model<T>&, const EncodedSet<T>&, std::size_t); \
  template double accuracy(const Model<T>&, const EncodedSet<T>&);                                \
  template struct AdamState<T>;                                                                  \
  template void adam_update(Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, std::uint64_t,  \
                            const AdamOptions&);                                                 \
  template void adam_step(ParamStore<T>&, AdamState<T>&);                                        \
  template double clip_gradients(std::span<Tensor<T>* const>, double);                           \
  template double clip_gradients(ParamStore<T>&, double);                                        \
  template TrainResult train(Model<T>&, const EncodedSet<T>&, const EncodedSet<T>&,              \
                             const TrainSchedule&, const EpochCallback&);

DPPNET_INSTANTIATE(float)
DPPNET_INSTANTIATE(double)
#undef DPPNET_INSTANTIATE

}  // namespace dppnet
