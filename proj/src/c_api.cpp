// SPDX-License-Identifier: Apache-2.0
#include "dppnet/dppnet.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "dppnet/checkpoint.hpp"
#include "dppnet/hashing.hpp"
#include "dppnet/pipeline.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

struct dppnet_model {
  dppnet::LoadedModel model;
};

struct dppnet_dataset {
  dppnet::Dataset data;
};

namespace {

thread_local std::string g_last_error;

dppnet_status status_of(dppnet::ErrorCode code) {
  switch (code) {
    case dppnet::ErrorCode::InvalidArgument: return DPPNET_ERR_INVALID_ARGUMENT;
    case dppnet::ErrorCode::ShapeMismatch: return DPPNET_ERR_SHAPE;
    case dppnet::ErrorCode::Io: return DPPNET_ERR_IO;
    case dppnet::ErrorCode::Format: return DPPNET_ERR_FORMAT;
    case dppnet::ErrorCode::Config: return DPPNET_ERR_CONFIG;
    case dppnet::ErrorCode::Numeric: return DPPNET_ERR_NUMERIC;
    case dppnet::ErrorCode::Internal: return DPPNET_ERR_INTERNAL;
  }
  return DPPNET_ERR_INTERNAL;
}

/// Runs `fn`, translating exceptions into status codes and the thread-local
/// error message.
template <typename Fn>
dppnet_status guarded(Fn&& fn) noexcept {
  try {
    fn();
    g_last_error.clear();
    return DPPNET_OK;
  } catch (const dppnet::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("JSON: ") + e.what();
    return DPPNET_ERR_FORMAT;
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return DPPNET_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DPPNET_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DPPNET_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DPPNET_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) { *out = dup_string(s); }

void need(const void* p, const char* what) {
  dppnet::require(p != nullptr, dppnet::ErrorCode::InvalidArgument, std::string(what) + " must not be null");
}

json parse_optional(const char* text, const char* what) {
  if (!text || !*text) return json();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    dppnet::fail(dppnet::ErrorCode::Config, std::string(what) + " is not valid JSON: " + e.what());
  }
}

dppnet::HashSpec spec_from(const char* spec_json) {
  need(spec_json, "spec_json");
  auto spec = dppnet::hash_spec_from_json(parse_optional(spec_json, "hash spec"));
  spec.validate();
  return spec;
}

}  // namespace

extern "C" {

const char* dppnet_version(void) { return "1.0.0"; }

const char* dppnet_status_name(dppnet_status status) {
  switch (status) {
    case DPPNET_OK: return "ok";
    case DPPNET_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case DPPNET_ERR_SHAPE: return "shape_mismatch";
    case DPPNET_ERR_IO: return "io";
    case DPPNET_ERR_FORMAT: return "format";
    case DPPNET_ERR_CONFIG: return "config";
    case DPPNET_ERR_NUMERIC: return "numeric";
    case DPPNET_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* dppnet_last_error(void) { return g_last_error.c_str(); }

void dppnet_string_free(char* s) { std::free(s); }

uint64_t dppnet_splitmix64(uint64_t x) { return dppnet::splitmix64(x); }

dppnet_status dppnet_hash_psi(const char* spec_json, uint32_t m, uint32_t n, uint32_t* out_bucket) {
  return guarded([&] {
    need(out_bucket, "out_bucket");
    *out_bucket = dppnet::psi(m, n, spec_from(spec_json));
  });
}

dppnet_status dppnet_hash_xi(const char* spec_json, uint32_t m, uint32_t n, int32_t* out_sign) {
  return guarded([&] {
    need(out_sign, "out_sign");
    *out_sign = dppnet::xi(m, n, spec_from(spec_json));
  });
}

dppnet_status dppnet_hash_stats(const char* spec_json, int include_loads, char** out_json) {
  return guarded([&] {
    need(out_json, "out_json");
    const auto spec = spec_from(spec_json);
    json j = dppnet::to_json(dppnet::hash_stats(spec), include_loads != 0);
    j["spec"] = dppnet::to_json(spec);
    put(out_json, j.dump());
  });
}

dppnet_status dppnet_generate_synthetic(const char* config_json, uint64_t seed, const char* out_dir,
                                        char** out_summary) {
  return guarded([&] {
    need(out_dir, "out_dir");
    need(out_summary, "out_summary");
    const json cj = parse_optional(config_json, "generator config");
    const auto config = dppnet::synthetic_config_from_json(cj.is_null() ? json::object() : cj);
    const auto splits = dppnet::generate_synthetic(config, seed);
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    dppnet::save_jsonl(dir / "train.jsonl", splits.train);
    dppnet::save_jsonl(dir / "val.jsonl", splits.val);
    dppnet::save_jsonl(dir / "test.jsonl", splits.test);
    json gen = {{"config", dppnet::to_json(config)}, {"seed", seed}};
    dppnet::write_json_file(dir / "gen_config.json", gen);
    gen["feature_dim"] = config.feature_dim();
    gen["files"] = {{"train", (dir / "train.jsonl").string()},
                    {"val", (dir / "val.jsonl").string()},
                    {"test", (dir / "test.jsonl").string()}};
    gen["sizes"] = {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}};
    put(out_summary, gen.dump());
  });
}

dppnet_status dppnet_dataset_load(const char* path, dppnet_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto d = std::make_unique<dppnet_dataset>();
    d->data = dppnet::load_jsonl(path);
    *out = d.release();
  });
}

void dppnet_dataset_free(dppnet_dataset* data) { delete data; }

size_t dppnet_dataset_size(const dppnet_dataset* data) { return data ? data->data.size() : 0; }

size_t dppnet_dataset_feature_dim(const dppnet_dataset* data) { return data ? data->data.feature_dim : 0; }

dppnet_status dppnet_train(const char* run_config_json, const dppnet_dataset* train, const dppnet_dataset* val,
                           const char* out_dir, dppnet_epoch_fn on_epoch, void* user, char** out_summary) {
  return guarded([&] {
    need(train, "train");
    need(val, "val");
    need(out_dir, "out_dir");
    need(out_summary, "out_summary");
    const json cj = parse_optional(run_config_json, "run config");
    const auto config = dppnet::run_config_from_json(cj.is_null() ? json::object() : cj);
    dppnet::EpochCallback cb;
    if (on_epoch) cb = [&](const dppnet::EpochLog& e) { on_epoch(dppnet::to_json(e).dump().c_str(), user); };
    const json summary = dppnet::train_run(config, train->data, val->data, out_dir, cb);
    put(out_summary, summary.dump());
  });
}

dppnet_status dppnet_linear_probe(const dppnet_dataset* train, const dppnet_dataset* test, uint64_t seed,
                                  char** out_json) {
  return guarded([&] {
    need(train, "train");
    need(test, "test");
    need(out_json, "out_json");
    const auto vb = dppnet::build_vocab(train->data);
    const auto tr = dppnet::encode_dataset<double>(train->data, vb.vocab, vb.answers);
    const auto te = dppnet::encode_dataset<double>(test->data, vb.vocab, vb.answers);
    dppnet::ProbeOptions opts;
    opts.seed = seed;
    const auto r = dppnet::linear_probe(tr, te, vb.answers.size(), opts);
    put(out_json, json{{"train_acc", r.train_acc}, {"test_acc", r.test_acc}, {"majority_acc", r.majority_acc},
                       {"classes", vb.answers.size()}}
                      .dump());
  });
}

dppnet_status dppnet_model_load(const char* dir, dppnet_model** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    auto m = std::make_unique<dppnet_model>(dppnet_model{dppnet::LoadedModel::load(dir)});
    *out = m.release();
  });
}

void dppnet_model_free(dppnet_model* model) { delete model; }

dppnet_status dppnet_model_info(const dppnet_model* model, char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(out_json, "out_json");
    const auto& lm = model->model;
    put(out_json, json{{"config", dppnet::to_json(lm.config())},
                       {"parameter_count", lm.parameter_count()},
                       {"answers", lm.answers().answers()},
                       {"vocab_size", lm.vocab().size()}}
                      .dump());
  });
}

dppnet_status dppnet_model_predict(const dppnet_model* model, const double* features, size_t feature_count,
                                   const char* question, char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(features, "features");
    need(question, "question");
    need(out_json, "out_json");
    const auto p = model->model.predict(std::span<const double>(features, feature_count), question);
    put(out_json, dppnet::to_json(p).dump());
  });
}

dppnet_status dppnet_model_predict_dataset(const dppnet_model* model, const dppnet_dataset* data,
                                           const char* options_json, char** out_jsonl) {
  return guarded([&] {
    need(model, "model");
    need(data, "data");
    need(out_jsonl, "out_jsonl");
    const auto options = dppnet::eval_options_from_json(parse_optional(options_json, "options"));
    dppnet::CandidateMask mask;
    if (!options.multiple_choice.empty()) mask = dppnet::load_candidate_mask(options.multiple_choice);
    const auto preds = model->model.predict_dataset(data->data, options.multiple_choice.empty() ? nullptr : &mask);
    std::string out;
    for (const auto& p : preds) out += dppnet::to_json(p).dump() + "\n";
    put(out_jsonl, out);
  });
}

dppnet_status dppnet_model_evaluate(const dppnet_model* model, const dppnet_dataset* data, const char* options_json,
                                    char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(data, "data");
    need(out_json, "out_json");
    const auto options = dppnet::eval_options_from_json(parse_optional(options_json, "options"));
    put(out_json, model->model.evaluate(data->data, options).dump());
  });
}

dppnet_status dppnet_model_retrieve(const dppnet_model* model, const char* query, const char* corpus_json,
                                    size_t top_k, char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(query, "query");
    need(corpus_json, "corpus_json");
    need(out_json, "out_json");
    const json corpus = parse_optional(corpus_json, "corpus");
    dppnet::require(corpus.is_array(), dppnet::ErrorCode::InvalidArgument, "corpus must be a JSON array of strings");
    put(out_json, model->model.retrieve(query, corpus.get<std::vector<std::string>>(), top_k).dump());
  });
}

dppnet_status dppnet_evaluate_predictions(const char* predictions_path, const dppnet_dataset* data,
                                          const char* options_json, char** out_json) {
  return guarded([&] {
    need(predictions_path, "predictions_path");
    need(data, "data");
    need(out_json, "out_json");
    const auto options = dppnet::eval_options_from_json(parse_optional(options_json, "options"));
    put(out_json, dppnet::evaluate_prediction_file(predictions_path, data->data, options).dump());
  });
}

dppnet_status dppnet_gradcheck(const char* config_json, uint64_t seed, char** out_json) {
  return guarded([&] {
    need(out_json, "out_json");
    put(out_json, dppnet::run_gradcheck(parse_optional(config_json, "gradcheck config"), seed).dump());
  });
}

}  // extern "C"
