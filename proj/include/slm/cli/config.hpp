#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "../checkpoint.hpp"
#include "../data.hpp"
#include "../error.hpp"
#include "../linear_predictor.hpp"
#include "../losses.hpp"
#include "../schedule.hpp"

namespace slm::cli {

using json = nlohmann::json;

struct TrainingConfig {
  double lr = 0.05;
  double momentum = 0.0;
  std::size_t batch_size = 64;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  double label_dropout = 0.3;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct CorpusConfig {
  std::string path;
  std::string alphabet = default_alphabet();
  std::size_t chunk_length = 256;
  std::optional<Span> train, valid, test;  // byte offsets; defaults 90/5/5

  friend bool operator==(const CorpusConfig& a, const CorpusConfig& b) {
    auto eq = [](const std::optional<Span>& x, const std::optional<Span>& y) {
      return x.has_value() == y.has_value() && (!x || (x->begin == y->begin && x->end == y->end));
    };
    return a.path == b.path && a.alphabet == b.alphabet && a.chunk_length == b.chunk_length &&
           eq(a.train, b.train) && eq(a.valid, b.valid) && eq(a.test, b.test);
  }
};

struct DataConfig {
  enum class Type { synthetic, corpus } type = Type::synthetic;
  SyntheticSpec synthetic;
  CorpusConfig corpus;
};

struct SamplingConfig {
  std::size_t steps = 0;  // 0 = schedule steps
  double gamma = 1.0;
  ClassLabel cls;
  std::uint64_t seed = 0;
  std::size_t count = 16;

  friend bool operator==(const SamplingConfig&, const SamplingConfig&) = default;
};

struct EvalConfig {
  ElboMode mode = ElboMode::monte_carlo;
  std::size_t draws = 1;
  std::size_t max_sequences = 64;
  std::string split = "valid";
  std::uint64_t seed = 0;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct RunConfig {
  PredictorConfig model;
  Schedule schedule;
  LossKind loss = LossKind::weighted;
  TrainingConfig training;
  DataConfig data;
  SamplingConfig sampling;
  EvalConfig eval;
  std::string output_dir = "out";
};

// ---------------------------------------------------------------------------
// JSON mapping. Serialisation writes every field so parse -> dump -> parse is
// the identity; nlohmann objects sort keys, which makes the dump canonical.

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

inline json span_to_json(const std::optional<Span>& s) {
  if (!s) return nullptr;
  return json::array({s->begin, s->end});
}

inline std::optional<Span> span_from_json(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const auto& a = j.at(key);
  slm::detail::require(a.is_array() && a.size() == 2, std::string("corpus split ") + key + " must be [begin, end]");
  return Span{a[0].get<std::size_t>(), a[1].get<std::size_t>()};
}

}  // namespace detail

inline json synthetic_to_json(const SyntheticSpec& s) {
  return json{{"kind", s.kind == SyntheticKind::iid ? "iid" : "markov"},
              {"categories", s.categories},
              {"length", s.length},
              {"count", s.count},
              {"probs", s.probs},
              {"class_probs", s.class_probs},
              {"initial", s.initial},
              {"transition", s.transition},
              {"seed", s.seed}};
}

inline SyntheticSpec synthetic_from_json(const json& j, const PredictorConfig& model) {
  SyntheticSpec s;
  const auto kind = detail::get_or<std::string>(j, "kind", "iid");
  slm::detail::require(kind == "iid" || kind == "markov", "synthetic kind must be iid or markov");
  s.kind = kind == "iid" ? SyntheticKind::iid : SyntheticKind::markov;
  s.categories = detail::get_or<std::size_t>(j, "categories", model.categories);
  s.length = detail::get_or<std::size_t>(j, "length", model.length);
  s.count = detail::get_or<std::size_t>(j, "count", 1000);
  s.probs = detail::get_or<std::vector<std::vector<double>>>(j, "probs", {});
  s.class_probs = detail::get_or<std::vector<std::vector<double>>>(j, "class_probs", {});
  s.initial = detail::get_or<std::vector<double>>(j, "initial", {});
  s.transition = detail::get_or<std::vector<std::vector<double>>>(j, "transition", {});
  s.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  validate(s);
  return s;
}

inline json to_json(const RunConfig& c) {
  json data;
  if (c.data.type == DataConfig::Type::synthetic) {
    data = {{"type", "synthetic"}, {"synthetic", synthetic_to_json(c.data.synthetic)}};
  } else {
    const auto& k = c.data.corpus;
    data = {{"type", "corpus"},
            {"corpus",
             {{"path", k.path},
              {"alphabet", k.alphabet},
              {"chunk_length", k.chunk_length},
              {"splits",
               {{"train", detail::span_to_json(k.train)},
                {"valid", detail::span_to_json(k.valid)},
                {"test", detail::span_to_json(k.test)}}}}}};
  }
  return json{
      {"model",
       {{"categories", c.model.categories},
        {"length", c.model.length},
        {"classes", c.model.classes},
        {"time_features", c.model.time_features},
        {"hidden", c.model.hidden}}},
      {"schedule", {{"categories", c.schedule.categories}, {"steps", c.schedule.steps}, {"kind", to_string(c.schedule.kind)}}},
      {"loss", to_string(c.loss)},
      {"training",
       {{"lr", c.training.lr},
        {"momentum", c.training.momentum},
        {"batch_size", c.training.batch_size},
        {"steps", c.training.steps},
        {"seed", c.training.seed},
        {"label_dropout", c.training.label_dropout},
        {"log_every", c.training.log_every},
        {"checkpoint_every", c.training.checkpoint_every}}},
      {"data", data},
      {"sampling",
       {{"steps", c.sampling.steps},
        {"gamma", c.sampling.gamma},
        {"cls", c.sampling.cls ? json(*c.sampling.cls) : json(nullptr)},
        {"seed", c.sampling.seed},
        {"count", c.sampling.count}}},
      {"eval",
       {{"mode", to_string(c.eval.mode)},
        {"draws", c.eval.draws},
        {"max_sequences", c.eval.max_sequences},
        {"split", c.eval.split},
        {"seed", c.eval.seed}}},
      {"output_dir", c.output_dir}};
}

inline RunConfig from_json(const json& j) {
  using detail::get_or;
  RunConfig c;
  const json empty = json::object();
  const auto& m = j.contains("model") ? j.at("model") : empty;
  c.model.categories = get_or<std::size_t>(m, "categories", 2);
  c.model.length = get_or<std::size_t>(m, "length", 1);
  c.model.classes = get_or<std::size_t>(m, "classes", 0);
  c.model.time_features = get_or<std::size_t>(m, "time_features", 8);
  c.model.hidden = get_or<std::size_t>(m, "hidden", 0);
  c.model.validate();

  const auto& s = j.contains("schedule") ? j.at("schedule") : empty;
  const auto sk = get_or<std::size_t>(s, "categories", c.model.categories);
  slm::detail::require(sk == c.model.categories, "schedule.categories must equal model.categories");
  c.schedule = Schedule(sk, get_or<std::size_t>(s, "steps", 100),
                        schedule_kind_from_string(get_or<std::string>(s, "kind", "exponential")));

  c.loss = loss_kind_from_string(get_or<std::string>(j, "loss", "weighted"));

  const auto& t = j.contains("training") ? j.at("training") : empty;
  c.training.lr = get_or<double>(t, "lr", 0.05);
  c.training.momentum = get_or<double>(t, "momentum", 0.0);
  c.training.batch_size = get_or<std::size_t>(t, "batch_size", 64);
  c.training.steps = get_or<std::size_t>(t, "steps", 1000);
  c.training.seed = get_or<std::uint64_t>(t, "seed", 0);
  c.training.label_dropout = get_or<double>(t, "label_dropout", 0.3);
  c.training.log_every = get_or<std::size_t>(t, "log_every", 100);
  c.training.checkpoint_every = get_or<std::size_t>(t, "checkpoint_every", 0);
  slm::detail::require(c.training.lr >= 0.0, "training.lr must be >= 0");
  slm::detail::require(c.training.batch_size >= 1, "training.batch_size must be >= 1");
  slm::detail::require(c.training.log_every >= 1, "training.log_every must be >= 1");
  slm::detail::require(c.training.label_dropout >= 0.0 && c.training.label_dropout <= 1.0,
                       "training.label_dropout must lie in [0,1]");

  const auto& d = j.contains("data") ? j.at("data") : empty;
  const auto type = get_or<std::string>(d, "type", "synthetic");
  if (type == "synthetic") {
    c.data.type = DataConfig::Type::synthetic;
    c.data.synthetic = synthetic_from_json(d.contains("synthetic") ? d.at("synthetic") : empty, c.model);
    slm::detail::require(c.data.synthetic.categories == c.model.categories &&
                             c.data.synthetic.length == c.model.length,
                         "synthetic data K/L must match the model");
    slm::detail::require(c.data.synthetic.classes() <= c.model.classes,
                         "synthetic data has more classes than the model");
  } else if (type == "corpus") {
    c.data.type = DataConfig::Type::corpus;
    const auto& k = d.contains("corpus") ? d.at("corpus") : empty;
    c.data.corpus.path = get_or<std::string>(k, "path", "");
    c.data.corpus.alphabet = get_or<std::string>(k, "alphabet", default_alphabet());
    c.data.corpus.chunk_length = get_or<std::size_t>(k, "chunk_length", c.model.length);
    if (k.contains("splits") && k.at("splits").is_object()) {
      const auto& sp = k.at("splits");
      c.data.corpus.train = detail::span_from_json(sp, "train");
      c.data.corpus.valid = detail::span_from_json(sp, "valid");
      c.data.corpus.test = detail::span_from_json(sp, "test");
    }
    slm::detail::require(c.data.corpus.alphabet.size() == c.model.categories,
                         "corpus alphabet size must equal model.categories");
    slm::detail::require(c.data.corpus.chunk_length == c.model.length,
                         "corpus chunk_length must equal model.length");
  } else {
    throw invalid_input("data.type must be synthetic or corpus");
  }

  const auto& sm = j.contains("sampling") ? j.at("sampling") : empty;
  c.sampling.steps = get_or<std::size_t>(sm, "steps", 0);
  c.sampling.gamma = get_or<double>(sm, "gamma", 1.0);
  if (sm.contains("cls") && !sm.at("cls").is_null()) c.sampling.cls = sm.at("cls").get<std::size_t>();
  c.sampling.seed = get_or<std::uint64_t>(sm, "seed", 0);
  c.sampling.count = get_or<std::size_t>(sm, "count", 16);

  const auto& e = j.contains("eval") ? j.at("eval") : empty;
  const auto mode = get_or<std::string>(e, "mode", "mc");
  slm::detail::require(mode == "mc" || mode == "exact_sum", "eval.mode must be mc or exact_sum");
  c.eval.mode = mode == "mc" ? ElboMode::monte_carlo : ElboMode::exact_sum;
  c.eval.draws = get_or<std::size_t>(e, "draws", 1);
  c.eval.max_sequences = get_or<std::size_t>(e, "max_sequences", 64);
  c.eval.split = get_or<std::string>(e, "split", "valid");
  c.eval.seed = get_or<std::uint64_t>(e, "seed", 0);

  c.output_dir = get_or<std::string>(j, "output_dir", "out");
  return c;
}

inline std::string canonical(const RunConfig& c) { return to_json(c).dump(); }
inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(canonical(c)); }

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline RunConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw invalid_input("config " + path + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw invalid_input("config " + path + ": " + e.what());
  }
}

}  // namespace slm::cli
