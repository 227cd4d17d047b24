#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "../bayes_predictor.hpp"
#include "../checkpoint.hpp"
#include "../data.hpp"
#include "../forward_process.hpp"
#include "../linear_predictor.hpp"
#include "../losses.hpp"
#include "../oracle.hpp"
#include "../reverse_sampler.hpp"
#include "../training.hpp"
#include "config.hpp"

namespace slm::cli {

namespace fs = std::filesystem;

/// Exclusive ownership of an output directory for the lifetime of a command.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw invalid_input("output directory is locked by another run: " + dir.string());
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// Data plumbing shared by the commands.

inline CharCorpus open_corpus(const CorpusConfig& cfg) {
  auto corpus = load_corpus(cfg.path, Alphabet(cfg.alphabet), cfg.chunk_length);
  if (cfg.train) corpus.train = *cfg.train;
  if (cfg.valid) corpus.valid = *cfg.valid;
  if (cfg.test) corpus.test = *cfg.test;
  for (const Span* s : {&corpus.train, &corpus.valid, &corpus.test})
    slm::detail::require(s->begin <= s->end && s->end <= corpus.tokens.size(), "corpus split out of range");
  return corpus;
}

/// Batches for training and fixed sequence sets for evaluation.
class DataSource {
 public:
  explicit DataSource(const RunConfig& cfg) : cfg_(cfg) {
    if (cfg.data.type == DataConfig::Type::synthetic) {
      dataset_ = generate(cfg.data.synthetic);
    } else {
      corpus_ = open_corpus(cfg.data.corpus);
    }
  }

  bool is_corpus() const noexcept { return corpus_.has_value(); }
  const CharCorpus& corpus() const { return *corpus_; }

  SequenceBatch empty_batch() const {
    SequenceBatch b;
    b.categories = cfg_.model.categories;
    b.length = cfg_.model.length;
    b.classes = dataset_ ? dataset_->classes : 0;
    return b;
  }

  SequenceBatch training_batch(std::size_t size, Rng& rng) const {
    auto b = empty_batch();
    if (dataset_) {
      if (dataset_->labels) b.labels.emplace();
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t n = rng.below(dataset_->size());
        b.tokens.push_back(dataset_->tokens[n]);
        if (dataset_->labels) b.labels->push_back((*dataset_->labels)[n]);
      }
    } else {
      b.tokens = random_chunks(corpus_->tokens, corpus_->train, cfg_.model.length, size, rng);
    }
    return b;
  }

  /// Synthetic: "train" is the configured dataset, other splits are fresh draws
  /// from the same law. Corpus: sequential chunks of the split.
  SequenceBatch split(const std::string& name, std::size_t max_sequences) const {
    auto b = empty_batch();
    if (dataset_) {
      SequenceBatch src;
      if (name == "train") {
        src = *dataset_;
      } else {
        slm::detail::require(name == "valid" || name == "test", "unknown split " + name);
        auto spec = cfg_.data.synthetic;
        spec.seed = splitmix64(spec.seed ^ fnv1a64(name));
        src = generate(spec);
      }
      const std::size_t n = std::min(max_sequences, src.size());
      b.tokens.assign(src.tokens.begin(), src.tokens.begin() + static_cast<std::ptrdiff_t>(n));
      if (src.labels) b.labels.emplace(src.labels->begin(), src.labels->begin() + static_cast<std::ptrdiff_t>(n));
    } else {
      b.tokens = sequential_chunks(corpus_->tokens, corpus_->split(name), cfg_.model.length, max_sequences);
    }
    return b;
  }

  const SequenceBatch& dataset() const { return *dataset_; }

 private:
  const RunConfig& cfg_;
  std::optional<SequenceBatch> dataset_;
  std::optional<CharCorpus> corpus_;
};

inline json provenance(const RunConfig& cfg, std::uint64_t seed, const std::string& kind) {
  return json{{"kind", kind}, {"config_hash", hex64(config_hash(cfg))}, {"seed", seed}};
}

// ---------------------------------------------------------------------------
// Checkpoints.

/// Loads a checkpoint and rejects it unless it was trained for this model and
/// schedule; the error lists every differing header field.
inline ReferencePredictor load_compatible(const std::string& path, const RunConfig& cfg) {
  const auto ck = read_checkpoint(path);
  const auto& h = ck.header;
  std::vector<std::string> diff;
  auto cmp = [&](const char* name, std::size_t have, std::size_t want) {
    if (have != want)
      diff.push_back(std::string(name) + ": checkpoint=" + std::to_string(have) + " config=" + std::to_string(want));
  };
  cmp("categories", h.model.categories, cfg.model.categories);
  cmp("length", h.model.length, cfg.model.length);
  cmp("classes", h.model.classes, cfg.model.classes);
  cmp("time_features", h.model.time_features, cfg.model.time_features);
  cmp("hidden", h.model.hidden, cfg.model.hidden);
  cmp("schedule.steps", h.steps, cfg.schedule.steps);
  if (diff.empty() && h.fingerprint != model_fingerprint(cfg.model, cfg.schedule))
    diff.push_back("fingerprint: checkpoint=" + hex64(h.fingerprint) + " config=" +
                   hex64(model_fingerprint(cfg.model, cfg.schedule)));
  if (!diff.empty()) {
    std::string msg = "checkpoint " + path + " is incompatible with the config:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw invalid_input(msg);
  }
  return ReferencePredictor(h.model, ck.params);
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
  fs::path checkpoint;
  fs::path metrics;
  std::vector<fs::path> snapshots;  // periodic checkpoints, step 0 first
  std::size_t steps_done = 0;
  double last_loss = 0.0;
};

inline std::string snapshot_name(std::size_t step) {
  std::ostringstream os;
  os << "checkpoint_" << std::setw(8) << std::setfill('0') << step << ".bin";
  return os.str();
}

/// Training loop: per step draw a batch, snap tau ~ U(0,1) to the grid, drop
/// labels with probability label_dropout, corrupt, differentiate, update.
/// metrics.jsonl is deterministic; wall-clock timing goes to timing.jsonl.
inline TrainResult cmd_train(const RunConfig& cfg, const fs::path& out_dir,
                             std::optional<std::uint64_t> seed_override = std::nullopt) {
  RunConfig run = cfg;
  if (seed_override) run.training.seed = *seed_override;
  OutputLock lock(out_dir);
  const auto hash = config_hash(run);
  const auto seed = run.training.seed;
  const ForwardKernel kernel(run.schedule);
  const DataSource data(run);
  auto model = ReferencePredictor::initialized(run.model, seed);
  SgdOptimizer opt(run.training.lr, run.training.momentum);
  const Rng master(seed);

  TrainResult res;
  res.checkpoint = out_dir / "checkpoint.bin";
  res.metrics = out_dir / "metrics.jsonl";
  std::ofstream metrics(res.metrics, std::ios::trunc);
  std::ofstream timing(out_dir / "timing.jsonl", std::ios::trunc);
  auto header = provenance(run, seed, "metrics");
  header["config"] = to_json(run);
  metrics << header.dump() << "\n";
  timing << provenance(run, seed, "timing").dump() << "\n";

  auto snapshot = [&](std::size_t step) {
    const auto p = out_dir / snapshot_name(step);
    write_checkpoint(p.string(), model, run.schedule, hash);
    res.snapshots.push_back(p);
  };
  const auto start = std::chrono::steady_clock::now();
  const std::size_t every = run.training.checkpoint_every;
  if (every > 0) snapshot(0);

  for (std::size_t step = 0; step < run.training.steps; ++step) {
    Rng batch_rng = master.split(2 * step);
    const auto batch = data.training_batch(run.training.batch_size, batch_rng);
    LossGradient lg;
    try {
      lg = loss_gradient(model, batch, run.loss, kernel, master.split(2 * step + 1), run.training.label_dropout);
    } catch (const numeric_fault&) {
      write_checkpoint(res.checkpoint.string(), model, run.schedule, hash);
      throw;
    }
    opt.step(model.params(), lg.gradient);
    res.steps_done = step + 1;
    res.last_loss = lg.loss.mean;
    if ((step + 1) % run.training.log_every == 0 || step + 1 == run.training.steps) {
      metrics << json{{"step", step + 1}, {"loss_mean", lg.loss.mean}, {"loss_stderr", lg.loss.std_error}}.dump()
              << "\n";
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      timing << json{{"step", step + 1}, {"wall_time", wall}}.dump() << "\n";
    }
    if (every > 0 && (step + 1) % every == 0) snapshot(step + 1);
  }
  write_checkpoint(res.checkpoint.string(), model, run.schedule, hash);
  return res;
}

// ---------------------------------------------------------------------------
// sample

struct SampleOptions {
  std::optional<std::size_t> count;
  std::optional<double> gamma;
  ClassLabel cls;
  std::optional<std::uint64_t> seed;
};

struct SampleSummary {
  fs::path samples;
  std::vector<std::vector<std::size_t>> tokens;
  double entropy_mean = 0.0;
};

template <Predictor P>
SampleSummary write_samples(const RunConfig& cfg, const P& predictor, const SamplerConfig& sc,
                            std::size_t count, const fs::path& out_dir) {
  SampleSummary res;
  res.tokens = sample(predictor, sc, count);
  res.samples = out_dir / "samples.jsonl";
  std::vector<double> ent;
  for (const auto& t : res.tokens) ent.push_back(token_entropy(t));
  const auto est = summarize(ent);
  res.entropy_mean = est.mean;

  auto header = provenance(cfg, sc.seed, "samples");
  header["count"] = count;
  header["gamma"] = sc.gamma;
  header["cls"] = sc.cls ? json(*sc.cls) : json(nullptr);
  header["steps"] = sc.steps;
  header["entropy"] = {{"mean", est.mean},
                       {"stderr", est.std_error},
                       {"min", ent.empty() ? 0.0 : *std::min_element(ent.begin(), ent.end())},
                       {"max", ent.empty() ? 0.0 : *std::max_element(ent.begin(), ent.end())}};
  std::ofstream out(res.samples, std::ios::trunc);
  out << header.dump() << "\n";
  for (std::size_t s = 0; s < res.tokens.size(); ++s)
    out << json{{"tokens", res.tokens[s]}, {"entropy", ent[s]}}.dump() << "\n";

  if (cfg.data.type == DataConfig::Type::corpus) {
    const Alphabet alphabet(cfg.data.corpus.alphabet);
    std::ofstream text(out_dir / "samples.txt", std::ios::trunc);
    for (const auto& t : res.tokens) text << alphabet.decode(t) << "\n";
  }
  return res;
}

inline SampleSummary cmd_sample(const RunConfig& cfg, const std::string& checkpoint,
                                const fs::path& out_dir, const SampleOptions& opt = {}) {
  OutputLock lock(out_dir);
  const auto model = load_compatible(checkpoint, cfg);
  SamplerConfig sc;
  sc.steps = cfg.sampling.steps ? cfg.sampling.steps : cfg.schedule.steps;
  sc.gamma = opt.gamma.value_or(cfg.sampling.gamma);
  sc.cls = opt.cls ? opt.cls : cfg.sampling.cls;
  sc.seed = opt.seed.value_or(cfg.sampling.seed);
  if (sc.cls) slm::detail::require(*sc.cls < cfg.model.classes, "sample: class label out of range");
  return write_samples(cfg, model, sc, opt.count.value_or(cfg.sampling.count), out_dir);
}

// ---------------------------------------------------------------------------
// eval

enum class EvalPredictor { checkpoint, bayes, uniform };

struct EvalOptions {
  std::optional<std::string> split;
  std::optional<std::uint64_t> seed;
  EvalPredictor predictor = EvalPredictor::checkpoint;
};

struct EvalSummary {
  fs::path report;
  std::size_t sequences = 0;
  double total_nats_mean = 0.0;
  double bpc_mean = 0.0;
  double bpc_stderr = 0.0;
  double lT = 0.0;
  std::size_t nonfinite = 0;  // sequences whose bound is +inf
  ElboMode mode = ElboMode::monte_carlo;
};

inline json to_json(const ElboReport& r) {
  return json{{"l0", r.l0},          {"lt_terms", r.lt_terms}, {"lT", r.lT},
              {"total_nats", r.total_nats}, {"bpc", r.bpc}, {"stderr_nats", r.std_error_nats},
              {"mode", to_string(r.mode)}};
}

/// ELBO per evaluation sequence (stream split(i) of the eval seed for MC mode)
/// as JSON lines, then a summary line whose stderr combines the between-sequence
/// spread of the per-sequence estimates.
template <Predictor P>
EvalSummary evaluate(const RunConfig& cfg, const P& predictor, const SequenceBatch& eval_set,
                     std::uint64_t seed, const fs::path& out_dir) {
  slm::detail::require(!eval_set.empty(), "eval: split has no sequences");
  const ForwardKernel kernel(cfg.schedule);
  const Rng master(seed);
  std::vector<ElboReport> reports(eval_set.size());
  parallel_for(eval_set.size(), [&](std::size_t i) {
    reports[i] = elbo(predictor, eval_set.tokens[i], kernel, cfg.eval.mode, eval_set.label(i), cfg.eval.draws,
                      master.split(i));
  });

  EvalSummary sum;
  sum.report = out_dir / "eval.jsonl";
  sum.sequences = reports.size();
  sum.mode = cfg.eval.mode;
  std::vector<double> bpcs, nats;
  for (const auto& r : reports) {
    bpcs.push_back(r.bpc);
    nats.push_back(r.total_nats);
    sum.lT += r.lT;
    sum.nonfinite += !std::isfinite(r.total_nats);
  }
  const auto b = summarize(bpcs);
  sum.bpc_mean = b.mean;
  sum.bpc_stderr = b.std_error;
  if (reports.size() == 1) sum.bpc_stderr = reports[0].std_error_nats / (reports[0].length * std::numbers::ln2);
  if (sum.nonfinite > 0) sum.bpc_mean = sum.bpc_stderr = kInf;
  sum.total_nats_mean = summarize(nats).mean;

  std::ofstream out(sum.report, std::ios::trunc);
  auto header = provenance(cfg, seed, "eval");
  header["mode"] = to_string(cfg.eval.mode);
  header["sequences"] = reports.size();
  out << header.dump() << "\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto line = to_json(reports[i]);
    line["index"] = i;
    out << line.dump() << "\n";
  }
  out << json{{"kind", "summary"},
              {"bpc", sum.bpc_mean},
              {"bpc_stderr", sum.bpc_stderr},
              {"total_nats", sum.total_nats_mean},
              {"lT", sum.lT},
              {"mode", to_string(sum.mode)},
              {"sequences", sum.sequences},
              {"nonfinite_sequences", sum.nonfinite}}
             .dump()
      << "\n";
  return sum;
}

inline EvalSummary cmd_eval(const RunConfig& cfg, const std::optional<std::string>& checkpoint,
                            const fs::path& out_dir, const EvalOptions& opt = {}) {
  OutputLock lock(out_dir);
  const DataSource data(cfg);
  const auto eval_set = data.split(opt.split.value_or(cfg.eval.split), cfg.eval.max_sequences);
  const auto seed = opt.seed.value_or(cfg.eval.seed);
  switch (opt.predictor) {
    case EvalPredictor::checkpoint: {
      slm::detail::require(checkpoint.has_value(), "eval: --checkpoint is required");
      const auto model = load_compatible(*checkpoint, cfg);
      return evaluate(cfg, model, eval_set, seed, out_dir);
    }
    case EvalPredictor::bayes: {
      const auto train = data.is_corpus() ? data.split("train", SIZE_MAX) : data.dataset();
      const BayesPredictor bayes(train, ForwardKernel(cfg.schedule));
      return evaluate(cfg, bayes, eval_set, seed, out_dir);
    }
    case EvalPredictor::uniform:
      return evaluate(cfg, UniformPredictor(cfg.model.categories, cfg.model.length), eval_set, seed, out_dir);
  }
  throw invalid_input("eval: unknown predictor");
}

// ---------------------------------------------------------------------------
// gen-data

inline fs::path cmd_gen_data(const RunConfig& cfg, const fs::path& out_dir,
                             std::optional<std::uint64_t> seed_override = std::nullopt) {
  OutputLock lock(out_dir);
  RunConfig run = cfg;
  std::uint64_t seed = 0;
  SequenceBatch batch;
  if (run.data.type == DataConfig::Type::synthetic) {
    if (seed_override) run.data.synthetic.seed = *seed_override;
    seed = run.data.synthetic.seed;
    batch = generate(run.data.synthetic);
  } else {
    const DataSource data(run);
    batch = data.split("train", SIZE_MAX);
  }
  const auto path = out_dir / "dataset.jsonl";
  std::ofstream out(path, std::ios::trunc);
  auto header = provenance(run, seed, "dataset");
  header["count"] = batch.size();
  out << header.dump() << "\n";
  for (std::size_t n = 0; n < batch.size(); ++n) {
    json line{{"tokens", batch.tokens[n]}};
    if (batch.labels) line["label"] = (*batch.labels)[n];
    out << line.dump() << "\n";
  }
  return path;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOptions {
  double marginal_perturbation = 0.0;  // mutation fixture: added to the wrong-dim marginal
};

/// Runs the oracle suite against the kernels, losses and projection.
inline std::vector<oracle::CheckResult> run_verification(const VerifyOptions& opt = {}) {
  using oracle::CheckResult;
  std::vector<CheckResult> results;

  results.push_back(oracle::check_marginals([&](std::size_t k, std::size_t s, std::size_t j) {
    return ForwardKernel(Schedule(k, s)).marginal_params(one_hot(0, k), j)[1] + opt.marginal_perturbation;
  }));
  results.push_back(oracle::check_posteriors([](std::size_t k, std::size_t s, std::size_t j) {
    return ForwardKernel(Schedule(k, s)).posterior_params(all_ones(k), one_hot(0, k), j)[1];
  }));

  {
    CheckResult r{"L_T == 0 and q(x_S|x0) == Bern(1)", true, 0.0, {}};
    for (auto k : oracle::lattice_categories())
      for (auto s : oracle::lattice_steps()) {
        const ForwardKernel kernel(Schedule(k, s));
        for (std::size_t t = 0; t < k; ++t) {
          const std::vector<std::size_t> x0{t};
          const double lt = lT_term(kernel, x0);
          const auto m = kernel.marginal_params(one_hot(t, k), s);
          bool ones = true;
          for (double p : m.probs) ones = ones && p == 1.0;
          if (lt != 0.0 || !ones) {
            r.passed = false;
            r.max_error = std::max(r.max_error, lt);
            r.detail = "K=" + std::to_string(k) + " S=" + std::to_string(s);
          }
        }
      }
    results.push_back(r);
  }

  {
    CheckResult r{"elbo exact_sum == trajectory enumeration", true, 0.0, {}};
    struct Case { std::size_t k, s, l; };
    for (auto c : {Case{2, 2, 1}, Case{3, 3, 1}, Case{2, 4, 2}, Case{3, 2, 2}}) {
      PredictorConfig pc{c.k, c.l, 0, 4, 0};
      ReferencePredictor model(pc);
      Rng rng(c.k * 100 + c.s * 10 + c.l);
      for (auto& p : model.params()) p = 2.0 * rng.uniform() - 1.0;
      const ForwardKernel kernel(Schedule(c.k, c.s));
      const std::vector<std::size_t> x0(c.l, c.k - 1);
      const double a = elbo(model, x0, kernel, ElboMode::exact_sum).total_nats;
      const double b = oracle::exact_nll_sequence(model, c.s, oracle::WeightedSequence{x0, 1.0, {}}).elbo_nats;
      const double err = std::abs(a - b);
      r.max_error = std::max(r.max_error, err);
      if (!(err <= 1e-10) && r.passed) {
        r.passed = false;
        r.detail = "K=" + std::to_string(c.k) + " S=" + std::to_string(c.s) + ": " + std::to_string(a) + " vs " +
                   std::to_string(b);
      }
    }
    results.push_back(r);
  }

  {
    CheckResult r{"uniform-predictor elbo == binomial sum", true, 0.0, {}};
    for (auto k : oracle::lattice_categories())
      for (auto s : oracle::lattice_steps()) {
        const ForwardKernel kernel(Schedule(k, s));
        const std::vector<std::size_t> x0{0};
        const double a = elbo(UniformPredictor(k, 1), x0, kernel, ElboMode::exact_sum).total_nats;
        const double b = oracle::uniform_predictor_elbo(k, s);
        const double err = std::abs(a - b);
        r.max_error = std::max(r.max_error, err);
        if (!(err <= 1e-10) && r.passed) {
          r.passed = false;
          r.detail = "K=" + std::to_string(k) + " S=" + std::to_string(s);
        }
      }
    results.push_back(r);
  }

  {
    CheckResult r{"simplex projection == grid minimiser", true, 0.0, {}};
    Rng rng(7);
    for (int n = 0; n < 200; ++n) {
      const std::size_t d = 2 + static_cast<std::size_t>(n % 2);
      std::vector<double> v(d);
      for (auto& x : v) x = 3.0 * rng.uniform() - 1.0;
      const auto a = simplex_project(v);
      const auto b = oracle::projection_by_grid(v, 5e-5);
      for (std::size_t i = 0; i < d; ++i) r.max_error = std::max(r.max_error, std::abs(a[i] - b[i]));
    }
    r.passed = r.max_error <= 1e-4;
    results.push_back(r);
  }
  return results;
}

inline bool print_verification(const std::vector<oracle::CheckResult>& results, std::ostream& os) {
  bool all = true;
  os << std::left << std::setw(6) << "status" << "  " << std::setw(44) << "check" << "max_error\n";
  for (const auto& r : results) {
    all = all && r.passed;
    os << std::setw(6) << (r.passed ? "PASS" : "FAIL") << "  " << std::setw(44) << r.name << std::scientific
       << std::setprecision(3) << r.max_error << std::defaultfloat << "\n";
    if (!r.passed && !r.detail.empty()) os << "        first failure: " << r.detail << "\n";
  }
  return all;
}

}  // namespace slm::cli
