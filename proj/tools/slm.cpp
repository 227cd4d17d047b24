#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "slm/cli/commands.hpp"

namespace {

template <class T>
std::optional<T> opt_if(const CLI::Option* o, const T& v) {
  return o->count() ? std::optional<T>(v) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace slm;
  CLI::App app{"Shortlisting model: train, sample and evaluate candidate-set diffusion models"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, out_dir, split, predictor = "checkpoint";
  std::uint64_t seed = 0;
  std::size_t count = 0, cls = 0;
  double gamma = 1.0, perturb = 0.0;

  auto* train = app.add_subcommand("train", "train the reference predictor");
  auto* sample = app.add_subcommand("sample", "draw sequences with the reverse sampler");
  auto* eval = app.add_subcommand("eval", "estimate the variational bound in bits per token");
  auto* verify = app.add_subcommand("verify", "check kernels and losses against independent oracles");
  auto* gen = app.add_subcommand("gen-data", "write the configured dataset as JSON lines");

  for (auto* sub : {train, sample, eval, gen}) {
    sub->add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (default: output_dir from the config)");
  }
  auto* train_seed = train->add_option("--seed", seed, "training seed");
  auto* gen_seed = gen->add_option("--seed", seed, "dataset seed");
  auto* sample_seed = sample->add_option("--seed", seed, "sampling seed");
  auto* eval_seed = eval->add_option("--seed", seed, "Monte Carlo seed");
  sample->add_option("--checkpoint", checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  auto* count_opt = sample->add_option("--count", count, "number of samples");
  auto* gamma_opt = sample->add_option("--gamma", gamma, "classifier-free guidance strength");
  auto* cls_opt = sample->add_option("--cls", cls, "class label to condition on");
  auto* eval_ckpt = eval->add_option("--checkpoint", checkpoint, "trained checkpoint");
  auto* split_opt = eval->add_option("--split", split, "train, valid or test");
  eval->add_option("--predictor", predictor, "checkpoint, bayes or uniform")
      ->check(CLI::IsMember({"checkpoint", "bayes", "uniform"}));
  verify->add_option("--perturb-marginal", perturb, "add an offset to the marginal under test (mutation check)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (verify->parsed()) {
      const auto results = cli::run_verification({perturb});
      return cli::print_verification(results, std::cout) ? 0 : 1;
    }
    const auto cfg = cli::load_config(config_path);
    if (out_dir.empty()) out_dir = cfg.output_dir;
    if (train->parsed()) {
      const auto r = cli::cmd_train(cfg, out_dir, opt_if(train_seed, seed));
      std::cout << "trained " << r.steps_done << " steps, final loss " << r.last_loss << "\n"
                << "checkpoint: " << r.checkpoint.string() << "\n";
    } else if (sample->parsed()) {
      cli::SampleOptions o;
      o.count = opt_if(count_opt, count);
      o.gamma = opt_if(gamma_opt, gamma);
      if (cls_opt->count()) o.cls = cls;
      o.seed = opt_if(sample_seed, seed);
      const auto r = cli::cmd_sample(cfg, checkpoint, out_dir, o);
      std::cout << "wrote " << r.tokens.size() << " samples to " << r.samples.string() << " (mean entropy "
                << r.entropy_mean << " nats)\n";
    } else if (eval->parsed()) {
      cli::EvalOptions o;
      o.split = opt_if(split_opt, split);
      o.seed = opt_if(eval_seed, seed);
      o.predictor = predictor == "bayes"     ? cli::EvalPredictor::bayes
                    : predictor == "uniform" ? cli::EvalPredictor::uniform
                                             : cli::EvalPredictor::checkpoint;
      const auto r = cli::cmd_eval(cfg, opt_if(eval_ckpt, checkpoint), out_dir, o);
      std::cout << "bpc " << r.bpc_mean << " +/- " << r.bpc_stderr << " over " << r.sequences << " sequences ("
                << to_string(r.mode) << ")\n";
      if (r.nonfinite > 0)
        std::cout << r.nonfinite << " sequences have an infinite bound (zero model probability)\n";
    } else if (gen->parsed()) {
      const auto p = cli::cmd_gen_data(cfg, out_dir, opt_if(gen_seed, seed));
      std::cout << "wrote " << p.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
