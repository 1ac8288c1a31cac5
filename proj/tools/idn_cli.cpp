// idn: generate synthetic data, train, evaluate, inspect gates, check gradients.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "idn/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> variant;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config, "flat key=value run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed (overrides the config)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--variant", c.variant, "cell variant")
      ->check(CLI::IsMember({"simple", "lstm", "gru", "gru-ci", "idu"}));
  cmd->add_option("--set", c.sets, "extra key=value override (repeatable)");
}

idn::RunConfig resolve(const Common& c) {
  idn::RunConfig cfg = c.config.empty() ? idn::RunConfig{} : idn::read_run_config(c.config);
  for (const auto& s : c.sets) cfg.set_pair(s);
  if (c.seed) cfg.model.seed = *c.seed;
  if (c.variant) cfg.model.variant = idn::parse_variant(*c.variant);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Information Discrimination Unit laboratory"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, gates_c, grad_c;
  std::optional<std::size_t> chunks;
  std::string data, checkpoint, resume, split = "eval", tamper;
  std::optional<std::uint64_t> steps;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;

  auto* gen = app.add_subcommand("gen", "write a synthetic dataset and manifest");
  add_common(gen, gen_c, true);
  gen->add_option("--chunks", chunks, "total chunks across videos");

  auto* train = app.add_subcommand("train", "train a model; writes checkpoint and logs");
  add_common(train, train_c, true);
  train->add_option("--data", data, "dataset manifest");
  train->add_option("--resume", resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--steps", steps, "stop when the step counter reaches this value");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--epochs", epochs, "epochs");

  auto* eval = app.add_subcommand("eval", "score a split; writes metrics, portion curve, scores");
  add_common(eval, eval_c, true);
  eval->add_option("--data", data, "dataset manifest");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint");
  eval->add_option("--split", split, "split to evaluate")->capture_default_str();

  auto* gates = app.add_subcommand("inspect-gates", "per-step gate trace of every window");
  add_common(gates, gates_c, true);
  gates->add_option("--data", data, "dataset manifest");
  gates->add_option("--checkpoint", checkpoint, "model checkpoint");
  gates->add_option("--split", split, "split to inspect")->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  add_common(grad, grad_c, false);
  grad->add_option("--tamper", tamper, "corrupt this matrix's analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? idn::cli::kOk : idn::cli::kConfig;
  }

  try {
    namespace cli = idn::cli;
    const auto apply_paths = [&](idn::RunConfig& cfg) {
      if (!data.empty()) cfg.data = data;
      if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    };
    if (*gen) {
      auto cfg = resolve(gen_c);
      if (chunks) cfg.synthetic.total_chunks = *chunks;
      cli::cmd_gen(cfg, gen_c.out, std::cout);
    } else if (*train) {
      auto cfg = resolve(train_c);
      apply_paths(cfg);
      if (lr) cfg.model.lr = *lr;
      if (epochs) cfg.model.epochs = *epochs;
      cli::cmd_train(cfg, {resume, steps}, train_c.out, std::cout);
    } else if (*eval) {
      auto cfg = resolve(eval_c);
      apply_paths(cfg);
      cli::cmd_eval(cfg, split, eval_c.out, std::cout);
    } else if (*gates) {
      auto cfg = resolve(gates_c);
      apply_paths(cfg);
      cli::cmd_inspect_gates(cfg, split, gates_c.out, std::cout);
    } else if (*grad) {
      const auto cfg = resolve(grad_c);
      std::vector<idn::Variant> variants{idn::Variant::simple, idn::Variant::lstm,
                                         idn::Variant::gru, idn::Variant::gru_ci,
                                         idn::Variant::idu};
      if (grad_c.variant) variants = {cfg.model.variant};
      return cli::cmd_gradcheck(cfg, variants, tamper, grad_c.out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "idn: " << e.what() << '\n';
    return idn::cli::exit_code_for(e);
  }
  return idn::cli::kOk;
}
