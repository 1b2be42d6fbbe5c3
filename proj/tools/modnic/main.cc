#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.h"

namespace {

// --seed wins, then MODNIC_SEED, then the fallback.
std::optional<uint64_t> seed_from(const std::optional<uint64_t>& flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("MODNIC_SEED"); env && *env) {
    try {
      size_t used = 0;
      const uint64_t v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(std::string("MODNIC_SEED is not an unsigned integer: ") + env);
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = modnic::cli;
  spdlog::set_default_logger(spdlog::stderr_color_mt("modnic"));
  spdlog::set_pattern("%^%l%$: %v");

  CLI::App app{"modnic: variable-rate learned image codec"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::optional<uint64_t> seed;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Random seed (falls back to MODNIC_SEED)");
  };

  cli::TrainArgs train;
  auto add_train = [&](CLI::App* sub) {
    sub->add_option("--config", train.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", train.overrides, "Config override key=value (repeatable)");
    sub->add_option("--data", train.data, "Directory of training images (default: synthetic)")
        ->check(CLI::ExistingDirectory);
    sub->add_option("-o,--out", train.out, "Output checkpoint")->required();
    sub->add_option("--log", train.log, "Per-step CSV log");
    add_seed(sub);
  };
  auto* base_cmd = app.add_subcommand("train-base", "Train the base codec at the top rate");
  add_train(base_cmd);
  auto* modnet_cmd = app.add_subcommand("train-modnet", "Train ModNet on a frozen base");
  add_train(modnet_cmd);
  modnet_cmd->add_option("--base", train.base, "Base checkpoint")
      ->required()
      ->check(CLI::ExistingFile);

  cli::EncodeArgs enc;
  auto* enc_cmd = app.add_subcommand("encode", "Compress a PPM/PGM image");
  enc_cmd->add_option("-m,--model", enc.model)->required()->check(CLI::ExistingFile);
  enc_cmd->add_option("-i,--input", enc.input)->required()->check(CLI::ExistingFile);
  enc_cmd->add_option("-o,--output", enc.output)->required();
  enc_cmd->add_option("--recon", enc.reconstruction, "Also write the reconstruction");
  enc_cmd->add_option("--lambda", enc.lambda)->required()->check(CLI::Range(1.0, 256.0));
  enc_cmd->add_flag("--hard-mask", enc.hard_mask);

  cli::DecodeArgs dec;
  auto* dec_cmd = app.add_subcommand("decode", "Decompress a bitstream");
  dec_cmd->add_option("-m,--model", dec.model)->required()->check(CLI::ExistingFile);
  dec_cmd->add_option("-i,--input", dec.input)->required()->check(CLI::ExistingFile);
  dec_cmd->add_option("-o,--output", dec.output)->required();

  cli::EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Quality and bpp of one image");
  eval_cmd->add_option("-m,--model", ev.model)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-r,--reference", ev.reference)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-b,--bitstream", ev.bitstream, "Evaluate this file instead of encoding")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--lambda", ev.lambda)->check(CLI::Range(1.0, 256.0));
  eval_cmd->add_flag("--hard-mask", ev.hard_mask);
  eval_cmd->add_option("--csv", ev.csv, "Append the row to this CSV");

  cli::SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Encode images over a lambda list");
  sweep_cmd->add_option("-m,--model", sw.model)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("-i,--input", sw.input, "Image or directory")
      ->required()
      ->check(CLI::ExistingPath);
  sweep_cmd->add_option("--lambdas", sw.lambdas)
      ->required()
      ->delimiter(',')
      ->check(CLI::Range(1.0, 256.0));
  sweep_cmd->add_flag("--hard-mask", sw.hard_mask);
  sweep_cmd->add_option("-o,--out", sw.out, "CSV output (default stdout)");
  sweep_cmd->add_option("--rd-samples", sw.rd_samples, "Per-lambda mean samples for fit-rd");
  sweep_cmd->add_option("--metric", sw.metric, "Distortion in --rd-samples")
      ->check(CLI::IsMember({"mse", "msssim"}));

  cli::FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit-rd", "Fit the lambda-domain R-D model");
  fit_cmd->add_option("-s,--samples", fit.samples)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--form", fit.form)->check(CLI::IsMember({"d-lambda", "lambda-r"}));
  fit_cmd->add_option("--curve", fit.curve, "CSV of the fitted curve at the sample lambdas");

  cli::RateControlArgs rc;
  auto* rc_cmd = app.add_subcommand("rate-control", "Encode at a target bpp");
  rc_cmd->add_option("-m,--model", rc.model)->required()->check(CLI::ExistingFile);
  rc_cmd->add_option("-i,--input", rc.input)->required()->check(CLI::ExistingFile);
  rc_cmd->add_option("--target-bpp", rc.target_bpp)->required()->check(CLI::PositiveNumber);
  rc_cmd->add_option("--refine", rc.refine, "Bracketed re-encodes after the one-shot guess")
      ->check(CLI::Range(0, 64));
  rc_cmd->add_option("--rd-samples", rc.samples, "Samples to fit lambda(R) from")
      ->check(CLI::ExistingFile);
  rc_cmd->add_option("--alpha", rc.alpha)->check(CLI::PositiveNumber);
  rc_cmd->add_option("--beta", rc.beta)->check(CLI::PositiveNumber);
  rc_cmd->add_option("-o,--output", rc.output, "Write the chosen bitstream");
  rc_cmd->add_flag("--hard-mask", rc.hard_mask);

  cli::BdRateArgs bd;
  auto* bd_cmd = app.add_subcommand("bd-rate", "BD-rate of curve B against A (sweep CSVs)");
  bd_cmd->add_option("a", bd.a)->required()->check(CLI::ExistingFile);
  bd_cmd->add_option("b", bd.b)->required()->check(CLI::ExistingFile);
  bd_cmd->add_option("--quality", bd.quality)
      ->check(CLI::IsMember({"psnr_db", "msssim_db", "msssim"}));

  int points = 100;
  double tolerance = 1e-4;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc_cmd->add_option("--points", points)->check(CLI::PositiveNumber);
  gc_cmd->add_option("--tolerance", tolerance)->check(CLI::PositiveNumber);
  add_seed(gc_cmd);

  auto* self_cmd = app.add_subcommand("selftest", "Quick internal consistency checks");
  add_seed(self_cmd);

  cli::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic PPM images");
  gen_cmd->add_option("--kind", gen.kind)
      ->check(CLI::IsMember({"blobs", "gradients", "checker", "bandnoise"}));
  gen_cmd->add_option("--count", gen.count)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.size)->check(CLI::PositiveNumber);
  gen_cmd->add_option("-o,--out", gen.out)->required();
  add_seed(gen_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    const auto s = seed_from(seed);
    if (*base_cmd || *modnet_cmd) train.seed = s;
    if (*base_cmd) return cli::train_base(train);
    if (*modnet_cmd) return cli::train_modnet(train);
    if (*enc_cmd) return cli::encode(enc);
    if (*dec_cmd) return cli::decode(dec);
    if (*eval_cmd) return cli::eval(ev);
    if (*sweep_cmd) return cli::sweep(sw);
    if (*fit_cmd) return cli::fit_rd(fit);
    if (*rc_cmd) return cli::rate_control(rc);
    if (*bd_cmd) return cli::bd_rate(bd);
    if (*gc_cmd) return cli::gradcheck(points, s.value_or(1), tolerance);
    if (*self_cmd) return cli::selftest(s.value_or(1));
    if (*gen_cmd) {
      gen.seed = s.value_or(1);
      return cli::gen_data(gen);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
