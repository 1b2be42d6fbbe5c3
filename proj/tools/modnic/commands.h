// Subcommand implementations. Each returns the process exit status; errors
// propagate as exceptions and are reported by main().

#ifndef MODNIC_TOOLS_COMMANDS_H_
#define MODNIC_TOOLS_COMMANDS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace modnic::cli {

namespace fs = std::filesystem;

struct TrainArgs {
  std::optional<fs::path> config;
  std::vector<std::string> overrides;  // "key=value"
  std::optional<fs::path> data;
  std::optional<fs::path> base;  // train-modnet only
  fs::path out;
  std::optional<fs::path> log;
  std::optional<uint64_t> seed;
};

struct EncodeArgs {
  fs::path model, input, output;
  std::optional<fs::path> reconstruction;
  double lambda = 256.0;
  bool hard_mask = false;
};

struct DecodeArgs {
  fs::path model, input, output;
};

struct EvalArgs {
  fs::path model, reference;
  std::optional<fs::path> bitstream;
  double lambda = 256.0;
  bool hard_mask = false;
  std::optional<fs::path> csv;
};

struct SweepArgs {
  fs::path model, input;
  std::vector<double> lambdas;
  bool hard_mask = false;
  std::optional<fs::path> out;
  std::optional<fs::path> rd_samples;
  std::string metric = "mse";
};

struct FitArgs {
  fs::path samples;
  std::string form = "d-lambda";
  std::optional<fs::path> curve;
};

struct RateControlArgs {
  fs::path model, input;
  double target_bpp = 0.0;
  int refine = 3;
  std::optional<fs::path> samples;
  std::optional<double> alpha, beta;
  std::optional<fs::path> output;
  bool hard_mask = false;
};

struct BdRateArgs {
  fs::path a, b;
  std::string quality = "psnr_db";
};

struct GenDataArgs {
  std::string kind = "blobs";
  int count = 16;
  int size = 32;
  fs::path out;
  uint64_t seed = 1;
};

int train_base(const TrainArgs& args);
int train_modnet(const TrainArgs& args);
int encode(const EncodeArgs& args);
int decode(const DecodeArgs& args);
int eval(const EvalArgs& args);
int sweep(const SweepArgs& args);
int fit_rd(const FitArgs& args);
int rate_control(const RateControlArgs& args);
int bd_rate(const BdRateArgs& args);
int gradcheck(int points, uint64_t seed, double tolerance);
int selftest(uint64_t seed);
int gen_data(const GenDataArgs& args);

}  // namespace modnic::cli

#endif  // MODNIC_TOOLS_COMMANDS_H_
