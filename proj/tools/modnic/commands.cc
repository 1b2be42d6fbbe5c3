#include "commands.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "modnic/codec.h"
#include "modnic/gradcheck.h"
#include "modnic/io.h"
#include "modnic/metrics.h"
#include "modnic/model.h"
#include "modnic/range_coder.h"
#include "modnic/rd_model.h"
#include "modnic/trainer.h"

namespace modnic::cli {

namespace {

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

TrainConfig load_config(const TrainArgs& args) {
  std::string text = args.config ? read_text(*args.config) : std::string();
  for (const auto& o : args.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got '" + o + "'");
    }
    text += "\n" + o.substr(0, eq) + " = " + o.substr(eq + 1);
  }
  TrainConfig c = TrainConfig::from_text(text);
  if (args.seed) c.seed = *args.seed;
  c.validate();
  return c;
}

Tensor load_image(const fs::path& path) { return image_to_tensor(read_pnm(path)); }

// A directory yields every image in it; a file yields itself.
std::vector<fs::path> image_paths(const fs::path& input) {
  if (fs::is_directory(input)) {
    auto paths = list_images(input);
    if (paths.empty()) throw std::invalid_argument("no .ppm/.pgm images in " + input.string());
    return paths;
  }
  return {input};
}

std::vector<Tensor> load_dataset(const TrainConfig& config, const std::optional<fs::path>& dir) {
  if (!dir) {
    spdlog::info("synthetic dataset: {} images of {}x{}", config.train_images,
                 config.image_size, config.image_size);
    return synthetic_dataset(config.train_images, config.image_size, config.data_seed);
  }
  std::vector<Tensor> data;
  for (const auto& p : image_paths(*dir)) data.push_back(load_image(p));
  for (const auto& t : data) {
    if (t.shape() != data.front().shape()) {
      throw std::invalid_argument("training images must share one size; " +
                                  shape_string(t.shape()) + " vs " +
                                  shape_string(data.front().shape()));
    }
  }
  spdlog::info("dataset: {} images from {}", data.size(), dir->string());
  return data;
}

struct LogFile {
  std::ofstream file;
  TrainLog log;

  LogFile(const std::optional<fs::path>& path, int every) {
    log.every = std::max(1, every);
    if (path) {
      file.open(*path, std::ios::binary);
      if (!file) throw std::runtime_error("cannot write " + path->string());
      log.csv = &file;
    }
  }
};

template <typename F>
Model run_training(F&& train, const fs::path& out) {
  try {
    return train();
  } catch (const TrainingError& e) {
    const fs::path partial = out.string() + ".last_good";
    save_checkpoint(partial, e.last_good());
    spdlog::error("last good parameters saved to {}", partial.string());
    throw;
  }
}

std::string fmt_row(double lambda, const QualityReport& q) {
  return fmt::format("{},{:.9f},{:.9g},{:.6f},{:.9f},{:.6f}\n", lambda, *q.bpp, q.mse,
                     q.psnr_db, q.msssim, q.msssim_db);
}

struct CurvePoint {
  double bpp = 0.0;
  double quality = 0.0;
  int count = 0;
};

// Sweep CSV -> per-lambda mean (bpp, quality column).
std::vector<std::pair<double, double>> read_curve(const fs::path& path,
                                                  const std::string& column) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
  }
  auto index_of = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(path.string() + ": no column " + name);
    return static_cast<size_t>(it - header.begin());
  };
  const size_t il = index_of("lambda"), ib = index_of("bpp"), iq = index_of(column);
  std::map<double, CurvePoint> points;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) {
      throw FormatError(fmt::format("{}:{}: expected {} fields", path.string(), line_no,
                                    header.size()));
    }
    try {
      auto& p = points[std::stod(cells[il])];
      p.bpp += std::stod(cells[ib]);
      p.quality += std::stod(cells[iq]);
      ++p.count;
    } catch (const std::logic_error&) {
      throw FormatError(fmt::format("{}:{}: bad number", path.string(), line_no));
    }
  }
  std::vector<std::pair<double, double>> curve;
  for (const auto& [lambda, p] : points) curve.emplace_back(p.bpp / p.count, p.quality / p.count);
  return curve;
}

}  // namespace

int train_base(const TrainArgs& args) {
  const TrainConfig config = load_config(args);
  const auto data = load_dataset(config, args.data);
  LogFile log(args.log, config.log_every);
  const Model model =
      run_training([&] { return modnic::train_base(config, data, &log.log); }, args.out);
  save_checkpoint(args.out, model);
  if (log.log.rows.empty()) {
    spdlog::info("base: {} steps -> {}", model.step, args.out.string());
  } else {
    const auto& last = log.log.rows.back();
    spdlog::info("base: {} steps, D {:.6f}, R {:.4f} bpp -> {}", model.step, last.distortion,
                 last.rate_bpp, args.out.string());
  }
  return 0;
}

int train_modnet(const TrainArgs& args) {
  const TrainConfig config = load_config(args);
  const Model base = load_checkpoint(*args.base);
  const auto data = load_dataset(config, args.data);
  LogFile log(args.log, config.log_every);
  const Model model = run_training(
      [&] { return modnic::train_modnet(config, base, data, &log.log); }, args.out);
  save_checkpoint(args.out, model);
  spdlog::info("modnet: {} steps -> {}", config.modnet_steps, args.out.string());
  return 0;
}

int encode(const EncodeArgs& args) {
  const Codec codec = Codec::from_checkpoint(args.model);
  const EncodeResult r = codec.encode(load_image(args.input), args.lambda, args.hard_mask);
  write_file(args.output, r.bitstream);
  if (args.reconstruction) write_pnm(*args.reconstruction, tensor_to_image(r.reconstruction));
  if (r.clamp_events > 0) spdlog::warn("{} latents clamped to the coder support", r.clamp_events);
  std::cout << fmt::format("bytes={} bpp={:.9f}\n", r.bitstream.size(), r.bpp);
  return 0;
}

int decode(const DecodeArgs& args) {
  const Codec codec = Codec::from_checkpoint(args.model);
  write_pnm(args.output, tensor_to_image(codec.decode(read_file(args.input))));
  return 0;
}

int eval(const EvalArgs& args) {
  const Codec codec = Codec::from_checkpoint(args.model);
  const Tensor x = load_image(args.reference);
  Tensor decoded;
  double bpp = 0.0;
  double lambda = args.lambda;
  if (args.bitstream) {
    const auto bytes = read_file(*args.bitstream);
    const Bitstream s = parse_bitstream(bytes);
    if (s.header.width != x.dim(3) || s.header.height != x.dim(2)) {
      throw std::invalid_argument("bitstream and reference image sizes differ");
    }
    decoded = codec.decode(bytes);
    bpp = bpp_of(bytes, s.header.width, s.header.height);
    lambda = s.header.lambda;
  } else {
    const EncodeResult r = codec.encode(x, args.lambda, args.hard_mask);
    decoded = r.reconstruction;
    bpp = r.bpp;
  }
  const QualityReport q = evaluate_quality(x, decoded, bpp);
  const std::string header = "lambda,bpp,mse,psnr_db,msssim,msssim_db\n";
  const std::string row = fmt_row(lambda, q);
  if (args.csv) {
    const bool fresh = !fs::exists(*args.csv) || fs::file_size(*args.csv) == 0;
    std::ofstream out(*args.csv, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + args.csv->string());
    if (fresh) out << header;
    out << row;
  }
  std::cout << header << row;
  return 0;
}

int sweep(const SweepArgs& args) {
  if (args.lambdas.empty()) throw std::invalid_argument("--lambdas is empty");
  const RdMetric metric = parse_rd_metric(args.metric);
  const Codec codec = Codec::from_checkpoint(args.model);
  std::string csv = "lambda,bpp,mse,psnr_db,msssim,msssim_db\n";
  std::vector<RdSample> samples(args.lambdas.size());
  const auto paths = image_paths(args.input);
  for (const auto& path : paths) {
    const Tensor x = load_image(path);
    for (size_t i = 0; i < args.lambdas.size(); ++i) {
      const EncodeResult r = codec.encode(x, args.lambdas[i], args.hard_mask);
      const QualityReport q = evaluate_quality(x, r.reconstruction, r.bpp);
      csv += fmt_row(args.lambdas[i], q);
      samples[i].bpp += r.bpp;
      samples[i].distortion += metric == RdMetric::kMse ? q.mse : 1.0 - q.msssim;
    }
  }
  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].lambda = args.lambdas[i];
    samples[i].metric = metric;
    samples[i].bpp /= static_cast<double>(paths.size());
    samples[i].distortion /= static_cast<double>(paths.size());
  }
  if (args.out) {
    write_text(*args.out, csv);
  } else {
    std::cout << csv;
  }
  if (args.rd_samples) write_rd_samples(*args.rd_samples, samples);
  return 0;
}

int fit_rd(const FitArgs& args) {
  RdForm form;
  if (args.form == "d-lambda") {
    form = RdForm::kDOfLambda;
  } else if (args.form == "lambda-r") {
    form = RdForm::kLambdaOfR;
  } else {
    throw std::invalid_argument("--form must be d-lambda or lambda-r");
  }
  const auto samples = read_rd_samples(args.samples);
  RdModelParams p;
  try {
    p = modnic::fit_rd(samples, form);
  } catch (const FitError& e) {
    spdlog::error("{}", e.what());
    p = e.best();
    std::cout << fmt::format("status=failed\nalpha={:.9g}\nbeta={:.9g}\nr_squared={:.6f}\n",
                             p.alpha, p.beta, p.r_squared);
    return 1;
  }
  std::cout << fmt::format(
      "status=ok\nmetric={}\nform={}\nalpha={:.9g}\nbeta={:.9g}\nresidual={:.9g}\n"
      "r_squared={:.6f}\nconverged_starts={}\n",
      rd_metric_name(p.metric), args.form, p.alpha, p.beta, p.residual, p.r_squared,
      p.converged_starts);
  if (args.curve) {
    std::string csv = "lambda,bpp,distortion\n";
    for (const auto& s : samples) {
      csv += fmt::format("{},{:.9g},{:.9g}\n", s.lambda, rate_of_lambda(s.lambda, p.alpha, p.beta),
                         distortion_of_lambda(s.lambda, p.alpha, p.beta));
    }
    write_text(*args.curve, csv);
  }
  return 0;
}

int rate_control(const RateControlArgs& args) {
  RdModelParams params;
  if (args.alpha && args.beta) {
    params.alpha = *args.alpha;
    params.beta = *args.beta;
    params.form = RdForm::kLambdaOfR;
  } else if (args.samples) {
    params = modnic::fit_rd(read_rd_samples(*args.samples), RdForm::kLambdaOfR);
  } else {
    throw std::invalid_argument("rate-control needs --rd-samples or both --alpha and --beta");
  }
  const Codec codec = Codec::from_checkpoint(args.model);
  const Tensor x = load_image(args.input);
  std::map<double, EncodeResult> cache;
  auto encode_at = [&](double lambda) -> const EncodeResult& {
    auto it = cache.find(lambda);
    if (it == cache.end()) it = cache.emplace(lambda, codec.encode(x, lambda, args.hard_mask)).first;
    return it->second;
  };
  const RateControlResult r = modnic::rate_control(
      args.target_bpp, [&](double lambda) { return encode_at(lambda).bpp; }, params, args.refine);
  if (args.output) write_file(*args.output, encode_at(r.lambda).bitstream);
  std::cout << fmt::format(
      "target_bpp={:.9f}\nlambda={:.9g}\nachieved_bpp={:.9f}\nbre={:.6f}\nencodes={}\n",
      args.target_bpp, r.lambda, r.achieved_bpp, r.bre, r.trace.size());
  return 0;
}

int bd_rate(const BdRateArgs& args) {
  const auto a = read_curve(args.a, args.quality);
  const auto b = read_curve(args.b, args.quality);
  std::cout << fmt::format("bd_rate_percent={:.4f}\n", modnic::bd_rate(a, b));
  return 0;
}

int gradcheck(int points, uint64_t seed, double tolerance) {
  bool ok = true;
  for (const auto& r : run_gradcheck(points, seed, tolerance)) {
    std::cout << fmt::format("{:<18} points={} rejected={} max_rel_err={:.3e} {}\n", r.name,
                             r.points, r.rejected, r.max_relative_error,
                             r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

int selftest(uint64_t seed) {
  int failures = 0;
  auto check = [&](const char* name, bool pass) {
    std::cout << fmt::format("{:<20} {}\n", name, pass ? "ok" : "FAIL");
    if (!pass) ++failures;
  };
  Rng rng(seed);

  {
    ModelConfig c;
    c.latent_channels = 4;
    c.hidden_channels = 4;
    c.modnet_width = 4;
    Model m = Model::create(c, rng);
    m.attach_modnet(rng);
    const auto bytes = serialize_checkpoint(m);
    check("checkpoint", serialize_checkpoint(parse_checkpoint(bytes)) == bytes);

    const Codec codec(m, fnv1a32(bytes));
    const Tensor x = image_to_tensor(generate_image(SyntheticKind::kBlobs, 32, seed, 0));
    const EncodeResult r = codec.encode(x, 16.0, false);
    const Tensor d = codec.decode(r.bitstream);
    check("codec round trip",
          std::ranges::equal(d.values(), r.reconstruction.values()));
  }
  {
    std::vector<double> pmf(33);
    for (double& p : pmf) p = rng.uniform() + 1e-3;
    const std::vector<QuantizedCdfTable> tables = {quantize_pmf(pmf, -16)};
    LatentCode code;
    code.channels = 1;
    code.height = 1;
    code.width = 4096;
    code.symbols.resize(4096);
    for (auto& s : code.symbols) s = static_cast<int32_t>(rng.below(33)) - 16;
    const auto bytes = encode_latents(code, tables);
    check("range coder", decode_latents(bytes, 1, 1, 4096, tables).symbols == code.symbols);
  }
  {
    const auto p = preset_params(RdMetric::kMse);
    std::vector<RdSample> s;
    for (double l : {1.0, 4.0, 16.0, 64.0, 256.0}) {
      s.push_back({l, rate_of_lambda(l, p.alpha, p.beta),
                   distortion_of_lambda(l, p.alpha, p.beta), RdMetric::kMse});
    }
    const auto f = modnic::fit_rd(s, RdForm::kDOfLambda);
    check("rd fit", std::abs(f.alpha / p.alpha - 1) < 1e-2 && std::abs(f.beta / p.beta - 1) < 1e-2);
  }
  bool grads_ok = true;
  for (const auto& r : run_gradcheck(3, seed)) {
    if (!r.passed()) {
      spdlog::error("gradcheck {}: max relative error {:.3e}", r.name, r.max_relative_error);
      grads_ok = false;
    }
  }
  check("gradcheck", grads_ok);
  return failures == 0 ? 0 : 1;
}

int gen_data(const GenDataArgs& args) {
  const auto paths =
      modnic::gen_data(parse_synthetic_kind(args.kind), args.count, args.size, args.seed, args.out);
  spdlog::info("wrote {} images to {}", paths.size(), args.out.string());
  return 0;
}

}  // namespace modnic::cli
