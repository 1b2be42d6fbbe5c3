#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "modnic/codec.h"
#include "modnic/io.h"

namespace modnic {
namespace {

namespace fs = std::filesystem;

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "modnic_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Result {
  int status = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result run(const std::string& args, const std::string& env = "") {
  const fs::path out = work() / "stdout.txt", err = work() / "stderr.txt";
  const std::string cmd = env + " " + std::string(MODNIC_CLI) + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  Result r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string p(const std::string& name) { return (work() / name).string(); }

constexpr const char* kTiny =
    "--set latent_channels=4 --set hidden_channels=4 --set modnet_width=4 "
    "--set train_images=8 --set batch_size=4 ";

// Trains a tiny VBR model once for the tests below.
const std::string& tiny_model() {
  static const std::string path = [] {
    const Result a = run(std::string("train-base ") + kTiny + "--set base_steps=3 -o " + p("base.ckpt"));
    EXPECT_EQ(a.status, 0) << a.err;
    const Result b = run(std::string("train-modnet ") + kTiny + "--set modnet_steps=3 --base " +
                         p("base.ckpt") + " -o " + p("vbr.ckpt"));
    EXPECT_EQ(b.status, 0) << b.err;
    return p("vbr.ckpt");
  }();
  return path;
}

const std::string& images() {
  static const std::string dir = [] {
    const Result r = run("gen-data --kind blobs --count 2 --size 32 --seed 4 -o " + p("img"));
    EXPECT_EQ(r.status, 0) << r.err;
    return p("img");
  }();
  return dir;
}

TEST(Cli, GenDataIsDeterministicPerSeed) {
  ASSERT_EQ(run("gen-data --kind checker --count 2 --size 32 --seed 3 -o " + p("g1")).status, 0);
  ASSERT_EQ(run("gen-data --kind checker --count 2 --size 32 -o " + p("g2"), "MODNIC_SEED=3").status, 0);
  ASSERT_EQ(run("gen-data --kind checker --count 2 --size 32 --seed 4 -o " + p("g3")).status, 0);
  const auto a = read_file(p("g1") + "/checker_00000.ppm");
  EXPECT_EQ(a, read_file(p("g2") + "/checker_00000.ppm"));
  EXPECT_NE(a, read_file(p("g3") + "/checker_00000.ppm"));
}

TEST(Cli, EncodeThenDecodeMatchesEncoderReconstruction) {
  const std::string img = images() + "/blobs_00000.ppm";
  const Result e = run("encode -m " + tiny_model() + " -i " + img + " -o " + p("a.mnic") +
                       " --recon " + p("recon.ppm") + " --lambda 16");
  ASSERT_EQ(e.status, 0) << e.err;
  EXPECT_NE(e.out.find("bpp="), std::string::npos);
  const Result d = run("decode -m " + tiny_model() + " -i " + p("a.mnic") + " -o " + p("dec.ppm"));
  ASSERT_EQ(d.status, 0) << d.err;
  EXPECT_EQ(read_file(p("dec.ppm")), read_file(p("recon.ppm")));
}

TEST(Cli, EvalReportsTheFileBpp) {
  const std::string img = images() + "/blobs_00001.ppm";
  ASSERT_EQ(run("encode -m " + tiny_model() + " -i " + img + " -o " + p("b.mnic") +
                " --lambda 100 --hard-mask")
                .status,
            0);
  const Result r = run("eval -m " + tiny_model() + " -r " + img + " -b " + p("b.mnic") +
                       " --csv " + p("eval.csv"));
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream lines(r.out);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  EXPECT_EQ(header, "lambda,bpp,mse,psnr_db,msssim,msssim_db");
  const double bpp = std::stod(row.substr(row.find(',') + 1));
  EXPECT_NEAR(bpp, bpp_of(fs::file_size(p("b.mnic")), 32, 32), 1e-9);
  EXPECT_EQ(slurp(p("eval.csv")), r.out);
}

TEST(Cli, SweepEmitsOneRowPerImageAndLambda) {
  const Result r = run("sweep -m " + tiny_model() + " -i " + images() +
                       " --lambdas 1,4,8,16,32,64,100 -o " + p("sweep.csv") + " --rd-samples " +
                       p("rd.csv"));
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream in(slurp(p("sweep.csv")));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "lambda,bpp,mse,psnr_db,msssim,msssim_db");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 14);
  EXPECT_EQ(slurp(p("rd.csv")).substr(0, 29), "lambda,bpp,distortion,metric\n");

  const Result bd = run("bd-rate " + p("sweep.csv") + " " + p("sweep.csv"));
  // A tiny untrained model may not give the 4 distinct points BD-rate needs;
  // when it does, identical curves give zero.
  if (bd.status == 0) {
    EXPECT_NE(bd.out.find("bd_rate_percent=0.0000"), std::string::npos);
  }
}

TEST(Cli, FitRdRecoversCoefficients) {
  std::ofstream(p("exact.csv")) << "lambda,bpp,distortion,metric\n"
                                   "1,0.0193875915868,0.072571746096,mse\n"
                                   "4,0.0747883993718,0.046763986315,mse\n"
                                   "8,0.142964099598,0.034889985978,mse\n"
                                   "16,0.263534743598,0.0243491563943,mse\n"
                                   "32,0.459614497472,0.0157296293188,mse\n"
                                   "64,0.745676769118,0.00939967547988,mse\n"
                                   "100,0.976378931842,0.00650776001841,mse\n";
  const Result r = run("fit-rd -s " + p("exact.csv") + " --curve " + p("curve.csv"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("alpha=39.3"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("beta=1.29"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(p("curve.csv")));
}

TEST(Cli, RateControlRejectsUnreachableTarget) {
  const std::string img = images() + "/blobs_00000.ppm";
  const Result r = run("rate-control -m " + tiny_model() + " -i " + img +
                       " --target-bpp 500 --alpha 39.301 --beta 1.296");
  EXPECT_NE(r.status, 0);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, GradcheckExitStatusFollowsTolerance) {
  const Result ok = run("gradcheck --points 2 --seed 5");
  EXPECT_EQ(ok.status, 0) << ok.out;
  const Result strict = run("gradcheck --points 2 --seed 5 --tolerance 1e-30");
  EXPECT_NE(strict.status, 0);
  EXPECT_NE(strict.out.find("FAIL"), std::string::npos);
}

TEST(Cli, Selftest) {
  const Result r = run("selftest");
  EXPECT_EQ(r.status, 0) << r.out << r.err;
}

TEST(Cli, ErrorsGiveNonzeroStatusAndDiagnostics) {
  Result r = run("encode --bogus-flag");
  EXPECT_NE(r.status, 0);
  EXPECT_FALSE(r.err.empty());

  std::ofstream(p("junk.mnic")) << "not a bitstream, just some text";
  r = run("decode -m " + tiny_model() + " -i " + p("junk.mnic") + " -o " + p("x.ppm"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("magic"), std::string::npos) << r.err;

  std::ofstream(p("junk.ckpt")) << "MNCK garbage";
  r = run("decode -m " + p("junk.ckpt") + " -i " + p("junk.mnic") + " -o " + p("x.ppm"));
  EXPECT_NE(r.status, 0);
  EXPECT_FALSE(r.err.empty());

  r = run("train-base --set no_such_key=1 -o " + p("x.ckpt"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("no_such_key"), std::string::npos) << r.err;

  r = run("gen-data -o " + p("x"), "MODNIC_SEED=abc");
  EXPECT_NE(r.status, 0);

  r = run("");
  EXPECT_NE(r.status, 0);
}

TEST(Cli, ZeroStepTrainingWritesAnInitialModel) {
  const Result r = run(std::string("train-base ") + kTiny + "--set base_steps=0 -o " + p("z.ckpt"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(p("z.ckpt")));
}

TEST(Cli, SameSeedTrainingIsByteIdentical) {
  const std::string args = std::string("train-base ") + kTiny + "--set base_steps=4 --seed 9 ";
  ASSERT_EQ(run(args + "-o " + p("s1.ckpt") + " --log " + p("s1.csv")).status, 0);
  ASSERT_EQ(run(args + "-o " + p("s2.ckpt") + " --log " + p("s2.csv")).status, 0);
  EXPECT_EQ(read_file(p("s1.ckpt")), read_file(p("s2.ckpt")));
  EXPECT_EQ(read_file(p("s1.csv")), read_file(p("s2.csv")));
  EXPECT_EQ(slurp(p("s1.csv")).substr(0, 29), "step,loss,D,R_bpp,lambda_mean");
}

TEST(Cli, GoldenFilesDecodeBitExactly) {
  const fs::path dir = MODNIC_GOLDEN_DIR;
  const Result r = run("decode -m " + (dir / "model.ckpt").string() + " -i " +
                       (dir / "image.mnic").string() + " -o " + p("golden.ppm"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(read_file(p("golden.ppm")), read_file(dir / "decoded.ppm"));
}

}  // namespace
}  // namespace modnic
