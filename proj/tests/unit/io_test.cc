#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "modnic/codec.h"
#include "modnic/io.h"
#include "modnic/model.h"

namespace modnic {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("modnic_io_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

TEST(Pnm, ColorRoundTripIsByteIdentical) {
  Image img;
  img.width = 3;
  img.height = 2;
  img.channels = 3;
  for (int i = 0; i < 18; ++i) img.pixels.push_back(static_cast<uint8_t>(i * 14));
  const auto bytes = serialize_pnm(img);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), "P6\n3 2\n255\n");
  EXPECT_EQ(parse_pnm(bytes), img);
  EXPECT_EQ(serialize_pnm(parse_pnm(bytes)), bytes);
}

TEST(Pnm, GrayscaleIsReplicatedIntoThreeChannels) {
  auto bytes = bytes_of("P5\n2 1\n255\n");
  bytes.push_back(0);
  bytes.push_back(255);
  const Image img = parse_pnm(bytes);
  EXPECT_EQ(img.channels, 1);
  EXPECT_EQ(serialize_pnm(img), bytes);
  const Tensor t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 1, 2}));
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(t.values()[c * 2], 0.0);
    EXPECT_EQ(t.values()[c * 2 + 1], 1.0);
  }
}

TEST(Pnm, HeaderCommentsAreSkipped) {
  auto bytes = bytes_of("P6\n# made by hand\n1 1\n255\n");
  for (uint8_t v : {1, 2, 3}) bytes.push_back(v);
  EXPECT_EQ(parse_pnm(bytes).pixels, (std::vector<uint8_t>{1, 2, 3}));
}

TEST(Pnm, MalformedFilesAreRejected) {
  EXPECT_THROW(parse_pnm(bytes_of("P3\n1 1\n255\n")), FormatError);
  EXPECT_THROW(parse_pnm(bytes_of("P6\n1 1\n65535\n012345")), FormatError);
  EXPECT_THROW(parse_pnm(bytes_of("P6\n2 2\n255\n012")), FormatError);
  EXPECT_THROW(parse_pnm(bytes_of("P6\nx 2\n255\n")), FormatError);
  EXPECT_THROW(parse_pnm(bytes_of("")), FormatError);
}

TEST(Pnm, TensorRoundTripIsExact) {
  const Image img = generate_image(SyntheticKind::kBandNoise, 32, 4, 0);
  EXPECT_EQ(tensor_to_image(image_to_tensor(img)), img);
}

TEST(TensorToImage, ClampsAndRoundsHalfAwayFromZero) {
  const Tensor t({1, 1, 1, 4}, {-0.1, 0.5 / 255.0, 1.5 / 255.0, 2.0});
  EXPECT_EQ(tensor_to_image(t).pixels, (std::vector<uint8_t>{0, 1, 2, 255}));
}

TEST(PadCrop, EdgeReplicationAndInverse) {
  const Tensor x({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor p = pad_to_multiple(x, 4);
  ASSERT_EQ(p.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().end()),
            (std::vector<double>{1, 2, 3, 3, 4, 5, 6, 6, 4, 5, 6, 6, 4, 5, 6, 6}));
  const Tensor c = crop(p, 2, 3);
  EXPECT_TRUE(std::ranges::equal(c.values(), x.values()));
  EXPECT_THROW(crop(x, 3, 3), std::invalid_argument);
}

TEST(GenData, DeterministicFiles) {
  TempDir a("a"), b("b");
  const auto pa = gen_data(SyntheticKind::kBlobs, 3, 32, 11, a.path);
  const auto pb = gen_data(SyntheticKind::kBlobs, 3, 32, 11, b.path);
  ASSERT_EQ(pa.size(), 3u);
  for (size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].filename(), pb[i].filename());
    EXPECT_EQ(read_file(pa[i]), read_file(pb[i]));
  }
  EXPECT_EQ(list_images(a.path), pa);
  EXPECT_NE(generate_image(SyntheticKind::kBlobs, 32, 11, 0).pixels,
            generate_image(SyntheticKind::kBlobs, 32, 12, 0).pixels);
}

TEST(GenData, CheckerHasExactlyTwoColors) {
  for (uint64_t i = 0; i < 10; ++i) {
    const Image img = generate_image(SyntheticKind::kChecker, 32, 5, i);
    std::set<std::array<uint8_t, 3>> colors;
    for (size_t p = 0; p < img.pixels.size(); p += 3) {
      colors.insert({img.pixels[p], img.pixels[p + 1], img.pixels[p + 2]});
    }
    EXPECT_EQ(colors.size(), 2u);
  }
}

TEST(GenData, BandNoiseIsCenteredOnMidGray) {
  double total = 0.0;
  size_t n = 0;
  for (uint64_t i = 0; i < 100; ++i) {
    for (uint8_t v : generate_image(SyntheticKind::kBandNoise, 32, 6, i).pixels) {
      total += v;
      ++n;
    }
  }
  EXPECT_NEAR(total / n, 128.0, 5.0);
}

TEST(GenData, KindNamesAndSizeRule) {
  for (auto k : {SyntheticKind::kBlobs, SyntheticKind::kGradients, SyntheticKind::kChecker,
                 SyntheticKind::kBandNoise}) {
    EXPECT_EQ(parse_synthetic_kind(synthetic_kind_name(k)), k);
    const Image img = generate_image(k, 48, 1, 0);
    EXPECT_EQ(img.width, 48);
    EXPECT_EQ(img.pixels.size(), 48u * 48u * 3u);
  }
  EXPECT_THROW(parse_synthetic_kind("stripes"), std::invalid_argument);
  EXPECT_THROW(generate_image(SyntheticKind::kBlobs, 40, 1, 0), std::invalid_argument);
}

TEST(SyntheticDataset, CyclesKinds) {
  const auto d = synthetic_dataset(8, 32, 3);
  ASSERT_EQ(d.size(), 8u);
  EXPECT_EQ(tensor_to_image(d[2]), generate_image(SyntheticKind::kChecker, 32, 3, 2));
  EXPECT_EQ(stack_batch(d).shape(), (Shape{8, 3, 32, 32}));
}

TEST(Bpp, HeaderOnlyFileAndFloor) {
  EXPECT_EQ(bpp_of(16, 32, 32), 0.125);
  const std::vector<uint8_t> bytes(40);
  EXPECT_EQ(bpp_of(bytes, 32, 32), 40 * 8 / 1024.0);
  EXPECT_GE(bpp_of(kBitstreamHeaderBytes, 32, 32), kBitstreamHeaderBytes * 8 / 1024.0);
}

TEST(BitstreamContainer, RoundTripAndRejection) {
  Bitstream s;
  s.header.flags = kFlagHardMask;
  s.header.width = 300;
  s.header.height = 17;
  s.header.channels = 32;
  s.header.lambda = 16.5f;
  s.header.model_hash = 0xDEADBEEF;
  s.payload = {9, 8, 7};
  s.header.payload_length = 3;
  const auto bytes = serialize_bitstream(s);
  ASSERT_EQ(bytes.size(), kBitstreamHeaderBytes + 3);
  const std::vector<uint8_t> head(bytes.begin(), bytes.begin() + 11);
  EXPECT_EQ(head, (std::vector<uint8_t>{'M', 'N', 'I', 'C', 1, 1, 0x01, 0x2C, 0x00, 0x11, 32}));
  // 16.5f = 0x41840000, big-endian
  EXPECT_EQ(bytes[11], 0x41);
  EXPECT_EQ(bytes[12], 0x84);
  EXPECT_EQ(bytes[15], 0xDE);
  EXPECT_EQ(bytes[22], 3);
  const Bitstream back = parse_bitstream(bytes);
  EXPECT_EQ(back.header, s.header);
  EXPECT_EQ(back.payload, s.payload);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_bitstream(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(parse_bitstream(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(parse_bitstream(bad), FormatError);
  EXPECT_THROW(parse_bitstream(std::span(bytes).first(10)), FormatError);
  s.header.payload_length = 4;
  EXPECT_THROW(serialize_bitstream(s), std::invalid_argument);
}

TEST(Checkpoint, RoundTripReproducesForwardPasses) {
  Rng rng(1);
  ModelConfig c;
  c.latent_channels = 6;
  c.hidden_channels = 5;
  c.modnet_width = 4;
  Model m = Model::create(c, rng);
  m.attach_modnet(rng);
  m.step = 1234;
  m.config_echo = "seed = 9\n";
  const auto bytes = serialize_checkpoint(m);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MNCK");
  const Model back = parse_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.step, 1234u);
  EXPECT_EQ(back.config_echo, m.config_echo);
  const Tensor x = synthetic_dataset(1, 32, 2)[0];
  const Tensor y1 = analyze(m.transforms, x), y2 = analyze(back.transforms, x);
  EXPECT_TRUE(std::ranges::equal(y1.values(), y2.values()));
  const Tensor m1 = modnet_forward(*m.modnet, y1, 20.0);
  const Tensor m2 = modnet_forward(*back.modnet, y2, 20.0);
  EXPECT_TRUE(std::ranges::equal(m1.values(), m2.values()));
  EXPECT_EQ(back.density.cdf(3, 0.7), m.density.cdf(3, 0.7));
}

TEST(Checkpoint, CorruptionIsRejected) {
  Rng rng(2);
  ModelConfig c;
  c.latent_channels = 2;
  c.hidden_channels = 2;
  const auto bytes = serialize_checkpoint(Model::create(c, rng));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad), FormatError);
  EXPECT_THROW(parse_checkpoint(std::span(bytes).first(bytes.size() / 2)), FormatError);
  bad = bytes;
  bad.push_back(1);
  EXPECT_THROW(parse_checkpoint(bad), FormatError);
}

TEST(Fnv1a, ReferenceVectors) {
  EXPECT_EQ(fnv1a32({}), 0x811C9DC5u);
  const auto a = bytes_of("a");
  EXPECT_EQ(fnv1a32(a), 0xE40C292Cu);
  const auto foobar = bytes_of("foobar");
  EXPECT_EQ(fnv1a32(foobar), 0xBF9CF968u);
}

TEST(KeyValues, CommentsAndOverrides) {
  const auto kv = parse_key_values("a = 1\n# note\nb=two # trailing\n\na = 3\n");
  EXPECT_EQ(kv.at("a"), "3");
  EXPECT_EQ(kv.at("b"), "two");
  EXPECT_THROW(parse_key_values("novalue\n"), FormatError);
}

}  // namespace
}  // namespace modnic
