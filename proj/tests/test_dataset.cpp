#include <gtest/gtest.h>

#include "helpers.hpp"
#include "mnlp/dataset.hpp"

using namespace mnlp;
using namespace mnlp::testing;

namespace {
Dataset small(ProblemKind kind, int n, std::size_t count, bool labeled) {
  GenSpec s;
  s.kind = kind;
  s.n = n;
  s.seed = 99;
  auto ds = make_dataset(s, count);
  if (labeled) label_dataset(ds, OracleKind::automatic);
  return ds;
}

// Replaces the trailing CRC so only the intended defect remains.
void reseal(std::vector<std::uint8_t>& bytes, std::size_t body) {
  bytes.resize(body);
  const auto crc = crc32_of(bytes.data(), bytes.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
}
}  // namespace

TEST(Dataset, RoundTripUnlabeled) {
  const auto ds = small(ProblemKind::tsp, 20, 10, false);
  const auto path = temp_path("rt_unlabeled.ds");
  save_dataset(ds, path);
  EXPECT_EQ(load_dataset(path), ds);
}

TEST(Dataset, RoundTripLabeledExactCosts) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp}) {
    const auto ds = small(kind, 9, 6, true);
    const auto back = decode_dataset(encode_dataset(ds));
    ASSERT_EQ(back.labels.size(), ds.labels.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      EXPECT_EQ(back.labels[i].cost, ds.labels[i].cost);
      EXPECT_EQ(back.labels[i].solution, ds.labels[i].solution);
    }
    EXPECT_EQ(back, ds);
  }
}

TEST(Dataset, CorruptByteFailsChecksum) {
  auto bytes = encode_dataset(small(ProblemKind::tsp, 20, 10, false));
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_dataset(bytes), ChecksumMismatch);
}

TEST(Dataset, TruncatedPayload) {
  auto bytes = encode_dataset(small(ProblemKind::tsp, 20, 3, false));
  reseal(bytes, bytes.size() / 2);
  EXPECT_THROW(decode_dataset(bytes), TruncatedFile);
}

TEST(Dataset, BadMagic) {
  auto bytes = encode_dataset(small(ProblemKind::tsp, 5, 1, false));
  bytes[0] = 'X';
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(Dataset, WrongVersion) {
  auto bytes = encode_dataset(small(ProblemKind::tsp, 5, 2, false));
  bytes[kDatasetMagic.size()] = 9;  // version follows the magic
  reseal(bytes, bytes.size() - 4);
  EXPECT_THROW(decode_dataset(bytes), VersionMismatch);
}

TEST(Dataset, RejectsInvalidLabelOnSave) {
  auto ds = small(ProblemKind::tsp, 6, 2, true);
  ds.labels[1].solution.sequence[0] = ds.labels[1].solution.sequence[1];
  EXPECT_THROW(encode_dataset(ds), FormatError);
}

TEST(Crc32, KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), 0xCBF43926u);
}
