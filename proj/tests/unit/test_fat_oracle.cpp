// Fixture images against listings made by an independent FAT reader
// (tests/oracles/fat_listing.py over `dedupacq mkimage` output).

#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "dedupacq/acquisition.hpp"
#include "dedupacq/fixture.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace dedupacq;
using json = nlohmann::json;

namespace {

struct Listed {
  std::uint64_t size;
  std::string sha256;
  std::int64_t modified;
};

using Key = std::pair<std::uint32_t, std::string>;

struct Case {
  fixture::FixtureSpec spec;
  json listing;
};

Case load(const std::string& name) {
  const auto dir = testsupport::golden_dir() / "fixtures";
  std::ifstream in(dir / (name + ".listing.json"));
  return {fixture::load_spec(dir / (name + ".spec.json")), json::parse(in)};
}

std::map<Key, Listed> listed_files(const json& listing) {
  std::map<Key, Listed> out;
  for (const auto& f : listing["files"]) {
    out[{f["partition"].get<std::uint32_t>(), f["path"].get<std::string>()}] =
        Listed{f["size"].get<std::uint64_t>(), f["sha256"].get<std::string>(), f["modified"].get<std::int64_t>()};
  }
  return out;
}

class FatOracle : public ::testing::TestWithParam<std::string> {};

}  // namespace

TEST_P(FatOracle, GroundTruthMatchesListing) {
  const Case c = load(GetParam());
  const auto built = fixture::build_in_memory(c.spec);
  const auto expected = listed_files(c.listing);
  std::map<Key, Listed> truth;
  for (const auto& f : built.truth.files) truth[{f.partition, f.path}] = Listed{f.size, f.digest.hex(), f.modified};
  ASSERT_EQ(truth.size(), expected.size());
  for (const auto& [key, want] : expected) {
    SCOPED_TRACE(key.second);
    ASSERT_TRUE(truth.count(key));
    EXPECT_EQ(truth[key].size, want.size);
    EXPECT_EQ(truth[key].sha256, want.sha256);
    EXPECT_EQ(truth[key].modified, want.modified);
  }
  ASSERT_EQ(built.truth.partitions.size(), c.listing["partitions"].size());
  for (std::size_t i = 0; i < built.truth.partitions.size(); ++i) {
    const auto& p = c.listing["partitions"][i];
    EXPECT_EQ(built.truth.partitions[i].start_lba, p["start_lba"].get<std::uint64_t>());
    EXPECT_EQ(built.truth.partitions[i].sector_count, p["sectors"].get<std::uint64_t>());
    EXPECT_EQ(built.truth.partitions[i].type_code, p["type"].get<std::uint32_t>());
  }
}

TEST_P(FatOracle, ParserMatchesListing) {
  const Case c = load(GetParam());
  const auto built = fixture::build_in_memory(c.spec);
  const InspectReport r = inspect(*built.image);
  const auto expected = listed_files(c.listing);
  std::map<Key, Listed> parsed;
  for (const auto& a : r.artifacts) {
    if (a.kind != ArtifactKind::FileData) continue;
    ASSERT_TRUE(a.path && a.partition && a.times);
    const Key key{*a.partition, *a.path};
    EXPECT_FALSE(parsed.count(key)) << *a.path;
    parsed[key] = Listed{a.logical_size(), a.digest.hex(), a.times->modified};
  }
  std::size_t nonempty = 0;
  for (const auto& [key, want] : expected) {
    if (want.size == 0) continue;  // no data, no artifact
    ++nonempty;
    SCOPED_TRACE(key.second);
    ASSERT_TRUE(parsed.count(key));
    EXPECT_EQ(parsed[key].size, want.size);
    EXPECT_EQ(parsed[key].sha256, want.sha256);
    EXPECT_EQ(parsed[key].modified, want.modified);
  }
  EXPECT_EQ(parsed.size(), nonempty);
}

INSTANTIATE_TEST_SUITE_P(Fixtures, FatOracle, ::testing::Values("fat16_nested", "two_volumes", "many_files"));
