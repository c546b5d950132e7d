#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pifold/dataset.hpp"
#include "pifold/geometry.hpp"
#include "pifold/graph.hpp"

namespace pifold {
namespace {

using nlohmann::json;

json minimal_record(const std::string& name = "one") {
  return {{"name", name},
          {"seq", "A"},
          {"coords", {{"N", {{0.0, 1.4, 0.0}}}, {"CA", {{0.0, 0.0, 0.0}}}, {"C", {{1.5, 0.0, 0.0}}}, {"O", {{2.0, 1.0, 0.0}}}}}};
}

std::string expect_data_error(const std::string& text) {
  try {
    parse_jsonl_text(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    return e.what();
  }
  ADD_FAILURE() << "accepted: " << text;
  return {};
}

TEST(Jsonl, MinimalRecord) {
  const auto ps = parse_jsonl_text(minimal_record().dump() + "\n");
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_EQ(ps[0].size(), 1);
  EXPECT_EQ(ps[0].name, "one");
  EXPECT_EQ(ps[0].sequence, std::vector<std::int32_t>{*residue_code('A')});
  EXPECT_EQ(ps[0].mask, std::vector<std::uint8_t>{1});
}

TEST(Jsonl, LengthMismatchNamesTheLine) {
  const Protein p = synth_protein(1, 5);
  json rec = json::parse(protein_to_jsonl(p));
  rec["coords"]["CA"].erase(rec["coords"]["CA"].end() - 1);
  const std::string msg = expect_data_error(minimal_record().dump() + "\n\n" + rec.dump() + "\n");
  EXPECT_NE(msg.find("length mismatch"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Jsonl, UnknownLetterAndNonNumericCoordinate) {
  json rec = minimal_record();
  rec["seq"] = "B";
  EXPECT_NE(expect_data_error(rec.dump()).find("unknown residue letter"), std::string::npos);
  rec = minimal_record();
  rec["coords"]["C"][0][1] = "x";
  EXPECT_NE(expect_data_error(rec.dump()).find("non-numeric coordinate"), std::string::npos);
  EXPECT_NE(expect_data_error("{not json").find("line 1"), std::string::npos);
  EXPECT_NE(expect_data_error(R"({"seq": "A"})").find("name"), std::string::npos);
  rec = minimal_record();
  rec["coords"].erase("O");
  EXPECT_NE(expect_data_error(rec.dump()).find("'O'"), std::string::npos);
}

TEST(Jsonl, MissingCoordinatesMaskTheResidue) {
  const Protein p = synth_protein(2, 4);
  json rec = json::parse(protein_to_jsonl(p));
  rec["coords"]["O"][1] = nullptr;
  std::string line = rec.dump();
  // A bare NaN sentinel is accepted as well.
  json rec2 = json::parse(protein_to_jsonl(p));
  rec2["name"] = "NaN-in-name";
  std::string line2 = rec2.dump();
  const auto pos = line2.find("\"CA\":[[") + 7;
  line2.replace(pos, line2.find(',', pos) - pos, "NaN");
  const auto ps = parse_jsonl_text(line + "\n" + line2 + "\n");
  EXPECT_EQ(ps[0].mask, (std::vector<std::uint8_t>{1, 0, 1, 1}));
  EXPECT_EQ(ps[1].mask, (std::vector<std::uint8_t>{0, 1, 1, 1}));
  EXPECT_EQ(ps[1].name, "NaN-in-name");
  EXPECT_EQ(ps[0].ca[1], Vec3::Zero());
}

TEST(Jsonl, UnknownKeysAndAtomOrderDoNotMatter) {
  const Protein p = synth_protein(3, 6);
  const json rec = json::parse(protein_to_jsonl(p));
  // Same record with the coordinate lists stored in a different order and extra keys.
  std::ostringstream os;
  os << R"({"seq":)" << rec["seq"].dump() << R"(,"num_chains":1,"coords":{"O":)" << rec["coords"]["O"].dump()
     << R"(,"C":)" << rec["coords"]["C"].dump() << R"(,"CA":)" << rec["coords"]["CA"].dump() << R"(,"N":)"
     << rec["coords"]["N"].dump() << R"(},"name":)" << rec["name"].dump() << "}";
  const auto q = parse_jsonl_text(os.str()).at(0);
  const auto v = VirtualAtomParams::initial(3, 1);
  EXPECT_EQ(featurize(p, FeatureConfig{}, v).node_features, featurize(q, FeatureConfig{}, v).node_features);
  EXPECT_EQ(featurize(p, FeatureConfig{}, v).edge_features, featurize(q, FeatureConfig{}, v).edge_features);
}

TEST(Jsonl, RoundTripIsByteIdentical) {
  std::vector<Protein> ps = synth_dataset(4, 3, 9);
  ps[1].mask[2] = 0;
  ps[1].n[2] = ps[1].ca[2] = ps[1].c[2] = ps[1].o[2] = Vec3::Zero();
  ps[2].chain_breaks = {4};
  std::ostringstream a;
  write_jsonl(a, ps);
  const auto back = parse_jsonl_text(a.str());
  std::ostringstream b;
  write_jsonl(b, back);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(back[1].mask[2], 0);
  EXPECT_EQ(back[2].chain_breaks, std::vector<std::int32_t>{4});
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (int r = 0; r < ps[i].size(); ++r) EXPECT_EQ(back[i].ca[static_cast<std::size_t>(r)], ps[i].ca[static_cast<std::size_t>(r)]);
}

TEST(Jsonl, FileErrors) {
  try {
    parse_jsonl("/nonexistent/pifold.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNotFound);
  }
}

TEST(Synth, Deterministic) {
  const Protein a = synth_protein(11, 40), b = synth_protein(11, 40);
  EXPECT_EQ(a.sequence, b.sequence);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(a.o[static_cast<std::size_t>(i)], b.o[static_cast<std::size_t>(i)]);
}

TEST(Synth, ConsecutiveCaDistances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Protein p = synth_protein(seed, 60);
    for (int i = 1; i < 60; ++i) {
      const double d = (p.ca[static_cast<std::size_t>(i)] - p.ca[static_cast<std::size_t>(i - 1)]).norm();
      EXPECT_GE(d, 3.6);
      EXPECT_LE(d, 4.0);
    }
  }
}

TEST(Synth, BondGeometryNearIdeal) {
  const Protein p = synth_protein(5, 30);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_NEAR((p.ca[i] - p.n[i]).norm(), 1.458, 0.11);
    EXPECT_NEAR((p.c[i] - p.ca[i]).norm(), 1.525, 0.11);
    EXPECT_NEAR((p.o[i] - p.c[i]).norm(), 1.231, 0.11);
  }
}

TEST(Synth, DifferentSeedsDifferentSequences) {
  for (std::uint64_t s = 0; s < 100; ++s) EXPECT_NE(synth_protein(2 * s, 50).sequence, synth_protein(2 * s + 1, 50).sequence);
}

TEST(Synth, FramesNeverDegenerate) {
  for (std::uint64_t s = 0; s < 20; ++s)
    for (const auto& f : local_frames(synth_protein(s, 50))) EXPECT_FALSE(f.degenerate);
}

TEST(Synth, CodesCoverTheAlphabet) {
  std::set<std::int32_t> seen;
  for (const auto& p : synth_dataset(1, 10, 50))
    for (auto c : p.sequence) {
      EXPECT_GE(c, 0);
      EXPECT_LT(c, 20);
      seen.insert(c);
    }
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Synth, DatasetNamesAreUnique) {
  const auto ps = synth_dataset(7, 5, 10);
  std::set<std::string> names;
  for (const auto& p : ps) names.insert(p.name);
  EXPECT_EQ(names.size(), 5u);
  EXPECT_EQ(ps[0].name, "synth-7-0");
}

TEST(Split, RoutesByName) {
  const auto recs = synth_dataset(9, 10, 8);
  const auto m = parse_manifest_text(R"({"train": ["synth-9-0", "synth-9-3", "synth-9-5", "synth-9-9"],
                                         "validation": ["synth-9-1"], "test": ["synth-9-7", "synth-9-2"]})");
  const auto s = split_dataset(recs, m);
  auto names = [](const std::vector<Protein>& v) {
    std::vector<std::string> out;
    for (const auto& p : v) out.push_back(p.name);
    return out;
  };
  EXPECT_EQ(names(s.train), m.train);
  EXPECT_EQ(names(s.validation), m.validation);
  EXPECT_EQ(names(s.test), m.test);
  EXPECT_EQ(s.unlisted, (std::vector<std::string>{"synth-9-4", "synth-9-6", "synth-9-8"}));
}

TEST(Split, EmptyTestList) {
  const auto recs = synth_dataset(9, 3, 8);
  const auto s = split_dataset(recs, parse_manifest_text(R"({"train": ["synth-9-0"], "test": []})"));
  EXPECT_TRUE(s.test.empty());
  EXPECT_EQ(s.train.size(), 1u);
}

TEST(Split, Errors) {
  const auto recs = synth_dataset(9, 3, 8);
  EXPECT_THROW(split_dataset(recs, parse_manifest_text(R"({"train": ["synth-9-0"], "test": ["synth-9-0"]})")), Error);
  EXPECT_THROW(split_dataset(recs, parse_manifest_text(R"({"train": ["nope"]})")), Error);
  EXPECT_NO_THROW(split_dataset(recs, parse_manifest_text(R"({"train": ["nope"]})"), true));
  auto dup = recs;
  dup.push_back(recs[0]);
  EXPECT_THROW(split_dataset(dup, SplitManifest{}), Error);
  EXPECT_THROW(parse_manifest_text(R"({"train": "synth-9-0"})"), Error);
  EXPECT_THROW(parse_manifest_text("[1, 2"), Error);
}

}  // namespace
}  // namespace pifold
