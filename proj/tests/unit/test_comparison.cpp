#include <gtest/gtest.h>

#include <algorithm>

#include "regjudge/advice.hpp"
#include "regjudge/comparison.hpp"
#include "regjudge/embedding.hpp"
#include "regjudge/errors.hpp"
#include "regjudge/text.hpp"
#include "support.hpp"

using namespace regjudge;
using namespace regjudge::testing;
using nlohmann::json;

namespace {

ApplicabilityJudgment judgment(const std::string& id, Region region, Applicability label,
                               std::optional<std::string> clause = std::nullopt,
                               std::string justification = "within scope") {
  ApplicabilityJudgment j;
  j.standard_id = id;
  j.norm_id = normalize_standard_id(id);
  j.name = id;
  j.applicability = label;
  j.clause = std::move(clause);
  j.justification = std::move(justification);
  j.region = region;
  return j;
}

Encoder hashing_encoder() { return Encoder(std::make_shared<HashingEmbeddingProvider>(64)); }

DetectOptions cross_both(double threshold = 0.75) {
  DetectOptions o;
  o.mode = RegionMode::Cross;
  o.target_regions = {Region::CN, Region::US};
  o.divergence_threshold = threshold;
  return o;
}

std::vector<ApplicabilityJudgment> case_study_judgments() {
  return {judgment("YY 1234-2023", Region::CN, Applicability::Mandatory, "Clause 5.3"),
          judgment("YY/T 0612-2022", Region::CN, Applicability::Mandatory),
          judgment("YY/T 0314-2021", Region::CN, Applicability::Mandatory),
          judgment("21 CFR 862.1345", Region::US, Applicability::Recommended, "§862.1345")};
}

std::size_t count_kind(const std::vector<ConflictFlag>& flags, FlagKind k) {
  return std::count_if(flags.begin(), flags.end(), [&](const ConflictFlag& f) { return f.kind == k; });
}

// Flags derived straight from the rules, one group at a time.
std::vector<ConflictFlag> flag_oracle(const std::vector<AlignedGroup>& groups, Encoder& enc,
                                      const DetectOptions& o) {
  std::vector<ConflictFlag> out;
  const bool both = o.mode == RegionMode::Cross && o.target_regions.size() == 2;
  for (const auto& g : groups) {
    const bool has_cn = g.members.count(Region::CN) > 0;
    const bool has_us = g.members.count(Region::US) > 0;
    if (has_cn != has_us) {
      if (both) out.push_back({FlagKind::ConflictDetected, g.key, has_cn ? "absent in US" : "absent in CN", {}});
      continue;
    }
    const auto& a = g.members.at(Region::CN);
    const auto& b = g.members.at(Region::US);
    if (a.applicability != b.applicability) out.push_back({FlagKind::ConflictDetected, g.key, "", {}});
    if (a.clause && b.clause && text::trim(*a.clause) != text::trim(*b.clause)) {
      out.push_back({FlagKind::ClauseMismatch, g.key, "", {}});
    }
    const double sim = cosine(enc.embed_text(a.justification), enc.embed_text(b.justification));
    if (sim < o.divergence_threshold) out.push_back({FlagKind::JustificationDivergence, g.key, "", sim});
  }
  return out;
}

std::vector<AlignedGroup> random_groups(TextGen& gen, std::size_t n) {
  const Applicability labels[] = {Applicability::Mandatory, Applicability::Recommended,
                                  Applicability::NotApplicable};
  const std::vector<std::optional<std::string>> clauses = {std::nullopt, "Section 3.1", " Section 3.1 ",
                                                           "§870.1130", "Clause 5"};
  std::vector<ApplicabilityJudgment> js;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "YY " + std::to_string(1000 + i) + "-2020";
    const auto shape = gen.uniform(0, 2);  // CN only, US only, both
    for (Region r : {Region::CN, Region::US}) {
      if ((shape == 0 && r == Region::US) || (shape == 1 && r == Region::CN)) continue;
      js.push_back(judgment(id, r, labels[gen.uniform(0, 2)], clauses[gen.uniform(0, clauses.size() - 1)],
                            gen.words(2, 6)));
    }
  }
  return align_groups(js);
}

}  // namespace

// ---------------------------------------------------------------------------
// Equivalence and alignment

TEST(Equivalence, BundledMapLoads) {
  const auto m = EquivalenceMap::load(data_dir() / "equivalence.json");
  EXPECT_EQ(m.size(), 10u);
  EXPECT_EQ(m.key_for(Region::CN, "yyt0606.4"), std::optional<std::string>("elbow-prosthesis"));
  EXPECT_EQ(m.key_for(Region::US, "21cfr888.3150"), std::optional<std::string>("elbow-prosthesis"));
  EXPECT_FALSE(m.key_for(Region::US, "yyt0606.4").has_value());
  EXPECT_EQ(EquivalenceMap::from_json(m.to_json()).to_json(), m.to_json());
}

TEST(Equivalence, RejectsMalformedEntries) {
  const std::vector<json> bad = {
      json::array(),
      {{"k", "YY 0667-2008"}},
      {{"k", {{"EU", "YY 0667-2008"}}}},
      {{"k", {{"CN", 42}}}},
      {{"k", {{"CN", "YY 0667-2008"}}}, {"j", {{"CN", "YY 0667-2008"}}}},
      {{"k", {{"CN", "   "}}}},
  };
  for (const auto& j : bad) {
    EXPECT_THROW(EquivalenceMap::from_json(j), Error) << j.dump();
  }
}

TEST(Align, EquivalenceMergesCrossRegionCounterparts) {
  const auto m = EquivalenceMap::load(data_dir() / "equivalence.json");
  const auto groups = align_groups({judgment("YY/T 0606.4-2015", Region::CN, Applicability::Mandatory),
                                    judgment("21 CFR 888.3150", Region::US, Applicability::Mandatory)},
                                   m);
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups[0].key, "elbow-prosthesis");
  EXPECT_EQ(groups[0].members.size(), 2u);
}

TEST(Align, SingleRegionJudgmentsGetOneGroupEach) {
  const auto groups = align_groups(case_study_judgments());
  ASSERT_EQ(groups.size(), 4u);
  EXPECT_TRUE(std::is_sorted(groups.begin(), groups.end(),
                             [](const auto& a, const auto& b) { return a.key < b.key; }));
  for (const auto& g : groups) EXPECT_EQ(g.members.size(), 1u);
}

TEST(Align, DuplicateRegionInGroupIsAnError) {
  try {
    align_groups({judgment("YY 0667-2008", Region::CN, Applicability::Mandatory),
                  judgment("YY0667", Region::CN, Applicability::Recommended)});
    FAIL() << "expected DuplicateMember";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateMember);
  }
}

// ---------------------------------------------------------------------------
// Conflict detection

TEST(Detect, LabelDisagreementIsAConflict) {
  auto enc = hashing_encoder();
  const auto groups = align_groups({judgment("ISO 14971:2019", Region::CN, Applicability::Mandatory),
                                    judgment("ISO 14971:2019", Region::US, Applicability::NotApplicable)});
  const auto r = detect_conflicts(groups, &enc, cross_both());
  ASSERT_EQ(count_kind(r.flags, FlagKind::ConflictDetected), 1u);
  EXPECT_EQ(r.flags[0].details, "CN: Mandatory vs US: Not Applicable");
}

TEST(Detect, IdenticalMembersRaiseNothing) {
  auto enc = hashing_encoder();
  const auto groups = align_groups(
      {judgment("ISO 14971:2019", Region::CN, Applicability::Recommended, "4.1", "risk process required"),
       judgment("ISO 14971:2019", Region::US, Applicability::Recommended, " 4.1", "risk process required")});
  const auto r = detect_conflicts(groups, &enc, cross_both());
  EXPECT_TRUE(r.flags.empty());
  EXPECT_FALSE(r.divergence_skipped);
}

TEST(Detect, ClauseStringsAreComparedAfterTrimming) {
  auto enc = hashing_encoder();
  const auto m = EquivalenceMap::load(data_dir() / "equivalence.json");
  const auto groups = align_groups(
      {judgment("YY 0667-2008", Region::CN, Applicability::Mandatory, "Section 3.1", "same text"),
       judgment("21 CFR 870.1130", Region::US, Applicability::Mandatory, "§870.1130", "same text")},
      m);
  const auto r = detect_conflicts(groups, &enc, cross_both());
  ASSERT_EQ(r.flags.size(), 1u);
  EXPECT_EQ(r.flags[0].kind, FlagKind::ClauseMismatch);
  EXPECT_EQ(r.flags[0].group_key, "bp-monitor");
}

TEST(Detect, CaseStudyAbsenceUnderCrossMode) {
  auto enc = hashing_encoder();
  const auto groups = align_groups(case_study_judgments());
  const auto cross = detect_conflicts(groups, &enc, cross_both());
  const auto it = std::find_if(cross.flags.begin(), cross.flags.end(),
                               [](const ConflictFlag& f) { return f.group_key == "yy1234"; });
  ASSERT_NE(it, cross.flags.end());
  EXPECT_EQ(it->kind, FlagKind::ConflictDetected);
  EXPECT_EQ(it->details, "absent in US");

  DetectOptions single;
  single.target_regions = {Region::CN, Region::US};
  EXPECT_TRUE(detect_conflicts(groups, &enc, single).flags.empty());
  auto cn_only = cross_both();
  cn_only.target_regions = {Region::CN};
  EXPECT_TRUE(detect_conflicts(groups, &enc, cn_only).flags.empty());
}

TEST(Detect, DivergentJustificationsMatchFrozenSimilarity) {
  // Precomputed with an independent implementation of the char-trigram hash.
  constexpr double kFrozen = 0.298142397000;
  auto enc = hashing_encoder();
  const auto groups = align_groups(
      {judgment("ISO 14971:2019", Region::CN, Applicability::Mandatory, std::nullopt, "sterility required"),
       judgment("ISO 14971:2019", Region::US, Applicability::Mandatory, std::nullopt, "electrical safety only")});
  const auto r = detect_conflicts(groups, &enc, cross_both(0.75));
  ASSERT_EQ(r.flags.size(), 1u);
  EXPECT_EQ(r.flags[0].kind, FlagKind::JustificationDivergence);
  ASSERT_TRUE(r.flags[0].similarity.has_value());
  EXPECT_NEAR(*r.flags[0].similarity, kFrozen, 1e-6);
  EXPECT_LT(*r.flags[0].similarity, 0.75);
}

TEST(Detect, MissingEncoderSkipsDivergenceOnly) {
  const auto groups = align_groups(
      {judgment("ISO 14971:2019", Region::CN, Applicability::Mandatory, std::nullopt, "sterility required"),
       judgment("ISO 14971:2019", Region::US, Applicability::Recommended, std::nullopt, "electrical safety only")});
  const auto r = detect_conflicts(groups, nullptr, cross_both());
  EXPECT_TRUE(r.divergence_skipped);
  EXPECT_FALSE(r.warning.empty());
  ASSERT_EQ(r.flags.size(), 1u);
  EXPECT_EQ(r.flags[0].kind, FlagKind::ConflictDetected);
}

TEST(Detect, ProviderFailureDegradesGracefully) {
  struct Broken final : EmbeddingProvider {
    std::string model_id() const override { return "broken"; }
    std::size_t dimension() const override { return 8; }
    std::vector<std::vector<float>> embed(std::span<const std::string>) override {
      throw ProviderError("down", true);
    }
  };
  Encoder enc(std::make_shared<Broken>());
  const auto groups = align_groups(
      {judgment("ISO 14971:2019", Region::CN, Applicability::Mandatory, "1", "a b"),
       judgment("ISO 14971:2019", Region::US, Applicability::Recommended, "2", "c d")});
  const auto r = detect_conflicts(groups, &enc, cross_both());
  EXPECT_TRUE(r.divergence_skipped);
  EXPECT_EQ(count_kind(r.flags, FlagKind::ConflictDetected), 1u);
  EXPECT_EQ(count_kind(r.flags, FlagKind::ClauseMismatch), 1u);
  EXPECT_EQ(count_kind(r.flags, FlagKind::JustificationDivergence), 0u);
}

TEST(Detect, MatchesBruteForceOracle) {
  auto enc = hashing_encoder();
  TextGen gen(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto groups = random_groups(gen, gen.uniform(0, 8));
    auto opts = cross_both(gen.real(0.0, 1.0));
    if (trial % 3 == 0) opts.mode = RegionMode::Single;
    const auto got = detect_conflicts(groups, &enc, opts).flags;
    const auto want = flag_oracle(groups, enc, opts);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].kind, want[i].kind);
      EXPECT_EQ(got[i].group_key, want[i].group_key);
      if (want[i].kind == FlagKind::JustificationDivergence) {
        EXPECT_NEAR(*got[i].similarity, *want[i].similarity, 1e-12);
        EXPECT_GE(*got[i].similarity, -1.0);
        EXPECT_LE(*got[i].similarity, 1.0);
      }
    }
  }
}

TEST(Detect, ConflictFlagsAreSound) {
  auto enc = hashing_encoder();
  TextGen gen(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto groups = random_groups(gen, gen.uniform(1, 8));
    for (const auto& f : detect_conflicts(groups, &enc, cross_both()).flags) {
      if (f.kind != FlagKind::ConflictDetected) continue;
      const auto g = std::find_if(groups.begin(), groups.end(),
                                  [&](const AlignedGroup& x) { return x.key == f.group_key; });
      ASSERT_NE(g, groups.end());
      if (g->members.size() == 1) {
        EXPECT_EQ(f.details.rfind("absent in ", 0), 0u);
      } else {
        EXPECT_NE(g->members.at(Region::CN).applicability, g->members.at(Region::US).applicability);
      }
    }
  }
}

TEST(Detect, DivergenceFlagsGrowWithThreshold) {
  auto enc = hashing_encoder();
  TextGen gen(3);
  const auto divergent = [&](const std::vector<AlignedGroup>& groups, double t) {
    std::set<std::string> keys;
    for (const auto& f : detect_conflicts(groups, &enc, cross_both(t)).flags) {
      if (f.kind == FlagKind::JustificationDivergence) keys.insert(f.group_key);
    }
    return keys;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const auto groups = random_groups(gen, 10);
    std::set<std::string> previous;
    for (double t = 0.0; t <= 1.0001; t += 0.05) {
      const auto now = divergent(groups, t);
      EXPECT_TRUE(std::includes(now.begin(), now.end(), previous.begin(), previous.end())) << t;
      previous = now;
    }
  }
}

// ---------------------------------------------------------------------------
// Matrix

TEST(Matrix, EmptyMatrixIsValid) {
  const auto m = build_matrix("device", RegionMode::Single, {Region::CN}, {}, {});
  const auto doc = json::parse(serialize_matrix(m));
  EXPECT_TRUE(doc["groups"].empty());
  EXPECT_TRUE(doc["conflict_flags"].empty());
  EXPECT_EQ(doc["region_summaries"]["CN"]["Mandatory"], 0);
  EXPECT_TRUE(schema("matrix").validate(doc).empty());
}

TEST(Matrix, CaseStudySummaryAndGapAnalysis) {
  auto enc = hashing_encoder();
  auto groups = align_groups(case_study_judgments());
  auto flags = detect_conflicts(groups, &enc, cross_both()).flags;
  const auto m = build_matrix(kCaseStudy, RegionMode::Cross, {Region::CN, Region::US}, groups, flags);
  EXPECT_EQ(m.region_summaries.at(Region::CN).at(Applicability::Mandatory), 3);
  EXPECT_EQ(m.region_summaries.at(Region::US).at(Applicability::Mandatory), 0);
  EXPECT_EQ(m.region_summaries.at(Region::US).at(Applicability::Recommended), 1);
  EXPECT_EQ(m.gap_analysis.size(), count_kind(m.conflict_flags, FlagKind::ConflictDetected));
  const auto doc = to_json(m);
  const auto errors = schema("matrix").validate(doc);
  EXPECT_TRUE(errors.empty()) << (errors.empty() ? "" : errors.front());
}

TEST(Matrix, RoundTripIsByteIdentical) {
  auto enc = hashing_encoder();
  TextGen gen(17);
  for (int trial = 0; trial < 30; ++trial) {
    auto groups = random_groups(gen, gen.uniform(0, 6));
    auto flags = detect_conflicts(groups, &enc, cross_both()).flags;
    auto m = build_matrix(gen.words(3, 8), RegionMode::Cross, {Region::CN, Region::US}, groups, flags);
    m.metadata = {{"trial", trial}, {"note", "ü unicode ✓"}};
    const auto bytes = serialize_matrix(m);
    const auto back = matrix_from_json(json::parse(bytes));
    EXPECT_EQ(back, m);
    EXPECT_EQ(serialize_matrix(back), bytes);
    EXPECT_EQ(bytes.back(), '\n');
  }
}

TEST(Matrix, FlagForUnknownGroupIsRejected) {
  try {
    build_matrix("d", RegionMode::Cross, {Region::CN}, {},
                 {{FlagKind::ConflictDetected, "ghost", "absent in US", {}}});
    FAIL() << "expected InvalidInput";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
  }
}

TEST(Matrix, CsvMarksAbsentRegions) {
  auto groups = align_groups(case_study_judgments());
  const ConflictFlag absent{FlagKind::ConflictDetected, "yy1234", "absent in US", {}};
  const auto m = build_matrix(kCaseStudy, RegionMode::Cross, {Region::CN, Region::US}, groups, {absent});
  const auto csv = matrix_to_csv(m);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "group_key,region,standard_id,name,applicability,clause,flags");
  EXPECT_NE(csv.find("yy1234,CN,YY 1234-2023,YY 1234-2023,Mandatory,Clause 5.3,Conflict_Detected\n"),
            std::string::npos);
  EXPECT_NE(csv.find("yy1234,US,,,absent,,Conflict_Detected\n"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4 * 2);
}

TEST(Matrix, CsvQuotesSpecialCharacters) {
  auto j = judgment("ISO 14971:2019", Region::US, Applicability::Recommended, "4.1, \"risk\"");
  const auto m = build_matrix("d", RegionMode::Single, {Region::US}, align_groups({j}), {});
  EXPECT_NE(matrix_to_csv(m).find("\"4.1, \"\"risk\"\"\""), std::string::npos);
}

// ---------------------------------------------------------------------------
// Advice

namespace {

RuleSet bundled_rules() { return RuleSet::load(data_dir() / "rules.json"); }

bool has_kind(const std::vector<Recommendation>& rs, RecommendationKind k, const std::string& needle) {
  return std::any_of(rs.begin(), rs.end(), [&](const Recommendation& r) {
    return r.kind == k && r.text.find(needle) != std::string::npos;
  });
}

ComplianceMatrix case_matrix() {
  auto enc = hashing_encoder();
  auto groups = align_groups(case_study_judgments());
  auto flags = detect_conflicts(groups, &enc, cross_both()).flags;
  return build_matrix(kCaseStudy, RegionMode::Cross, {Region::CN, Region::US}, groups, flags);
}

}  // namespace

TEST(Advice, CnMandatoryAsksForCnasTesting) {
  const auto rs = bundled_rules().suggest(case_study_judgments(), kCaseStudy, {Region::CN});
  ASSERT_TRUE(has_kind(rs, RecommendationKind::ConformityTesting, "CNAS-accredited laboratories"));
  const auto& r = rs.front();
  EXPECT_EQ(r.triggered_by, "cn-mandatory-cnas");
  EXPECT_EQ(r.related, (std::vector<std::string>{"YY 1234-2023", "YY/T 0612-2022", "YY/T 0314-2021"}));
}

TEST(Advice, WearableDeviceGetsElectricalSafety) {
  const auto rs = bundled_rules().suggest({}, "A wearable patch that logs heart rate.", {Region::US});
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(rs[0].kind, RecommendationKind::SupplementaryStandard);
  EXPECT_NE(std::find(rs[0].related.begin(), rs[0].related.end(), "IEC 60601-1:2020"), rs[0].related.end());
}

TEST(Advice, GlucoseDeviceGetsDomainReferences) {
  const auto rs = bundled_rules().suggest({}, "Blood glucose meter for self-testing.", {Region::US});
  ASSERT_EQ(rs.size(), 1u);
  for (const char* id : {"ISO 15197:2013", "21 CFR 862.1345"}) {
    EXPECT_NE(std::find(rs[0].related.begin(), rs[0].related.end(), id), rs[0].related.end()) << id;
  }
}

TEST(Advice, KeywordsMatchWholeWordsOnly) {
  EXPECT_TRUE(bundled_rules().suggest({}, "Nonelectrical gauze pad.", {Region::CN}).empty());
}

TEST(Advice, ConflictFollowUpNamesThePredicatePath) {
  const auto rs = bundled_rules().follow_up(case_matrix(), {Region::CN, Region::US});
  ASSERT_FALSE(rs.empty());
  EXPECT_TRUE(has_kind(rs, RecommendationKind::ConflictResolution,
                       "predicate device mapping or type testing supplementation"));
  EXPECT_TRUE(has_kind(rs, RecommendationKind::ConflictResolution, "YY 1234-2023 differs across jurisdictions (absent in US)"));
  EXPECT_FALSE(has_kind(rs, RecommendationKind::RegulatoryPathway, "510(k)"));
}

TEST(Advice, ConflictFreeUsMatrixGetsPathways) {
  const auto groups = align_groups({judgment("ISO 14971:2019", Region::US, Applicability::Recommended)});
  const auto m = build_matrix("Surgical mask.", RegionMode::Single, {Region::US}, groups, {});
  const auto rs = bundled_rules().follow_up(m, {Region::US});
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(rs[0].kind, RecommendationKind::RegulatoryPathway);
  for (const char* path : {"510(k)", "De Novo", "Pre-Submission"}) {
    EXPECT_NE(rs[0].text.find(path), std::string::npos) << path;
  }
}

TEST(Advice, EmptyMatrixHasNoFollowUps) {
  const auto m = build_matrix("", RegionMode::Cross, {Region::CN, Region::US}, {}, {});
  EXPECT_TRUE(bundled_rules().follow_up(m, {Region::CN, Region::US}).empty());
}

TEST(Advice, RemovingARuleRemovesExactlyItsRecommendations) {
  const auto rules = bundled_rules();
  const auto m = case_matrix();
  const std::string device = kCaseStudy + " Wearable glucose sensor.";
  const auto all_suggest = rules.suggest(case_study_judgments(), device, {Region::CN, Region::US});
  const auto all_follow = rules.follow_up(m, {Region::CN, Region::US});
  for (const auto& r : all_suggest) EXPECT_NE(rules.find(r.triggered_by), nullptr);
  for (const auto& r : all_follow) EXPECT_NE(rules.find(r.triggered_by), nullptr);

  for (const auto& removed : rules.rules()) {
    std::vector<AdviceRule> rest;
    for (const auto& r : rules.rules()) {
      if (r.id != removed.id) rest.push_back(r);
    }
    const RuleSet smaller(rest);
    const auto drop = [&](std::vector<Recommendation> v) {
      std::erase_if(v, [&](const Recommendation& r) { return r.triggered_by == removed.id; });
      return v;
    };
    EXPECT_EQ(smaller.suggest(case_study_judgments(), device, {Region::CN, Region::US}), drop(all_suggest));
    EXPECT_EQ(smaller.follow_up(m, {Region::CN, Region::US}), drop(all_follow));
  }
}

TEST(Advice, DeterministicAndVersioned) {
  const auto a = bundled_rules();
  const auto b = bundled_rules();
  EXPECT_EQ(a.version(), b.version());
  EXPECT_EQ(a.version().size(), 12u);
  EXPECT_EQ(a.follow_up(case_matrix(), {Region::CN, Region::US}),
            b.follow_up(case_matrix(), {Region::CN, Region::US}));
  std::vector<AdviceRule> edited = a.rules();
  edited[0].action_text += " Keep the reports.";
  EXPECT_NE(RuleSet(edited).version(), a.version());
}

TEST(Advice, RecommendationsRoundTrip) {
  const auto rs = bundled_rules().follow_up(case_matrix(), {Region::CN, Region::US});
  EXPECT_EQ(recommendations_from_json(to_json(rs)), rs);
}

TEST(Advice, RuleFileErrors) {
  const json base = {{"id", "r"}, {"kind", "ConformityTesting"}, {"action_text", "x"}};
  auto with = [&](const char* key, json value) {
    json r = base;
    r[key] = std::move(value);
    return json::array({r});
  };
  const std::vector<json> bad = {
      json::object(),
      json::array({42}),
      with("kind", "Nonsense"),
      with("stage", "later"),
      with("id", ""),
      with("when", {{"sky", "blue"}}),
      with("when", {{"applicability", "Maybe"}}),
      with("when", {{"flag_kind", "Conflict_Detected"}}),
      json::array({base, base}),
      json::array({{{"id", "r"}, {"kind", "ConformityTesting"}}}),
  };
  for (const auto& j : bad) {
    try {
      RuleSet::from_json(j);
      ADD_FAILURE() << "accepted " << j.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::RuleConfigError) << j.dump();
    }
  }
  TempDir dir;
  try {
    RuleSet::load(dir / "missing.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RuleConfigError);
  }
}
