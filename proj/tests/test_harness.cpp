#include <set>

#include <gtest/gtest.h>

#include "trajdist/config.hpp"
#include "trajdist/harness.hpp"

namespace trajdist {
namespace {

TEST(Disturbance, ImpulseHasTwoStepsOfExactMagnitudeOnVelocities) {
  const auto m = make_model("quadcopter", 0.05);
  const int T = 150;
  std::set<int> onsets;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto d = make_disturbance(*m, T, DisturbanceKind::kImpulse, 0.7, seed);
    std::vector<int> active;
    for (int t = 0; t < T; ++t)
      if (d[static_cast<std::size_t>(t)].norm() > 0) active.push_back(t);
    ASSERT_EQ(active.size(), 2u);
    EXPECT_EQ(active[1], active[0] + 1);
    EXPECT_GE(active[0], 10);
    EXPECT_LE(active[0], T - 20);
    EXPECT_EQ(d[static_cast<std::size_t>(active[0])], d[static_cast<std::size_t>(active[1])]);
    EXPECT_NEAR(d[static_cast<std::size_t>(active[0])].norm(), 0.7, 1e-12);
    EXPECT_TRUE(d[static_cast<std::size_t>(active[0])].head(6).isZero());
    onsets.insert(active[0]);
  }
  EXPECT_GT(onsets.size(), 50u);
}

TEST(Disturbance, TimeVaryingActsOnItsWindowOnly) {
  const auto m = make_model("bicopter", 0.05);
  const auto d = make_disturbance(*m, 150, DisturbanceKind::kTimeVarying, 0.2, 3);
  for (int t = 0; t < 150; ++t) {
    const double n = d[static_cast<std::size_t>(t)].norm();
    if (t >= 30 && t < 100) {
      EXPECT_NEAR(n, 0.2, 1e-12) << t;
      EXPECT_TRUE(d[static_cast<std::size_t>(t)].head(3).isZero());
    } else {
      EXPECT_EQ(n, 0.0) << t;
    }
  }
  // Smoothed direction: consecutive steps are strongly correlated on average.
  double dot = 0.0;
  for (int t = 30; t < 99; ++t) dot += d[static_cast<std::size_t>(t)].dot(d[static_cast<std::size_t>(t + 1)]) / 0.04;
  EXPECT_GT(dot / 69.0, 0.5);
}

TEST(Disturbance, DeterministicPerSeedAndDistinctAcrossSeeds) {
  const auto m = make_model("point_mass", 0.05);
  const auto a = make_disturbance(*m, 120, DisturbanceKind::kTimeVarying, 0.1, 9);
  const auto b = make_disturbance(*m, 120, DisturbanceKind::kTimeVarying, 0.1, 9);
  const auto c = make_disturbance(*m, 120, DisturbanceKind::kTimeVarying, 0.1, 10);
  EXPECT_EQ(Trajectory::stack(a), Trajectory::stack(b));
  EXPECT_NE(Trajectory::stack(a), Trajectory::stack(c));
}

TEST(Disturbance, RejectsWindowsThatDoNotFit) {
  const auto m = make_model("point_mass", 0.05);
  EXPECT_THROW(make_disturbance(*m, 25, DisturbanceKind::kImpulse, 1.0, 1), Error);
  EXPECT_THROW(make_disturbance(*m, 80, DisturbanceKind::kTimeVarying, 1.0, 1), Error);
  EXPECT_TRUE(Trajectory::stack(make_disturbance(*m, 80, DisturbanceKind::kImpulse, 0.0, 1)).isZero());
}

TEST(Seeds, DerivedSeedsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(1, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(1, 0), derive_seed(1, 0));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  // Reference value of the standard splitmix64 finalizer.
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

RunRecord record(std::uint64_t seed, ControllerKind c, double cost, bool diverged = false) {
  RunRecord r;
  r.system = "toy";
  r.controller = c;
  r.seed = seed;
  r.raw_cost = diverged ? std::numeric_limits<double>::quiet_NaN() : cost;
  r.diverged = diverged;
  return r;
}

TEST(Normalization, BestPerSeedIsOneAndOthersAbove) {
  std::vector<RunRecord> recs{record(1, ControllerKind::kIlqrFeed, 4.0), record(1, ControllerKind::kMpcCond, 2.0),
                              record(2, ControllerKind::kIlqrFeed, 3.0), record(2, ControllerKind::kMpcCond, 6.0, true),
                              record(3, ControllerKind::kIlqrFeed, 1.0, true),
                              record(3, ControllerKind::kMpcCond, 1.0, true)};
  normalize_by_seed(recs);
  EXPECT_DOUBLE_EQ(recs[0].normalized_cost, 2.0);
  EXPECT_DOUBLE_EQ(recs[1].normalized_cost, 1.0);
  EXPECT_DOUBLE_EQ(recs[2].normalized_cost, 1.0);
  EXPECT_TRUE(recs[3].excluded);
  EXPECT_TRUE(recs[4].excluded && recs[5].excluded);

  const auto feed = summarize(recs, ControllerKind::kIlqrFeed);
  EXPECT_EQ(feed.n, 2);
  EXPECT_EQ(feed.n_excluded, 1);
  EXPECT_DOUBLE_EQ(feed.mean, 1.5);
  EXPECT_DOUBLE_EQ(feed.std, 0.5);  // population standard deviation
  const auto none = summarize({}, ControllerKind::kMpcMean);
  EXPECT_EQ(none.n, 0);
  EXPECT_TRUE(std::isnan(none.mean));
}

TEST(Replications, NormalizedCostsAreAtLeastOne) {
  auto spec = load_config(std::string(TRAJDIST_CONFIG_DIR) + "/point_mass.json").spec;
  spec.replications = 4;
  const auto plan = make_plan(spec);
  const auto recs = run_replications(spec, plan, DisturbanceKind::kImpulse, Level::kMedium);
  ASSERT_EQ(recs.size(), 16u);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].controller, spec.controllers[i % 4]);
    EXPECT_EQ(recs[i].seed, derive_seed(spec.seed, i / 4));
    if (!recs[i].excluded) EXPECT_GE(recs[i].normalized_cost, 1.0);
  }
}

TEST(Replications, ZeroDisturbanceStaysNearThePlan) {
  auto spec = load_config(std::string(TRAJDIST_CONFIG_DIR) + "/point_mass.json").spec;
  spec.replications = 1;
  spec.levels.impulse = {0.0, 0.0, 0.0};
  const auto plan = make_plan(spec);
  for (const auto& r : run_replications(spec, plan, DisturbanceKind::kImpulse, Level::kSmall)) {
    ASSERT_FALSE(r.diverged) << r.failure;
    EXPECT_LE(r.normalized_cost, 1.02);
    EXPECT_LE(r.raw_cost / plan->cost(), 1.02);
  }
}

TEST(Replications, ThreadCountDoesNotChangeResults) {
  auto spec = load_config(std::string(TRAJDIST_CONFIG_DIR) + "/point_mass.json").spec;
  spec.replications = 3;
  const auto plan = make_plan(spec);
  const auto serial = to_csv(run_replications(spec, plan, DisturbanceKind::kTimeVarying, Level::kSmall));
  spec.jobs = 3;
  EXPECT_EQ(to_csv(run_replications(spec, plan, DisturbanceKind::kTimeVarying, Level::kSmall)), serial);
}

TEST(Export, CsvHeaderAndRows) {
  EXPECT_EQ(to_csv({}), std::string(kCsvHeader) + "\n");
  auto r = record(5, ControllerKind::kMpcMarg, 0.1);
  r.kind = DisturbanceKind::kTimeVarying;
  r.level = Level::kLarge;
  r.normalized_cost = 1.0;
  auto bad = record(5, ControllerKind::kMpcMean, 0.0, true);
  EXPECT_EQ(to_csv({r, bad}), std::string(kCsvHeader) +
                                  "\ntoy,mpc_marg,time_varying,large,5,0.10000000000000001,1,false\n"
                                  "toy,mpc_mean,impulse,small,5,nan,nan,true\n");
}

TEST(Export, JsonRoundTrip) {
  SummaryTables t;
  t["impulse"]["quadcopter"]["mpc_cond"]["medium"] = {1.0061, 0.015, 50, 0};
  t["impulse"]["quadcopter"]["mpc_mean"]["medium"] = {};
  const auto j = to_json(t);
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_TRUE(j["tables"]["impulse"]["quadcopter"]["mpc_mean"]["medium"]["mean"].is_null());
  const auto back = tables_from_json(nlohmann::json::parse(j.dump()));
  const auto& c = back.at("impulse").at("quadcopter").at("mpc_cond").at("medium");
  EXPECT_EQ(c.mean, 1.0061);
  EXPECT_EQ(c.std, 0.015);
  EXPECT_EQ(c.n, 50);
  EXPECT_TRUE(std::isnan(back.at("impulse").at("quadcopter").at("mpc_mean").at("medium").mean));
  EXPECT_THROW(tables_from_json(nlohmann::json{{"schema_version", 2}, {"tables", {}}}), Error);
}

TEST(Labels, ParseRoundTrip) {
  for (auto k : kAllKinds) EXPECT_EQ(parse_kind(to_string(k)), k);
  for (auto l : kAllLevels) EXPECT_EQ(parse_level(to_string(l)), l);
  EXPECT_THROW(parse_kind("gust"), Error);
  EXPECT_THROW(parse_level("huge"), Error);
}

}  // namespace
}  // namespace trajdist
