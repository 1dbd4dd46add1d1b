#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "scenery/experiments.hpp"

using namespace scenery;
using nlohmann::json;

namespace {

std::string pointer_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.pointer();
  }
  return "accepted";
}

json small(const std::string& kind) {
  if (kind == "homogenize")
    return json::parse(R"({"kind":"homogenize","homogenize":{"alphas":[3,1],"epsilons":[0.5,0.35],"n_paths":40,"n_fields":3}})");
  if (kind == "scenery")
    return json::parse(R"({"kind":"scenery","scenery":{"epsilons":[0.5,0.4],"n_paths":30,"n_fields":3,
      "pair_functional":{"epsilon":0.4,"n_paths":20,"independent_epsilons":[0.5,0.4],"independent_pairs":5,"ds":0.25},
      "second_moment":{"epsilon":0.5,"n_fields":3,"n_paths":5}}})");
  if (kind == "corrector")
    return json::parse(R"({"kind":"corrector","corrector":{"lambdas":[0.1,0.01],"exactness":{"points":4},
      "martingale":{"epsilon":0.4,"n_fields":3,"n_paths":3,"levels":2}}})");
  if (kind == "spde")
    return json::parse(R"({"kind":"spde","spde":{"epsilons":[0.4,0.3],"moments":[[1,0],[1,1]],"n_fields":2,
      "n_path_tuples":20,"limit_tuples":50,"limit_dt":0.05}})");
  if (kind == "field_check")
    return json::parse(R"({"kind":"field_check","field_check":{"n_realizations":100}})");
  return json{{"kind", kind}};
}

}  // namespace

TEST(Config, PointersNameTheOffendingNode) {
  EXPECT_EQ(pointer_of(json::object()), "/kind");
  EXPECT_EQ(pointer_of(json{{"kind", "nope"}}), "/kind");
  EXPECT_EQ(pointer_of(json::parse(R"({"kind":"effective","bogus":1})")), "/bogus");
  EXPECT_EQ(pointer_of(json::parse(R"({"kind":"scenery","scenery":{"n_paths":-3}})")), "/scenery/n_paths");
  EXPECT_EQ(pointer_of(json::parse(R"({"kind":"scenery","scenery":{"epsilons":[0.1,0.2]}})")), "/scenery/epsilons/1");
  EXPECT_EQ(pointer_of(json::parse(R"({"kind":"scenery","scenery":{"pair_functional":{"beta":1.5}}})")),
            "/scenery/pair_functional/beta");
  EXPECT_EQ(pointer_of(json::parse(R"({"kind":"scenery","spde":{}})")), "/spde");
  EXPECT_EQ(pointer_of(json::parse(R"({"kind":"field_check","field_check":{"n_realizations":0}})")),
            "/field_check/n_realizations");
  EXPECT_EQ(pointer_of(json::parse(R"({"kind":"corrector","backend":{"kind":"grid"}})")), "/backend/kind");
  EXPECT_EQ(pointer_of(json::parse(R"({"kind":"effective","model":{"d":0}})")), "/model/d");
  EXPECT_THROW(parse_config(json{{"kind", "effective"}}, ExperimentKind::spde), ConfigError);
  EXPECT_EQ(parse_config(json::object(), ExperimentKind::spde).kind, ExperimentKind::spde);
}

TEST(Config, ResolvedFormRoundTripsAndHashIgnoresRunKnobs) {
  for (const char* k : {"effective", "homogenize", "scenery", "corrector", "spde", "field_check"}) {
    const auto c = parse_config(small(k));
    const auto j = c.to_json();
    const auto again = parse_config(j);
    EXPECT_EQ(again.to_json(), j) << k;
    EXPECT_EQ(again.hash(), c.hash()) << k;
    auto w = j;
    w["workers"] = 7;
    w["output"] = "elsewhere";
    EXPECT_EQ(parse_config(w).hash(), c.hash()) << k;
    w["master_seed"] = 99;
    EXPECT_NE(parse_config(w).hash(), c.hash()) << k;
  }
}

TEST(Experiments, EffectiveGaussianValues) {
  const auto c = parse_config(json{{"kind", "effective"}});
  const auto r = execute(c, 1);
  const auto& t = r.table("effective");
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_NEAR(t.number(0, "rho"), std::sqrt(std::numbers::pi / 2.0), 1e-10);
  EXPECT_NEAR(t.number(1, "rho"), 0.6250846675811604, 1e-9);
  EXPECT_NEAR(t.number(2, "rho"), 2.0, 1e-8);
  EXPECT_TRUE(r.check("effective_oracles").pass) << r.check("effective_oracles").details.dump();
  EXPECT_TRUE(r.check("two_route").pass) << r.check("two_route").details.dump();
}

TEST(Experiments, TrapezoidOracleIsIndependentOfTheQuadrature) {
  const auto m = CovarianceModel::gaussian(1.0, 1.0, 1.0, 3);
  // trapezoid error is about h^2/12 |f'(0)| = 1.3e-9 at h = 1e-4
  EXPECT_NEAR(detail::trapezoid_eq2(m), 0.6250846675811604, 2e-9);
}

TEST(Experiments, EnvelopePotentialGaussian) {
  // 4 pi int r e^{-r^2/2} dr = 4 pi for the unit model
  const auto m = CovarianceModel::gaussian(1.0, 1.0, 1.0, 3);
  EXPECT_NEAR(envelope_potential(m, 1.0), 4.0 * std::numbers::pi, 1e-7);
}

TEST(Experiments, BudgetGuard) {
  auto j = small("homogenize");
  j["max_work"] = 10.0;
  EXPECT_THROW(execute(parse_config(j), 1), ResourceError);
}

TEST(Experiments, SameSeedSameBytesAcrossWorkerCounts) {
  for (const char* k : {"homogenize", "scenery", "corrector", "spde", "field_check"}) {
    const auto c = parse_config(small(k));
    const auto a = execute(c, 1);
    const auto b = execute(c, 3);
    ASSERT_EQ(a.tables.size(), b.tables.size()) << k;
    for (std::size_t i = 0; i < a.tables.size(); ++i) {
      EXPECT_FALSE(a.tables[i].rows.empty()) << k << " " << a.tables[i].name;
      EXPECT_EQ(to_csv(a.tables[i]), to_csv(b.tables[i])) << k << " " << a.tables[i].name;
      EXPECT_EQ(to_json_text(a.tables[i]), to_json_text(b.tables[i])) << k << " " << a.tables[i].name;
    }
  }
}

TEST(Experiments, HomogenizeTableColumns) {
  const auto r = execute(parse_config(small("homogenize")), 2);
  const auto& t = r.table("homogenize");
  const std::vector<std::string> want{"epsilon", "alpha", "t", "x1", "x2", "x3", "re_mean", "im_mean", "re_stderr",
                                      "im_stderr", "u0_ref", "abs_err", "n_paths", "n_fields", "master_seed"};
  EXPECT_EQ(t.columns, want);
  EXPECT_EQ(t.rows.size(), 4u);
  EXPECT_TRUE(t.extras[0].contains("dt"));
  const double re = t.number(0, "re_mean") - t.number(0, "u0_ref"), im = t.number(0, "im_mean");
  EXPECT_DOUBLE_EQ(t.number(0, "abs_err"), std::hypot(re, im));
}

TEST(Experiments, RunWritesTablesAndManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "scenery_run_test";
  std::filesystem::remove_all(dir);
  auto j = small("effective");
  j["output"] = dir.string();
  const auto c = parse_config(j);
  const auto man = run(c);
  EXPECT_TRUE(std::filesystem::exists(dir / "effective.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "effective.json"));
  const auto m = json::parse(read_text(dir / "manifest.json"));
  EXPECT_EQ(m["config_hash"], hex64(c.hash()));
  EXPECT_EQ(m["tool_version"], kToolVersion);
  EXPECT_EQ(parse_config(m["config"]).hash(), c.hash());
  EXPECT_TRUE(man.all_passed());
  const auto back = read_csv(dir / "effective.csv");
  EXPECT_EQ(back.rows.size(), 3u);
  std::filesystem::remove_all(dir);
}
