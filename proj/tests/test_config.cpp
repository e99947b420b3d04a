#include <catch_amalgamated.hpp>

#include <fstream>

#include "rgmm/config.hpp"
#include "rgmm/error.hpp"
#include "support.hpp"

using namespace rgmm;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.pipeline.boost.learners == 150);
  CHECK(c.pipeline.tree.max_splits == 400);
  CHECK(c.pipeline.tree.min_leaf == 5);
  CHECK(c.pipeline.order == NeighborhoodOrder::Second);
  CHECK(c.pipeline.threshold_hu == 100.0);
  CHECK(c.pipeline.candidates == std::vector<std::vector<int>>{{5, 6}, {5, 6}});
  CHECK(c.pipeline.boost.rus_ratio == 1.0);
  CHECK(c.pipeline.fill_hu == -1000.0f);
  CHECK(c.window_hu == 20.0);
  CHECK(c.cv_folds == 10);
  CHECK(c.phantom.minority_fraction == 0.1849);
  c.validate();
}

TEST_CASE("text form round-trips") {
  RunConfig c;
  c.pipeline.boost.learners = 33;
  c.pipeline.order = NeighborhoodOrder::First;
  c.pipeline.candidates = {{1, 2, 3}, {4}};
  c.pipeline.em.criterion = SelectionCriterion::Mae;
  c.pipeline.gating = Gating::Soft;
  c.pipeline.tree.quantile_candidates = true;
  c.window_hu = 12.5;
  c.seed = 987654321987ULL;
  c.phantom.noise_scale = 0.3;

  RunConfig back;
  back.apply(parse_key_values(c.to_text()));
  CHECK(back.to_text() == c.to_text());
  CHECK(back.pipeline.candidates == c.pipeline.candidates);
  CHECK(back.seed == c.seed);
  CHECK(back.pipeline.gating == Gating::Soft);

  PipelineConfig p = pipeline_from_map(parse_key_values(pipeline_to_text(c.pipeline)));
  CHECK(pipeline_to_text(p) == pipeline_to_text(c.pipeline));
}

TEST_CASE("parsing key-value text") {
  const auto kv = parse_key_values("# comment\n  learners = 12 \n\nneighborhood=first\n");
  CHECK(kv.size() == 2u);
  CHECK(kv.at("learners") == "12");
  CHECK(kv.at("neighborhood") == "first");
  CHECK(test::error_of([] { parse_key_values("learners 12\n"); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("bad configs are rejected") {
  RunConfig c;
  CHECK(test::error_of([&] { c.apply({{"no_such_key", "1"}}); }) == ErrorCode::InvalidConfig);
  CHECK(test::error_of([&] { c.apply({{"learners", "many"}}); }) == ErrorCode::InvalidConfig);
  CHECK(test::error_of([&] { c.apply({{"neighborhood", "third"}}); }) == ErrorCode::InvalidConfig);
  CHECK(test::error_of([&] { c.apply({{"gating", "maybe"}}); }) == ErrorCode::InvalidConfig);
  RunConfig zero;
  zero.pipeline.boost.learners = 0;
  CHECK(test::error_of([&] { zero.validate(); }) == ErrorCode::InvalidConfig);
  RunConfig empty_grid;
  empty_grid.pipeline.candidates[0].clear();
  CHECK(test::error_of([&] { empty_grid.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("config files") {
  test::TempDir dir("config");
  std::ofstream(dir / "run.conf") << "learners = 7\nwindow_hu = 5\n";
  RunConfig c;
  c.apply(read_key_value_file(dir / "run.conf"));
  CHECK(c.pipeline.boost.learners == 7);
  CHECK(c.window_hu == 5.0);
  CHECK(test::error_of([&] { read_key_value_file(dir / "missing.conf"); }) == ErrorCode::Io);
}
