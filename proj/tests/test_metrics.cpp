#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "osld/metrics.hpp"
#include "osld/rng.hpp"

using namespace osld;

TEST_CASE("radial error of the 3-4-5 triangle at 0.1 mm spacing") {
  const auto d = radial_errors({{3, 4, Frame::resized}}, {{0, 0, Frame::original}},
                               {1.0, 1.0}, 0.1);
  REQUIRE(d.size() == 1);
  CHECK(d[0] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("radial error is zero when prediction maps onto ground truth") {
  const auto d = radial_errors({{10, 20, Frame::resized}}, {{50.390625, 125, Frame::original}},
                               {5.0390625, 6.25}, 0.1);
  CHECK(d[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("radial errors match a brute-force recomputation on 1000 random pairs") {
  Rng rng(101);
  std::vector<LandmarkPoint> preds, gts;
  const ResizeTransform t{5.0390625, 6.25};
  const double spacing = 0.1;
  for (int i = 0; i < 1000; ++i) {
    preds.push_back({rng.uniform(0, 384), rng.uniform(0, 384), Frame::resized});
    gts.push_back({rng.uniform(0, 1935), rng.uniform(0, 2400), Frame::original});
  }
  const auto fast = radial_errors(preds, gts, t, spacing);
  for (int i = 0; i < 1000; ++i) {
    const double ox = preds[i].x * t.sx;
    const double oy = preds[i].y * t.sy;
    const double expected =
        std::sqrt((ox - gts[i].x) * (ox - gts[i].x) + (oy - gts[i].y) * (oy - gts[i].y)) *
        spacing;
    REQUIRE(std::abs(fast[i] - expected) < 1e-9);
  }
}

TEST_CASE("radial error count mismatch is a contract error") {
  CHECK_THROWS_AS(radial_errors({{1, 1, Frame::resized}}, {}, {1, 1}, 1.0), contract_error);
}

TEST_CASE("mre basics") {
  CHECK(compute_mre({1.0, 2.0, 3.0}) == Catch::Approx(2.0));
  CHECK(compute_mre({0.0, 0.0}) == 0.0);
  CHECK_THROWS_AS(compute_mre({}), contract_error);
}

TEST_CASE("mre is permutation invariant and matches 64-bit recomputation") {
  Rng rng(7);
  std::vector<double> d;
  for (int i = 0; i < 500; ++i) d.push_back(rng.uniform(0, 10));
  const double a = compute_mre(d);
  double sum = 0.0;
  for (double x : d) sum += x;
  CHECK(a == Catch::Approx(sum / 500.0).margin(1e-12));
  for (std::size_t i = d.size(); i > 1; --i)
    std::swap(d[i - 1], d[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
  CHECK(compute_mre(d) == Catch::Approx(a).margin(1e-12));
}

TEST_CASE("sdr inclusive boundary: d == t counts as detected") {
  const auto sdr = compute_sdr({1.0, 2.0, 2.5, 5.0}, {2.0});
  CHECK(sdr[0] == Catch::Approx(50.0));
  // exact boundary for every threshold
  const auto s2 = compute_sdr({2.0, 2.5, 3.0, 4.0}, {2.0, 2.5, 3.0, 4.0});
  CHECK(s2[0] == 25.0);
  CHECK(s2[1] == 50.0);
  CHECK(s2[2] == 75.0);
  CHECK(s2[3] == 100.0);
}

TEST_CASE("sdr of a threshold beyond the maximum distance is 100") {
  CHECK(compute_sdr({0.1, 5.0, 9.9}, {1e18})[0] == 100.0);
}

TEST_CASE("sdr is monotone in the threshold over random lists") {
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> d;
    const int n = static_cast<int>(rng.uniform_int(1, 40));
    for (int i = 0; i < n; ++i) d.push_back(rng.uniform(0, 8));
    const auto sdr = compute_sdr(d, {1.0, 2.0, 2.5, 3.0, 4.0});
    for (std::size_t i = 1; i < sdr.size(); ++i) REQUIRE(sdr[i] >= sdr[i - 1]);
    REQUIRE(compute_sdr(d, {8.0})[0] == 100.0);
  }
}

TEST_CASE("sdr threshold validation") {
  CHECK_THROWS_AS(compute_sdr({1.0}, {}), contract_error);
  CHECK_THROWS_AS(compute_sdr({1.0}, {2.0, 1.0}), contract_error);
  CHECK_THROWS_AS(compute_sdr({}, {1.0}), contract_error);
}

TEST_CASE("per-landmark report: hand-built distances") {
  const auto rep = per_landmark_report({{1.0, 1.0}, {3.0, 3.0}}, {2.0, 2.5, 3.0, 4.0}, 2);
  REQUIRE(rep.per_landmark.size() == 2);
  CHECK(rep.per_landmark[0].mre_mm == Catch::Approx(1.0));
  CHECK(rep.per_landmark[1].mre_mm == Catch::Approx(3.0));
  CHECK(rep.aggregate.mre_mm == Catch::Approx(2.0));
  CHECK(rep.aggregate.sdr[0] == 50.0);   // 2mm: the two 1.0s
  CHECK(rep.aggregate.sdr[2] == 100.0);  // 3mm inclusive
}

TEST_CASE("report aggregate equals metrics over the flattened list") {
  Rng rng(31);
  std::vector<std::vector<double>> groups(19);
  std::vector<double> flat;
  for (auto& g : groups) {
    const int n = static_cast<int>(rng.uniform_int(3, 25));
    for (int i = 0; i < n; ++i) {
      g.push_back(rng.uniform(0, 6));
      flat.push_back(g.back());
    }
  }
  const auto rep = per_landmark_report(groups, kDefaultSdrThresholdsMm, 25);
  CHECK(rep.per_landmark.size() == 19);  // plus the aggregate row when serialized
  CHECK(rep.aggregate.mre_mm == Catch::Approx(compute_mre(flat)).margin(1e-12));
  const auto sdr = compute_sdr(flat, kDefaultSdrThresholdsMm);
  for (std::size_t i = 0; i < sdr.size(); ++i)
    CHECK(rep.aggregate.sdr[i] == Catch::Approx(sdr[i]).margin(1e-12));
}

TEST_CASE("report row count is K + 1 in the serialized csv") {
  namespace fs = std::filesystem;
  const auto rep = per_landmark_report({{1.0}, {2.0}, {3.0}}, {2.0, 2.5, 3.0, 4.0}, 1);
  const auto path = (fs::temp_directory_path() / "osld_report.csv").string();
  write_report_csv(rep, path);
  std::ifstream in(path);
  std::string line;
  int rows = 0;
  std::getline(in, line);  // header
  CHECK(line == "landmark_id,mre_mm,sdr2,sdr2_5,sdr3,sdr4");
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3 + 1);

  write_report_json(rep, (fs::temp_directory_path() / "osld_report.json").string());
  std::ifstream jin(fs::temp_directory_path() / "osld_report.json");
  nlohmann::json j;
  jin >> j;
  CHECK(j["per_landmark"].size() == 3);
  CHECK(j["aggregate"]["mre_mm"].get<double>() == Catch::Approx(2.0));
}

TEST_CASE("empty landmark group is a contract error") {
  CHECK_THROWS_AS(per_landmark_report({{1.0}, {}}, {2.0}, 1), contract_error);
}

TEST_CASE("map-then-measure equals measuring in the original frame") {
  Rng rng(47);
  const ResizeTransform t{3.25, 1.75};
  for (int i = 0; i < 200; ++i) {
    LandmarkPoint pred{rng.uniform(0, 100), rng.uniform(0, 100), Frame::resized};
    LandmarkPoint gt{rng.uniform(0, 325), rng.uniform(0, 175), Frame::original};
    const double via_op = radial_errors({pred}, {gt}, t, 2.0)[0];
    const auto mapped = map_coords(pred, t, MapDirection::to_original);
    const double direct = distance_px(mapped, gt) * 2.0;
    REQUIRE(via_op == Catch::Approx(direct).margin(1e-12));
  }
}
