#include <catch2/catch_amalgamated.hpp>

#include "osld/dataset.hpp"
#include "osld/geometry.hpp"
#include "osld/rng.hpp"

using namespace osld;

TEST_CASE("map_coords identity transform") {
  LandmarkPoint p{100, 100, Frame::resized};
  auto q = map_coords(p, {1.0, 1.0}, MapDirection::to_original);
  CHECK(q.x == 100.0);
  CHECK(q.y == 100.0);
  CHECK(q.frame == Frame::original);
}

TEST_CASE("map_coords ISBI-style anisotropic scales") {
  // 1935 x 2400 original resized to 384 x 384
  ResizeTransform t = make_resize_transform(1935, 2400, 384, 384);
  CHECK(t.sx == Catch::Approx(5.0390625).epsilon(1e-12));
  CHECK(t.sy == Catch::Approx(6.25).epsilon(1e-12));
  auto q = map_coords({192, 192, Frame::resized}, t, MapDirection::to_original);
  CHECK(q.x == Catch::Approx(967.5).margin(1e-9));
  CHECK(q.y == Catch::Approx(1200.0).margin(1e-9));
}

TEST_CASE("map_coords round trip is exact to 1e-9") {
  ResizeTransform t{5.0390625, 6.25};
  LandmarkPoint p{37.25, 301.5, Frame::resized};
  auto back = map_coords(map_coords(p, t, MapDirection::to_original), t,
                         MapDirection::to_resized);
  CHECK(std::abs(back.x - p.x) < 1e-9);
  CHECK(std::abs(back.y - p.y) < 1e-9);
}

TEST_CASE("map_coords frame mismatch is a contract violation") {
  LandmarkPoint p{10, 10, Frame::original};
  CHECK_THROWS_AS(map_coords(p, {2, 2}, MapDirection::to_original), contract_error);
  LandmarkPoint r{10, 10, Frame::resized};
  CHECK_THROWS_AS(map_coords(r, {2, 2}, MapDirection::to_resized), contract_error);
}

TEST_CASE("round trip property over random points and scales") {
  Rng rng(20240301);
  for (int i = 0; i < 1000; ++i) {
    ResizeTransform t{rng.uniform(0.05, 20.0), rng.uniform(0.05, 20.0)};
    LandmarkPoint p{rng.uniform(0.0, 4000.0), rng.uniform(0.0, 4000.0), Frame::resized};
    auto back = map_coords(map_coords(p, t, MapDirection::to_original), t,
                           MapDirection::to_resized);
    REQUIRE(std::abs(back.x - p.x) < 1e-9);
    REQUIRE(std::abs(back.y - p.y) < 1e-9);
  }
}

TEST_CASE("distance is only defined within one frame") {
  CHECK(distance_px({0, 0, Frame::original}, {3, 4, Frame::original}) == Catch::Approx(5.0));
  CHECK_THROWS_AS(distance_px({0, 0, Frame::original}, {3, 4, Frame::resized}),
                  contract_error);
}

TEST_CASE("affine rotation about a point keeps it fixed") {
  for (double deg : {13.0, 90.0, -47.5, 180.0, 361.2}) {
    Affine2 m = make_augment_affine(191.5, 191.5, 0, 0, deg, 1.0);
    auto p = m.apply(LandmarkPoint{191.5, 191.5, Frame::resized});
    CHECK(std::abs(p.x - 191.5) < 1e-6);
    CHECK(std::abs(p.y - 191.5) < 1e-6);
  }
}

TEST_CASE("affine inverse composes to identity") {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    Affine2 m = make_augment_affine(rng.uniform(0, 100), rng.uniform(0, 100),
                                    rng.uniform(-20, 20), rng.uniform(-20, 20),
                                    rng.uniform(-180, 180), rng.uniform(0.5, 2.0));
    Affine2 inv = m.inverse();
    double x, y, bx, by;
    const double px = rng.uniform(-50, 150), py = rng.uniform(-50, 150);
    m.apply(px, py, x, y);
    inv.apply(x, y, bx, by);
    REQUIRE(std::abs(bx - px) < 1e-9);
    REQUIRE(std::abs(by - py) < 1e-9);
  }
}

TEST_CASE("pseudo-label store accepts the croppable region and rejects outside") {
  PseudoLabelStore store(384, 192);
  store.set("img", 0, {96, 96, Frame::resized});
  store.set("img", 1, {288, 288, Frame::resized});
  CHECK(store.size() == 2);
  CHECK_THROWS_AS(store.set("img", 2, {95, 200, Frame::resized}), contract_error);
  CHECK_THROWS_AS(store.set("img", 2, {200, 289, Frame::resized}), contract_error);
  CHECK_THROWS_AS(store.set("img", 2, {100, 100, Frame::original}), contract_error);
}

TEST_CASE("pseudo-label store property: random writes accepted iff croppable") {
  PseudoLabelStore store(128, 64);
  const auto& region = store.region();
  Rng rng(99);
  for (int i = 0; i < 500; ++i) {
    LandmarkPoint p{rng.uniform(-20, 148), rng.uniform(-20, 148), Frame::resized};
    if (region.contains(p)) {
      store.set("x", 0, p);
      CHECK(store.get("x", 0).x == p.x);
    } else {
      CHECK_THROWS_AS(store.set("x", 0, p), contract_error);
    }
  }
}

TEST_CASE("croppable clamp lands inside the region") {
  CroppableRegion region = croppable_region(384, 192);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    LandmarkPoint p{rng.uniform(-500, 900), rng.uniform(-500, 900), Frame::resized};
    CHECK(region.contains(region.clamp(p)));
  }
}
