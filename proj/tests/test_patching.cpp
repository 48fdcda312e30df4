#include <doctest.h>

#include <algorithm>

#include "patchforge/patching.hpp"
#include "support.hpp"

using namespace patchforge;
using namespace testsupport;

TEST_CASE("plan_placements geometry") {
  // side = 0.2 * sqrt(10000) = 20, centered at (50,50)
  const auto placements =
      plan_placements({BBox(0, 0, 100, 100)}, 20, 0.2, 200, 200);
  REQUIRE(placements.size() == 1);
  CHECK(placements[0].patch_region == BBox(40, 40, 60, 60));
  CHECK(placements[0].scale == doctest::Approx(0.2));

  CHECK(plan_placements({}, 20, 0.2, 100, 100).empty());

  // a box hugging the left edge gets clipped to x1 >= 0
  const auto clipped =
      plan_placements({BBox(0, 40, 10, 50)}, 8, 2.0, 100, 100);
  REQUIRE(clipped.size() == 1);
  CHECK(clipped[0].patch_region.x1 == doctest::Approx(0.0));
  CHECK(clipped[0].patch_region.x1 >= 0.0);

  CHECK_THROWS_AS(plan_placements({BBox(0, 0, 10, 10)}, 8, 0.0, 100, 100),
                  std::invalid_argument);
  CHECK_THROWS_AS(plan_placements({BBox(0, 0, 10, 10)}, 8, -1.0, 100, 100),
                  std::invalid_argument);
}

TEST_CASE("plan_placements drops placements clipped to zero area") {
  // degenerate target box: zero area, zero side
  CHECK(plan_placements({BBox(5, 5, 5, 5)}, 8, 0.5, 100, 100).empty());
  // box fully outside the image: clipped away
  CHECK(plan_placements({BBox(200, 200, 240, 240)}, 8, 0.5, 100, 100).empty());
}

TEST_CASE("apply_patch identity and full-cover cases") {
  RandomStream rng(5);
  ImageGrid img = ImageGrid::filled(16, 16, 0.0);
  for (double& v : img.pixels) v = rng.uniform();

  // no placements: output bit-identical
  CHECK(apply_patch(img, {}, Patch::constant(4, 0.7)).pixels == img.pixels);

  // placement covering the whole image with a constant patch
  const auto all = plan_placements({BBox(0, 0, 16, 16)}, 4, 1.0, 16, 16);
  const ImageGrid covered = apply_patch(img, all, Patch::constant(4, 0.5));
  for (double v : covered.pixels) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("apply_patch confines changes to the placement union") {
  RandomStream rng(6);
  ImageGrid img = ImageGrid::filled(32, 32, 0.25);
  Patch patch = Patch::uniform_random(5, rng);
  const std::vector<Placement> placements = {
      {BBox(2, 2, 10, 10), BBox(2, 2, 10, 10), 1.0},
      {BBox(20, 20, 30, 30), BBox(20, 20, 30, 30), 1.0},
  };
  const ImageGrid out = apply_patch(img, placements, patch);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const bool inside = (x >= 2 && x < 10 && y >= 2 && y < 10) ||
                          (x >= 20 && x < 30 && y >= 20 && y < 30);
      for (int c = 0; c < kChannels; ++c) {
        if (!inside) {
          CHECK(out.at(y, x, c) == img.at(y, x, c));
        }
      }
    }
  }
  // range is preserved
  for (double v : out.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("overlapping placements: the later one wins and gets the gradient") {
  ImageGrid img = ImageGrid::filled(16, 16, 0.0);
  const std::vector<Placement> placements = {
      {BBox(0, 0, 8, 8), BBox(0, 0, 8, 8), 1.0},
      {BBox(4, 4, 12, 12), BBox(4, 4, 12, 12), 1.0},
  };
  const auto applied =
      apply_patch_traced(img, placements, Patch::constant(4, 1.0));
  CHECK(applied.owner[5 * 16 + 5] == 1);  // overlap region owned by the later
  CHECK(applied.owner[1 * 16 + 1] == 0);
  CHECK(applied.owner[15 * 16 + 15] == -1);
}

TEST_CASE("apply_patch gradient matches finite differences on a 4x4 patch") {
  RandomStream rng(7);
  ImageGrid img = ImageGrid::filled(24, 24, 0.0);
  for (double& v : img.pixels) v = rng.uniform();
  const auto placements =
      plan_placements({BBox(4, 4, 18, 18)}, 4, 0.8, 24, 24);
  REQUIRE(placements.size() == 1);

  // random linear functional over the output image
  std::vector<double> w(img.pixels.size());
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  Patch patch = Patch::uniform_random(4, rng);

  auto forward = [&](const Patch& p) {
    const ImageGrid out = apply_patch(img, placements, p);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
      acc += w[i] * out.pixels[i];
    }
    return acc;
  };

  const auto applied = apply_patch_traced(img, placements, patch);
  std::vector<double> analytic(patch.pixels.size(), 0.0);
  accumulate_patch_gradient(applied, placements, patch.side, w, analytic);
  const auto numeric = central_difference_gradient(forward, patch);
  CHECK(max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("patch pixels outside placements receive no gradient") {
  ImageGrid img = ImageGrid::filled(32, 32, 0.3);
  const auto placements = plan_placements({BBox(0, 0, 8, 8)}, 6, 1.0, 32, 32);
  Patch patch = Patch::constant(6, 0.5);
  const auto applied = apply_patch_traced(img, placements, patch);

  // gradient concentrated outside the placement window
  std::vector<double> w(img.pixels.size(), 0.0);
  for (int y = 16; y < 32; ++y) {
    for (int x = 16; x < 32; ++x) {
      for (int c = 0; c < kChannels; ++c) {
        w[(static_cast<std::size_t>(y) * 32 + x) * kChannels + c] = 1.0;
      }
    }
  }
  std::vector<double> grad(patch.pixels.size(), 0.0);
  accumulate_patch_gradient(applied, placements, patch.side, w, grad);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("pspp identity and padded composite") {
  RandomStream rng(42, "pspp");
  ImageGrid img = ImageGrid::filled(48, 64, 0.0);
  RandomStream pix(1);
  for (double& v : img.pixels) v = pix.uniform();
  img.id = "src";

  // probability 0: identity
  {
    const auto res = pspp(img, 128, 128, 0.0, 0.5, rng);
    CHECK_FALSE(res.padded);
    CHECK(res.image.pixels == img.pixels);
  }

  // probability 1: the source window is bit-exact, the rest is fill
  {
    const auto res = pspp(img, 1920, 1920, 1.0, 0.5, rng);
    REQUIRE(res.padded);
    CHECK(res.image.height == 1920);
    CHECK(res.image.width == 1920);
    CHECK(res.offset_x == (1920 - 64) / 2);
    CHECK(res.offset_y == (1920 - 48) / 2);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        for (int c = 0; c < kChannels; ++c) {
          CHECK(res.image.at(y + res.offset_y, x + res.offset_x, c) ==
                img.at(y, x, c));
        }
      }
    }
    CHECK(res.image.at(0, 0, 0) == doctest::Approx(0.5));
    CHECK(res.image.at(1919, 1919, 2) == doctest::Approx(0.5));
    CHECK(res.image.id == "src");
  }

  // target smaller than the image is rejected
  CHECK_THROWS_AS(pspp(img, 32, 128, 0.5, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS(pspp(img, 128, 32, 0.5, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS(pspp(img, 128, 128, 1.5, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS(pspp(img, 128, 128, 0.5, -0.1, rng), std::invalid_argument);
}

TEST_CASE("pspp padded fraction concentrates around the probability") {
  RandomStream rng(0, "pspp");
  const ImageGrid img = ImageGrid::filled(8, 8, 0.2);
  int padded = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    if (pspp(img, 16, 16, 0.5, 0.5, rng).padded) ++padded;
  }
  const double fraction = static_cast<double>(padded) / draws;
  CHECK(fraction >= 0.48);
  CHECK(fraction <= 0.52);
}

TEST_CASE("cutout zeroes exactly the sampled window") {
  RandomStream rng(3, "cutout");
  const Patch patch = Patch::constant(10, 0.8);
  const CutoutRegion region = sample_cutout(10, 0.4, rng);
  CHECK(region.x1 - region.x0 == 4);
  CHECK(region.y1 - region.y0 == 4);
  const Patch cut = apply_cutout(patch, region);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 10; ++x) {
      for (int c = 0; c < kChannels; ++c) {
        if (region.contains(y, x)) {
          CHECK(cut.at(y, x, c) == 0.0);
        } else {
          CHECK(cut.at(y, x, c) == doctest::Approx(0.8));
        }
      }
    }
  }
  CHECK_THROWS_AS(sample_cutout(10, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_cutout(10, 1.5, rng), std::invalid_argument);
}
