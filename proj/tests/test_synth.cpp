#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "luvit/synth.hpp"

using namespace luvit;

namespace {

double chi_square(const std::vector<SyntheticSample>& s, int classes) {
  std::vector<std::vector<double>> table(static_cast<std::size_t>(classes), std::vector<double>(kNumTextures, 0.0));
  std::vector<double> rows(static_cast<std::size_t>(classes), 0.0), cols(kNumTextures, 0.0);
  for (const auto& x : s) {
    table[static_cast<std::size_t>(x.label)][static_cast<std::size_t>(x.background_id)] += 1.0;
    rows[static_cast<std::size_t>(x.label)] += 1.0;
    cols[static_cast<std::size_t>(x.background_id)] += 1.0;
  }
  const double n = static_cast<double>(s.size());
  double chi = 0.0;
  for (int r = 0; r < classes; ++r) {
    for (int c = 0; c < kNumTextures; ++c) {
      const double e = rows[static_cast<std::size_t>(r)] * cols[static_cast<std::size_t>(c)] / n;
      if (e > 0.0) chi += (table[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] - e) *
                          (table[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] - e) / e;
    }
  }
  return chi;
}

}  // namespace

TEST_CASE("gen_dataset") {
  const auto a = gen_dataset(5, 4, 16, 3), b = gen_dataset(5, 4, 16, 3), c = gen_dataset(5, 4, 16, 4);
  REQUIRE(a.size() == 20);
  std::vector<int> counts(4, 0);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == static_cast<int>(i % 4));
    ++counts[static_cast<std::size_t>(a[i].label)];
    CHECK(test::bit_equal(a[i].image.value(), b[i].image.value()));
    CHECK(a[i].fg_mask == b[i].fg_mask);
    differs = differs || !test::bit_equal(a[i].image.value(), c[i].image.value());
    CHECK(a[i].image.shape() == Shape{16, 16, 3});
    CHECK(a[i].image.value().minCoeff() >= 0.0f);
    CHECK(a[i].image.value().maxCoeff() <= 1.0f);
    CHECK(std::count(a[i].fg_mask.begin(), a[i].fg_mask.end(), 1) > 0);

    // The stored parameters regenerate the image exactly.
    CHECK(a[i].fg_mask == render_sprite_mask(a[i].sprite, 16, 16));
    const Tensor<float> again = composite(render_background(a[i].background, 16, 16), a[i].fg_mask, a[i].sprite.color);
    CHECK(test::bit_equal(again.value(), a[i].image.value()));
  }
  CHECK(differs);
  for (int n : counts) CHECK(n == 5);

  // A larger set is a prefix-extension of a smaller one.
  const auto longer = gen_dataset(7, 4, 16, 3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(test::bit_equal(a[i].image.value(), longer[i].image.value()));

  const auto biased = gen_dataset(200, 3, 8, 5, 1.0);
  for (const auto& s : biased) CHECK(s.background_id == s.label);
}

TEST_CASE("sprite shapes are distinct") {
  for (int a = 0; a < kNumShapes; ++a) {
    for (int b = a + 1; b < kNumShapes; ++b) {
      int diff = 0;
      for (int i = 0; i < 41; ++i) {
        for (int j = 0; j < 41; ++j) {
          const double u = -1.0 + i / 20.0, v = -1.0 + j / 20.0;
          diff += sprite_contains(a, u, v) != sprite_contains(b, u, v);
        }
      }
      CHECK_MESSAGE(diff > 20, a << " vs " << b);
    }
  }
  CHECK_THROWS_AS(sprite_contains(kNumShapes, 0, 0), ContractError);
}

TEST_CASE("swap_background") {
  const auto s = gen_dataset(3, 3, 16, 6);
  const SyntheticSample self = swap_background(s[0], s[0], SwapMode::same_class);
  CHECK(test::bit_equal(self.image.value(), s[0].image.value()));

  const SyntheticSample mixed = swap_background(s[0], s[4], SwapMode::random_class);
  CHECK(mixed.label == s[0].label);
  CHECK(mixed.background_id == s[4].background_id);
  CHECK(mixed.fg_mask == s[0].fg_mask);
  const Tensor<float> bg = render_background(s[4].background, 16, 16);
  for (std::size_t p = 0; p < s[0].fg_mask.size(); ++p) {
    for (Index ch = 0; ch < 3; ++ch) {
      const Index k = static_cast<Index>(p) * 3 + ch;
      if (s[0].fg_mask[p]) {
        CHECK(mixed.image[k] == s[0].image[k]);
      } else {
        CHECK(mixed.image[k] == bg[k]);
      }
    }
  }

  CHECK_NOTHROW(swap_background(s[0], s[3], SwapMode::same_class));
  CHECK_THROWS_AS(swap_background(s[0], s[1], SwapMode::same_class), ContractError);
  const auto other = gen_dataset(1, 3, 8, 6);
  CHECK_THROWS_AS(swap_background(s[0], other[0], SwapMode::random_class), ShapeError);
}

TEST_CASE("robustness splits") {
  const auto eval = gen_dataset(100, 9, 8, 7);
  const RobustnessSplits r = make_robustness_splits(eval, 9, 8);
  REQUIRE(r.mixed_same.size() == eval.size());
  REQUIRE(r.mixed_random.size() == eval.size());
  for (std::size_t i = 0; i < eval.size(); ++i) {
    CHECK(r.mixed_same[i].label == eval[i].label);
    CHECK(r.mixed_random[i].label == eval[i].label);
  }
  // The default bias ties background to label; the random split removes that dependence.
  // df = 64: the 0.999 quantile of chi^2 is about 103.
  CHECK(chi_square(eval, 9) > 1000.0);
  CHECK(chi_square(r.mixed_same, 9) > 1000.0);
  CHECK(chi_square(r.mixed_random, 9) < 103.0);

  const RobustnessSplits again = make_robustness_splits(eval, 9, 8);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    CHECK(test::bit_equal(again.mixed_random[i].image.value(), r.mixed_random[i].image.value()));
  }
}

TEST_CASE("split helpers") {
  SynthConfig cfg;
  cfg.n_per_class = 2;
  cfg.n_eval_per_class = 1;
  cfg.classes = 3;
  cfg.image_size = 8;
  const auto train = make_train_split(cfg, 1), eval = make_eval_split(cfg, 1);
  CHECK(train.size() == 6);
  CHECK(eval.size() == 3);
  CHECK_FALSE(test::bit_equal(train[0].image.value(), eval[0].image.value()));
  const ImageSet set = to_image_set(train);
  CHECK(set.size() == 6);
  CHECK(set.labels[4] == train[4].label);
  cfg.n_eval_per_class = 0;
  CHECK_THROWS_AS(make_eval_split(cfg, 1), ConfigError);

  SynthConfig bad;
  bad.classes = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SynthConfig{};
  bad.image_size = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SynthConfig{};
  bad.background_bias = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("save_split and load_split") {
  const auto s = gen_dataset(2, 3, 8, 9);
  const auto dir = std::filesystem::temp_directory_path() / "luvit_split_test";
  std::filesystem::create_directories(dir);
  save_split(s, dir / "x.luvt", dir / "x.csv");
  const auto back = load_split(dir / "x.luvt");
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(test::bit_equal(back[i].image.value(), s[i].image.value()));
    CHECK(back[i].label == s[i].label);
    CHECK(back[i].fg_mask == s[i].fg_mask);
    CHECK(back[i].background_id == s[i].background_id);
    CHECK(test::bit_equal(render_background(back[i].background, 8, 8).value(), render_background(s[i].background, 8, 8).value()));
  }
  std::ifstream csv(dir / "x.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "id,label,background_id");
  std::getline(csv, line);
  CHECK(line == "0,0," + std::to_string(s[0].background_id));
  CHECK_THROWS_AS(save_split({}, dir / "y.luvt", dir / "y.csv"), ContractError);
  CHECK_THROWS(load_split(dir / "missing.luvt"));
  std::filesystem::remove_all(dir);
}
