// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include "duodet/dataset.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "duodet/errors.hpp"
#include "duodet/png_io.hpp"
#include "duodet/rng.hpp"

using namespace duodet;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.images = 24;
  cfg.width = 128;
  cfg.height = 128;
  cfg.min_objects = 2;
  cfg.max_objects = 4;
  cfg.min_size = 20;
  cfg.max_size = 56;
  cfg.seed = 11;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "duodet-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

DatasetManifest tiny_manifest() {
  DatasetManifest m;
  m.images = {ImageRecord{1, 64, 64, "images/a.png"}, ImageRecord{2, 64, 64, "images/b.png"}};
  m.annotations = {AnnotationRecord{1, 1, Box{1, 2, 11, 12}},
                   AnnotationRecord{2, 3, Box{4, 4, 20, 24}},
                   AnnotationRecord{2, 2, Box{30, 30, 40, 44}}};
  m.categories = {CategoryRecord{1, "rectangle"}, CategoryRecord{2, "ellipse"},
                  CategoryRecord{3, "triangle"}};
  return m;
}

}  // namespace

TEST_CASE("rendering is deterministic per seed and varies across seeds") {
  auto cfg = small_config();
  auto a = generate_corpus(cfg);
  auto b = generate_corpus(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].objects.size() == b[i].objects.size());
    for (std::size_t k = 0; k < a[i].objects.size(); ++k) {
      CHECK(a[i].objects[k].class_id == b[i].objects[k].class_id);
      CHECK(a[i].objects[k].box.x1 == b[i].objects[k].box.x1);
      CHECK(a[i].objects[k].box.y2 == b[i].objects[k].box.y2);
    }
    for (std::int64_t p = 0; p < a[i].image.size(); ++p)
      REQUIRE(a[i].image.t[p] == b[i].image.t[p]);
  }
  cfg.seed = 12;
  auto c = generate_corpus(cfg);
  bool any_differs = false;
  for (std::int64_t p = 0; p < a[0].image.size(); ++p)
    if (a[0].image.t[p] != c[0].image.t[p]) any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("the corpus balances classes and stays within the object budget") {
  auto cfg = small_config();
  cfg.images = 60;
  auto corpus = generate_corpus(cfg);
  REQUIRE(corpus.size() == 60);
  std::int64_t counts[kNumShapeClasses + 1] = {0, 0, 0, 0};
  std::int64_t total = 0;
  for (const auto& im : corpus) {
    CHECK(im.objects.size() <= static_cast<std::size_t>(cfg.max_objects));
    CHECK(!im.objects.empty());
    for (const auto& o : im.objects) {
      REQUIRE(o.class_id >= 1);
      REQUIRE(o.class_id <= kNumShapeClasses);
      ++counts[o.class_id];
      ++total;
    }
  }
  const auto lo = std::min({counts[1], counts[2], counts[3]});
  const auto hi = std::max({counts[1], counts[2], counts[3]});
  INFO("class counts: ", counts[1], " ", counts[2], " ", counts[3]);
  CHECK(hi - lo <= std::max<std::int64_t>(3, total / 20));
}

TEST_CASE("boxes are tight around the visible pixels of each object") {
  auto cfg = small_config();
  auto corpus = generate_corpus(cfg);
  for (const auto& im : corpus) {
    REQUIRE(im.owner.size() == static_cast<std::size_t>(cfg.width) * cfg.height);
    for (std::size_t i = 0; i < im.objects.size(); ++i) {
      int min_x = cfg.width, min_y = cfg.height, max_x = -1, max_y = -1;
      std::int64_t visible = 0;
      for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
          if (im.owner[static_cast<std::size_t>(y) * cfg.width + x] != static_cast<int>(i))
            continue;
          ++visible;
          min_x = std::min(min_x, x);
          min_y = std::min(min_y, y);
          max_x = std::max(max_x, x);
          max_y = std::max(max_y, y);
        }
      }
      REQUIRE(visible > 0);
      const auto& b = im.objects[i].box;
      CHECK(b.x1 == static_cast<double>(min_x));
      CHECK(b.y1 == static_cast<double>(min_y));
      CHECK(b.x2 == static_cast<double>(max_x + 1));
      CHECK(b.y2 == static_cast<double>(max_y + 1));
    }
  }
}

TEST_CASE("occlusion and containment bounds hold pixel-exactly") {
  auto cfg = small_config();
  cfg.images = 40;
  cfg.max_objects = 5;  // invite overlap
  auto corpus = generate_corpus(cfg);
  std::int64_t occluded_objects = 0;
  for (const auto& im : corpus) {
    REQUIRE(im.full_pixels.size() == im.objects.size());
    REQUIRE(im.frame_pixels.size() == im.objects.size());
    std::vector<std::int64_t> visible(im.objects.size(), 0);
    for (int o : im.owner)
      if (o >= 0) ++visible[static_cast<std::size_t>(o)];
    for (std::size_t i = 0; i < im.objects.size(); ++i) {
      const auto hidden = im.frame_pixels[i] - visible[i];
      REQUIRE(hidden >= 0);
      if (hidden > 0) ++occluded_objects;
      // every placement was vetted against these exact bounds
      CHECK(static_cast<double>(hidden) <=
            cfg.max_occlusion * static_cast<double>(im.frame_pixels[i]));
      CHECK(static_cast<double>(im.frame_pixels[i]) >=
            cfg.min_containment * static_cast<double>(im.full_pixels[i]));
    }
  }
  CHECK(occluded_objects > 0);  // the bound is exercised, not vacuous
}

TEST_CASE("a zero occlusion budget keeps every object fully visible") {
  auto cfg = small_config();
  cfg.max_occlusion = 0.0;
  cfg.images = 12;
  cfg.max_objects = 5;
  auto corpus = generate_corpus(cfg);
  for (const auto& im : corpus) {
    std::vector<std::int64_t> visible(im.objects.size(), 0);
    for (int o : im.owner)
      if (o >= 0) ++visible[static_cast<std::size_t>(o)];
    for (std::size_t i = 0; i < im.objects.size(); ++i)
      CHECK(visible[i] == im.frame_pixels[i]);
  }
}

TEST_CASE("generated pixels stay in range and boxes stay in frame") {
  auto cfg = small_config();
  auto corpus = generate_corpus(cfg);
  for (const auto& im : corpus) {
    for (std::int64_t p = 0; p < im.image.size(); ++p) {
      REQUIRE(im.image.t[p] >= 0.0f);
      REQUIRE(im.image.t[p] <= 1.0f);
    }
    for (const auto& o : im.objects) {
      CHECK(o.box.valid());
      CHECK(o.box.x1 >= 0);
      CHECK(o.box.y1 >= 0);
      CHECK(o.box.x2 <= cfg.width);
      CHECK(o.box.y2 <= cfg.height);
    }
  }
}

TEST_CASE("dataset export and manifest reload round trip") {
  auto cfg = small_config();
  cfg.images = 6;
  auto dir = fresh_dir("dataset-export");
  auto manifest = generate_dataset(cfg, dir.string());
  REQUIRE(manifest.images.size() == 6);
  REQUIRE(manifest.categories.size() == 3);
  CHECK(!manifest.annotations.empty());

  auto loaded = load_manifest((dir / "annotations.json").string());
  REQUIRE(loaded.images.size() == manifest.images.size());
  REQUIRE(loaded.annotations.size() == manifest.annotations.size());
  for (std::size_t i = 0; i < manifest.annotations.size(); ++i) {
    CHECK(loaded.annotations[i].image_id == manifest.annotations[i].image_id);
    CHECK(loaded.annotations[i].class_id == manifest.annotations[i].class_id);
    CHECK(loaded.annotations[i].box.x2 == manifest.annotations[i].box.x2);
  }

  auto grouped = objects_by_image(loaded);
  REQUIRE(grouped.size() == loaded.images.size());
  std::size_t regrouped = 0;
  for (const auto& g : grouped) regrouped += g.size();
  CHECK(regrouped == loaded.annotations.size());

  // every referenced PNG exists and decodes to the recorded size
  for (const auto& rec : loaded.images) {
    auto img = read_png((dir / rec.file).string());
    CHECK(img.w == rec.width);
    CHECK(img.h == rec.height);
  }
}

TEST_CASE("manifest validation names the offending record") {
  auto dir = fresh_dir("manifest-validate");
  const auto path = (dir / "annotations.json").string();

  SUBCASE("unknown key") {
    save_manifest(tiny_manifest(), path);
    auto text = slurp(path);
    auto at = text.find("\"image_id\"");
    REQUIRE(at != std::string::npos);
    text.replace(at, 10, "\"imageid_\"");
    spit(path, text);
    try {
      load_manifest(path);
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("annotations[0]") != std::string::npos);
    }
  }
  SUBCASE("dangling image reference") {
    auto m = tiny_manifest();
    m.annotations[1].image_id = 99;
    save_manifest(m, path);
    CHECK_THROWS_AS(load_manifest(path), ConfigError);
  }
  SUBCASE("dangling category reference") {
    auto m = tiny_manifest();
    m.annotations[0].class_id = 7;
    save_manifest(m, path);
    CHECK_THROWS_AS(load_manifest(path), ConfigError);
  }
  SUBCASE("duplicate image id") {
    auto m = tiny_manifest();
    m.images[1].id = 1;
    save_manifest(m, path);
    CHECK_THROWS_AS(load_manifest(path), ConfigError);
  }
  SUBCASE("degenerate box") {
    auto m = tiny_manifest();
    m.annotations[0].box = Box{10, 10, 10, 20};
    save_manifest(m, path);
    CHECK_THROWS_AS(load_manifest(path), ConfigError);
  }
  SUBCASE("wrong type") {
    save_manifest(tiny_manifest(), path);
    auto text = slurp(path);
    auto at = text.find("\"width\": 64");
    REQUIRE(at != std::string::npos);
    text.replace(at, 11, "\"width\": \"64\"");
    spit(path, text);
    CHECK_THROWS_AS(load_manifest(path), ConfigError);
  }
  SUBCASE("not json at all") {
    spit(path, "[[[");
    CHECK_THROWS_AS(load_manifest(path), ConfigError);
  }
}

TEST_CASE("png io round trips within quantization error") {
  auto dir = fresh_dir("png");
  Rng rng(5);
  Fmap<float> img(1, 48, 64, 3);
  for (std::int64_t i = 0; i < img.size(); ++i)
    img.t[i] = static_cast<float>(rng.uniform());
  const auto path = (dir / "x.png").string();
  write_png(path, img);
  auto back = read_png(path);
  REQUIRE(back.h == 48);
  REQUIRE(back.w == 64);
  for (std::int64_t i = 0; i < img.size(); ++i)
    REQUIRE(std::abs(back.t[i] - img.t[i]) <= 0.5f / 255.0f + 1e-6f);
  CHECK_THROWS_AS(read_png((dir / "missing.png").string()), ConfigError);
}

TEST_CASE("dataset configuration is validated") {
  auto bad = small_config();
  bad.width = 100;  // not a multiple of 16
  CHECK_THROWS_AS(generate_corpus(bad), ConfigError);
  bad = small_config();
  bad.max_occlusion = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.min_size = 90;
  bad.max_size = 60;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.min_objects = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
