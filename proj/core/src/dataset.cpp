// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include "duodet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include "duodet/errors.hpp"
#include "duodet/png_io.hpp"
#include "duodet/rng.hpp"
#include "json.hpp"

namespace duodet {

const char* shape_class_name(int class_id) {
  switch (class_id) {
    case 1: return "rectangle";
    case 2: return "ellipse";
    case 3: return "triangle";
  }
  return "?";
}

void DatasetConfig::validate() const {
  if (images < 1) throw ConfigError("dataset: images must be positive");
  if (width < 32 || height < 32) throw ConfigError("dataset: image side must be at least 32");
  if (width % 16 != 0 || height % 16 != 0)
    throw ConfigError("dataset: image sides must be multiples of 16");
  if (min_objects < 1 || max_objects < min_objects)
    throw ConfigError("dataset: object count range is invalid");
  if (!(min_size >= 4 && max_size >= min_size))
    throw ConfigError("dataset: size range is invalid");
  if (max_size > std::min(width, height))
    throw ConfigError("dataset: max_size exceeds the image");
  if (!(max_occlusion >= 0 && max_occlusion < 1))
    throw ConfigError("dataset: max_occlusion must lie in [0,1)");
  if (!(min_containment > 0 && min_containment <= 1))
    throw ConfigError("dataset: min_containment must lie in (0,1]");
  if (place_attempts < 1) throw ConfigError("dataset: place_attempts must be positive");
}

namespace {

struct ShapeGeom {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;
  // triangle vertices (used when class_id == 3)
  double vx[3] = {0, 0, 0}, vy[3] = {0, 0, 0};

  bool contains(double px, double py) const {
    switch (class_id) {
      case 1:
        return std::abs(px - cx) <= w / 2 && std::abs(py - cy) <= h / 2;
      case 2: {
        const double dx = (px - cx) / (w / 2);
        const double dy = (py - cy) / (h / 2);
        return dx * dx + dy * dy <= 1.0;
      }
      case 3: {
        // consistent sign of the cross product against every edge
        double sign = 0;
        for (int i = 0; i < 3; ++i) {
          const int j = (i + 1) % 3;
          const double cross =
              (vx[j] - vx[i]) * (py - vy[i]) - (vy[j] - vy[i]) * (px - vx[i]);
          if (cross == 0) continue;
          if (sign == 0) {
            sign = cross > 0 ? 1 : -1;
          } else if ((cross > 0 ? 1 : -1) != sign) {
            return false;
          }
        }
        return true;
      }
    }
    return false;
  }
};

struct PlacedObject {
  int class_id = 0;
  std::int64_t full_pixels = 0;     // raster size including off-frame parts
  std::int64_t total_pixels = 0;    // in-frame raster size
  std::int64_t visible_pixels = 0;  // not yet covered by later shapes
};

ShapeGeom draw_geometry(const DatasetConfig& cfg, int class_id, Rng& rng) {
  ShapeGeom g;
  g.class_id = class_id;
  const double size =
      std::exp(rng.uniform(std::log(cfg.min_size), std::log(cfg.max_size)));
  double aspect = std::exp(rng.gaussian() * 0.3);
  aspect = std::min(2.0, std::max(0.5, aspect));
  g.w = size * std::sqrt(aspect);
  g.h = size / std::sqrt(aspect);
  g.cx = rng.uniform(0, cfg.width);
  g.cy = rng.uniform(0, cfg.height);
  if (class_id == 3) {
    // apex along the top edge, the other two near the bottom corners
    g.vx[0] = g.cx + rng.uniform(-0.3, 0.3) * g.w;
    g.vy[0] = g.cy - g.h / 2;
    g.vx[1] = g.cx - g.w / 2;
    g.vy[1] = g.cy + g.h / 2 - rng.uniform(0.0, 0.2) * g.h;
    g.vx[2] = g.cx + g.w / 2;
    g.vy[2] = g.cy + g.h / 2;
  }
  return g;
}

/// Raster footprint: total pixel count (frame-independent) plus the in-frame
/// pixel list.
void rasterize(const ShapeGeom& g, int width, int height, std::vector<std::int64_t>& in_frame,
               std::int64_t& total) {
  in_frame.clear();
  total = 0;
  const int x_lo = static_cast<int>(std::floor(g.cx - g.w / 2)) - 1;
  const int x_hi = static_cast<int>(std::ceil(g.cx + g.w / 2)) + 1;
  const int y_lo = static_cast<int>(std::floor(g.cy - g.h / 2)) - 1;
  const int y_hi = static_cast<int>(std::ceil(g.cy + g.h / 2)) + 1;
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      if (!g.contains(x + 0.5, y + 0.5)) continue;
      ++total;
      if (x >= 0 && x < width && y >= 0 && y < height)
        in_frame.push_back(static_cast<std::int64_t>(y) * width + x);
    }
  }
}

void paint_background(const DatasetConfig& cfg, Fmap<float>& img, Rng& rng) {
  float base[3];
  for (auto& b : base) b = static_cast<float>(rng.uniform(0.15, 0.55));
  struct Blob {
    double cx, cy, sigma;
    float tint[3];
  };
  std::vector<Blob> blobs(4);
  for (auto& bl : blobs) {
    bl.cx = rng.uniform(0, cfg.width);
    bl.cy = rng.uniform(0, cfg.height);
    bl.sigma = rng.uniform(cfg.width / 8.0, cfg.width / 3.0);
    for (auto& t : bl.tint) t = static_cast<float>(rng.uniform(-0.15, 0.15));
  }
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      float* px = img.row(img.row_index(0, y, x));
      for (int c = 0; c < 3; ++c) px[c] = base[c];
      for (const auto& bl : blobs) {
        const double d2 = (x - bl.cx) * (x - bl.cx) + (y - bl.cy) * (y - bl.cy);
        const float k = static_cast<float>(std::exp(-d2 / (2 * bl.sigma * bl.sigma)));
        for (int c = 0; c < 3; ++c) px[c] += k * bl.tint[c];
      }
      for (int c = 0; c < 3; ++c) {
        px[c] += static_cast<float>(rng.uniform(-0.03, 0.03));
        px[c] = std::min(1.0f, std::max(0.0f, px[c]));
      }
    }
  }
}

void draw_color(float color[3], Rng& rng) {
  // saturated channels so shapes separate from the mid-tone background
  for (int c = 0; c < 3; ++c)
    color[c] = static_cast<float>(rng.uniform() < 0.5 ? rng.uniform(0.0, 0.25)
                                                      : rng.uniform(0.65, 1.0));
}

}  // namespace

GeneratedImage render_image(const DatasetConfig& cfg, std::uint64_t image_seed,
                            const std::vector<int>& classes) {
  cfg.validate();
  for (int c : classes)
    check_contract(c >= 1 && c <= kNumShapeClasses, "render_image: class id out of range");

  Rng rng(image_seed);
  GeneratedImage out;
  out.image = Fmap<float>(1, cfg.height, cfg.width, 3);
  paint_background(cfg, out.image, rng);

  std::vector<int> owner(static_cast<std::size_t>(cfg.width) * cfg.height, -1);
  std::vector<PlacedObject> placed;
  std::vector<std::int64_t> pixels;

  for (int class_id : classes) {
    bool ok = false;
    for (int attempt = 0; attempt < cfg.place_attempts && !ok; ++attempt) {
      auto geom = draw_geometry(cfg, class_id, rng);
      std::int64_t total = 0;
      rasterize(geom, cfg.width, cfg.height, pixels, total);
      if (total < 16) continue;
      const auto in_frame = static_cast<std::int64_t>(pixels.size());
      if (static_cast<double>(in_frame) < cfg.min_containment * static_cast<double>(total))
        continue;

      // how many pixels of each earlier object this candidate would cover
      std::unordered_map<int, std::int64_t> covered;
      for (auto p : pixels) {
        const int o = owner[static_cast<std::size_t>(p)];
        if (o >= 0) ++covered[o];
      }
      bool occlusion_ok = true;
      for (const auto& [idx, cut] : covered) {
        const auto& obj = placed[static_cast<std::size_t>(idx)];
        const auto hidden_after = obj.total_pixels - (obj.visible_pixels - cut);
        if (static_cast<double>(hidden_after) >
            cfg.max_occlusion * static_cast<double>(obj.total_pixels)) {
          occlusion_ok = false;
          break;
        }
      }
      if (!occlusion_ok) continue;

      float color[3];
      draw_color(color, rng);
      for (auto p : pixels) {
        const int o = owner[static_cast<std::size_t>(p)];
        if (o >= 0) --placed[static_cast<std::size_t>(o)].visible_pixels;
        owner[static_cast<std::size_t>(p)] = static_cast<int>(placed.size());
        float* px = out.image.row(p);
        for (int c = 0; c < 3; ++c) px[c] = color[c];
      }
      placed.push_back(PlacedObject{class_id, total, in_frame, in_frame});
      ok = true;
    }
    // an unplaceable shape is skipped; the image keeps its other objects
  }

  // tight boxes over the pixels that remained visible
  std::vector<Box> boxes(placed.size(), Box{1e30, 1e30, -1e30, -1e30});
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      const int o = owner[static_cast<std::size_t>(y) * cfg.width + x];
      if (o < 0) continue;
      auto& b = boxes[static_cast<std::size_t>(o)];
      b.x1 = std::min(b.x1, static_cast<double>(x));
      b.y1 = std::min(b.y1, static_cast<double>(y));
      b.x2 = std::max(b.x2, static_cast<double>(x + 1));
      b.y2 = std::max(b.y2, static_cast<double>(y + 1));
    }
  }
  std::vector<int> remap(placed.size(), -1);
  for (std::size_t i = 0; i < placed.size(); ++i) {
    if (placed[i].visible_pixels <= 0) continue;  // fully covered, no pixel left
    remap[i] = static_cast<int>(out.objects.size());
    out.objects.push_back(GtObject{boxes[i], placed[i].class_id});
    out.full_pixels.push_back(placed[i].full_pixels);
    out.frame_pixels.push_back(placed[i].total_pixels);
  }
  out.owner.assign(owner.size(), -1);
  for (std::size_t p = 0; p < owner.size(); ++p)
    if (owner[p] >= 0) out.owner[p] = remap[static_cast<std::size_t>(owner[p])];
  return out;
}

std::vector<GeneratedImage> generate_corpus(const DatasetConfig& cfg) {
  cfg.validate();
  Rng meta(mix_seed(cfg.seed, 0x636f7270));
  std::vector<std::int64_t> counts(kNumShapeClasses, 0);
  std::vector<GeneratedImage> out;
  out.reserve(static_cast<std::size_t>(cfg.images));
  for (int i = 0; i < cfg.images; ++i) {
    const int n = meta.uniform_int(cfg.min_objects, cfg.max_objects);
    auto pending = counts;
    std::vector<int> classes;
    for (int k = 0; k < n; ++k) {
      // least-used class, random among ties, keeps the corpus balanced
      std::vector<int> ties;
      std::int64_t best = pending[0];
      for (int c = 1; c < kNumShapeClasses; ++c) best = std::min(best, pending[c]);
      for (int c = 0; c < kNumShapeClasses; ++c)
        if (pending[c] == best) ties.push_back(c);
      const int pick = ties[static_cast<std::size_t>(
          meta.uniform_int(0, static_cast<std::int64_t>(ties.size()) - 1))];
      ++pending[pick];
      classes.push_back(pick + 1);
    }
    auto img = render_image(cfg, mix_seed(cfg.seed, static_cast<std::uint64_t>(i) + 1), classes);
    for (const auto& obj : img.objects) ++counts[obj.class_id - 1];
    out.push_back(std::move(img));
  }
  return out;
}

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  auto corpus = generate_corpus(cfg);
  fs::create_directories(fs::path(out_dir) / "images");

  DatasetManifest manifest;
  for (int c = 1; c <= kNumShapeClasses; ++c)
    manifest.categories.push_back(CategoryRecord{c, shape_class_name(c)});
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "images/img_%06zu.png", i);
    const int id = static_cast<int>(i) + 1;
    write_png((fs::path(out_dir) / name).string(), corpus[i].image);
    manifest.images.push_back(ImageRecord{id, cfg.width, cfg.height, name});
    for (const auto& obj : corpus[i].objects)
      manifest.annotations.push_back(AnnotationRecord{id, obj.class_id, obj.box});
  }
  save_manifest(manifest, (fs::path(out_dir) / "annotations.json").string());
  return manifest;
}

namespace {

using nlohmann::json;

void require_keys(const json& j, std::initializer_list<const char*> keys,
                  const std::string& where) {
  for (const char* k : keys)
    if (!j.contains(k))
      throw ConfigError("annotations: " + where + ": missing key '" + k + "'");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(keys.begin(), keys.end(),
                     [&](const char* k) { return key == k; }) == keys.end())
      throw ConfigError("annotations: " + where + ": unknown key '" + key + "'");
  }
}

int take_int(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number_integer())
    throw ConfigError("annotations: " + where + ": '" + key + "' must be an integer");
  return v.get<int>();
}

double take_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError("annotations: " + where + " must be a number");
  return v.get<double>();
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  json j;
  j["images"] = json::array();
  for (const auto& im : manifest.images)
    j["images"].push_back(
        {{"id", im.id}, {"width", im.width}, {"height", im.height}, {"file", im.file}});
  j["annotations"] = json::array();
  for (const auto& a : manifest.annotations)
    j["annotations"].push_back({{"image_id", a.image_id},
                                {"class_id", a.class_id},
                                {"box", {a.box.x1, a.box.y1, a.box.x2, a.box.y2}}});
  j["categories"] = json::array();
  for (const auto& c : manifest.categories)
    j["categories"].push_back({{"id", c.id}, {"name", c.name}});

  std::ofstream out(path);
  if (!out) throw ConfigError("save_manifest: cannot write " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_manifest: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("load_manifest: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("annotations: top level must be an object");
  require_keys(j, {"images", "annotations", "categories"}, "top level");
  for (const char* k : {"images", "annotations", "categories"})
    if (!j.at(k).is_array())
      throw ConfigError(std::string("annotations: '") + k + "' must be an array");

  DatasetManifest m;
  std::set<int> category_ids;
  for (std::size_t i = 0; i < j["categories"].size(); ++i) {
    const std::string where = "categories[" + std::to_string(i) + "]";
    const auto& c = j["categories"][i];
    if (!c.is_object()) throw ConfigError("annotations: " + where + " must be an object");
    require_keys(c, {"id", "name"}, where);
    CategoryRecord rec;
    rec.id = take_int(c, "id", where);
    if (!c.at("name").is_string())
      throw ConfigError("annotations: " + where + ": 'name' must be a string");
    rec.name = c.at("name").get<std::string>();
    if (rec.id < 1) throw ConfigError("annotations: " + where + ": id must be >= 1");
    if (!category_ids.insert(rec.id).second)
      throw ConfigError("annotations: " + where + ": duplicate category id " +
                        std::to_string(rec.id));
    m.categories.push_back(std::move(rec));
  }

  std::set<int> image_ids;
  for (std::size_t i = 0; i < j["images"].size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    const auto& im = j["images"][i];
    if (!im.is_object()) throw ConfigError("annotations: " + where + " must be an object");
    require_keys(im, {"id", "width", "height", "file"}, where);
    ImageRecord rec;
    rec.id = take_int(im, "id", where);
    rec.width = take_int(im, "width", where);
    rec.height = take_int(im, "height", where);
    if (!im.at("file").is_string())
      throw ConfigError("annotations: " + where + ": 'file' must be a string");
    rec.file = im.at("file").get<std::string>();
    if (rec.width < 1 || rec.height < 1)
      throw ConfigError("annotations: " + where + ": image size must be positive");
    if (!image_ids.insert(rec.id).second)
      throw ConfigError("annotations: " + where + ": duplicate image id " +
                        std::to_string(rec.id));
    m.images.push_back(std::move(rec));
  }

  for (std::size_t i = 0; i < j["annotations"].size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    const auto& a = j["annotations"][i];
    if (!a.is_object()) throw ConfigError("annotations: " + where + " must be an object");
    require_keys(a, {"image_id", "class_id", "box"}, where);
    AnnotationRecord rec;
    rec.image_id = take_int(a, "image_id", where);
    rec.class_id = take_int(a, "class_id", where);
    const auto& box = a.at("box");
    if (!box.is_array() || box.size() != 4)
      throw ConfigError("annotations: " + where + ": 'box' must be [x1,y1,x2,y2]");
    rec.box.x1 = take_number(box[0], where + ".box[0]");
    rec.box.y1 = take_number(box[1], where + ".box[1]");
    rec.box.x2 = take_number(box[2], where + ".box[2]");
    rec.box.y2 = take_number(box[3], where + ".box[3]");
    if (!(rec.box.x2 > rec.box.x1 && rec.box.y2 > rec.box.y1))
      throw ConfigError("annotations: " + where + ": box is degenerate");
    if (image_ids.find(rec.image_id) == image_ids.end())
      throw ConfigError("annotations: " + where + ": unknown image_id " +
                        std::to_string(rec.image_id));
    if (category_ids.find(rec.class_id) == category_ids.end())
      throw ConfigError("annotations: " + where + ": unknown class_id " +
                        std::to_string(rec.class_id));
    m.annotations.push_back(rec);
  }
  return m;
}

std::vector<std::vector<GtObject>> objects_by_image(const DatasetManifest& manifest) {
  std::unordered_map<int, std::size_t> index;
  for (std::size_t i = 0; i < manifest.images.size(); ++i)
    index[manifest.images[i].id] = i;
  std::vector<std::vector<GtObject>> out(manifest.images.size());
  for (const auto& a : manifest.annotations)
    out[index.at(a.image_id)].push_back(GtObject{a.box, a.class_id});
  return out;
}

}  // namespace duodet
