// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "duodet/proposals.hpp"
#include "duodet/tensor.hpp"

// Synthetic shape corpus. Every image is a textured background with one to a
// few solid shapes; boxes annotate the visible pixels of each shape, so a
// partially occluded object carries a tight box around what actually shows.
namespace duodet {

inline constexpr int kNumShapeClasses = 3;

/// Class ids are 1-based; 0 is reserved for background.
const char* shape_class_name(int class_id);

struct DatasetConfig {
  int images = 200;
  int width = 256;
  int height = 256;
  int min_objects = 1;
  int max_objects = 4;
  double min_size = 24;
  double max_size = 120;
  double max_occlusion = 0.3;    // per object, fraction of its pixels hidden
  double min_containment = 0.8;  // fraction of shape pixels inside the frame
  int place_attempts = 20;
  std::uint64_t seed = 7;

  void validate() const;
};

struct GeneratedImage {
  Fmap<float> image;  // (1,h,w,3) in [0,1]
  std::vector<GtObject> objects;
  // Instance diagnostics, aligned with objects: per-pixel owner index (row
  // major, -1 for background), the full rasterized pixel count of each shape,
  // and its in-frame part before later shapes occluded it.
  std::vector<int> owner;
  std::vector<std::int64_t> full_pixels, frame_pixels;
};

/// Renders one image. The classes argument fixes the shapes to attempt, in
/// placement order; shapes that cannot be placed within the attempt budget
/// are skipped.
GeneratedImage render_image(const DatasetConfig& cfg, std::uint64_t image_seed,
                            const std::vector<int>& classes);

/// Renders the full corpus in memory with class counts balanced across the
/// dataset.
std::vector<GeneratedImage> generate_corpus(const DatasetConfig& cfg);

struct ImageRecord {
  int id = 0;
  int width = 0;
  int height = 0;
  std::string file;
};

struct AnnotationRecord {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

struct CategoryRecord {
  int id = 0;
  std::string name;
};

struct DatasetManifest {
  std::vector<ImageRecord> images;
  std::vector<AnnotationRecord> annotations;
  std::vector<CategoryRecord> categories;
};

/// Renders the corpus to out_dir: one PNG per image under images/ plus an
/// annotations.json manifest.
DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::string& path);

/// Parses and validates a manifest. Unknown keys, missing fields, bad types,
/// duplicate ids, and dangling references are all rejected with an error
/// naming the offending record.
DatasetManifest load_manifest(const std::string& path);

/// Groups annotations by image id, ordered like manifest.images.
std::vector<std::vector<GtObject>> objects_by_image(const DatasetManifest& manifest);

}  // namespace duodet
