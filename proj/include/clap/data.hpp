// Dataset records, the rotation/scale/crop augmentation, stratified splits,
// the synthetic blob generator, and the class-per-directory dataset layout.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "clap/errors.hpp"
#include "clap/image.hpp"
#include "clap/parallel.hpp"
#include "clap/random.hpp"
#include "clap/tensor.hpp"

namespace clap {

struct DatasetRecord {
  Image image;  // (3, H, W), values in [0, 1]
  std::size_t label = 0;
  std::string source_id;
};

// Half-open pixel box [x0, x1) x [y0, y1).
struct BoundingBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const BoundingBox&) const = default;
};

// ---- augmentation ------------------------------------------------------------

struct AugmentParams {
  std::size_t canvas = 256;
  std::size_t crop = 224;
  double max_rotation_deg = 25.0;
  double scale_min = 0.75;
  double scale_max = 1.25;
  std::size_t min_input = 32;
};

// Canvas extent that keeps the 256:224 ratio for another crop size.
inline std::size_t canvas_for_crop(std::size_t crop) {
  return static_cast<std::size_t>(std::lround(static_cast<double>(crop) * 256.0 / 224.0));
}

struct AugmentDraw {
  double angle_deg = 0;
  double scale = 1;
  std::size_t offset_x = 0, offset_y = 0;  // crop origin on the canvas
};

inline AugmentDraw draw_augment(Rng& rng, const AugmentParams& p) {
  AugmentDraw d;
  d.angle_deg = rng.uniform(-p.max_rotation_deg, p.max_rotation_deg);
  d.scale = rng.uniform(p.scale_min, p.scale_max);
  d.offset_x = rng.below(p.canvas - p.crop + 1);
  d.offset_y = rng.below(p.canvas - p.crop + 1);
  return d;
}

inline AugmentDraw identity_draw(const AugmentParams& p) {
  return {0.0, 1.0, (p.canvas - p.crop) / 2, (p.canvas - p.crop) / 2};
}

// Rotates and zooms the canvas about its center, then crops. Sampling is
// bilinear with edge replication.
inline Image apply_augment(const Image& img, const AugmentDraw& d, const AugmentParams& p) {
  if (img.rank() != 3) throw ShapeMismatch("augment expects (C,H,W)");
  if (img.dim(1) < p.min_input || img.dim(2) < p.min_input) {
    throw DegenerateInput("image " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(2)) +
                          " is smaller than " + std::to_string(p.min_input) + "x" + std::to_string(p.min_input));
  }
  if (p.crop > p.canvas) throw InvalidConfig("crop larger than canvas");
  const Image canvas = (img.dim(1) == p.canvas && img.dim(2) == p.canvas)
                           ? img
                           : resize_bilinear(img, p.canvas, p.canvas);
  const std::size_t C = img.dim(0), n = p.canvas, s = p.crop;
  const double rad = d.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad) / d.scale, sn = std::sin(rad) / d.scale;
  const double center = n / 2.0;
  Image out({C, s, s});
  for (std::size_t v = 0; v < s; ++v) {
    const double dy = static_cast<double>(d.offset_y + v) + 0.5 - center;
    for (std::size_t u = 0; u < s; ++u) {
      const double dx = static_cast<double>(d.offset_x + u) + 0.5 - center;
      const double xs = cs * dx + sn * dy + center - 0.5;
      const double ys = -sn * dx + cs * dy + center - 0.5;
      const BilinearTap tap = bilinear_tap(n, n, ys, xs);
      for (std::size_t c = 0; c < C; ++c) out[(c * s + v) * s + u] = tap(canvas.ptr() + c * n * n);
    }
  }
  return out;
}

inline DatasetRecord augment(const DatasetRecord& rec, Rng& rng, const AugmentParams& p = {},
                             AugmentDraw* drawn = nullptr) {
  const AugmentDraw d = draw_augment(rng, p);
  if (drawn) *drawn = d;
  return {apply_augment(rec.image, d, p), rec.label, rec.source_id};
}

// ---- splits ------------------------------------------------------------------

struct SplitSpec {
  double train = 0.6, val = 0.2, test = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    for (double f : {train, val, test}) {
      if (!(f >= 0.0 && f <= 1.0)) throw InvalidConfig("split fractions must lie in [0,1]");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) throw InvalidConfig("split fractions must sum to 1");
  }
};

struct SplitResult {
  std::vector<DatasetRecord> train, val, test;
};

// Per-split counts for n records: largest-remainder rounding of the fractions,
// then every split with a positive fraction is lifted to at least one record.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitSpec& spec) {
  const std::array<double, 3> f{spec.train, spec.val, spec.test};
  const std::size_t wanted = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [](double x) { return x > 0; }));
  if (n < wanted) {
    throw InsufficientData("class with " + std::to_string(n) + " records cannot fill " + std::to_string(wanted) +
                           " splits");
  }
  std::array<std::size_t, 3> count{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = f[i] * static_cast<double>(n);
    count[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(count[i]);
    used += count[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++count[order[k % 3]];
  for (int i = 0; i < 3; ++i) {
    if (f[i] > 0 && count[i] == 0) {
      // Borrow from the largest split.
      auto big = std::max_element(count.begin(), count.end());
      --*big;
      count[i] = 1;
    }
  }
  return count;
}

// Stratified, seeded, disjoint partition.
inline SplitResult split(const std::vector<DatasetRecord>& records, const SplitSpec& spec) {
  spec.validate();
  if (records.empty()) throw InsufficientData("no records to split");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);
  SplitResult out;
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(spec.seed, {label}));
    rng.shuffle(idx.begin(), idx.end());
    const auto count = split_counts(idx.size(), spec);
    std::size_t k = 0;
    for (std::size_t i = 0; i < count[0]; ++i) out.train.push_back(records[idx[k++]]);
    for (std::size_t i = 0; i < count[1]; ++i) out.val.push_back(records[idx[k++]]);
    for (std::size_t i = 0; i < count[2]; ++i) out.test.push_back(records[idx[k++]]);
  }
  return out;
}

// ---- synthetic blobs ---------------------------------------------------------

struct SyntheticSet {
  std::vector<DatasetRecord> records;
  std::vector<BoundingBox> boxes;  // one per record
  std::vector<std::string> class_names;

  // Box of the record with this source id; records keep their ids through splits.
  const BoundingBox& box_for(const std::string& source_id) const {
    const std::string prefix = "synthetic/";
    if (source_id.rfind(prefix, 0) != 0) throw InvalidConfig("not a synthetic record '" + source_id + "'");
    const std::size_t i = std::stoul(source_id.substr(prefix.size()));
    if (i >= boxes.size()) throw InvalidConfig("unknown synthetic record '" + source_id + "'");
    return boxes[i];
  }
};

namespace detail {

inline std::array<float, 3> hue_to_rgb(double hue) {
  const double h = 6.0 * (hue - std::floor(hue));
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  std::array<double, 3> rgb{};
  switch (static_cast<int>(h)) {
    case 0: rgb = {1, x, 0}; break;
    case 1: rgb = {x, 1, 0}; break;
    case 2: rgb = {0, 1, x}; break;
    case 3: rgb = {0, x, 1}; break;
    case 4: rgb = {x, 0, 1}; break;
    default: rgb = {1, 0, x}; break;
  }
  return {static_cast<float>(rgb[0]), static_cast<float>(rgb[1]), static_cast<float>(rgb[2])};
}

}  // namespace detail

// One textured disc per image on a dark noise background. Class c has hue
// c/classes and stripe frequency 2 + 2*(c mod 3) cycles across the disc.
inline SyntheticSet make_synthetic(std::size_t classes, std::size_t per_class, std::size_t image_size,
                                   std::uint64_t seed) {
  if (classes < 2) throw InvalidConfig("synthetic set needs at least 2 classes");
  if (per_class == 0) throw InvalidConfig("synthetic set needs at least 1 record per class");
  if (image_size < 16) throw InvalidConfig("synthetic images must be at least 16x16");
  SyntheticSet set;
  for (std::size_t c = 0; c < classes; ++c) set.class_names.push_back("blob" + std::to_string(c));
  const std::size_t total = classes * per_class;
  set.records.resize(total);
  set.boxes.resize(total);
  const double size = static_cast<double>(image_size);
  parallel_for(total, [&](std::size_t i) {
    const std::size_t c = i % classes;
    Rng rng(derive_seed(seed, {i}));
    const auto rgb = detail::hue_to_rgb(static_cast<double>(c) / static_cast<double>(classes));
    const double freq = 2.0 + 2.0 * static_cast<double>(c % 3);
    const double radius = rng.uniform(0.19, 0.28) * size;
    const double cx = rng.uniform(radius, size - radius), cy = rng.uniform(radius, size - radius);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Image img({3, image_size, image_size});
    for (auto& v : img.data()) v = static_cast<float>(rng.uniform(0.0, 0.2));
    BoundingBox box{image_size, image_size, 0, 0};
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy > radius * radius) continue;
        const double stripe = 0.75 + 0.25 * std::sin(2.0 * std::numbers::pi * freq * dx / (2 * radius) + phase);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          img[(ch * image_size + y) * image_size + x] = std::clamp(static_cast<float>(0.1 + 0.9 * rgb[ch] * stripe), 0.0f, 1.0f);
        }
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x + 1);
        box.y1 = std::max(box.y1, y + 1);
      }
    }
    set.records[i] = {std::move(img), c, "synthetic/" + std::to_string(i)};
    set.boxes[i] = box;
  });
  return set;
}

// ---- batches -------------------------------------------------------------------

// Stacks the images of records[idx[begin..end)] into (N, 3, H, W).
template <typename T>
Tensor<T> stack_images(const std::vector<DatasetRecord>& records, const std::vector<std::size_t>& idx,
                       std::size_t begin, std::size_t end) {
  const Image& first = records[idx[begin]].image;
  const std::size_t per = first.size();
  Tensor<T> batch({end - begin, first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t b = begin; b < end; ++b) {
    const Image& img = records[idx[b]].image;
    if (img.shape() != first.shape()) throw ShapeMismatch("records in a batch differ in shape");
    std::copy(img.data().begin(), img.data().end(), batch.ptr() + (b - begin) * per);
  }
  return batch;
}

// ---- directory layout ------------------------------------------------------------

inline const std::string kClassManifest = "classes.txt";

// "index name" per line.
inline void write_class_manifest(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw InvalidConfig("cannot write class manifest '" + path.string() + "'");
  for (std::size_t i = 0; i < names.size(); ++i) out << i << ' ' << names[i] << '\n';
}

inline std::vector<std::string> read_class_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read class manifest '" + path.string() + "'");
  std::vector<std::string> names;
  std::size_t index;
  std::string name;
  while (in >> index >> name) {
    if (index != names.size()) throw InvalidConfig("class manifest indices must be 0..K-1 in order");
    names.push_back(name);
  }
  return names;
}

struct LoadedDataset {
  std::vector<DatasetRecord> records;
  std::vector<std::string> class_names;
};

// Loads root/<class>/<image>. Class indices follow `class_names` when given,
// otherwise sorted directory names. Images are resized to size x size.
inline LoadedDataset load_image_directory(const std::filesystem::path& root, std::size_t size,
                                          std::vector<std::string> class_names = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw EmptyDataset("'" + root.string() + "' is not a directory");
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path().filename().string());
  }
  std::sort(dirs.begin(), dirs.end());
  if (class_names.empty()) class_names = dirs;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < class_names.size(); ++i) index[class_names[i]] = i;

  std::vector<std::pair<std::string, std::size_t>> files;
  for (const auto& d : dirs) {
    auto it = index.find(d);
    if (it == index.end()) throw InvalidConfig("directory '" + d + "' is not a known class");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(root / d)) {
      ImageFormat f;
      if (e.is_regular_file() && image_format_for(e.path().string(), f)) names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    for (const auto& n : names) files.emplace_back(d + "/" + n, it->second);
  }
  if (files.empty()) throw EmptyDataset("no images under '" + root.string() + "'");
  LoadedDataset out;
  out.class_names = std::move(class_names);
  out.records.resize(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    Image img = load_image((root / files[i].first).string());
    if (img.dim(1) != size || img.dim(2) != size) img = resize_bilinear(img, size, size);
    out.records[i] = {std::move(img), files[i].second, files[i].first};
  });
  return out;
}

}  // namespace clap
