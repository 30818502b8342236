#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "caepl/rng.hpp"
#include "caepl/tensor.hpp"

namespace caepl {

inline constexpr int kVoidLabel = 255;

// Planar CHW float image with values in [0,1].
struct Image {
  int channels = 0, height = 0, width = 0;
  std::vector<float> values;

  float at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

struct SegSample {
  Image image;
  std::vector<int> label;  // height*width entries in [0,K) or kVoidLabel; empty = none
  std::string id;
};

struct Dataset {
  std::vector<SegSample> samples;
  int num_classes = 0;
  int void_label = kVoidLabel;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

// ---------------------------------------------------------------------------
// Synthetic desk-scale dataset: colored geometric shapes over a textured
// background, labels exact by construction.
// ---------------------------------------------------------------------------
struct SyntheticSpec {
  int size = 64;            // square images
  int num_classes = 5;      // background + up to 4 shape kinds
  int shapes_per_image = 3;
  double noise = 0.05;      // uniform amplitude added before quantization
  int train_count = 200;
  int val_count = 50;
  std::uint64_t seed = 1;
  int void_border = 0;      // label-only void frame width, 0 = none
};

struct ShapeDesc {
  enum class Kind { Circle, Rect, Triangle, Line } kind = Kind::Circle;
  int class_id = 1;
  double p[7] = {0};  // circle: cx,cy,r | rect: x0,y0,x1,y1 | tri: 3 vertices | line: x0,y0,x1,y1,t
  float color[3] = {0, 0, 0};
};

namespace detail {

inline bool shape_contains(const ShapeDesc& s, double px, double py) {
  switch (s.kind) {
    case ShapeDesc::Kind::Circle: {
      const double dx = px - s.p[0], dy = py - s.p[1];
      return dx * dx + dy * dy <= s.p[2] * s.p[2];
    }
    case ShapeDesc::Kind::Rect:
      return px >= s.p[0] && px < s.p[2] && py >= s.p[1] && py < s.p[3];
    case ShapeDesc::Kind::Triangle: {
      const double x0 = s.p[0], y0 = s.p[1], x1 = s.p[2], y1 = s.p[3], x2 = s.p[4], y2 = s.p[5];
      const double d0 = (px - x1) * (y0 - y1) - (x0 - x1) * (py - y1);
      const double d1 = (px - x2) * (y1 - y2) - (x1 - x2) * (py - y2);
      const double d2 = (px - x0) * (y2 - y0) - (x2 - x0) * (py - y0);
      const bool neg = d0 < 0 || d1 < 0 || d2 < 0;
      const bool pos = d0 > 0 || d1 > 0 || d2 > 0;
      return !(neg && pos);
    }
    case ShapeDesc::Kind::Line: {
      const double x0 = s.p[0], y0 = s.p[1], x1 = s.p[2], y1 = s.p[3], half = s.p[4] * 0.5;
      const double vx = x1 - x0, vy = y1 - y0;
      const double len2 = vx * vx + vy * vy;
      double t = len2 > 0 ? ((px - x0) * vx + (py - y0) * vy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double dx = px - (x0 + t * vx), dy = py - (y0 + t * vy);
      return dx * dx + dy * dy <= half * half;
    }
  }
  return false;
}

inline float quantize8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

}  // namespace detail

// Label map from geometry alone; later shapes overwrite earlier ones.
inline std::vector<int> label_from_shapes(const std::vector<ShapeDesc>& shapes, int size,
                                          int void_border = 0) {
  std::vector<int> label(static_cast<std::size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      for (const auto& s : shapes)
        if (detail::shape_contains(s, px, py)) label[static_cast<std::size_t>(y) * size + x] = s.class_id;
    }
  if (void_border > 0) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (y < void_border || x < void_border || y >= size - void_border ||
            x >= size - void_border)
          label[static_cast<std::size_t>(y) * size + x] = kVoidLabel;
  }
  return label;
}

// Per-sample provenance: everything needed to re-derive the sample.
struct SyntheticProvenance {
  std::string id;
  std::vector<ShapeDesc> shapes;
};

struct SyntheticData {
  Dataset train, val;
  std::vector<SyntheticProvenance> train_shapes, val_shapes;
};

namespace detail {

inline std::vector<ShapeDesc> make_shapes(const SyntheticSpec& spec, int image_index,
                                          RngStream& rng) {
  const int kinds = spec.num_classes - 1;
  const double sz = spec.size;
  // class base colors: circle red, rect green, triangle blue, line yellow
  static constexpr float kBase[4][3] = {
      {0.85f, 0.20f, 0.20f}, {0.20f, 0.80f, 0.25f}, {0.20f, 0.30f, 0.85f}, {0.90f, 0.85f, 0.20f}};
  std::vector<ShapeDesc> shapes;
  for (int j = 0; j < spec.shapes_per_image; ++j) {
    ShapeDesc s;
    s.class_id = 1 + (image_index + j) % kinds;  // cycling guarantees coverage
    s.kind = static_cast<ShapeDesc::Kind>(s.class_id - 1);
    switch (s.kind) {
      case ShapeDesc::Kind::Circle:
        s.p[0] = rng.uniform(0.25, 0.75) * sz;
        s.p[1] = rng.uniform(0.25, 0.75) * sz;
        s.p[2] = rng.uniform(0.16, 0.26) * sz;
        break;
      case ShapeDesc::Kind::Rect: {
        s.p[0] = rng.uniform(0.08, 0.5) * sz;
        s.p[1] = rng.uniform(0.08, 0.5) * sz;
        s.p[2] = s.p[0] + rng.uniform(0.25, 0.42) * sz;
        s.p[3] = s.p[1] + rng.uniform(0.25, 0.42) * sz;
        break;
      }
      case ShapeDesc::Kind::Triangle: {
        const double cx = rng.uniform(0.3, 0.7) * sz, cy = rng.uniform(0.3, 0.7) * sz;
        for (int v = 0; v < 3; ++v) {
          const double ang = rng.uniform(0, 2 * 3.14159265358979) ;
          const double rad = rng.uniform(0.18, 0.3) * sz;
          s.p[2 * v] = cx + rad * std::cos(ang);
          s.p[2 * v + 1] = cy + rad * std::sin(ang);
        }
        break;
      }
      case ShapeDesc::Kind::Line: {
        s.p[0] = rng.uniform(0.05, 0.3) * sz;
        s.p[1] = rng.uniform(0.05, 0.95) * sz;
        s.p[2] = rng.uniform(0.7, 0.95) * sz;
        s.p[3] = rng.uniform(0.05, 0.95) * sz;
        s.p[4] = std::max(4.5, rng.uniform(0.09, 0.13) * sz);
        break;
      }
    }
    const float* base = kBase[s.class_id - 1];
    for (int c = 0; c < 3; ++c)
      s.color[c] = static_cast<float>(std::clamp(base[c] + rng.uniform(-0.1, 0.1), 0.0, 1.0));
    shapes.push_back(s);
  }
  return shapes;
}

inline SegSample rasterize_sample(const SyntheticSpec& spec, const std::vector<ShapeDesc>& shapes,
                                  RngStream& rng, std::string id) {
  const int size = spec.size;
  SegSample out;
  out.id = std::move(id);
  out.image.channels = 3;
  out.image.height = out.image.width = size;
  out.image.values.assign(static_cast<std::size_t>(3) * size * size, 0.0f);

  // textured background: slanted sinusoid around a grey-blue base
  const double ax = rng.uniform(0.5, 2.0), ay = rng.uniform(0.5, 2.0);
  const double phase = rng.uniform(0, 2 * 3.14159265358979);
  const double base[3] = {rng.uniform(0.38, 0.52), rng.uniform(0.42, 0.56), rng.uniform(0.46, 0.6)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double wave =
          0.1 * std::sin(2 * 3.14159265358979 * (ax * x + ay * y) / size + phase);
      for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = static_cast<float>(base[c] + wave);
    }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const ShapeDesc* hit = nullptr;
      for (const auto& s : shapes)
        if (detail::shape_contains(s, px, py)) hit = &s;
      if (hit)
        for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = hit->color[c];
    }
  // element-wise noise, then 8-bit quantization so file round-trips are exact
  for (auto& v : out.image.values)
    v = detail::quantize8(static_cast<double>(v) + rng.uniform(-spec.noise, spec.noise));

  out.label = label_from_shapes(shapes, size, spec.void_border);
  return out;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.size < 16) throw ConfigError("synthetic: size too small to place shapes");
  if (spec.num_classes < 2 || spec.num_classes > 5)
    throw ConfigError("synthetic: num_classes must be in [2,5]");
  if (spec.shapes_per_image < 1) throw ConfigError("synthetic: need at least one shape per image");
  if (spec.train_count * spec.shapes_per_image < spec.num_classes - 1)
    throw ConfigError("synthetic: too few training shapes to cover every class");

  SyntheticData out;
  RngStream root(spec.seed);
  auto fill = [&](Dataset& ds, std::vector<SyntheticProvenance>& prov, int count,
                  std::uint64_t tag, const char* prefix) {
    ds.num_classes = spec.num_classes;
    for (int i = 0; i < count; ++i) {
      RngStream rng = root.derive(tag, static_cast<std::uint64_t>(i));
      char id[32];
      std::snprintf(id, sizeof(id), "%s_%05d", prefix, i);
      auto shapes = detail::make_shapes(spec, i, rng);
      ds.samples.push_back(detail::rasterize_sample(spec, shapes, rng, id));
      prov.push_back({id, std::move(shapes)});
    }
  };
  fill(out.train, out.train_shapes, spec.train_count, 0x7261696E, "train");
  fill(out.val, out.val_shapes, spec.val_count, 0x76616C, "val");

  std::set<int> seen;
  for (const auto& s : out.train.samples)
    for (int l : s.label)
      if (l != kVoidLabel) seen.insert(l);
  for (int k = 0; k < spec.num_classes; ++k)
    if (!seen.count(k))
      throw ConfigError("synthetic: class " + std::to_string(k) +
                        " never appears in the training split");
  return out;
}

// Re-derives one sample from its provenance (oracle hook for the generator).
inline SegSample rerasterize(const SyntheticSpec& spec, std::uint64_t sample_tag, int index,
                             const SyntheticProvenance& prov) {
  RngStream rng = RngStream(spec.seed).derive(sample_tag, static_cast<std::uint64_t>(index));
  auto shapes = detail::make_shapes(spec, index, rng);
  return detail::rasterize_sample(spec, shapes, rng, prov.id);
}

// ---------------------------------------------------------------------------
// Netpbm (P6/P5) raster IO: lossless 8-bit, no external dependencies.
// ---------------------------------------------------------------------------
namespace detail {

inline int pnm_next_int(std::istream& in) {
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      break;
    }
  }
  if (c == EOF) throw DataError("netpbm: truncated header");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw DataError("netpbm: malformed header");
  return value;
}

}  // namespace detail

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw DataError("write_ppm: image must have 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x) * 3 + c] = static_cast<unsigned char>(
            std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw DataError("'" + path.string() + "' is not a P6 ppm file");
  const int w = detail::pnm_next_int(in);
  const int h = detail::pnm_next_int(in);
  const int maxval = detail::pnm_next_int(in);
  if (maxval != 255) throw DataError("'" + path.string() + "' must be 8-bit (maxval 255)");
  Image img{.channels = 3, .height = h, .width = w};
  img.values.resize(static_cast<std::size_t>(3) * h * w);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw DataError("'" + path.string() + "' is truncated");
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c]) / 255.0f;
  }
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const std::vector<int>& label, int h,
                      int w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int v = label[static_cast<std::size_t>(y) * w + x];
      if (v < 0 || v > 255) throw DataError("write_pgm: label value outside [0,255]");
      row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(v);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline std::vector<int> read_pgm(const std::filesystem::path& path, int& h, int& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5') throw DataError("'" + path.string() + "' is not a P5 pgm file");
  w = detail::pnm_next_int(in);
  h = detail::pnm_next_int(in);
  const int maxval = detail::pnm_next_int(in);
  if (maxval != 255) throw DataError("'" + path.string() + "' must be 8-bit (maxval 255)");
  std::vector<int> label(static_cast<std::size_t>(h) * w);
  std::vector<unsigned char> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw DataError("'" + path.string() + "' is truncated");
    for (int x = 0; x < w; ++x) label[static_cast<std::size_t>(y) * w + x] = row[x];
  }
  return label;
}

// ---------------------------------------------------------------------------
// Directory loader: images and labels paired by filename stem, lexicographic
// order. Labels must already use train-id encoding with 255 as void.
// ---------------------------------------------------------------------------
inline Dataset load_image_label_dirs(const std::filesystem::path& image_dir,
                                     const std::filesystem::path& label_dir, int num_classes) {
  namespace fs = std::filesystem;
  auto list_stems = [](const fs::path& dir) {
    std::map<std::string, fs::path> stems;
    if (!fs::exists(dir)) return stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const auto stem = entry.path().stem().string();
      if (stems.count(stem))
        throw DataError("duplicate stem '" + stem + "' in " + dir.string());
      stems.emplace(stem, entry.path());
    }
    return stems;
  };
  auto images = list_stems(image_dir);
  auto labels = list_stems(label_dir);

  std::vector<std::string> unpaired;
  for (const auto& [stem, p] : images)
    if (!labels.count(stem)) unpaired.push_back(stem + " (image)");
  for (const auto& [stem, p] : labels)
    if (!images.count(stem)) unpaired.push_back(stem + " (label)");
  if (!unpaired.empty()) {
    std::string msg = "unpaired files:";
    for (const auto& s : unpaired) msg += " " + s;
    throw DataError(msg);
  }

  Dataset ds;
  ds.num_classes = num_classes;
  if (images.empty()) {
    std::cerr << "caepl: warning: no samples under " << image_dir << "\n";
    return ds;
  }
  for (const auto& [stem, ipath] : images) {  // std::map iterates in stem order
    SegSample sample;
    sample.id = stem;
    sample.image = read_ppm(ipath);
    int h = 0, w = 0;
    sample.label = read_pgm(labels.at(stem), h, w);
    if (h != sample.image.height || w != sample.image.width)
      throw DataError("sample '" + stem + "': image and label extents differ");
    for (int v : sample.label)
      if (v != kVoidLabel && (v < 0 || v >= num_classes))
        throw DataError("sample '" + stem + "': label value " + std::to_string(v) +
                        " outside [0," + std::to_string(num_classes) + ") and not void");
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  for (const auto& s : ds.samples) {
    write_ppm(root / "images" / (s.id + ".ppm"), s.image);
    if (!s.label.empty())
      write_pgm(root / "labels" / (s.id + ".pgm"), s.label, s.image.height, s.image.width);
  }
}

// ---------------------------------------------------------------------------
// Downscaling: images by area averaging, labels by nearest neighbor (the
// top-left sample of each block), void preserved.
// ---------------------------------------------------------------------------
inline SegSample downscale(const SegSample& sample, int factor) {
  if (factor < 1) throw ParamError("downscale: factor must be >= 1");
  if (factor == 1) return sample;
  const Image& src = sample.image;
  if (src.height % factor != 0 || src.width % factor != 0)
    throw ShapeError("downscale: extents " + std::to_string(src.height) + "x" +
                     std::to_string(src.width) + " not divisible by " + std::to_string(factor));
  SegSample out;
  out.id = sample.id;
  out.image.channels = src.channels;
  out.image.height = src.height / factor;
  out.image.width = src.width / factor;
  out.image.values.resize(static_cast<std::size_t>(src.channels) * out.image.height *
                          out.image.width);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < out.image.height; ++y)
      for (int x = 0; x < out.image.width; ++x) {
        double acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += src.at(c, y * factor + dy, x * factor + dx);
        out.image.at(c, y, x) = static_cast<float>(acc * inv);
      }
  if (!sample.label.empty()) {
    out.label.resize(static_cast<std::size_t>(out.image.height) * out.image.width);
    for (int y = 0; y < out.image.height; ++y)
      for (int x = 0; x < out.image.width; ++x)
        out.label[static_cast<std::size_t>(y) * out.image.width + x] =
            sample.label[static_cast<std::size_t>(y) * factor * src.width + x * factor];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching: per-epoch permutation fully determined by (shuffle_seed, epoch);
// the final short batch is kept.
// ---------------------------------------------------------------------------
inline std::vector<std::vector<int>> batch_indices(int n_samples, int batch_size,
                                                   std::uint64_t shuffle_seed, int epoch) {
  if (batch_size < 1) throw ParamError("batches: batch_size must be >= 1");
  std::vector<int> perm(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) perm[static_cast<std::size_t>(i)] = i;
  RngStream rng = RngStream(shuffle_seed).derive(0xBA7C4ULL, static_cast<std::uint64_t>(epoch));
  for (int i = n_samples - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[j]);
  }
  std::vector<std::vector<int>> out;
  for (int start = 0; start < n_samples; start += batch_size) {
    const int end = std::min(n_samples, start + batch_size);
    out.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return out;
}

// Stacks dataset samples into a [B,C,H,W] tensor plus flattened labels.
template <typename S>
std::pair<TensorPtr<S>, std::vector<int>> assemble_batch(const Dataset& ds,
                                                         const std::vector<int>& indices) {
  if (indices.empty()) throw ParamError("assemble_batch: empty index list");
  const Image& first = ds.samples.at(static_cast<std::size_t>(indices[0])).image;
  auto images = Tensor<S>::zeros(
      {static_cast<int>(indices.size()), first.channels, first.height, first.width});
  std::vector<int> labels;
  const std::size_t per = first.values.size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const SegSample& s = ds.samples.at(static_cast<std::size_t>(indices[b]));
    if (s.image.values.size() != per)
      throw ShapeError("assemble_batch: sample '" + s.id + "' has a different extent");
    for (std::size_t i = 0; i < per; ++i)
      images->values[b * per + i] = static_cast<S>(s.image.values[i]);
    labels.insert(labels.end(), s.label.begin(), s.label.end());
  }
  return {images, labels};
}

}  // namespace caepl
