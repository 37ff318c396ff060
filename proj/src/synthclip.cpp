#include "medvt/synthclip.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include <json.hpp>

#include "medvt/io.hpp"
#include "medvt/rng.hpp"

namespace medvt::synth {

namespace fs = std::filesystem;
using nlohmann::json;

const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::blob: return "blob";
  }
  return "?";
}

namespace {

uint64_t hash2(uint64_t seed, int64_t x, int64_t y) {
  uint64_t h = seed ^ (static_cast<uint64_t>(x) * 0x9e3779b97f4a7c15ULL) ^
               (static_cast<uint64_t>(y) * 0xd1b54a32d192ed03ULL);
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

double lattice(uint64_t seed, int64_t x, int64_t y) {
  return static_cast<double>(hash2(seed, x, y) >> 11) * 0x1.0p-53;
}

// Two-octave value noise in [0,1): bilinear interpolation of seeded lattice
// values at cell sizes 4 and 2.
double value_noise(uint64_t seed, double x, double y) {
  double acc = 0, amp = 0;
  const double cells[2] = {4.0, 2.0};
  const double amps[2] = {0.7, 0.3};
  for (int o = 0; o < 2; ++o) {
    const double fx = x / cells[o], fy = y / cells[o];
    const int64_t x0 = static_cast<int64_t>(std::floor(fx)), y0 = static_cast<int64_t>(std::floor(fy));
    const double tx = fx - static_cast<double>(x0), ty = fy - static_cast<double>(y0);
    const uint64_t so = seed + static_cast<uint64_t>(o) * 0x51ed2701;
    const double v00 = lattice(so, x0, y0), v01 = lattice(so, x0 + 1, y0);
    const double v10 = lattice(so, x0, y0 + 1), v11 = lattice(so, x0 + 1, y0 + 1);
    acc += amps[o] * ((1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11));
    amp += amps[o];
  }
  return acc / amp;
}

struct ObjectGeometry {
  double r = 0;                       // disk radius / blob base radius
  double rw = 0, rh = 0;              // rectangle half extents
  std::array<std::array<double, 3>, 3> blob{};  // (dx, dy, radius) per lobe
  double extent = 0;                  // conservative bounding radius
};

ObjectGeometry make_geometry(const SceneSpec& spec, Rng& rng) {
  ObjectGeometry g;
  const double base = static_cast<double>(std::min(spec.h, spec.w));
  switch (spec.shape) {
    case ShapeKind::disk:
      g.r = rng.uniform(base / 8.0, base / 5.0);
      g.extent = g.r;
      break;
    case ShapeKind::rectangle:
      g.rw = rng.uniform(base / 9.0, base / 5.0);
      g.rh = rng.uniform(base / 9.0, base / 5.0);
      g.extent = std::sqrt(g.rw * g.rw + g.rh * g.rh);
      break;
    case ShapeKind::blob: {
      g.r = rng.uniform(base / 10.0, base / 7.0);
      g.extent = 0;
      for (auto& lobe : g.blob) {
        lobe[0] = rng.uniform(-g.r * 0.8, g.r * 0.8);
        lobe[1] = rng.uniform(-g.r * 0.8, g.r * 0.8);
        lobe[2] = rng.uniform(g.r * 0.6, g.r);
        g.extent = std::max(g.extent, std::hypot(lobe[0], lobe[1]) + lobe[2]);
      }
      break;
    }
  }
  return g;
}

bool inside_object(const ObjectGeometry& g, ShapeKind kind, double dx, double dy) {
  switch (kind) {
    case ShapeKind::disk:
      return dx * dx + dy * dy <= g.r * g.r;
    case ShapeKind::rectangle:
      return std::abs(dx) <= g.rw && std::abs(dy) <= g.rh;
    case ShapeKind::blob:
      for (const auto& lobe : g.blob) {
        const double ex = dx - lobe[0], ey = dy - lobe[1];
        if (ex * ex + ey * ey <= lobe[2] * lobe[2]) return true;
      }
      return false;
  }
  return false;
}

}  // namespace

GeneratedClip generate(const SceneSpec& spec) {
  check(spec.t >= 1 && spec.h >= 32 && spec.w >= 32, "synthclip: need T >= 1 and H,W >= 32");
  check(spec.h % 32 == 0 && spec.w % 32 == 0, "synthclip: H,W must be multiples of 32");
  Rng rng(spec.seed);
  const ObjectGeometry geom = make_geometry(spec, rng);

  // Trajectory: seeded start/direction; sinusoidal adds a vertical swing.
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  const double vx = spec.velocity * std::cos(angle);
  const double vy = spec.velocity * std::sin(angle);
  const double swing = spec.trajectory == Trajectory::sinusoidal
                           ? rng.uniform(static_cast<double>(spec.h) / 16.0, static_cast<double>(spec.h) / 10.0)
                           : 0.0;
  const double omega = 2.0 * M_PI / static_cast<double>(std::max<int64_t>(spec.t, 8));
  const double margin = geom.extent + 2.0 + swing;
  check(margin * 2 < static_cast<double>(std::min(spec.h, spec.w)), "synthclip: object too large for the frame");
  // Start so that the whole linear sweep stays in frame.
  const double span_x = vx * static_cast<double>(spec.t - 1);
  const double span_y = vy * static_cast<double>(spec.t - 1);
  const double lo_x = margin + std::max(0.0, -span_x), hi_x = static_cast<double>(spec.w) - margin - std::max(0.0, span_x);
  const double lo_y = margin + std::max(0.0, -span_y), hi_y = static_cast<double>(spec.h) - margin - std::max(0.0, span_y);
  check(lo_x < hi_x && lo_y < hi_y, "synthclip: object would exit frame; reduce velocity or size");
  const double cx0 = rng.uniform(lo_x, hi_x);
  const double cy0 = rng.uniform(lo_y, hi_y);

  // Distractors: static shapes with object-like texture, not in the mask.
  struct Distractor {
    double cx, cy, r;
    uint64_t seed;
  };
  std::vector<Distractor> distractors;
  for (int i = 0; i < spec.distractors; ++i) {
    Distractor d;
    d.r = rng.uniform(static_cast<double>(std::min(spec.h, spec.w)) / 12.0,
                      static_cast<double>(std::min(spec.h, spec.w)) / 8.0);
    d.cx = rng.uniform(d.r, static_cast<double>(spec.w) - d.r);
    d.cy = rng.uniform(d.r, static_cast<double>(spec.h) - d.r);
    d.seed = rng.next_u64();
    distractors.push_back(d);
  }

  const uint64_t bg_seed = rng.next_u64();
  const uint64_t fg_seed = rng.next_u64();
  const bool camo = spec.texture == TextureMode::camouflage;

  GeneratedClip out;
  out.clip = Tensor::zeros({spec.t, spec.h, spec.w, 3}, Dtype::f32);
  out.masks = Tensor::zeros({spec.t, spec.h, spec.w}, Dtype::f64);
  out.boxes.resize(static_cast<size_t>(spec.t));

  for (int64_t t = 0; t < spec.t; ++t) {
    const double cx = cx0 + vx * static_cast<double>(t);
    const double cy = cy0 + vy * static_cast<double>(t) +
                      (spec.trajectory == Trajectory::sinusoidal ? swing * std::sin(omega * static_cast<double>(t)) : 0.0);
    Box box{spec.h, spec.w, 0, 0};
    for (int64_t y = 0; y < spec.h; ++y)
      for (int64_t x = 0; x < spec.w; ++x) {
        const bool fg = inside_object(geom, spec.shape, static_cast<double>(x) - cx, static_cast<double>(y) - cy);
        for (int64_t c = 0; c < 3; ++c) {
          double v;
          if (fg) {
            // The object carries its texture: sample at object-local coords.
            const double lx = static_cast<double>(x) - cx + cx0;
            const double ly = static_cast<double>(y) - cy + cy0;
            const double n = value_noise(fg_seed + static_cast<uint64_t>(c) * 7919, lx, ly);
            v = camo ? 0.2 + 0.6 * n : 0.62 + 0.33 * n;
          } else {
            bool in_distractor = false;
            double n = 0;
            for (const auto& d : distractors) {
              const double ex = static_cast<double>(x) - d.cx, ey = static_cast<double>(y) - d.cy;
              if (ex * ex + ey * ey <= d.r * d.r) {
                in_distractor = true;
                n = value_noise(d.seed + static_cast<uint64_t>(c) * 7919, static_cast<double>(x), static_cast<double>(y));
                break;
              }
            }
            if (!in_distractor) n = value_noise(bg_seed + static_cast<uint64_t>(c) * 7919, static_cast<double>(x),
                                                static_cast<double>(y));
            v = camo ? 0.2 + 0.6 * n : 0.05 + 0.33 * n;
          }
          out.clip.set(((t * spec.h + y) * spec.w + x) * 3 + c, v);
        }
        if (fg) {
          out.masks.set((t * spec.h + y) * spec.w + x, 1.0);
          box.y0 = std::min(box.y0, y);
          box.x0 = std::min(box.x0, x);
          box.y1 = std::max(box.y1, y + 1);
          box.x1 = std::max(box.x1, x + 1);
        }
      }
    check(!box.empty(), "synthclip: rasterized object vanished (frame " + std::to_string(t) + ")");
    out.boxes[static_cast<size_t>(t)] = box;
  }
  return out;
}

namespace {

void write_split(const std::string& split_dir, int n, uint64_t seed, TextureMode mode, int64_t t, int64_t h,
                 int64_t w) {
  fs::create_directories(fs::path(split_dir) / "clips");
  fs::create_directories(fs::path(split_dir) / "masks");
  json manifest;
  json clips = json::array();
  Rng split_rng(seed);
  const ShapeKind kinds[3] = {ShapeKind::disk, ShapeKind::rectangle, ShapeKind::blob};
  for (int i = 0; i < n; ++i) {
    SceneSpec spec;
    spec.seed = split_rng.fork(static_cast<uint64_t>(i)).next_u64();
    spec.t = t;
    spec.h = h;
    spec.w = w;
    spec.shape = kinds[i % 3];
    spec.trajectory = (i % 2 == 0) ? Trajectory::linear : Trajectory::sinusoidal;
    Rng vel(spec.seed);
    spec.velocity = vel.uniform(2.0, 4.0);
    spec.texture = mode;
    GeneratedClip gc = generate(spec);

    char id[16];
    std::snprintf(id, sizeof(id), "%03d", i);
    const std::string clip_rel = std::string("clips/") + id + ".mvt1";
    io::write_mvt1((fs::path(split_dir) / clip_rel).string(), gc.clip);
    json masks = json::array();
    for (int64_t f = 0; f < spec.t; ++f) {
      const std::string mask_rel = std::string("masks/") + id + "_" + std::to_string(f) + ".pgm";
      io::write_mask_pgm((fs::path(split_dir) / mask_rel).string(),
                         ops::reshape(ops::slice(gc.masks, 0, f, f + 1), {h, w}));
      masks.push_back(mask_rel);
    }
    json boxes = json::array();
    for (const Box& b : gc.boxes) boxes.push_back({b.y0, b.x0, b.y1, b.x1});
    json item;
    item["id"] = id;
    item["clip"] = clip_rel;
    item["masks"] = masks;
    item["category"] = shape_name(spec.shape);
    item["boxes"] = boxes;
    clips.push_back(item);
  }
  manifest["clips"] = clips;
  io::write_text_file((fs::path(split_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

}  // namespace

void make_dataset(const std::string& dir, int n_train, int n_val, uint64_t seed, TextureMode mode, int64_t t,
                  int64_t h, int64_t w) {
  // Disjoint seed streams for the two splits.
  Rng root(seed);
  write_split((fs::path(dir) / "train").string(), n_train, root.fork(0x545241).next_u64(), mode, t, h, w);
  write_split((fs::path(dir) / "val").string(), n_val, root.fork(0x56414c).next_u64(), mode, t, h, w);
}

std::vector<DatasetItem> load_dataset(const std::string& split_dir) {
  const json manifest = json::parse(io::read_text_file((fs::path(split_dir) / "manifest.json").string()));
  std::vector<DatasetItem> out;
  for (const auto& item : manifest.at("clips")) {
    DatasetItem d;
    d.id = item.at("id").get<std::string>();
    d.category = item.at("category").get<std::string>();
    d.sample.clip = io::read_mvt1((fs::path(split_dir) / item.at("clip").get<std::string>()).string());
    const auto masks = item.at("masks");
    const int64_t t = static_cast<int64_t>(masks.size());
    const int64_t h = d.sample.clip.dim(1), w = d.sample.clip.dim(2);
    d.sample.mask = Tensor::zeros({t, h, w}, Dtype::f64);
    for (int64_t f = 0; f < t; ++f) {
      Tensor m = io::read_mask_pgm((fs::path(split_dir) / masks[static_cast<size_t>(f)].get<std::string>()).string());
      check(m.dim(0) == h && m.dim(1) == w, "load_dataset: mask size mismatch");
      for (int64_t i = 0; i < h * w; ++i) d.sample.mask.set(f * h * w + i, m.get(i) > 0 ? 1.0 : 0.0);
    }
    for (const auto& b : item.at("boxes"))
      d.boxes.push_back(Box{b[0].get<int64_t>(), b[1].get<int64_t>(), b[2].get<int64_t>(), b[3].get<int64_t>()});
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace medvt::synth
