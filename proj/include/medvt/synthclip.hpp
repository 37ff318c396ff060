#pragma once

#include <array>
#include <string>
#include <vector>

#include "medvt/model.hpp"
#include "medvt/tensor.hpp"

namespace medvt::synth {

enum class ShapeKind { disk, rectangle, blob };
enum class Trajectory { linear, sinusoidal };
enum class TextureMode { contrast, camouflage };

const char* shape_name(ShapeKind k);

// One synthetic scene: a textured rigid object moving over a static
// background. In camouflage mode foreground and background are drawn from
// the identical value-noise distribution, so single frames carry no
// appearance cue; motion is the only signal.
struct SceneSpec {
  uint64_t seed = 1;
  int64_t t = 6, h = 64, w = 64;
  ShapeKind shape = ShapeKind::disk;
  Trajectory trajectory = Trajectory::linear;
  double velocity = 3.0;  // px/frame
  TextureMode texture = TextureMode::camouflage;
  int distractors = 0;
};

// Half-open pixel box [y0,y1) x [x0,x1).
struct Box {
  int64_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  bool empty() const { return y1 <= y0 || x1 <= x0; }
  int64_t area() const { return empty() ? 0 : (y1 - y0) * (x1 - x0); }
};

struct GeneratedClip {
  Tensor clip;              // [T,H,W,3] f32 in [0,1]
  Tensor masks;             // [T,H,W] class indices (0 background, 1 object)
  std::vector<Box> boxes;   // tight mask box per frame
};

// Pure function of the spec. Throws if the object would exit the frame.
GeneratedClip generate(const SceneSpec& spec);

struct DatasetItem {
  std::string id;
  std::string category;  // shape kind
  model::ClipSample sample;
  std::vector<Box> boxes;
};

// Writes dir/{train,val}/{clips/NNN.mvt1, masks/NNN_f.pgm, manifest.json}
// with disjoint seeds for the two splits.
void make_dataset(const std::string& dir, int n_train, int n_val, uint64_t seed,
                  TextureMode mode = TextureMode::camouflage, int64_t t = 6, int64_t h = 64, int64_t w = 64);

// Loads one split directory (containing manifest.json).
std::vector<DatasetItem> load_dataset(const std::string& split_dir);

}  // namespace medvt::synth
