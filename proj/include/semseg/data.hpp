#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semseg/grid.hpp"
#include "semseg/losses.hpp"

namespace semseg {

// Synthetic scene recipe. Class 0 is background; classes 1..C-1 are shapes.
struct SceneSpec {
    int h = 64, w = 64;
    int classes = 4;
    int min_objects = 1, max_objects = 3;
    double color_jitter = 0.25;   // per-instance uniform jitter around the class base color
    double bg_texture = 0.35;     // background value-noise amplitude
    int bg_clicks = 3;            // background clicks per image (k_bg)

    void validate() const;  // throws on odd dims, classes < 2, empty ranges
};

struct LabeledImage {
    std::string id;
    Image image;     // H x W x 3 in [0,1]
    LabelMap mask;   // ground truth, evaluation only
    ClickSet clicks; // training supervision
};

// Deterministic scene render: textured background, 1..k shapes (disc,
// rectangle, triangle) with per-class base colors plus jitter, later shapes
// occlude earlier ones. Instances are kept pairwise non-adjacent so connected
// components of the mask recover them.
LabeledImage gen_scene(uint64_t seed, const SceneSpec& spec);

// One click per foreground instance (4-connected component), sampled from the
// instance interior when one exists, plus k_bg background clicks without
// replacement.
ClickSet sample_clicks(const LabelMap& mask, uint64_t seed, int k_bg);

struct Augmented {
    Image image;
    LabelMap mask;
    ClickSet clicks;
};

struct AugmentOptions {
    double min_scale = 0.75, max_scale = 1.25;
    double flip_prob = 0.5;
    double noise_sigma = 0.02;
    int max_retries = 8;  // geometric resamples before returning the input unchanged
};

// Random scale about the image center (crop/pad back to H x W), horizontal
// flip, additive Gaussian pixel noise on the image only. Mask and clicks go
// through the identical geometric map; clicks that leave the frame or land on
// a mismatched mask pixel after resampling are dropped.
Augmented augment(const Image& image, const LabelMap& mask, const ClickSet& clicks,
                  uint64_t seed, const AugmentOptions& opt = {});

struct DatasetMeta {
    SceneSpec spec;
    int count = 0;
};

// Directory layout per item id:
//   <id>.f32         raw little-endian float32, H*W*3
//   <id>.json        {"h":..,"w":..} sidecar for the raw image
//   <id>.mask.pgm    binary P5, class indices
//   <id>.clicks.json [{"row":..,"col":..,"class":..}, ...]
// plus meta.json (spec echo, C, H, W, item count).
void save_dataset(const std::vector<LabeledImage>& items, const std::string& dir,
                  const SceneSpec& spec);

struct Dataset {
    std::vector<LabeledImage> items;
    std::optional<DatasetMeta> meta;
};

// Empty directory -> empty dataset. Malformed or missing files throw with the
// offending path in the message.
Dataset load_dataset(const std::string& dir);

// PPM helpers (also used by the report renderer).
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

}  // namespace semseg
