#pragma once

#include <memory>
#include <string>
#include <vector>

#include "semseg/grid.hpp"

namespace semseg {

// Fixed small encoder-decoder:
//   enc1..enc3: 3x3 conv stride 1 (3 -> 16 -> 16 -> 16), ReLU
//   2x average pool
//   mid1, mid2: 3x3 conv (16 -> 32 -> 32), ReLU
//   2x bilinear upsample
//   head: 1x1 conv (32 -> classes), per-pixel softmax
struct NetConfig {
    int in_channels = 3;
    int classes = 4;
    int enc_channels = 16;
    int mid_channels = 32;

    bool operator==(const NetConfig& o) const = default;
};

// Immutable name -> index-range map over the flat parameter storage.
struct Layout {
    struct Entry {
        std::string name;
        size_t offset = 0;
        size_t count = 0;
    };
    std::vector<Entry> entries;
    size_t total = 0;

    const Entry& find(const std::string& name) const;
    bool operator==(const Layout& o) const;
};

struct ParameterVector {
    std::vector<double> values;
    std::shared_ptr<const Layout> layout;

    size_t size() const { return values.size(); }
};

struct GradientVector {
    std::vector<double> values;

    size_t size() const { return values.size(); }
};

// Forward activations retained for the backward pass. Treat as opaque;
// only net.cpp reads the fields.
struct ForwardCache {
    int orig_h = 0, orig_w = 0;  // pre-padding size
    Image padded;
    Volume a1, a2, a3, pooled, a4, a5, up;
    ScoreMap scores_padded;
    ScoreMap scores;  // cropped to the input size
};

class SegNet {
public:
    explicit SegNet(NetConfig cfg);
    ~SegNet();
    SegNet(const SegNet&) = delete;
    SegNet& operator=(const SegNet&) = delete;

    const NetConfig& config() const { return cfg_; }
    const Layout& layout() const { return *layout_; }
    size_t param_count() const { return layout_->total; }

    // Deterministic scaled-uniform fan-in init, biases zero.
    ParameterVector init_params(uint64_t seed) const;

    // Pure function of (image, params). Odd spatial dims are reflect-padded
    // to even internally and the output cropped back.
    ScoreMap forward(const Image& image, const ParameterVector& params) const;

    // dL/dparams given upstream = dL/dscores. Linear in upstream.
    GradientVector backward(const Image& image, const ParameterVector& params,
                            const Volume& upstream) const;

    // Split form for training loops that reuse the forward activations.
    std::unique_ptr<ForwardCache> forward_cached(const Image& image,
                                                 const ParameterVector& params) const;
    const ScoreMap& scores(const ForwardCache& cache) const;
    GradientVector backward_from_cache(const ForwardCache& cache, const ParameterVector& params,
                                       const Volume& upstream) const;

private:
    NetConfig cfg_;
    std::shared_ptr<const Layout> layout_;
};

// Checkpoint: UTF-8 header (config, layer names + index ranges) followed by
// little-endian IEEE-754 doubles. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParameterVector& params,
                     const NetConfig& cfg);
struct Checkpoint {
    NetConfig config;
    ParameterVector params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace semseg
