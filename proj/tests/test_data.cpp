#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "semseg/data.hpp"
#include "semseg/rng.hpp"

using namespace semseg;
namespace fs = std::filesystem;

namespace {

int count_components(const LabelMap& mask) {
    const int h = mask.h, w = mask.w;
    std::vector<int> comp(static_cast<size_t>(h) * w, -1);
    int next = 0;
    std::vector<int> stack;
    for (int start = 0; start < h * w; ++start) {
        if (mask.v[start] == 0 || comp[start] != -1) continue;
        comp[start] = next;
        stack.assign(1, start);
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int r = p / w, c = p % w;
            auto visit = [&](int q) {
                if (mask.v[q] == mask.v[p] && comp[q] == -1) {
                    comp[q] = comp[p];
                    stack.push_back(q);
                }
            };
            if (r > 0) visit(p - w);
            if (r < h - 1) visit(p + w);
            if (c > 0) visit(p - 1);
            if (c < w - 1) visit(p + 1);
        }
        ++next;
    }
    return next;
}

void check_click_mask_consistency(const LabeledImage& item) {
    for (const Click& c : item.clicks.entries) CHECK(item.mask.at(c.row, c.col) == c.cls);
}

fs::path temp_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("gen_scene is deterministic and obeys its invariants") {
    SceneSpec spec;
    LabeledImage a = gen_scene(42, spec);
    LabeledImage b = gen_scene(42, spec);
    CHECK(a.image.v == b.image.v);
    CHECK(a.mask == b.mask);
    CHECK(a.clicks.entries == b.clicks.entries);

    LabeledImage c = gen_scene(43, spec);
    CHECK(a.image.v != c.image.v);

    for (double v : a.image.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    check_click_mask_consistency(a);

    // every foreground class present in the mask has at least one click
    std::set<int> mask_classes, click_classes;
    for (int v : a.mask.v)
        if (v > 0) mask_classes.insert(v);
    for (const Click& k : a.clicks.entries)
        if (k.cls > 0) click_classes.insert(k.cls);
    CHECK(mask_classes == click_classes);
}

TEST_CASE("gen_scene: fixed object count yields that many instances") {
    SceneSpec spec;
    spec.min_objects = 2;
    spec.max_objects = 2;
    for (uint64_t seed = 0; seed < 30; ++seed) {
        LabeledImage item = gen_scene(seed, spec);
        CHECK(count_components(item.mask) == 2);
    }
}

TEST_CASE("gen_scene: degenerate all-background spec rejected") {
    SceneSpec spec;
    spec.min_objects = 0;
    spec.max_objects = 0;
    CHECK_THROWS_AS(gen_scene(1, spec), std::invalid_argument);
    spec.min_objects = 3;
    spec.max_objects = 2;
    CHECK_THROWS_AS(gen_scene(1, spec), std::invalid_argument);
}

TEST_CASE("clicks are sparse: n/N at most 1% for the default spec") {
    SceneSpec spec;
    for (uint64_t seed = 100; seed < 120; ++seed) {
        LabeledImage item = gen_scene(seed, spec);
        const double frac =
            static_cast<double>(item.clicks.count()) / (spec.h * spec.w);
        CHECK(frac <= 0.01);
    }
}

TEST_CASE("sample_clicks: one interior click per instance plus background clicks") {
    // single disc: one foreground click inside it
    SceneSpec spec;
    spec.min_objects = 1;
    spec.max_objects = 1;
    LabeledImage item = gen_scene(7, spec);

    ClickSet only_fg = sample_clicks(item.mask, 11, 0);
    CHECK(only_fg.count() == 1);
    CHECK(only_fg.entries[0].cls == item.mask.at(only_fg.entries[0].row, only_fg.entries[0].col));
    CHECK(only_fg.entries[0].cls > 0);

    // interior: the 4-neighborhood shares the class
    const Click k = only_fg.entries[0];
    CHECK(item.mask.at(k.row - 1, k.col) == k.cls);
    CHECK(item.mask.at(k.row + 1, k.col) == k.cls);
    CHECK(item.mask.at(k.row, k.col - 1) == k.cls);
    CHECK(item.mask.at(k.row, k.col + 1) == k.cls);

    // three instances + 3 background clicks -> exactly 6, no duplicates
    SceneSpec spec3;
    spec3.min_objects = 3;
    spec3.max_objects = 3;
    LabeledImage three = gen_scene(21, spec3);
    ClickSet six = sample_clicks(three.mask, 13, 3);
    CHECK(six.count() == 6);
    std::set<std::pair<int, int>> seen;
    for (const Click& c : six.entries) {
        seen.insert({c.row, c.col});
        CHECK(three.mask.at(c.row, c.col) == c.cls);
    }
    CHECK(seen.size() == 6);

    // deterministic given the seed
    ClickSet again = sample_clicks(three.mask, 13, 3);
    CHECK(six.entries == again.entries);

    // insufficient background pixels
    LabelMap full(4, 4, 1);
    CHECK_THROWS_AS(sample_clicks(full, 1, 1), std::invalid_argument);
}

TEST_CASE("augment: identity transform returns inputs unchanged") {
    SceneSpec spec;
    LabeledImage item = gen_scene(55, spec);
    AugmentOptions opt;
    opt.min_scale = opt.max_scale = 1.0;
    opt.flip_prob = 0.0;
    opt.noise_sigma = 0.0;
    Augmented out = augment(item.image, item.mask, item.clicks, 9, opt);
    CHECK(out.image.v == item.image.v);
    CHECK(out.mask == item.mask);
    CHECK(out.clicks.entries == item.clicks.entries);
}

TEST_CASE("augment: flip-only mirrors mask and click columns") {
    SceneSpec spec;
    LabeledImage item = gen_scene(56, spec);
    AugmentOptions opt;
    opt.min_scale = opt.max_scale = 1.0;
    opt.flip_prob = 1.0;
    opt.noise_sigma = 0.0;
    Augmented out = augment(item.image, item.mask, item.clicks, 9, opt);
    const int W = item.image.w;
    for (int r = 0; r < item.mask.h; ++r)
        for (int c = 0; c < W; ++c) CHECK(out.mask.at(r, c) == item.mask.at(r, W - 1 - c));
    CHECK(out.clicks.count() == item.clicks.count());
    for (int i = 0; i < item.clicks.count(); ++i) {
        CHECK(out.clicks.entries[i].row == item.clicks.entries[i].row);
        CHECK(out.clicks.entries[i].col == W - 1 - item.clicks.entries[i].col);
        CHECK(out.clicks.entries[i].cls == item.clicks.entries[i].cls);
    }
}

TEST_CASE("augment: surviving clicks always match the transformed mask") {
    SceneSpec spec;
    for (uint64_t seed = 200; seed < 230; ++seed) {
        LabeledImage item = gen_scene(seed, spec);
        Augmented out = augment(item.image, item.mask, item.clicks, seed * 7 + 1);
        CHECK(!out.clicks.entries.empty());
        for (const Click& c : out.clicks.entries) CHECK(out.mask.at(c.row, c.col) == c.cls);
        for (double v : out.image.v) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        // deterministic
        Augmented rep = augment(item.image, item.mask, item.clicks, seed * 7 + 1);
        CHECK(rep.image.v == out.image.v);
        CHECK(rep.clicks.entries == out.clicks.entries);
    }
}

TEST_CASE("dataset save/load round-trip") {
    SceneSpec spec;
    std::vector<LabeledImage> items;
    for (int i = 0; i < 4; ++i) {
        LabeledImage item = gen_scene(1000 + i, spec);
        item.id = "item" + std::to_string(i);
        items.push_back(std::move(item));
    }
    const fs::path dir = temp_dir("semseg_ds_roundtrip");
    save_dataset(items, dir.string(), spec);

    Dataset loaded = load_dataset(dir.string());
    REQUIRE(loaded.items.size() == items.size());
    REQUIRE(loaded.meta.has_value());
    CHECK(loaded.meta->count == 4);
    CHECK(loaded.meta->spec.classes == spec.classes);

    for (size_t i = 0; i < items.size(); ++i) {
        CHECK(loaded.items[i].id == items[i].id);
        CHECK(loaded.items[i].mask == items[i].mask);  // masks exact
        CHECK(loaded.items[i].clicks.entries == items[i].clicks.entries);  // clicks exact
        REQUIRE(loaded.items[i].image.v.size() == items[i].image.v.size());
        for (size_t j = 0; j < items[i].image.v.size(); ++j)  // float32 quantization
            CHECK(std::fabs(loaded.items[i].image.v[j] - items[i].image.v[j]) < 1e-7);
    }
    fs::remove_all(dir);
}

TEST_CASE("dataset loader: missing pieces reported by id, empty dir is empty") {
    SceneSpec spec;
    LabeledImage item = gen_scene(77, spec);
    item.id = "lonely";
    const fs::path dir = temp_dir("semseg_ds_missing");
    save_dataset({item}, dir.string(), spec);
    fs::remove(dir / "lonely.clicks.json");
    try {
        load_dataset(dir.string());
        CHECK(false);
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("lonely") != std::string::npos);
    }
    fs::remove_all(dir);

    const fs::path empty = temp_dir("semseg_ds_empty");
    fs::create_directories(empty);
    Dataset ds = load_dataset(empty.string());
    CHECK(ds.items.empty());
    fs::remove_all(empty);

    CHECK_THROWS(load_dataset((fs::temp_directory_path() / "semseg_no_such_dir").string()));
}

TEST_CASE("ppm round-trip within 8-bit quantization") {
    Rng rng(3);
    Image img(6, 5, 3);
    for (double& v : img.v) v = rng.uniform();
    const fs::path p = fs::temp_directory_path() / "semseg_test.ppm";
    write_ppm(p.string(), img);
    Image back = read_ppm(p.string());
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    for (size_t i = 0; i < img.v.size(); ++i) CHECK(std::fabs(back.v[i] - img.v[i]) <= 0.5 / 255.0 + 1e-9);
    fs::remove(p);
}
