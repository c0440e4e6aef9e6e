#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "semseg/data.hpp"
#include "semseg/evalrep.hpp"
#include "semseg/trainer.hpp"

namespace semseg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Minimal TOML subset: [table], [[array-of-tables]], key = value with
// strings, integers, floats, booleans and (nested) arrays. Comments with #.
// Covers the config schema below; anything else is a parse error.
struct TomlValue {
    enum class Kind { str, integer, real, boolean, array };
    Kind kind = Kind::str;
    std::string s;
    int64_t i = 0;
    double d = 0.0;
    bool b = false;
    std::vector<TomlValue> arr;

    std::string as_string(const std::string& key) const;
    int64_t as_int(const std::string& key) const;
    double as_double(const std::string& key) const;  // accepts integer literals
    bool as_bool(const std::string& key) const;
};

struct TomlTable {
    std::map<std::string, TomlValue> values;
    std::map<std::string, TomlTable> tables;
    std::map<std::string, std::vector<TomlTable>> table_arrays;
};

TomlTable parse_toml(const std::string& text);

// Config document: [scene], [train], optional [ablation] with
// [[ablation.config]] override entries. Unknown keys are rejected.
struct FileConfig {
    SceneSpec scene;
    TrainConfig train;
    std::optional<AblationGrid> ablation;
};

FileConfig parse_config(const std::string& text);
FileConfig load_config_file(const std::string& path);

// Fully resolved echo (every effective value spelled out), written beside
// each run's outputs.
std::string render_config(const FileConfig& cfg);

const char* pseudo_mode_name(PseudoMode mode);
PseudoMode pseudo_mode_from_name(const std::string& name);

}  // namespace semseg
