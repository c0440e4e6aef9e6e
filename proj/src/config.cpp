#include "semseg/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace semseg {

namespace {

ConfigError err_at(int line, const std::string& msg) {
    return ConfigError("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// strip a trailing comment, honoring quoted strings
std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

bool valid_bare_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

TomlValue parse_value(const std::string& raw, int line);

std::vector<std::string> split_array_items(const std::string& body, int line) {
    std::vector<std::string> items;
    int depth = 0;
    bool in_str = false;
    std::string cur;
    for (size_t i = 0; i < body.size(); ++i) {
        const char c = body[i];
        if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_str = !in_str;
        if (!in_str) {
            if (c == '[') ++depth;
            if (c == ']') --depth;
            if (depth < 0) throw err_at(line, "unbalanced ']' in array");
            if (c == ',' && depth == 0) {
                items.push_back(cur);
                cur.clear();
                continue;
            }
        }
        cur += c;
    }
    if (depth != 0 || in_str) throw err_at(line, "unbalanced array or string");
    if (!trim(cur).empty()) items.push_back(cur);
    return items;
}

TomlValue parse_value(const std::string& raw, int line) {
    const std::string s = trim(raw);
    if (s.empty()) throw err_at(line, "missing value");
    TomlValue v;
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') throw err_at(line, "unterminated string");
        v.kind = TomlValue::Kind::str;
        for (size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                ++i;
                switch (s[i]) {
                    case 'n': v.s += '\n'; break;
                    case 't': v.s += '\t'; break;
                    case '"': v.s += '"'; break;
                    case '\\': v.s += '\\'; break;
                    default: throw err_at(line, "unsupported escape in string");
                }
            } else {
                v.s += s[i];
            }
        }
        return v;
    }
    if (s.front() == '[') {
        if (s.back() != ']') throw err_at(line, "unterminated array");
        v.kind = TomlValue::Kind::array;
        for (const std::string& item : split_array_items(s.substr(1, s.size() - 2), line))
            v.arr.push_back(parse_value(item, line));
        return v;
    }
    if (s == "true" || s == "false") {
        v.kind = TomlValue::Kind::boolean;
        v.b = (s == "true");
        return v;
    }
    // number: integer when it parses fully without . / e
    bool looks_int = !s.empty();
    for (size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (i == 0 && (c == '+' || c == '-')) continue;
        if (!std::isdigit(static_cast<unsigned char>(c))) looks_int = false;
    }
    if (looks_int && s != "+" && s != "-") {
        v.kind = TomlValue::Kind::integer;
        v.i = std::strtoll(s.c_str(), nullptr, 10);
        return v;
    }
    char* end = nullptr;
    const double d = std::strtod(s.c_str(), &end);
    if (end == nullptr || *end != '\0' || end == s.c_str())
        throw err_at(line, "cannot parse value '" + s + "'");
    v.kind = TomlValue::Kind::real;
    v.d = d;
    return v;
}

std::vector<std::string> split_path(const std::string& path, int line) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : path) {
        if (c == '.') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(trim(cur));
    for (const std::string& p : parts)
        if (!valid_bare_key(p)) throw err_at(line, "invalid table name '" + path + "'");
    return parts;
}

}  // namespace

std::string TomlValue::as_string(const std::string& key) const {
    if (kind != Kind::str) throw ConfigError("key '" + key + "' must be a string");
    return s;
}
int64_t TomlValue::as_int(const std::string& key) const {
    if (kind != Kind::integer) throw ConfigError("key '" + key + "' must be an integer");
    return i;
}
double TomlValue::as_double(const std::string& key) const {
    if (kind == Kind::real) return d;
    if (kind == Kind::integer) return static_cast<double>(i);
    throw ConfigError("key '" + key + "' must be a number");
}
bool TomlValue::as_bool(const std::string& key) const {
    if (kind != Kind::boolean) throw ConfigError("key '" + key + "' must be a boolean");
    return b;
}

TomlTable parse_toml(const std::string& text) {
    TomlTable root;
    TomlTable* current = &root;

    std::istringstream in(text);
    std::string rawline;
    int lineno = 0;
    while (std::getline(in, rawline)) {
        ++lineno;
        const std::string line = trim(strip_comment(rawline));
        if (line.empty()) continue;

        if (line.front() == '[') {
            const bool is_array = line.size() > 1 && line[1] == '[';
            const std::string close = is_array ? "]]" : "]";
            if (line.substr(line.size() - close.size()) != close)
                throw err_at(lineno, "unterminated table header");
            const std::string path =
                line.substr(is_array ? 2 : 1, line.size() - 2 * (is_array ? 2 : 1));
            auto parts = split_path(path, lineno);
            TomlTable* t = &root;
            for (size_t i = 0; i + 1 < parts.size(); ++i) t = &t->tables[parts[i]];
            if (is_array) {
                t->table_arrays[parts.back()].emplace_back();
                current = &t->table_arrays[parts.back()].back();
            } else {
                current = &t->tables[parts.back()];
            }
            continue;
        }

        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw err_at(lineno, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (!valid_bare_key(key)) throw err_at(lineno, "invalid key '" + key + "'");
        if (current->values.count(key)) throw err_at(lineno, "duplicate key '" + key + "'");
        current->values[key] = parse_value(line.substr(eq + 1), lineno);
    }
    return root;
}

// ---------------------------------------------------------------
// schema
// ---------------------------------------------------------------

namespace {

// tracks consumed keys so leftovers can be rejected
class TableView {
public:
    TableView(const TomlTable& t, std::string path) : t_(t), path_(std::move(path)) {}

    const TomlValue* get(const std::string& key) {
        used_.insert(key);
        auto it = t_.values.find(key);
        return it == t_.values.end() ? nullptr : &it->second;
    }

    void take_int(const std::string& key, int& out) {
        if (const TomlValue* v = get(key)) out = static_cast<int>(v->as_int(qual(key)));
    }
    void take_u64(const std::string& key, uint64_t& out) {
        if (const TomlValue* v = get(key)) out = static_cast<uint64_t>(v->as_int(qual(key)));
    }
    void take_double(const std::string& key, double& out) {
        if (const TomlValue* v = get(key)) out = v->as_double(qual(key));
    }
    void take_bool(const std::string& key, bool& out) {
        if (const TomlValue* v = get(key)) out = v->as_bool(qual(key));
    }
    void take_string(const std::string& key, std::string& out) {
        if (const TomlValue* v = get(key)) out = v->as_string(qual(key));
    }

    void allow_table(const std::string& name) { used_tables_.insert(name); }
    void allow_array(const std::string& name) { used_arrays_.insert(name); }

    void reject_unknown() const {
        for (const auto& [k, v] : t_.values)
            if (!used_.count(k)) throw ConfigError("unknown key '" + qual(k) + "'");
        for (const auto& [k, v] : t_.tables)
            if (!used_tables_.count(k)) throw ConfigError("unknown section '" + qual(k) + "'");
        for (const auto& [k, v] : t_.table_arrays)
            if (!used_arrays_.count(k)) throw ConfigError("unknown section '[[" + qual(k) + "]]'");
    }

    std::string qual(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

private:
    const TomlTable& t_;
    std::string path_;
    std::set<std::string> used_, used_tables_, used_arrays_;
};

void apply_scene_keys(TableView& v, SceneSpec& s) {
    v.take_int("h", s.h);
    v.take_int("w", s.w);
    v.take_int("classes", s.classes);
    v.take_int("min_objects", s.min_objects);
    v.take_int("max_objects", s.max_objects);
    v.take_double("color_jitter", s.color_jitter);
    v.take_double("bg_texture", s.bg_texture);
    v.take_int("bg_clicks", s.bg_clicks);
    v.reject_unknown();
}

void apply_train_keys(TableView& v, TrainConfig& c) {
    v.take_u64("ancillary_seed", c.ancillary_seed);
    v.take_u64("primary_seed", c.primary_seed);
    v.take_int("epochs", c.epochs);
    v.take_int("batch_size", c.batch_size);
    v.take_double("base_lr", c.base_lr);
    v.take_double("alpha", c.alpha);
    v.take_double("lambda_crf", c.lambda_crf);
    v.take_double("lambda_pseudo", c.lambda_pseudo);
    v.take_double("lambda_pcons", c.lambda_pcons);
    v.take_int("ramp_epochs", c.ramp_epochs);
    v.take_int("k", c.num_student_student);
    v.take_bool("pce", c.losses.pce);
    v.take_bool("crf", c.losses.crf);
    v.take_bool("pcons", c.losses.pcons);
    v.take_bool("pseudo", c.losses.pseudo);
    v.take_bool("augment", c.augment);
    v.take_double("sigma_xy", c.sigma_xy);
    v.take_double("sigma_rgb", c.sigma_rgb);
    v.take_string("dataset_path", c.dataset_path);
    v.take_string("output_path", c.output_path);
    std::string mode;
    v.take_string("pseudo_mode", mode);
    if (!mode.empty()) c.pseudo_mode = pseudo_mode_from_name(mode);
    v.reject_unknown();
}

}  // namespace

const char* pseudo_mode_name(PseudoMode mode) {
    switch (mode) {
        case PseudoMode::student_student: return "student_student";
        case PseudoMode::self_gen_reset: return "self_gen_reset";
        default: return "self_gen_unchanged";
    }
}

PseudoMode pseudo_mode_from_name(const std::string& name) {
    if (name == "student_student") return PseudoMode::student_student;
    if (name == "self_gen_reset") return PseudoMode::self_gen_reset;
    if (name == "self_gen_unchanged") return PseudoMode::self_gen_unchanged;
    throw ConfigError("unknown pseudo_mode '" + name + "'");
}

FileConfig parse_config(const std::string& text) {
    const TomlTable root = parse_toml(text);
    FileConfig out;

    TableView top(root, "");
    top.allow_table("scene");
    top.allow_table("train");
    top.allow_table("ablation");
    top.reject_unknown();

    if (auto it = root.tables.find("scene"); it != root.tables.end()) {
        TableView v(it->second, "scene");
        apply_scene_keys(v, out.scene);
    }
    if (auto it = root.tables.find("train"); it != root.tables.end()) {
        TableView v(it->second, "train");
        apply_train_keys(v, out.train);
    }
    out.train.net.classes = out.scene.classes;

    if (auto it = root.tables.find("ablation"); it != root.tables.end()) {
        AblationGrid grid;
        TableView v(it->second, "ablation");
        if (const TomlValue* seeds = v.get("seeds")) {
            if (seeds->kind != TomlValue::Kind::array)
                throw ConfigError("ablation.seeds must be an array of [ancillary, primary] pairs");
            for (const TomlValue& pair : seeds->arr) {
                if (pair.kind != TomlValue::Kind::array || pair.arr.size() != 2)
                    throw ConfigError(
                        "ablation.seeds entries must be [ancillary, primary] pairs");
                grid.seeds.emplace_back(
                    static_cast<uint64_t>(pair.arr[0].as_int("ablation.seeds")),
                    static_cast<uint64_t>(pair.arr[1].as_int("ablation.seeds")));
            }
        }
        v.allow_array("config");
        v.reject_unknown();
        if (auto ait = it->second.table_arrays.find("config");
            ait != it->second.table_arrays.end()) {
            for (const TomlTable& entry : ait->second) {
                AblationEntry e;
                e.config = out.train;  // overrides on top of [train]
                TableView ev(entry, "ablation.config");
                ev.take_string("name", e.name);
                if (e.name.empty()) throw ConfigError("ablation.config entries require a name");
                apply_train_keys(ev, e.config);
                grid.configs.push_back(std::move(e));
            }
        }
        grid.validate();
        out.ablation = grid;
    }
    return out;
}

FileConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------
// rendering
// ---------------------------------------------------------------

namespace {

std::string fmt_double(double d) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    std::string s(buf);
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";  // keep it a TOML float
    return s;
}

void render_train(std::ostringstream& out, const TrainConfig& c) {
    out << "ancillary_seed = " << c.ancillary_seed << "\n";
    out << "primary_seed = " << c.primary_seed << "\n";
    out << "epochs = " << c.epochs << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "base_lr = " << fmt_double(c.base_lr) << "\n";
    out << "alpha = " << fmt_double(c.alpha) << "\n";
    out << "lambda_crf = " << fmt_double(c.lambda_crf) << "\n";
    out << "lambda_pseudo = " << fmt_double(c.lambda_pseudo) << "\n";
    out << "lambda_pcons = " << fmt_double(c.lambda_pcons) << "\n";
    out << "ramp_epochs = " << c.ramp_epochs << "\n";
    out << "k = " << c.num_student_student << "\n";
    out << "pce = " << (c.losses.pce ? "true" : "false") << "\n";
    out << "crf = " << (c.losses.crf ? "true" : "false") << "\n";
    out << "pcons = " << (c.losses.pcons ? "true" : "false") << "\n";
    out << "pseudo = " << (c.losses.pseudo ? "true" : "false") << "\n";
    out << "augment = " << (c.augment ? "true" : "false") << "\n";
    out << "sigma_xy = " << fmt_double(c.sigma_xy) << "\n";
    out << "sigma_rgb = " << fmt_double(c.sigma_rgb) << "\n";
    out << "pseudo_mode = \"" << pseudo_mode_name(c.pseudo_mode) << "\"\n";
    out << "dataset_path = \"" << c.dataset_path << "\"\n";
    out << "output_path = \"" << c.output_path << "\"\n";
}

}  // namespace

std::string render_config(const FileConfig& cfg) {
    std::ostringstream out;
    out << "[scene]\n";
    out << "h = " << cfg.scene.h << "\n";
    out << "w = " << cfg.scene.w << "\n";
    out << "classes = " << cfg.scene.classes << "\n";
    out << "min_objects = " << cfg.scene.min_objects << "\n";
    out << "max_objects = " << cfg.scene.max_objects << "\n";
    out << "color_jitter = " << fmt_double(cfg.scene.color_jitter) << "\n";
    out << "bg_texture = " << fmt_double(cfg.scene.bg_texture) << "\n";
    out << "bg_clicks = " << cfg.scene.bg_clicks << "\n";
    out << "\n[train]\n";
    render_train(out, cfg.train);
    if (cfg.ablation) {
        out << "\n[ablation]\n";
        out << "seeds = [";
        for (size_t i = 0; i < cfg.ablation->seeds.size(); ++i) {
            if (i) out << ", ";
            out << "[" << cfg.ablation->seeds[i].first << ", " << cfg.ablation->seeds[i].second
                << "]";
        }
        out << "]\n";
        for (const AblationEntry& e : cfg.ablation->configs) {
            out << "\n[[ablation.config]]\n";
            out << "name = \"" << e.name << "\"\n";
            render_train(out, e.config);
        }
    }
    return out.str();
}

}  // namespace semseg
