#include "forgeloc/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace forgeloc {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("key '" + key + "' needs a nonnegative integer, got '" + v + "'");
    }
    try {
        return std::stoull(v);
    } catch (const std::out_of_range&) {
        throw ConfigError("key '" + key + "' value '" + v + "' is out of range");
    }
}

double parse_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("key '" + key + "' needs a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "' needs true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string real_text(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::string perturbation_text(const Perturbation& p) {
    using Kind = Perturbation::Kind;
    switch (p.kind) {
        case Kind::none: return "clean";
        case Kind::resize: return "resize:" + real_text(p.value);
        case Kind::gaussian_blur: return "blur:" + real_text(p.value);
        case Kind::gaussian_noise: return "noise:" + real_text(p.value);
        case Kind::fgsm: return "fgsm:" + real_text(p.value);
    }
    return "clean";
}

}  // namespace

std::vector<Perturbation> default_perturbations() {
    return {Perturbation::parse("resize:0.5"), Perturbation::parse("blur:3"), Perturbation::parse("noise:15"),
            Perturbation::parse("fgsm:0.02")};
}

std::vector<std::string> RunConfig::keys() {
    return {"seed",          "nbf",         "k",           "convs_per_block", "height",      "width",
            "coarse_front",  "refined_front", "attention", "coarse_to_fine",  "sat",         "eps_max",
            "lr",            "iterations",  "batch_size",  "flip_rotate",     "checkpoint_every", "manifest",
            "output_dir",    "base_dir",    "train_count", "test_count",      "kinds",       "perturbations"};
}

void RunConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    const auto size = [&] { return static_cast<std::size_t>(parse_uint(key, v)); };
    try {
        if (key == "seed") {
            seed = parse_uint(key, v);
        } else if (key == "nbf") {
            model.nbf = size();
        } else if (key == "k") {
            model.k = size();
        } else if (key == "convs_per_block") {
            model.convs_per_block = size();
        } else if (key == "height") {
            model.height = size();
        } else if (key == "width") {
            model.width = size();
        } else if (key == "coarse_front") {
            model.coarse_front = front_end_from_string(v);
        } else if (key == "refined_front") {
            model.refined_front = front_end_from_string(v);
        } else if (key == "attention") {
            model.attention = parse_bool(key, v);
        } else if (key == "coarse_to_fine") {
            model.coarse_to_fine = parse_bool(key, v);
        } else if (key == "sat") {
            training.sat = parse_bool(key, v);
        } else if (key == "eps_max") {
            training.eps_max = parse_real(key, v);
        } else if (key == "lr") {
            training.lr = parse_real(key, v);
        } else if (key == "iterations") {
            training.iterations = size();
        } else if (key == "batch_size") {
            training.batch_size = size();
        } else if (key == "flip_rotate") {
            training.flip_rotate = parse_bool(key, v);
        } else if (key == "checkpoint_every") {
            checkpoint_every = size();
        } else if (key == "manifest") {
            manifest = v;
        } else if (key == "output_dir") {
            output_dir = v;
        } else if (key == "base_dir") {
            base_dir = v;
        } else if (key == "train_count") {
            train_count = size();
        } else if (key == "test_count") {
            test_count = size();
        } else if (key == "kinds") {
            std::vector<ForgeryKind> ks;
            for (const auto& item : split_list(v)) ks.push_back(forgery_kind_from_string(item));
            kinds = ks;
        } else if (key == "perturbations") {
            std::vector<Perturbation> ps;
            for (const auto& item : split_list(v)) {
                Perturbation p = Perturbation::parse(item);
                if (p.kind != Perturbation::Kind::none) ps.push_back(p);
            }
            perturbations = ps;
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "# resolved run configuration\n";
    os << "seed = " << seed << '\n';
    os << "nbf = " << model.nbf << '\n';
    os << "k = " << model.k << '\n';
    os << "convs_per_block = " << model.convs_per_block << '\n';
    os << "height = " << model.height << '\n';
    os << "width = " << model.width << '\n';
    os << "coarse_front = " << to_string(model.coarse_front) << '\n';
    os << "refined_front = " << to_string(model.refined_front) << '\n';
    os << "attention = " << bool_text(model.attention) << '\n';
    os << "coarse_to_fine = " << bool_text(model.coarse_to_fine) << '\n';
    os << "sat = " << bool_text(training.sat) << '\n';
    os << "eps_max = " << real_text(training.eps_max) << '\n';
    os << "lr = " << real_text(training.lr) << '\n';
    os << "iterations = " << training.iterations << '\n';
    os << "batch_size = " << training.batch_size << '\n';
    os << "flip_rotate = " << bool_text(training.flip_rotate) << '\n';
    os << "checkpoint_every = " << checkpoint_every << '\n';
    os << "manifest = " << manifest.string() << '\n';
    os << "output_dir = " << output_dir.string() << '\n';
    os << "base_dir = " << base_dir.string() << '\n';
    os << "train_count = " << train_count << '\n';
    os << "test_count = " << test_count << '\n';
    os << "kinds = ";
    for (std::size_t i = 0; i < kinds.size(); ++i) os << (i ? "," : "") << to_string(kinds[i]);
    os << '\n';
    os << "perturbations = ";
    for (std::size_t i = 0; i < perturbations.size(); ++i) os << (i ? "," : "") << perturbation_text(perturbations[i]);
    os << '\n';
    return os.str();
}

void RunConfig::validate() const {
    try {
        model.validate();
        training.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (kinds.empty()) throw ConfigError("config: kinds must name at least one forgery kind");
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
    RunConfig cfg;
    cfg.perturbations = default_perturbations();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        try {
            cfg.set(key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string());
}

void apply_seed_override(RunConfig& config) {
    if (const char* env = std::getenv("FORGELOC_SEED")) {
        try {
            config.set("seed", env);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("FORGELOC_SEED: ") + e.what());
        }
    }
}

}  // namespace forgeloc
