#include "lporec/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lporec {

namespace {

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ValidationError("ParseError", "bad number for " + key + ": '" + v + "'");
    }
}

int64_t parse_int(const std::string& key, const std::string& v) {
    int64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ValidationError("ParseError", "bad integer for " + key + ": '" + v + "'");
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "desk") {
        c.dims = ModelDims{64, 4, 1, 10, 0};
        c.precision = Precision::f32;
        c.train.dropout_p = 0.2;
        c.train.epochs = 20;
    } else if (name == "paper") {
        c.dims = ModelDims{768, 16, 1, 10, 0};
        c.precision = Precision::f32;
        c.train.dropout_p = 0.8;
        c.train.epochs = 200;
    } else {
        throw ValidationError("InvalidSpec", "unknown preset '" + name + "'");
    }
    c.train.lr = 5e-4;
    c.train.batch_size = 128;
    c.train.warmup_ratio = 0.1;
    c.train.loss = LossKind::ce_lpo;
    c.train.loss_config = LossConfig{};  // lambda 0.5, tau 0.1, k 10, alpha 1/0, beta 1
    c.train.sampler = SamplingStrategy{};
    return c;
}

void RunConfig::apply_kv(const std::string& key, const std::string& value) {
    if (key == "preset") { /* applied first by from_text */
    } else if (key == "seed") {
        seed = static_cast<uint64_t>(parse_int(key, value));
        train.seed = seed;
    } else if (key == "out") {
        out_dir = value;
    } else if (key == "data.dir") {
        data_dir = value;
    } else if (key == "precision") {
        if (value == "f32") precision = Precision::f32;
        else if (value == "f64") precision = Precision::f64;
        else throw ValidationError("ParseError", "precision must be f32 or f64");
    } else if (key == "model.d") {
        dims.d = static_cast<int>(parse_int(key, value));
    } else if (key == "model.heads") {
        dims.heads = static_cast<int>(parse_int(key, value));
    } else if (key == "model.blocks") {
        dims.blocks = static_cast<int>(parse_int(key, value));
    } else if (key == "model.l_max") {
        dims.l_max = static_cast<int>(parse_int(key, value));
    } else if (key == "train.lr") {
        train.lr = parse_double(key, value);
    } else if (key == "train.epochs") {
        train.epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "train.batch_size") {
        train.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "train.warmup_ratio") {
        train.warmup_ratio = parse_double(key, value);
    } else if (key == "train.dropout") {
        train.dropout_p = parse_double(key, value);
    } else if (key == "train.loss") {
        train.loss = parse_loss_kind(value);
    } else if (key == "train.grad_clip") {
        train.grad_clip = parse_double(key, value);
    } else if (key == "train.ref_epochs") {
        train.ref_epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "loss.lambda") {
        train.loss_config.lambda = parse_double(key, value);
    } else if (key == "loss.tau") {
        train.loss_config.tau = parse_double(key, value);
    } else if (key == "loss.alpha_t") {
        train.loss_config.alpha_t = parse_double(key, value);
    } else if (key == "loss.alpha_h") {
        train.loss_config.alpha_h = parse_double(key, value);
    } else if (key == "loss.dpo_beta") {
        train.loss_config.dpo_beta = parse_double(key, value);
    } else if (key == "sampler.kind") {
        train.sampler.kind = parse_sampler_kind(value);
    } else if (key == "sampler.k") {
        train.sampler.k = static_cast<int>(parse_int(key, value));
        train.loss_config.k = train.sampler.k;
    } else if (key == "sampler.gumbel_scale") {
        train.sampler.gumbel_scale = parse_double(key, value);
    } else {
        throw ValidationError("UnknownKey", "unknown config key '" + key + "'");
    }
}

RunConfig RunConfig::from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::pair<std::string, std::string>> kvs;
    std::string preset_name = "desk";
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("ParseError", "config line " + std::to_string(line_no) +
                                                    ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "preset") preset_name = value;
        kvs.emplace_back(key, value);
    }
    RunConfig config = preset_config(preset_name);
    for (const auto& [k, v] : kvs) config.apply_kv(k, v);
    return config;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("IoError", "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    out << "preset = " << preset << '\n';
    out << "seed = " << seed << '\n';
    out << "out = " << out_dir << '\n';
    out << "data.dir = " << data_dir << '\n';
    out << "precision = " << precision_name(precision) << '\n';
    out << "model.d = " << dims.d << '\n';
    out << "model.heads = " << dims.heads << '\n';
    out << "model.blocks = " << dims.blocks << '\n';
    out << "model.l_max = " << dims.l_max << '\n';
    out << "train.lr = " << fmt_double(train.lr) << '\n';
    out << "train.epochs = " << train.epochs << '\n';
    out << "train.batch_size = " << train.batch_size << '\n';
    out << "train.warmup_ratio = " << fmt_double(train.warmup_ratio) << '\n';
    out << "train.dropout = " << fmt_double(train.dropout_p) << '\n';
    out << "train.loss = " << loss_kind_name(train.loss) << '\n';
    out << "train.grad_clip = " << fmt_double(train.grad_clip) << '\n';
    out << "train.ref_epochs = " << train.ref_epochs << '\n';
    out << "loss.lambda = " << fmt_double(train.loss_config.lambda) << '\n';
    out << "loss.tau = " << fmt_double(train.loss_config.tau) << '\n';
    out << "loss.alpha_t = " << fmt_double(train.loss_config.alpha_t) << '\n';
    out << "loss.alpha_h = " << fmt_double(train.loss_config.alpha_h) << '\n';
    out << "loss.dpo_beta = " << fmt_double(train.loss_config.dpo_beta) << '\n';
    out << "sampler.kind = " << sampler_kind_name(train.sampler.kind) << '\n';
    out << "sampler.k = " << train.sampler.k << '\n';
    out << "sampler.gumbel_scale = " << fmt_double(train.sampler.gumbel_scale) << '\n';
    return out.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + path.string());
    out << to_text();
}

}  // namespace lporec
