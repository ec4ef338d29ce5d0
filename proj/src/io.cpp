#include "splatsr/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace splatsr {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot read file: " + path, 0);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

namespace {

constexpr double kColorScale = 0.28209479177387814; // 1/(2*sqrt(pi)), SH DC term

void append_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    char buf[4];
    std::memcpy(buf, &f, 4);
    out.append(buf, 4);
}

constexpr const char* kPlyProps[17] = {"x",      "y",       "z",       "nx",     "ny",
                                       "nz",     "f_dc_0",  "f_dc_1",  "f_dc_2", "opacity",
                                       "scale_0", "scale_1", "scale_2", "rot_0",  "rot_1",
                                       "rot_2",  "rot_3"};

} // namespace

void ply_write(const Scene& scene, const std::string& path) {
    std::string out;
    out += "ply\nformat binary_little_endian 1.0\n";
    out += "element vertex " + std::to_string(scene.primitives.size()) + "\n";
    for (const char* prop : kPlyProps) out += std::string("property float ") + prop + "\n";
    out += "end_header\n";

    for (const auto& p : scene.primitives) {
        for (int j = 0; j < 3; ++j) append_f32(out, p.position[j]);
        for (int j = 0; j < 3; ++j) append_f32(out, 0.0); // normals, unused
        for (int j = 0; j < 3; ++j)
            append_f32(out, (logistic(p.color_logit[j]) - 0.5) / kColorScale);
        append_f32(out, p.opacity_logit);
        for (int j = 0; j < 3; ++j) append_f32(out, p.log_scale[j]);
        for (int j = 0; j < 4; ++j) append_f32(out, p.rotation[j]);
    }
    atomic_write(path, out);
}

namespace {

// one header line: [start, end) excludes the newline; returns the next start
std::size_t take_line(const std::string& bytes, std::size_t start, std::string& line) {
    const std::size_t nl = bytes.find('\n', start);
    if (nl == std::string::npos) throw ParseError("unterminated header line", start);
    line = bytes.substr(start, nl - start);
    return nl + 1;
}

} // namespace

Scene ply_read(const std::string& path) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0, line_start = 0;
    std::string line;

    line_start = pos;
    pos = take_line(bytes, pos, line);
    if (line != "ply") throw ParseError("not a PLY file", line_start);
    line_start = pos;
    pos = take_line(bytes, pos, line);
    if (line != "format binary_little_endian 1.0")
        throw ParseError("unsupported PLY format (need binary little-endian 1.0)", line_start);

    std::size_t vertex_count = 0;
    bool have_element = false;
    std::vector<std::string> props;
    for (;;) {
        line_start = pos;
        pos = take_line(bytes, pos, line);
        if (line == "end_header") break;
        if (line.rfind("comment", 0) == 0) continue;
        if (line.rfind("element vertex ", 0) == 0) {
            if (have_element) throw ParseError("duplicate vertex element", line_start);
            try {
                vertex_count = std::stoull(line.substr(15));
            } catch (const std::exception&) {
                throw ParseError("bad vertex count", line_start);
            }
            have_element = true;
            continue;
        }
        if (line.rfind("element ", 0) == 0)
            throw ParseError("unsupported element: " + line, line_start);
        if (line.rfind("property float ", 0) == 0) {
            if (!have_element) throw ParseError("property before vertex element", line_start);
            props.push_back(line.substr(15));
            continue;
        }
        if (line.rfind("property ", 0) == 0)
            throw ParseError("unsupported property type: " + line, line_start);
        throw ParseError("unrecognized header line: " + line, line_start);
    }
    if (!have_element) throw ParseError("missing vertex element", line_start);

    // expected order, with an optional f_rest_* run after f_dc_2
    std::size_t rest_count = 0;
    {
        std::size_t k = 0;
        auto expect = [&](const char* name) {
            if (k >= props.size() || props[k] != name)
                throw ParseError(std::string("unexpected property order (wanted ") + name + ")",
                                 line_start);
            ++k;
        };
        for (int j = 0; j < 9; ++j) expect(kPlyProps[j]); // x..f_dc_2
        while (k < props.size() && props[k].rfind("f_rest_", 0) == 0) {
            ++k;
            ++rest_count;
        }
        for (int j = 9; j < 17; ++j) expect(kPlyProps[j]); // opacity..rot_3
        if (k != props.size())
            throw ParseError("trailing unexpected property: " + props[k], line_start);
    }

    const std::size_t stride = (17 + rest_count) * 4;
    if (bytes.size() - pos < vertex_count * stride)
        throw ParseError("truncated vertex payload", bytes.size());
    if (bytes.size() - pos > vertex_count * stride)
        throw ParseError("trailing bytes after vertex payload", pos + vertex_count * stride);
    if (vertex_count == 0) throw ParseError("PLY contains no vertices", line_start);

    Scene scene;
    scene.primitives.reserve(vertex_count);
    auto f32 = [&](std::size_t at) {
        float f;
        std::memcpy(&f, bytes.data() + at, 4);
        return static_cast<double>(f);
    };
    for (std::size_t i = 0; i < vertex_count; ++i) {
        const std::size_t base = pos + i * stride;
        GaussianPrimitive p;
        double vals[17];
        for (int j = 0; j < 9; ++j) vals[j] = f32(base + static_cast<std::size_t>(j) * 4);
        for (int j = 9; j < 17; ++j)
            vals[j] = f32(base + (static_cast<std::size_t>(j) + rest_count) * 4);
        for (const double v : vals)
            if (!std::isfinite(v)) throw ParseError("non-finite vertex value", base);

        p.position = Vector3d(vals[0], vals[1], vals[2]);
        for (int j = 0; j < 3; ++j) {
            const double c = std::clamp(vals[6 + j] * kColorScale + 0.5, 1e-12, 1.0 - 1e-12);
            p.color_logit[j] = logit(c);
        }
        p.opacity_logit = vals[9];
        p.log_scale = Vector3d(vals[10], vals[11], vals[12]);
        p.rotation = Vector4d(vals[13], vals[14], vals[15], vals[16]);
        if (p.rotation.norm() == 0.0) throw ParseError("zero-norm rotation", base);
        scene.primitives.push_back(p);
    }

    Vector3d centroid = Vector3d::Zero();
    for (const auto& p : scene.primitives) centroid += p.position;
    centroid /= static_cast<double>(scene.primitives.size());
    double radius = 0.0;
    for (const auto& p : scene.primitives)
        radius = std::max(radius, (p.position - centroid).norm());
    scene.extent = std::max(radius, 1e-6);
    return scene;
}

void ppm_write(const ImageBuffer& img, const std::string& path) {
    if (!img.all_finite()) throw InvalidParameterError("image contains non-finite values");
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                      "\n255\n";
    out.reserve(out.size() + img.pixels.size());
    for (const double v : img.pixels) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<int>(std::floor(clamped * 255.0 + 0.5))));
    }
    atomic_write(path, out);
}

ImageBuffer ppm_read(const std::string& path) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;
    auto skip_space = [&] {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos])))
                ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            return;
        }
    };
    auto read_int = [&]() -> long {
        skip_space();
        const std::size_t start = pos;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos == start) throw ParseError("expected integer in PPM header", start);
        try {
            return std::stol(bytes.substr(start, pos - start));
        } catch (const std::exception&) {
            throw ParseError("integer out of range in PPM header", start);
        }
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw ParseError("not a P6 PPM", 0);
    pos = 2;
    const long w = read_int();
    const long h = read_int();
    const std::size_t maxval_at = pos;
    const long maxval = read_int();
    if (w <= 0 || h <= 0) throw ParseError("bad PPM dimensions", 2);
    if (maxval != 255) throw ParseError("unsupported PPM maxval (need 255)", maxval_at);
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw ParseError("missing whitespace after PPM header", pos);
    ++pos;

    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
    if (bytes.size() - pos < need) throw ParseError("truncated PPM payload", bytes.size());
    if (bytes.size() - pos > need)
        throw ParseError("trailing bytes after PPM payload", pos + need);

    ImageBuffer img(static_cast<int>(w), static_cast<int>(h));
    for (std::size_t i = 0; i < need; ++i)
        img.pixels[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    return img;
}

void cameras_write(const std::vector<CameraView>& views, const std::string& path) {
    std::string out;
    char buf[64];
    for (std::size_t i = 0; i < views.size(); ++i) {
        const CameraView& v = views[i];
        out += std::to_string(i);
        auto num = [&](double x) {
            std::snprintf(buf, sizeof(buf), " %.17g", x);
            out += buf;
        };
        num(v.focal.x());
        num(v.focal.y());
        num(v.principal_point.x());
        num(v.principal_point.y());
        out += " " + std::to_string(v.width) + " " + std::to_string(v.height);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) num(v.world_to_camera(r, c));
        out += "\n";
    }
    atomic_write(path, out);
}

std::vector<CameraView> cameras_read(const std::string& path) {
    const std::string bytes = read_file(path);
    std::vector<CameraView> views;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t line_start = pos;
        std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) nl = bytes.size();
        const std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        std::vector<double> tok;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            if (i >= line.size()) break;
            std::size_t consumed = 0;
            double v;
            try {
                v = std::stod(line.substr(i), &consumed);
            } catch (const std::exception&) {
                throw ParseError("bad number in camera line", line_start + i);
            }
            tok.push_back(v);
            i += consumed;
        }
        if (tok.size() != 19)
            throw ParseError("camera line needs 19 fields (id fx fy cx cy w h + 3x4 transform)",
                             line_start);
        for (double t : tok)
            if (!std::isfinite(t)) throw ParseError("non-finite value in camera line", line_start);
        if (tok[5] < 1 || tok[5] > 65536 || tok[6] < 1 || tok[6] > 65536)
            throw ParseError("camera dimensions out of range", line_start);

        CameraView v;
        v.focal = Vector2d(tok[1], tok[2]);
        v.principal_point = Vector2d(tok[3], tok[4]);
        v.width = static_cast<int>(tok[5]);
        v.height = static_cast<int>(tok[6]);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) v.world_to_camera(r, c) = tok[7 + r * 4 + c];
        views.push_back(v);
    }
    return views;
}

namespace {

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key, "expected a number, got '" + value + "'");
    }
}

long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long v = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key, "expected an integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError(key, "expected a boolean (0/1/true/false), got '" + value + "'");
}

} // namespace

void apply_config_kv(TrainConfig& config, const std::string& key, const std::string& value) {
    auto bounded = [&](double v, double lo, double hi, const char* what) {
        if (v < lo || v > hi) throw ConfigError(key, what);
        return v;
    };
    if (key == "lambda_sds") {
        config.lambda_sds = parse_double(key, value);
        if (config.lambda_sds < 0) throw ConfigError(key, "must be >= 0");
    } else if (key == "w_mode") {
        if (value == "const") config.w_mode = WMode::Const;
        else if (value == "one_minus_abar") config.w_mode = WMode::OneMinusAbar;
        else throw ConfigError(key, "expected const or one_minus_abar");
    } else if (key == "dropout_p") {
        config.dropout_p = bounded(parse_double(key, value), 0.0, 1.0, "must be in [0,1]");
    } else if (key == "dropout_enabled") {
        config.dropout_enabled = parse_bool(key, value);
    } else if (key == "anneal_enabled") {
        config.anneal_enabled = parse_bool(key, value);
    } else if (key == "anneal_n") {
        config.anneal_N = static_cast<int>(parse_int(key, value));
        if (config.anneal_N < 1) throw ConfigError(key, "must be >= 1");
    } else if (key == "anneal_delta") {
        config.anneal_delta = static_cast<int>(parse_int(key, value));
        if (config.anneal_delta < 1) throw ConfigError(key, "must be >= 1");
    } else if (key == "t_min") {
        config.t_min = static_cast<int>(parse_int(key, value));
        if (config.t_min < 1) throw ConfigError(key, "must be >= 1");
    } else if (key == "timesteps") {
        config.T = static_cast<int>(parse_int(key, value));
        if (config.T < 2) throw ConfigError(key, "must be >= 2");
    } else if (key == "beta_start") {
        config.beta_start = parse_double(key, value);
        if (!(config.beta_start > 0.0) || !(config.beta_start < 1.0))
            throw ConfigError(key, "must be in (0,1)");
    } else if (key == "beta_end") {
        config.beta_end = parse_double(key, value);
        if (!(config.beta_end > 0.0) || !(config.beta_end < 1.0))
            throw ConfigError(key, "must be in (0,1)");
    } else if (key == "prior") {
        if (value == "perfect") config.prior_mode = PriorMode::Perfect;
        else if (value == "noisy") config.prior_mode = PriorMode::Noisy;
        else if (value == "bicubic") config.prior_mode = PriorMode::Bicubic;
        else throw ConfigError(key, "expected perfect, noisy or bicubic");
    } else if (key == "sigma_p") {
        config.sigma_p = parse_double(key, value);
        if (config.sigma_p < 0) throw ConfigError(key, "must be >= 0");
    } else if (key == "densify_enabled") {
        config.densify_enabled = parse_bool(key, value);
    } else if (key == "tau_pos") {
        config.tau_pos = parse_double(key, value);
        if (!(config.tau_pos > 0)) throw ConfigError(key, "must be > 0");
    } else if (key == "percent_dense") {
        config.percent_dense = parse_double(key, value);
        if (!(config.percent_dense > 0)) throw ConfigError(key, "must be > 0");
    } else if (key == "opacity_min") {
        config.opacity_min = parse_double(key, value);
        if (!(config.opacity_min > 0.0) || !(config.opacity_min < 1.0))
            throw ConfigError(key, "must be in (0,1)");
    } else if (key == "densify_from") {
        config.densify_from = static_cast<int>(parse_int(key, value));
        if (config.densify_from < 0) throw ConfigError(key, "must be >= 0");
    } else if (key == "densify_interval") {
        config.densify_interval = static_cast<int>(parse_int(key, value));
        if (config.densify_interval < 1) throw ConfigError(key, "must be >= 1");
    } else if (key == "densify_until_frac") {
        config.densify_until_frac =
            bounded(parse_double(key, value), 0.0, 1.0, "must be in [0,1]");
    } else if (key == "iterations_lr") {
        config.iterations_lr = static_cast<int>(parse_int(key, value));
        if (config.iterations_lr < 0) throw ConfigError(key, "must be >= 0");
    } else if (key == "iterations_sr") {
        config.iterations_sr = static_cast<int>(parse_int(key, value));
        if (config.iterations_sr < 0) throw ConfigError(key, "must be >= 0");
    } else if (key == "lr_position") {
        config.lr_position = parse_double(key, value);
        if (!(config.lr_position > 0)) throw ConfigError(key, "must be > 0");
    } else if (key == "lr_log_scale") {
        config.lr_log_scale = parse_double(key, value);
        if (!(config.lr_log_scale > 0)) throw ConfigError(key, "must be > 0");
    } else if (key == "lr_rotation") {
        config.lr_rotation = parse_double(key, value);
        if (!(config.lr_rotation > 0)) throw ConfigError(key, "must be > 0");
    } else if (key == "lr_opacity") {
        config.lr_opacity = parse_double(key, value);
        if (!(config.lr_opacity > 0)) throw ConfigError(key, "must be > 0");
    } else if (key == "lr_color") {
        config.lr_color = parse_double(key, value);
        if (!(config.lr_color > 0)) throw ConfigError(key, "must be > 0");
    } else if (key == "seed") {
        try {
            config.seed = std::stoull(value);
        } catch (const std::exception&) {
            throw ConfigError(key, "expected an unsigned integer, got '" + value + "'");
        }
    } else if (key == "sr_factor") {
        config.sr_factor = static_cast<int>(parse_int(key, value));
        if (config.sr_factor < 1) throw ConfigError(key, "must be >= 1");
    } else if (key == "init_primitives") {
        config.init_primitives = static_cast<int>(parse_int(key, value));
        if (config.init_primitives < 1) throw ConfigError(key, "must be >= 1");
    } else if (key == "init_extent") {
        config.init_extent = parse_double(key, value);
        if (!(config.init_extent > 0)) throw ConfigError(key, "must be > 0");
    } else if (key == "background") {
        const std::size_t c1 = value.find(',');
        const std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                                       : value.find(',', c1 + 1);
        if (c2 == std::string::npos) throw ConfigError(key, "expected r,g,b");
        config.background =
            Vector3d(parse_double(key, value.substr(0, c1)),
                     parse_double(key, value.substr(c1 + 1, c2 - c1 - 1)),
                     parse_double(key, value.substr(c2 + 1)));
    } else if (key == "threads") {
        config.threads = static_cast<int>(parse_int(key, value));
        if (config.threads < 1) throw ConfigError(key, "must be >= 1");
    } else if (key == "psnr_interval") {
        config.psnr_interval = static_cast<int>(parse_int(key, value));
        if (config.psnr_interval < 0) throw ConfigError(key, "must be >= 0");
    } else {
        throw ConfigError(key, "unknown key");
    }
}

TrainConfig parse_config(const std::string* path,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    TrainConfig config;
    if (path) {
        const std::string text = read_file(*path);
        std::size_t pos = 0;
        while (pos <= text.size()) {
            std::size_t nl = text.find('\n', pos);
            if (nl == std::string::npos) nl = text.size();
            std::string line = text.substr(pos, nl - pos);
            pos = nl + 1;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const std::size_t b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) {
                if (nl == text.size()) break;
                continue;
            }
            const std::size_t e = line.find_last_not_of(" \t\r");
            line = line.substr(b, e - b + 1);
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(line, "expected key=value");
            auto trim = [](std::string s) {
                const std::size_t x = s.find_first_not_of(" \t");
                if (x == std::string::npos) return std::string();
                const std::size_t y = s.find_last_not_of(" \t");
                return s.substr(x, y - x + 1);
            };
            apply_config_kv(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
            if (nl == text.size()) break;
        }
    }
    for (const auto& [key, value] : overrides) apply_config_kv(config, key, value);
    try {
        config.validate();
    } catch (const InvalidParameterError& e) {
        throw ConfigError("(cross-field)", e.what());
    }
    return config;
}

void write_telemetry_csv(const std::vector<TelemetryRow>& rows, const std::string& path) {
    std::string out = "iter,loss_mse,arm,t,lb,grad_mean,grad_max,n_prims,psnr\n";
    char buf[320];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%s,%d,%d,%.17g,%.17g,%zu,%.17g\n",
                      static_cast<long long>(r.iter), r.loss_mse, r.arm.c_str(), r.t, r.lb,
                      r.grad_mean, r.grad_max, r.n_prims, r.psnr);
        out += buf;
    }
    atomic_write(path, out);
}

} // namespace splatsr
