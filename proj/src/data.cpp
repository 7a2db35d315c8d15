#include "forgeloc/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace forgeloc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- PNG I/O

Raster read_png(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("cannot read " + path.string() + ": no such file");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot read " + path.string() + ": " + msg);
    }
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw IoError("cannot read " + path.string() + ": unsupported bit depth (only 8-bit PNG is supported)");
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::size_t channels = color ? 3 : 1;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot read " + path.string() + ": " + msg);
    }
    Raster r(channels, image.height, image.width);
    for (std::size_t y = 0; y < r.height; ++y) {
        for (std::size_t x = 0; x < r.width; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                r.at(c, y, x) = static_cast<float>(buffer[(y * r.width + x) * channels + c]) / 255.0f;
            }
        }
    }
    return r;
}

void write_png(const Raster& r, const fs::path& path) {
    if (r.channels != 1 && r.channels != 3) {
        throw IoError("cannot write " + path.string() + ": " + std::to_string(r.channels) +
                      "-channel raster (need 1 or 3)");
    }
    if (r.height == 0 || r.width == 0) throw IoError("cannot write " + path.string() + ": empty raster");
    std::vector<png_byte> buffer(r.channels * r.plane());
    for (std::size_t y = 0; y < r.height; ++y) {
        for (std::size_t x = 0; x < r.width; ++x) {
            for (std::size_t c = 0; c < r.channels; ++c) {
                const float v = std::clamp(r.at(c, y, x), 0.0f, 1.0f);
                buffer[(y * r.width + x) * r.channels + c] = static_cast<png_byte>(std::lround(v * 255.0f));
            }
        }
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(r.width);
    image.height = static_cast<png_uint_32>(r.height);
    image.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        std::error_code ec;
        fs::remove(path, ec);
        throw IoError("cannot write " + path.string() + ": " + msg);
    }
}

void quantize8(Raster& r) {
    for (float& v : r.data) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

// ---------------------------------------------------------------- resizing

namespace {

void check_target(std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw std::invalid_argument("resize: target dimensions must be positive");
}

// Overlap weights of output cells [o*s, (o+1)*s) against unit input cells.
std::vector<std::vector<std::pair<std::size_t, double>>> area_weights(std::size_t in, std::size_t out) {
    std::vector<std::vector<std::pair<std::size_t, double>>> w(out);
    const double s = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double lo = static_cast<double>(o) * s;
        const double hi = static_cast<double>(o + 1) * s;
        const auto first = static_cast<std::size_t>(std::floor(lo));
        const auto last = std::min(in, static_cast<std::size_t>(std::ceil(hi)));
        for (std::size_t i = first; i < last; ++i) {
            const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
            if (overlap > 1e-12) w[o].emplace_back(i, overlap / s);
        }
    }
    return w;
}

}  // namespace

Raster resize_image(const Raster& image, std::size_t height, std::size_t width) {
    check_target(height, width);
    if (image.height == height && image.width == width) return image;
    const auto wy = area_weights(image.height, height);
    const auto wx = area_weights(image.width, width);
    Raster out(image.channels, height, width);
    std::vector<double> rows(image.width);
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::size_t oy = 0; oy < height; ++oy) {
            std::fill(rows.begin(), rows.end(), 0.0);
            for (const auto& [iy, a] : wy[oy]) {
                for (std::size_t ix = 0; ix < image.width; ++ix) rows[ix] += a * image.at(c, iy, ix);
            }
            for (std::size_t ox = 0; ox < width; ++ox) {
                double acc = 0.0;
                for (const auto& [ix, b] : wx[ox]) acc += b * rows[ix];
                out.at(c, oy, ox) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Raster resize_mask(const Raster& mask, std::size_t height, std::size_t width) {
    check_target(height, width);
    Raster out(mask.channels, height, width);
    for (std::size_t c = 0; c < mask.channels; ++c) {
        for (std::size_t y = 0; y < height; ++y) {
            const std::size_t sy = std::min(mask.height - 1, y * mask.height / height);
            for (std::size_t x = 0; x < width; ++x) {
                const std::size_t sx = std::min(mask.width - 1, x * mask.width / width);
                out.at(c, y, x) = mask.at(c, sy, sx);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------- kinds

const char* to_string(ForgeryKind kind) {
    switch (kind) {
        case ForgeryKind::splice: return "splice";
        case ForgeryKind::copy_move: return "copy_move";
        case ForgeryKind::removal: return "removal";
    }
    return "?";
}

ForgeryKind forgery_kind_from_string(const std::string& s) {
    if (s == "splice") return ForgeryKind::splice;
    if (s == "copy_move" || s == "copy-move") return ForgeryKind::copy_move;
    if (s == "removal") return ForgeryKind::removal;
    throw std::invalid_argument("unknown forgery kind '" + s + "' (expected splice, copy_move or removal)");
}

const char* to_string(Split split) { return split == Split::train ? "train" : "test"; }

// ---------------------------------------------------------------- scenes

Raster generate_base(std::size_t height, std::size_t width, const NoiseModel& noise, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };
    Raster r(3, height, width);
    const double h = static_cast<double>(height), w = static_cast<double>(width);

    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = uni(0.15, 0.85);
        c1[c] = uni(0.15, 0.85);
    }
    const double angle = uni(0.0, 2.0 * std::numbers::pi);
    const double gx = std::cos(angle), gy = std::sin(angle);
    const double span = std::abs(gx) * w + std::abs(gy) * h;
    struct Wave {
        double fx, fy, phase, amp, tint[3];
    };
    Wave waves[2];
    for (auto& wv : waves) {
        const double f = uni(0.02, 0.12), th = uni(0.0, std::numbers::pi);
        wv = {f * std::cos(th), f * std::sin(th), uni(0.0, 2.0 * std::numbers::pi), uni(0.02, 0.06), {}};
        for (double& t : wv.tint) t = uni(0.5, 1.0);
    }
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            double t = (gx * (px - w / 2) + gy * (py - h / 2)) / span + 0.5;
            t = std::clamp(t, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                double v = c0[c] * (1 - t) + c1[c] * t;
                for (const auto& wv : waves) {
                    v += wv.amp * wv.tint[c] * std::sin(2.0 * std::numbers::pi * (wv.fx * px + wv.fy * py) + wv.phase);
                }
                r.at(c, y, x) = static_cast<float>(v);
            }
        }
    }

    std::uniform_int_distribution<int> shape_count(3, 7);
    const int shapes = shape_count(rng);
    for (int s = 0; s < shapes; ++s) {
        const bool ellipse = u(rng) < 0.5;
        const double cy = uni(0, h), cx = uni(0, w);
        const double ry = uni(0.05, 0.22) * h, rx = uni(0.05, 0.22) * w;
        double col[3];
        for (double& c : col) c = uni(0.05, 0.95);
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
                const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
                const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
                if (!inside) continue;
                for (int c = 0; c < 3; ++c) r.at(c, y, x) = static_cast<float>(col[c]);
            }
        }
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double luma = noise.luma_sigma * gauss(rng);
            double chroma[3];
            for (double& c : chroma) c = noise.chroma_sigma * gauss(rng);
            const double mean = (chroma[0] + chroma[1] + chroma[2]) / 3.0;
            for (int c = 0; c < 3; ++c) {
                const double v = r.at(c, y, x) + luma + (chroma[c] - mean);
                r.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------- regions

namespace {

double mask_fraction(const Raster& m) {
    double s = 0.0;
    for (float v : m.data) s += v;
    return s / static_cast<double>(m.plane());
}

struct Box {
    std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // inclusive-exclusive
};

Box bounding_box(const Raster& m) {
    Box b{m.height, 0, m.width, 0};
    for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) {
            if (m.at(0, y, x) == 0.0f) continue;
            b.y0 = std::min(b.y0, y);
            b.y1 = std::max(b.y1, y + 1);
            b.x0 = std::min(b.x0, x);
            b.x1 = std::max(b.x1, x + 1);
        }
    }
    return b;
}

Raster draw_region(std::size_t height, std::size_t width, Rng& rng, double max_extent) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };
    const double h = static_cast<double>(height), w = static_cast<double>(width);
    const double max_r = std::max(0.08, max_extent / 2.0);
    const double ry = uni(0.06, max_r) * h, rx = uni(0.06, max_r) * w;
    const double cy = uni(ry * 0.5, h - ry * 0.5), cx = uni(rx * 0.5, w - rx * 0.5);
    Raster m(1, height, width);
    if (u(rng) < 0.5) {
        const double th = uni(0.0, std::numbers::pi);
        const double ct = std::cos(th), st = std::sin(th);
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
                const double a = (dx * ct + dy * st) / rx, b = (-dx * st + dy * ct) / ry;
                if (a * a + b * b <= 1.0) m.at(0, y, x) = 1.0f;
            }
        }
    } else {
        std::uniform_int_distribution<int> vcount(5, 9);
        const int n = vcount(rng);
        std::vector<double> angles(n);
        for (double& a : angles) a = uni(0.0, 2.0 * std::numbers::pi);
        std::sort(angles.begin(), angles.end());
        std::vector<std::pair<double, double>> poly;
        for (double a : angles) {
            const double k = uni(0.45, 1.0);
            poly.emplace_back(cx + k * rx * std::cos(a), cy + k * ry * std::sin(a));
        }
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                bool inside = false;
                for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
                    const auto [xi, yi] = poly[i];
                    const auto [xj, yj] = poly[j];
                    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
                }
                if (inside) m.at(0, y, x) = 1.0f;
            }
        }
    }
    return m;
}

bool fraction_ok(const Raster& m) {
    const double f = mask_fraction(m);
    return f > kMinTamperedFraction && f < kMaxTamperedFraction;
}

}  // namespace

Raster sample_region(std::size_t height, std::size_t width, Rng& rng, double max_extent) {
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        Raster m = draw_region(height, width, rng, max_extent);
        if (fraction_ok(m)) return m;
    }
    throw std::runtime_error("region sampler: no region with tampered fraction in (0.005, 0.5) after " +
                             std::to_string(kPlacementAttempts) + " attempts on a " + std::to_string(height) + "x" +
                             std::to_string(width) + " image");
}

// ---------------------------------------------------------------- forgeries

namespace {

void require_rgb(const Raster& r, const char* what) {
    if (r.channels != 3) throw std::invalid_argument(std::string(what) + ": expected a 3-channel image");
}

}  // namespace

ForgerySample generate_splice(const Raster& base, const Raster& donor, Rng& rng, SpliceOptions options) {
    require_rgb(base, "generate_splice");
    require_rgb(donor, "generate_splice");
    if (!base.same_size(donor)) throw std::invalid_argument("generate_splice: base and donor sizes differ");
    ForgerySample s{base, sample_region(base.height, base.width, rng), ForgeryKind::splice};
    const Raster& m = s.mask;
    for (std::size_t y = 0; y < base.height; ++y) {
        for (std::size_t x = 0; x < base.width; ++x) {
            if (m.at(0, y, x) == 0.0f) continue;
            float weight = 1.0f;
            if (options.feather) {
                const bool edge = (y == 0 || m.at(0, y - 1, x) == 0.0f) || (y + 1 == base.height || m.at(0, y + 1, x) == 0.0f) ||
                                  (x == 0 || m.at(0, y, x - 1) == 0.0f) || (x + 1 == base.width || m.at(0, y, x + 1) == 0.0f);
                if (edge) weight = 0.5f;
            }
            for (std::size_t c = 0; c < 3; ++c) {
                s.image.at(c, y, x) = weight * donor.at(c, y, x) + (1.0f - weight) * base.at(c, y, x);
            }
        }
    }
    return s;
}

ForgerySample generate_copy_move(const Raster& base, Rng& rng) {
    require_rgb(base, "generate_copy_move");
    const std::size_t h = base.height, w = base.width;
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        Raster region;
        try {
            region = sample_region(h, w, rng, 0.45);
        } catch (const std::runtime_error&) {
            continue;
        }
        const Box b = bounding_box(region);
        const std::size_t bh = b.y1 - b.y0, bw = b.x1 - b.x0;
        if (bh >= h || bw >= w) continue;
        std::uniform_int_distribution<std::size_t> dy_dist(0, h - bh), dx_dist(0, w - bw);
        for (int trial = 0; trial < 64; ++trial) {
            const std::size_t ny = dy_dist(rng), nx = dx_dist(rng);
            const bool overlap = ny < b.y1 && b.y0 < ny + bh && nx < b.x1 && b.x0 < nx + bw;
            if (overlap) continue;
            ForgerySample s{base, Raster(1, h, w), ForgeryKind::copy_move};
            for (std::size_t y = b.y0; y < b.y1; ++y) {
                for (std::size_t x = b.x0; x < b.x1; ++x) {
                    if (region.at(0, y, x) == 0.0f) continue;
                    const std::size_t ty = y - b.y0 + ny, tx = x - b.x0 + nx;
                    for (std::size_t c = 0; c < 3; ++c) s.image.at(c, ty, tx) = base.at(c, y, x);
                    s.mask.at(0, ty, tx) = 1.0f;
                }
            }
            return s;
        }
    }
    throw std::runtime_error("generate_copy_move: no valid non-overlapping placement after " +
                             std::to_string(kPlacementAttempts) + " attempts");
}

namespace {

constexpr double kFillRelaxation = 1.85;  // successive over-relaxation factor

}  // namespace

Raster diffusion_fill(const Raster& image, const Raster& region, FillReport* report, double tolerance,
                      int max_sweeps) {
    if (!image.same_size(region) || region.channels != 1) {
        throw std::invalid_argument("diffusion_fill: region must be a one-channel mask of the image size");
    }
    const std::size_t h = image.height, w = image.width, n = image.plane();
    std::vector<char> known(n);
    std::vector<std::size_t> todo;
    for (std::size_t p = 0; p < n; ++p) {
        known[p] = region.data[p] == 0.0f;
        if (!known[p]) todo.push_back(p);
    }
    if (todo.size() == n) throw std::invalid_argument("diffusion_fill: region covers the whole image");
    Raster out = image;

    const auto neighbours = [&](std::size_t p, auto&& fn) {
        const std::size_t y = p / w, x = p % w;
        if (y > 0) fn(p - w);
        if (y + 1 < h) fn(p + w);
        if (x > 0) fn(p - 1);
        if (x + 1 < w) fn(p + 1);
    };

    // Peel the region from its border inwards, each layer averaging its known neighbours.
    std::vector<std::size_t> pending = todo;
    while (!pending.empty()) {
        std::vector<std::size_t> layer, rest;
        for (std::size_t p : pending) {
            bool touches = false;
            neighbours(p, [&](std::size_t q) { touches = touches || known[q]; });
            (touches ? layer : rest).push_back(p);
        }
        for (std::size_t c = 0; c < image.channels; ++c) {
            float* plane = out.data.data() + c * n;
            std::vector<float> values(layer.size());
            for (std::size_t i = 0; i < layer.size(); ++i) {
                double acc = 0.0;
                int count = 0;
                neighbours(layer[i], [&](std::size_t q) {
                    if (known[q]) {
                        acc += plane[q];
                        ++count;
                    }
                });
                values[i] = static_cast<float>(acc / count);
            }
            for (std::size_t i = 0; i < layer.size(); ++i) plane[layer[i]] = values[i];
        }
        for (std::size_t p : layer) known[p] = 1;
        pending.swap(rest);
    }

    // Range of the ring of known pixels bordering the region, per channel.
    std::vector<float> lo(image.channels, 1e30f), hi(image.channels, -1e30f);
    for (std::size_t p : todo) {
        neighbours(p, [&](std::size_t q) {
            if (region.data[q] != 0.0f) return;
            for (std::size_t c = 0; c < image.channels; ++c) {
                lo[c] = std::min(lo[c], image.data[c * n + q]);
                hi[c] = std::max(hi[c], image.data[c * n + q]);
            }
        });
    }

    FillReport rep;
    for (rep.sweeps = 0; rep.sweeps < max_sweeps;) {
        double change = 0.0;
        for (std::size_t c = 0; c < image.channels; ++c) {
            float* plane = out.data.data() + c * n;
            for (std::size_t p : todo) {
                double acc = 0.0;
                int count = 0;
                neighbours(p, [&](std::size_t q) {
                    acc += plane[q];
                    ++count;
                });
                const double relaxed = plane[p] + kFillRelaxation * (acc / count - plane[p]);
                const auto v = std::clamp(static_cast<float>(relaxed), lo[c], hi[c]);
                change = std::max(change, static_cast<double>(std::abs(v - plane[p])));
                plane[p] = v;
            }
        }
        ++rep.sweeps;
        rep.last_change = change;
        if (change < tolerance) break;
    }
    if (report) *report = rep;
    return out;
}

ForgerySample generate_removal(const Raster& base, Rng& rng) {
    require_rgb(base, "generate_removal");
    Raster region = sample_region(base.height, base.width, rng, 0.5);
    Raster filled = diffusion_fill(base, region);
    return ForgerySample{std::move(filled), std::move(region), ForgeryKind::removal};
}

// ---------------------------------------------------------------- samples

namespace {

// Two sensor profiles that differ mainly in colour noise.
NoiseModel draw_noise(Rng& rng, bool strong_chroma) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    NoiseModel m;
    m.luma_sigma = 0.01 + 0.012 * u(rng);
    m.chroma_sigma = strong_chroma ? 0.02 + 0.015 * u(rng) : 0.002 + 0.004 * u(rng);
    return m;
}

}  // namespace

ForgerySample generate_sample(ForgeryKind kind, std::size_t height, std::size_t width, std::uint64_t seed,
                              const std::vector<Raster>* bases) {
    Rng rng(derive_seed(seed, "sample"));
    std::bernoulli_distribution coin(0.5);
    const bool base_strong = coin(rng);
    Raster base, donor;
    if (bases && !bases->empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, bases->size() - 1);
        const std::size_t i = pick(rng);
        std::size_t j = pick(rng);
        if (bases->size() > 1) {
            while (j == i) j = pick(rng);
        }
        base = (*bases)[i];
        donor = (*bases)[j];
    } else {
        const NoiseModel bn = draw_noise(rng, base_strong);
        const NoiseModel dn = draw_noise(rng, !base_strong);
        base = generate_base(height, width, bn, rng);
        donor = generate_base(height, width, dn, rng);
    }
    quantize8(base);
    quantize8(donor);
    ForgerySample s;
    switch (kind) {
        case ForgeryKind::splice: s = generate_splice(base, donor, rng); break;
        case ForgeryKind::copy_move: s = generate_copy_move(base, rng); break;
        case ForgeryKind::removal: s = generate_removal(base, rng); break;
    }
    quantize8(s.image);
    return s;
}

Tensor<float> raster_to_tensor(const Raster& r) {
    return Tensor<float>(Shape{1, r.channels, r.height, r.width}, r.data);
}

Raster tensor_to_raster(const Tensor<float>& t, std::size_t index) {
    const Shape s = t.shape();
    if (index >= s.n) throw std::out_of_range("tensor_to_raster: sample index out of range");
    Raster r(s.c, s.h, s.w);
    const auto d = t.data();
    std::copy(d.begin() + index * r.data.size(), d.begin() + (index + 1) * r.data.size(), r.data.begin());
    return r;
}

Example to_example(const ForgerySample& s) { return {raster_to_tensor(s.image), raster_to_tensor(s.mask)}; }

// ---------------------------------------------------------------- manifest

std::vector<ManifestEntry> Manifest::select(Split split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
        if (e.split == split) out.push_back(e);
    }
    return out;
}

fs::path Manifest::resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : root / path;
}

void check_disjoint(const Manifest& m) {
    std::set<std::string> train_paths;
    std::set<std::uint64_t> train_seeds;
    for (const auto& e : m.entries) {
        if (e.split == Split::train) {
            train_paths.insert(e.image_path);
            train_seeds.insert(e.seed);
        }
    }
    for (const auto& e : m.entries) {
        if (e.split != Split::test) continue;
        if (train_paths.count(e.image_path) || train_seeds.count(e.seed)) {
            throw std::runtime_error("manifest: sample '" + e.image_path + "' (seed " + std::to_string(e.seed) +
                                     ") appears in both train and test splits");
        }
    }
}

void write_manifest(const Manifest& m, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& e : m.entries) {
        out << e.image_path << '\t' << e.mask_path << '\t' << to_string(e.kind) << '\t' << e.seed << '\t'
            << to_string(e.split) << '\n';
    }
    if (!out) throw IoError("write failed for manifest " + path.string());
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest " + path.string());
    Manifest m;
    m.root = path.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        const auto bad = [&](const std::string& why) {
            throw IoError("manifest " + path.string() + " line " + std::to_string(lineno) + ": " + why);
        };
        if (fields.size() != 5) bad("expected 5 tab-separated fields, found " + std::to_string(fields.size()));
        ManifestEntry e;
        e.image_path = fields[0];
        e.mask_path = fields[1];
        try {
            e.kind = forgery_kind_from_string(fields[2]);
            e.seed = std::stoull(fields[3]);
        } catch (const std::exception& ex) {
            bad(ex.what());
        }
        if (fields[4] == "train") {
            e.split = Split::train;
        } else if (fields[4] == "test") {
            e.split = Split::test;
        } else {
            bad("split must be train or test, got '" + fields[4] + "'");
        }
        m.entries.push_back(std::move(e));
    }
    check_disjoint(m);
    return m;
}

std::vector<Raster> load_base_folder(const fs::path& dir, std::size_t height, std::size_t width) {
    if (!fs::is_directory(dir)) throw IoError("base image folder " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Raster> out;
    for (const auto& f : files) {
        Raster r = read_png(f);
        if (r.channels == 1) {
            Raster rgb(3, r.height, r.width);
            for (std::size_t c = 0; c < 3; ++c) std::copy(r.data.begin(), r.data.end(), rgb.data.begin() + c * r.plane());
            r = std::move(rgb);
        }
        out.push_back(resize_image(r, height, width));
    }
    if (out.empty()) throw IoError("no PNG files in base image folder " + dir.string());
    return out;
}

std::vector<std::pair<ManifestEntry, ForgerySample>> generate_samples(const DatasetOptions& o) {
    if (o.kinds.empty()) throw std::invalid_argument("dataset: no forgery kinds selected");
    std::vector<Raster> bases;
    if (!o.base_dir.empty()) bases = load_base_folder(o.base_dir, o.height, o.width);
    std::vector<std::pair<ManifestEntry, ForgerySample>> out;
    const std::size_t total = o.train_count + o.test_count;
    for (std::size_t i = 0; i < total; ++i) {
        ManifestEntry e;
        e.split = i < o.train_count ? Split::train : Split::test;
        e.kind = o.kinds[i % o.kinds.size()];
        e.seed = derive_seed(o.seed, "dataset", i);
        char name[64];
        std::snprintf(name, sizeof name, "%s_%05zu.png", to_string(e.split), i);
        e.image_path = std::string("images/") + name;
        e.mask_path = std::string("masks/") + name;
        ForgerySample s = generate_sample(e.kind, o.height, o.width, e.seed, bases.empty() ? nullptr : &bases);
        out.emplace_back(std::move(e), std::move(s));
    }
    return out;
}

Manifest generate_dataset(const DatasetOptions& o, const fs::path& out_dir) {
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");
    Manifest m;
    m.root = out_dir;
    for (auto& [entry, sample] : generate_samples(o)) {
        write_png(sample.image, out_dir / entry.image_path);
        write_png(sample.mask, out_dir / entry.mask_path);
        m.entries.push_back(entry);
    }
    check_disjoint(m);
    write_manifest(m, out_dir / "manifest.tsv");
    return m;
}

std::vector<Example> load_examples(const Manifest& m, Split split, std::size_t height, std::size_t width,
                                   std::vector<std::string>* warnings) {
    std::vector<Example> out;
    for (const auto& e : m.select(split)) {
        Raster image = read_png(m.resolve(e.image_path));
        Raster mask = read_png(m.resolve(e.mask_path));
        if (image.channels != 3) throw IoError(e.image_path + ": expected an RGB image");
        if (mask.channels != 1) throw IoError(e.mask_path + ": expected a gray mask");
        if (image.height != height || image.width != width) {
            if (warnings) {
                warnings->push_back(e.image_path + ": resized from " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + " to " + std::to_string(height) + "x" +
                                    std::to_string(width));
            }
            image = resize_image(image, height, width);
        }
        if (mask.height != height || mask.width != width) mask = resize_mask(mask, height, width);
        for (float& v : mask.data) v = v >= 0.5f ? 1.0f : 0.0f;
        out.push_back({raster_to_tensor(image), raster_to_tensor(mask)});
    }
    return out;
}

}  // namespace forgeloc
