#include "forgeloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "forgeloc/training.hpp"

namespace forgeloc {

namespace {

template <typename T>
void check_same_length(std::span<const T> pred, std::span<const T> gt, const char* op) {
    if (pred.size() != gt.size()) {
        throw std::invalid_argument(std::string(op) + ": prediction has " + std::to_string(pred.size()) +
                                    " pixels, ground truth " + std::to_string(gt.size()));
    }
}

template <typename T>
bool positive(T g) {
    return g >= T(0.5);
}

}  // namespace

template <typename T>
std::optional<double> pixel_auc(std::span<const T> pred, std::span<const T> gt) {
    check_same_length(pred, gt, "pixel_auc");
    const std::size_t n = pred.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
    // Ranks are doubled so that midranks of tied groups stay integral.
    std::uint64_t pos = 0;
    std::uint64_t doubled_rank_sum = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && pred[order[j]] == pred[order[i]]) ++j;
        const std::uint64_t doubled_mid = static_cast<std::uint64_t>(i + 1 + j);  // 2 * (i+1 + j) / 2
        for (std::size_t k = i; k < j; ++k) {
            if (positive(gt[order[k]])) {
                ++pos;
                doubled_rank_sum += doubled_mid;
            }
        }
        i = j;
    }
    const std::uint64_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;
    // U = R - P(P+1)/2, in doubled units.
    const std::uint64_t doubled_u = doubled_rank_sum - pos * (pos + 1);
    return static_cast<double>(doubled_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

template <typename T>
double pixel_f1(std::span<const T> pred, std::span<const T> gt, double threshold) {
    check_same_length(pred, gt, "pixel_f1");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = static_cast<double>(pred[i]) >= threshold;
        const bool g = positive(gt[i]);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

template <typename T>
std::vector<RocPoint> roc_curve(std::span<const T> pred, std::span<const T> gt) {
    check_same_length(pred, gt, "roc_curve");
    std::vector<std::size_t> order(pred.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a] > pred[b]; });
    std::size_t pos = 0;
    for (T g : gt) pos += positive(g);
    const std::size_t neg = gt.size() - pos;
    std::vector<RocPoint> curve{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const T score = pred[order[i]];
        while (i < order.size() && pred[order[i]] == score) {
            positive(gt[order[i]]) ? ++tp : ++fp;
            ++i;
        }
        curve.push_back({static_cast<double>(score), neg ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0,
                         pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0});
    }
    return curve;
}

// ---------------------------------------------------------------- perturbations

Perturbation Perturbation::parse(const std::string& text) {
    Perturbation p;
    if (text == "clean" || text == "none") return p;
    const auto sep = text.find_first_of(":=");
    if (sep == std::string::npos) {
        throw std::invalid_argument("perturbation '" + text + "' must look like kind:value (resize, blur, noise, fgsm)");
    }
    const std::string kind = text.substr(0, sep);
    const std::string value = text.substr(sep + 1);
    if (kind == "resize") {
        p.kind = Kind::resize;
    } else if (kind == "blur" || kind == "gaussian_blur") {
        p.kind = Kind::gaussian_blur;
    } else if (kind == "noise" || kind == "gaussian_noise") {
        p.kind = Kind::gaussian_noise;
    } else if (kind == "fgsm") {
        p.kind = Kind::fgsm;
    } else {
        throw std::invalid_argument("unknown perturbation kind '" + kind + "'");
    }
    std::size_t used = 0;
    try {
        p.value = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != value.size()) throw std::invalid_argument("perturbation '" + text + "': bad value");
    p.validate();
    return p;
}

void Perturbation::validate() const {
    switch (kind) {
        case Kind::none: break;
        case Kind::resize:
            if (!(value > 0.0)) throw std::invalid_argument("resize factor must be positive");
            break;
        case Kind::gaussian_blur:
            if (value < 1 || std::floor(value) != value || static_cast<long>(value) % 2 == 0) {
                throw std::invalid_argument("blur kernel size must be a positive odd integer");
            }
            break;
        case Kind::gaussian_noise:
            if (!(value >= 0.0)) throw std::invalid_argument("noise sigma must be nonnegative");
            break;
        case Kind::fgsm:
            if (!(value >= 0.0)) throw std::invalid_argument("fgsm epsilon must be nonnegative");
            break;
    }
}

std::string Perturbation::label() const {
    char buf[64];
    switch (kind) {
        case Kind::none: return "clean";
        case Kind::resize: std::snprintf(buf, sizeof buf, "resize(%gx)", value); break;
        case Kind::gaussian_blur: std::snprintf(buf, sizeof buf, "gaussian_blur(k=%g)", value); break;
        case Kind::gaussian_noise: std::snprintf(buf, sizeof buf, "gaussian_noise(sigma=%g)", value); break;
        case Kind::fgsm: std::snprintf(buf, sizeof buf, "fgsm(eps=%g)", value); break;
    }
    return buf;
}

Raster gaussian_blur(const Raster& image, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("gaussian_blur: kernel size must be odd");
    const int r = kernel / 2;
    const double sigma = 0.3 * ((kernel - 1) * 0.5 - 1.0) + 0.8;
    std::vector<double> taps(kernel);
    double total = 0.0;
    for (int i = -r; i <= r; ++i) total += taps[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    for (double& t : taps) t /= total;

    const auto reflect = [](long i, long n) {
        if (n == 1) return 0L;
        const long period = 2 * (n - 1);
        i = ((i % period) + period) % period;
        return i < n ? i : period - i;
    };
    const long h = static_cast<long>(image.height), w = static_cast<long>(image.width);
    Raster tmp(image.channels, image.height, image.width), out(image.channels, image.height, image.width);
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += taps[i + r] * image.at(c, y, reflect(x + i, w));
                tmp.at(c, y, x) = static_cast<float>(acc);
            }
        }
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += taps[i + r] * tmp.at(c, reflect(y + i, h), x);
                out.at(c, y, x) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Raster resize_round_trip(const Raster& image, double factor) {
    if (!(factor > 0.0)) throw std::invalid_argument("resize factor must be positive");
    const auto scaled = [&](std::size_t n) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * factor)));
    };
    return resize_image(resize_image(image, scaled(image.height), scaled(image.width)), image.height, image.width);
}

Raster gaussian_noise(const Raster& image, double sigma, Rng& rng) {
    if (sigma == 0.0) return image;
    std::normal_distribution<double> n(0.0, sigma / 255.0);
    Raster out = image;
    for (float& v : out.data) v = static_cast<float>(std::clamp(v + n(rng), 0.0, 1.0));
    return out;
}

Tensor<float> perturb(const Tensor<float>& images, const Tensor<float>& masks, const Perturbation& spec, Rng& rng,
                      const CoarseToFineModel<float>* model) {
    spec.validate();
    using Kind = Perturbation::Kind;
    if (spec.kind == Kind::none) return images.clone();
    if (spec.kind == Kind::fgsm) {
        if (!model) throw std::invalid_argument("fgsm perturbation needs a model");
        if (spec.value == 0.0) return images.clone();
        return fgsm(*model, images, masks, spec.value);
    }
    Tensor<float> out(images.shape());
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < images.shape().n; ++i) {
        const Raster src = tensor_to_raster(images, i);
        Raster r;
        switch (spec.kind) {
            case Kind::resize: r = resize_round_trip(src, spec.value); break;
            case Kind::gaussian_blur: r = gaussian_blur(src, static_cast<int>(spec.value)); break;
            case Kind::gaussian_noise: r = gaussian_noise(src, spec.value, rng); break;
            default: r = src; break;
        }
        std::copy(r.data.begin(), r.data.end(), dst.begin() + i * r.data.size());
    }
    return out;
}

// ---------------------------------------------------------------- evaluation

const MetricsRow& MetricsReport::row(const std::string& label) const {
    for (const auto& r : rows) {
        if (r.label == label) return r;
    }
    throw std::out_of_range("report has no row '" + label + "'");
}

std::string MetricsReport::format() const {
    std::ostringstream os;
    const std::size_t samples = rows.empty() ? 0 : rows.front().f1_count;
    const std::size_t with_auc = rows.empty() ? 0 : rows.front().auc_count;
    char line[256];
    os << "# pixel-level localization report\n";
    std::snprintf(line, sizeof line, "# samples: %zu evaluated, %zu skipped; AUC defined on %zu\n", samples, skipped,
                  with_auc);
    os << line;
    std::snprintf(line, sizeof line, "# F1 threshold: %g; metrics are per-image values averaged over images\n",
                  threshold);
    os << line;
    std::size_t width = std::string("perturbation").size();
    for (const auto& r : rows) width = std::max(width, r.label.size());
    const auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
    // Column headers contain multi-byte characters, so pad by hand.
    os << pad("perturbation") << "AUC     F1      \xCE\x94" "AUC    \xCE\x94" "F1\n";
    const MetricsRow* clean = rows.empty() ? nullptr : &rows.front();
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-8.4f%-8.4f%+-8.4f%+.4f", r.auc, r.f1, r.auc - clean->auc, r.f1 - clean->f1);
        os << pad(r.label) << line << '\n';
    }
    for (const auto& w : warnings) os << "# warning: " << w << '\n';
    return os.str();
}

Tensor<float> predict(const CoarseToFineModel<float>& model, const Tensor<float>& images) {
    NoGradScope<float> no_grad;
    return model.forward(images).mask;
}

namespace {

struct Accumulator {
    double auc_sum = 0.0, f1_sum = 0.0;
    std::size_t auc_count = 0, f1_count = 0;

    void add(const Tensor<float>& pred, const Tensor<float>& masks, double threshold) {
        const std::size_t per = masks.numel() / masks.shape().n;
        for (std::size_t i = 0; i < masks.shape().n; ++i) {
            const auto p = pred.data().subspan(i * per, per);
            const auto g = masks.data().subspan(i * per, per);
            if (const auto auc = pixel_auc<float>(p, g)) {
                auc_sum += *auc;
                ++auc_count;
            }
            f1_sum += pixel_f1<float>(p, g, threshold);
            ++f1_count;
        }
    }
};

}  // namespace

MetricsReport evaluate(const CoarseToFineModel<float>& model, const std::vector<Example>& samples,
                       const std::vector<Perturbation>& perturbations, std::uint64_t seed, std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
    std::vector<Perturbation> specs{Perturbation{}};
    for (const auto& p : perturbations) {
        p.validate();
        if (p.kind != Perturbation::Kind::none) specs.push_back(p);
    }
    MetricsReport report;
    std::vector<Accumulator> acc(specs.size());
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, samples.size() - start);
        const Example batch = stack(std::span<const Example>(samples.data() + start, count));
        for (std::size_t k = 0; k < specs.size(); ++k) {
            Tensor<float> input;
            if (specs[k].kind == Perturbation::Kind::gaussian_noise) {
                input = Tensor<float>(batch.image.shape());
                const std::size_t per = batch.image.numel() / count;
                for (std::size_t i = 0; i < count; ++i) {
                    Rng rng(derive_seed(seed, specs[k].label(), start + i));
                    const Tensor<float>& one = samples[start + i].image;
                    const Tensor<float> noisy = perturb(one, samples[start + i].mask, specs[k], rng);
                    std::copy(noisy.data().begin(), noisy.data().end(), input.mutable_data().begin() + i * per);
                }
            } else {
                Rng rng(derive_seed(seed, specs[k].label(), start));
                input = perturb(batch.image, batch.mask, specs[k], rng, &model);
            }
            acc[k].add(predict(model, input), batch.mask, report.threshold);
        }
    }
    for (std::size_t k = 0; k < specs.size(); ++k) {
        MetricsRow row;
        row.label = specs[k].label();
        row.auc_count = acc[k].auc_count;
        row.f1_count = acc[k].f1_count;
        row.auc = acc[k].auc_count ? acc[k].auc_sum / static_cast<double>(acc[k].auc_count) : 0.0;
        row.f1 = acc[k].f1_count ? acc[k].f1_sum / static_cast<double>(acc[k].f1_count) : 0.0;
        report.rows.push_back(row);
    }
    return report;
}

MetricsReport evaluate(const CoarseToFineModel<float>& model, const Manifest& manifest, Split split,
                       const std::vector<Perturbation>& perturbations, std::uint64_t seed, std::size_t batch_size) {
    const ModelConfig& cfg = model.config();
    std::vector<Example> samples;
    std::vector<std::string> warnings;
    std::size_t skipped = 0;
    for (const auto& e : manifest.select(split)) {
        Manifest one{manifest.root, {e}};
        try {
            auto loaded = load_examples(one, split, cfg.height, cfg.width, &warnings);
            samples.insert(samples.end(), loaded.begin(), loaded.end());
        } catch (const std::exception& ex) {
            ++skipped;
            warnings.push_back(std::string("skipped: ") + ex.what());
        }
    }
    MetricsReport report = evaluate(model, samples, perturbations, seed, batch_size);
    report.skipped = skipped;
    report.warnings = std::move(warnings);
    return report;
}

template std::optional<double> pixel_auc(std::span<const float>, std::span<const float>);
template std::optional<double> pixel_auc(std::span<const double>, std::span<const double>);
template double pixel_f1(std::span<const float>, std::span<const float>, double);
template double pixel_f1(std::span<const double>, std::span<const double>, double);
template std::vector<RocPoint> roc_curve(std::span<const float>, std::span<const float>);
template std::vector<RocPoint> roc_curve(std::span<const double>, std::span<const double>);

}  // namespace forgeloc
