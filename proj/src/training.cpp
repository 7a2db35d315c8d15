#include "forgeloc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace forgeloc {

void SatConfig::validate() const {
    if (!(eps_max > 0.0 && eps_max <= 1.0)) throw std::invalid_argument("sat config: eps_max must lie in (0, 1]");
    if (!(lr > 0.0)) throw std::invalid_argument("sat config: lr must be positive");
    if (batch_size == 0) throw std::invalid_argument("sat config: batch_size must be positive");
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& gt, const Tensor<T>& coarse, const Tensor<T>& refined) {
    const auto check = [&](const Tensor<T>& p, const char* which) {
        if (p.shape() != gt.shape() || gt.shape().c != 1) {
            throw ShapeError(std::string("total_loss: ") + which + " mask shape " + p.shape().str() +
                             " does not match ground truth " + gt.shape().str() + " (expected n x 1 x h x w)");
        }
    };
    check(refined, "refined");
    Tensor<T> loss = bce_loss(refined, gt);
    if (coarse.defined()) {
        check(coarse, "coarse");
        loss = add(bce_loss(coarse, gt), loss);
    }
    return loss;
}

template <typename T>
Tensor<T> model_loss(const CoarseToFineModel<T>& model, const Tensor<T>& image, const Tensor<T>& gt) {
    const ModelOutput<T> out = model.forward(image);
    return total_loss(gt, out.coarse_mask, out.mask);
}

double sample_epsilon(Rng& rng, double eps_max) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return eps_max * (1.0 - u(rng));
}

namespace {

// Switches parameter gradient tracking off for a scope.
template <typename T>
class FrozenParameters {
public:
    explicit FrozenParameters(ParameterList<T> params) : params_(std::move(params)) {
        saved_.reserve(params_.size());
        for (auto& p : params_) {
            saved_.push_back(p.tensor.requires_grad());
            p.tensor.set_requires_grad(false);
        }
    }
    ~FrozenParameters() {
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.set_requires_grad(saved_[i]);
    }
    FrozenParameters(const FrozenParameters&) = delete;
    FrozenParameters& operator=(const FrozenParameters&) = delete;

private:
    ParameterList<T> params_;
    std::vector<bool> saved_;
};

}  // namespace

template <typename T>
Tensor<T> fgsm(const CoarseToFineModel<T>& model, const Tensor<T>& image, const Tensor<T>& gt,
               std::span<const double> eps) {
    const std::size_t n = image.shape().n;
    if (eps.size() != 1 && eps.size() != n) {
        throw std::invalid_argument("fgsm: need one epsilon or one per sample, got " + std::to_string(eps.size()) +
                                    " for batch of " + std::to_string(n));
    }
    for (double e : eps) {
        if (!(e > 0.0)) throw std::invalid_argument("fgsm: epsilon must be positive");
    }
    Tensor<T> input = image.clone();
    input.set_requires_grad(true);
    {
        FrozenParameters<T> frozen(model.parameters());
        Graph<T> graph;
        graph.backward(model_loss(model, input, gt));
    }
    Tensor<T> adv(image.shape());
    const auto x = image.data();
    const auto g = input.grad();
    auto out = adv.mutable_data();
    const std::size_t per = image.numel() / n;
    for (std::size_t s = 0; s < n; ++s) {
        const double budget = eps.size() == 1 ? eps[0] : eps[s];
        const T e = static_cast<T>(budget);
        for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
            const T step = g[i] > T(0) ? e : (g[i] < T(0) ? -e : T(0));
            T y = std::clamp(x[i] + step, T(0), T(1));
            // Rounding of x + step may overshoot the budget by an ulp; pull back.
            while (std::abs(static_cast<long double>(y) - static_cast<long double>(x[i])) > budget) {
                y = std::nextafter(y, x[i]);
            }
            out[i] = y;
        }
    }
    return adv;
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(s);
    const auto src = x.data();
    auto dst = out.mutable_data();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t i = 0; i < s.h; ++i) {
            const T* row = src.data() + (p * s.h + i) * s.w;
            T* o = dst.data() + (p * s.h + i) * s.w;
            std::reverse_copy(row, row + s.w, o);
        }
    }
    return out;
}

template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(s);
    const auto src = x.data();
    auto dst = out.mutable_data();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t i = 0; i < s.h; ++i) {
            const T* row = src.data() + (p * s.h + i) * s.w;
            std::copy(row, row + s.w, dst.data() + (p * s.h + (s.h - 1 - i)) * s.w);
        }
    }
    return out;
}

template <typename T>
Tensor<T> rotate90(const Tensor<T>& x, int quarter_turns) {
    const int turns = ((quarter_turns % 4) + 4) % 4;
    if (turns == 0) return x.clone();
    if (turns == 2) return flip_vertical(flip_horizontal(x));
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, s.c, s.w, s.h});
    const auto src = x.data();
    auto dst = out.mutable_data();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const T* in = src.data() + p * s.h * s.w;
        T* o = dst.data() + p * s.h * s.w;
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                // Counter-clockwise: (i, j) -> (w - 1 - j, i); clockwise: (i, j) -> (j, h - 1 - i).
                if (turns == 1) {
                    o[(s.w - 1 - j) * s.h + i] = in[i * s.w + j];
                } else {
                    o[j * s.h + (s.h - 1 - i)] = in[i * s.w + j];
                }
            }
        }
    }
    return out;
}

Example augment(const Example& sample, Rng& rng) {
    std::bernoulli_distribution coin(0.5);
    const bool square = sample.image.shape().h == sample.image.shape().w;
    std::uniform_int_distribution<int> turn_dist(0, 3);
    const bool fh = coin(rng);
    const bool fv = coin(rng);
    int turns = turn_dist(rng);
    if (!square) turns &= 2;
    Example out{sample.image, sample.mask};
    if (fh) out = {flip_horizontal(out.image), flip_horizontal(out.mask)};
    if (fv) out = {flip_vertical(out.image), flip_vertical(out.mask)};
    if (turns != 0) out = {rotate90(out.image, turns), rotate90(out.mask, turns)};
    return out;
}

Example stack(std::span<const Example> samples) {
    if (samples.empty()) throw std::invalid_argument("stack: empty batch");
    const Shape is = samples[0].image.shape();
    const Shape ms = samples[0].mask.shape();
    const std::size_t count = samples.size();
    Tensor<float> images(Shape{count, is.c, is.h, is.w});
    Tensor<float> masks(Shape{count, 1, ms.h, ms.w});
    auto id = images.mutable_data();
    auto md = masks.mutable_data();
    for (std::size_t i = 0; i < count; ++i) {
        const Shape s = samples[i].image.shape();
        const Shape m = samples[i].mask.shape();
        if (s != Shape{1, is.c, is.h, is.w} || m != Shape{1, 1, is.h, is.w}) {
            throw ShapeError("stack: sample " + std::to_string(i) + " has image " + s.str() + " and mask " + m.str() +
                             ", expected [1, " + std::to_string(is.c) + ", " + std::to_string(is.h) + ", " +
                             std::to_string(is.w) + "] and a matching one-channel mask");
        }
        std::copy(samples[i].image.data().begin(), samples[i].image.data().end(), id.begin() + i * s.numel());
        std::copy(samples[i].mask.data().begin(), samples[i].mask.data().end(), md.begin() + i * m.numel());
    }
    return {images, masks};
}

std::string format_log_line(const PhaseRecord& r) {
    char eps[32] = "-";
    if (r.epsilon >= 0.0) std::snprintf(eps, sizeof eps, "%.6g", r.epsilon);
    char buf[128];
    std::snprintf(buf, sizeof buf, "iter=%llu phase=%d eps=%s loss=%.9g", static_cast<unsigned long long>(r.iteration),
                  r.phase, eps, static_cast<double>(r.loss));
    return buf;
}

Trainer::Trainer(CoarseToFineModel<float>& model, SatConfig config)
    : model_(model), config_(config), adam_(model.parameters(), AdamOptions{config.lr}) {
    config_.validate();
}

Example Trainer::batch_for(const std::vector<Example>& data, std::uint64_t iteration) const {
    if (data.empty()) throw std::invalid_argument("training set is empty");
    const std::size_t count = data.size();
    std::vector<Example> picked;
    picked.reserve(config_.batch_size);
    Rng aug_rng(derive_seed(config_.seed, "augment", iteration));
    for (std::size_t j = 0; j < config_.batch_size; ++j) {
        const std::uint64_t pos = (iteration - 1) * config_.batch_size + j;
        const std::uint64_t epoch = pos / count;
        auto it = permutations_.find(epoch);
        if (it == permutations_.end()) {
            std::vector<std::size_t> perm(count);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            Rng rng(derive_seed(config_.seed, "epoch", epoch));
            std::shuffle(perm.begin(), perm.end(), rng);
            if (permutations_.size() > 4) permutations_.erase(permutations_.begin());
            it = permutations_.emplace(epoch, std::move(perm)).first;
        }
        const Example& sample = data[it->second[pos % count]];
        picked.push_back(config_.flip_rotate ? augment(sample, aug_rng) : sample);
    }
    return stack(picked);
}

float Trainer::phase_step(const Tensor<float>& images, const Tensor<float>& masks, int phase) {
    const std::uint64_t iter = state_.iteration + 1;
    adam_.zero_grad();
    Graph<float> graph;
    const Tensor<float> loss = model_loss(model_, images, masks);
    const float value = loss.item();
    if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at iteration " + std::to_string(iter) + " (phase " +
                            std::to_string(phase) + ")");
    }
    graph.backward(loss);
    try {
        adam_.step();
    } catch (const std::runtime_error& e) {
        throw TrainingError("iteration " + std::to_string(iter) + " phase " + std::to_string(phase) + ": " + e.what());
    }
    return value;
}

std::vector<PhaseRecord> Trainer::iterate(const Example& batch) {
    const std::uint64_t iter = state_.iteration + 1;
    std::vector<PhaseRecord> records;
    const float l1 = phase_step(batch.image, batch.mask, 1);
    records.push_back({iter, 1, -1.0, l1});
    if (config_.sat) {
        Rng rng(derive_seed(config_.seed, "epsilon", iter));
        std::vector<double> eps(batch.image.shape().n);
        for (auto& e : eps) e = sample_epsilon(rng, config_.eps_max);
        const Tensor<float> adv = fgsm(model_, batch.image, batch.mask, std::span<const double>(eps));
        const float l2 = phase_step(adv, batch.mask, 2);
        const double mean_eps = std::accumulate(eps.begin(), eps.end(), 0.0) / static_cast<double>(eps.size());
        records.push_back({iter, 2, mean_eps, l2});
        state_.epsilons.push_back(static_cast<float>(mean_eps));
    }
    for (const auto& r : records) state_.losses.push_back(r.loss);
    state_.iteration = iter;
    return records;
}

void Trainer::run(const std::vector<Example>& data, const std::function<void(const PhaseRecord&)>& on_phase) {
    while (state_.iteration < config_.iterations) {
        const Example batch = batch_for(data, state_.iteration + 1);
        for (const auto& r : iterate(batch)) {
            if (on_phase) on_phase(r);
        }
    }
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck = Checkpoint::capture(model_);
    ck.optimizer = capture_optimizer(adam_);
    ck.progress = ProgressSnapshot{state_.iteration, config_.seed, state_.losses, state_.epsilons};
    return ck;
}

void Trainer::resume(const Checkpoint& ck) {
    ck.apply(model_);
    if (ck.optimizer) restore_optimizer(*ck.optimizer, adam_);
    if (ck.progress) {
        if (ck.progress->seed != config_.seed) {
            throw TrainingError("checkpoint was trained with seed " + std::to_string(ck.progress->seed) +
                                ", resume requested seed " + std::to_string(config_.seed));
        }
        state_ = TrainState{ck.progress->iteration, ck.progress->losses, ck.progress->epsilons};
    }
}

#define FORGELOC_INSTANTIATE_TRAINING(T)                                                                          \
    template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> model_loss(const CoarseToFineModel<T>&, const Tensor<T>&, const Tensor<T>&);              \
    template Tensor<T> fgsm(const CoarseToFineModel<T>&, const Tensor<T>&, const Tensor<T>&,                     \
                            std::span<const double>);                                                            \
    template Tensor<T> flip_horizontal(const Tensor<T>&);                                                        \
    template Tensor<T> flip_vertical(const Tensor<T>&);                                                          \
    template Tensor<T> rotate90(const Tensor<T>&, int);

FORGELOC_INSTANTIATE_TRAINING(float)
FORGELOC_INSTANTIATE_TRAINING(double)

}  // namespace forgeloc
