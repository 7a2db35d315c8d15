#include "forgeloc/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace forgeloc {

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'L', 'C', 'K'};
constexpr std::array<char, 4> kAdamTag = {'A', 'D', 'A', 'M'};
constexpr std::array<char, 4> kProgressTag = {'P', 'R', 'O', 'G'};
constexpr std::array<char, 4> kEndTag = {'E', 'N', 'D', '!'};
constexpr const char* kBankName = "hpf.bank";
constexpr std::uint32_t kMaxNameLength = 4096;

class Writer {
public:
    void tag(const std::array<char, 4>& t) { bytes_.insert(bytes_.end(), t.begin(), t.end()); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void floats(const std::vector<float>& v) {
        for (float x : v) f32(x);
    }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    Reader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

    std::array<char, 4> tag() {
        need(4, "section tag");
        std::array<char, 4> t{};
        std::memcpy(t.data(), bytes_.data() + pos_, 4);
        pos_ += 4;
        return t;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string str(const char* what) {
        const std::uint32_t len = u32(what);
        if (len > kMaxNameLength) fail(std::string("implausible length for ") + what);
        need(len, what);
        std::string s(bytes_.data() + pos_, len);
        pos_ += len;
        return s;
    }
    std::vector<float> floats(std::size_t count, const char* what) {
        need(count * 4, what);
        std::vector<float> v(count);
        for (auto& x : v) x = f32(what);
        return v;
    }
    [[noreturn]] void fail(const std::string& msg) const {
        throw CheckpointError("checkpoint " + source_ + ": " + msg);
    }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) fail(std::string("truncated file while reading ") + what);
    }

    std::vector<char> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

void write_config(Writer& w, const ModelConfig& c) {
    w.u32(static_cast<std::uint32_t>(c.nbf));
    w.u32(static_cast<std::uint32_t>(c.k));
    w.u32(static_cast<std::uint32_t>(c.convs_per_block));
    w.u32(static_cast<std::uint32_t>(c.height));
    w.u32(static_cast<std::uint32_t>(c.width));
    w.u32(static_cast<std::uint32_t>(c.input_channels));
    w.u32(static_cast<std::uint32_t>(c.coarse_front));
    w.u32(static_cast<std::uint32_t>(c.refined_front));
    w.u32(c.attention ? 1 : 0);
    w.u32(c.coarse_to_fine ? 1 : 0);
}

FrontEnd read_front(Reader& r) {
    const std::uint32_t v = r.u32("front end");
    if (v > static_cast<std::uint32_t>(FrontEnd::cwhpf)) r.fail("unknown front end code " + std::to_string(v));
    return static_cast<FrontEnd>(v);
}

ModelConfig read_config(Reader& r) {
    ModelConfig c;
    c.nbf = r.u32("config");
    c.k = r.u32("config");
    c.convs_per_block = r.u32("config");
    c.height = r.u32("config");
    c.width = r.u32("config");
    c.input_channels = r.u32("config");
    c.coarse_front = read_front(r);
    c.refined_front = read_front(r);
    c.attention = r.u32("config") != 0;
    c.coarse_to_fine = r.u32("config") != 0;
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        r.fail(std::string("stored config is invalid: ") + e.what());
    }
    return c;
}

std::vector<float> tensor_values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

Checkpoint Checkpoint::capture(const CoarseToFineModel<float>& model) {
    Checkpoint ck;
    ck.config = model.config();
    for (const auto& p : model.parameters()) {
        ck.tensors.push_back(StoredTensor{p.name, p.tensor.shape(), tensor_values(p.tensor)});
    }
    const auto& bank = model.kernel_bank().filters();
    ck.tensors.push_back(StoredTensor{kBankName, bank.shape(), tensor_values(bank)});
    return ck;
}

void Checkpoint::apply(CoarseToFineModel<float>& model) const {
    if (!(model.config() == config)) throw CheckpointError("checkpoint config does not match the model");
    auto params = model.parameters();
    if (tensors.size() != params.size() + 1) {
        throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model needs " +
                              std::to_string(params.size() + 1));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& st = tensors[i];
        auto& p = params[i];
        if (st.name != p.name) {
            throw CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" + st.name + "', expected '" +
                                  p.name + "'");
        }
        if (!(st.shape == p.tensor.shape())) {
            throw CheckpointError("checkpoint tensor '" + st.name + "' has shape " + st.shape.str() + ", expected " +
                                  p.tensor.shape().str());
        }
        auto dst = p.tensor.mutable_data();
        std::copy(st.values.begin(), st.values.end(), dst.begin());
    }
    const auto& bank = tensors.back();
    const auto& expected = model.kernel_bank().filters();
    if (bank.name != kBankName || !(bank.shape == expected.shape()) ||
        !std::equal(bank.values.begin(), bank.values.end(), expected.data().begin())) {
        throw CheckpointError("checkpoint high-pass kernel bank differs from the compiled kernels");
    }
}

OptimizerSnapshot capture_optimizer(const Adam<float>& adam) {
    return OptimizerSnapshot{adam.step_count(), adam.options(), adam.first_moments(), adam.second_moments()};
}

void restore_optimizer(const OptimizerSnapshot& snapshot, Adam<float>& adam) {
    adam.restore(snapshot.step_count, snapshot.first, snapshot.second);
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    Writer w;
    w.tag(kMagic);
    w.u32(kCheckpointVersion);
    write_config(w, ck.config);
    w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        if (t.values.size() != t.shape.numel()) {
            throw CheckpointError("tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                                  " values for shape " + t.shape.str());
        }
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.n));
        w.u32(static_cast<std::uint32_t>(t.shape.c));
        w.u32(static_cast<std::uint32_t>(t.shape.h));
        w.u32(static_cast<std::uint32_t>(t.shape.w));
    }
    for (const auto& t : ck.tensors) w.floats(t.values);

    if (ck.optimizer) {
        const auto& o = *ck.optimizer;
        w.tag(kAdamTag);
        w.u64(o.step_count);
        w.f64(o.options.lr);
        w.f64(o.options.beta1);
        w.f64(o.options.beta2);
        w.f64(o.options.eps);
        w.u32(static_cast<std::uint32_t>(o.first.size()));
        for (std::size_t i = 0; i < o.first.size(); ++i) {
            w.u32(static_cast<std::uint32_t>(o.first[i].size()));
            w.floats(o.first[i]);
            w.floats(o.second[i]);
        }
    }
    if (ck.progress) {
        const auto& p = *ck.progress;
        w.tag(kProgressTag);
        w.u64(p.iteration);
        w.u64(p.seed);
        w.u32(static_cast<std::uint32_t>(p.losses.size()));
        w.floats(p.losses);
        w.u32(static_cast<std::uint32_t>(p.epsilons.size()));
        w.floats(p.epsilons);
    }
    w.tag(kEndTag);

    std::filesystem::path tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw CheckpointError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes), path.string());

    if (r.tag() != kMagic) r.fail("bad magic bytes, not a checkpoint file");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        r.fail("unsupported version " + std::to_string(version) + " (expected " +
               std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    ck.config = read_config(r);
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        StoredTensor t;
        t.name = r.str("tensor name");
        t.shape.n = r.u32("tensor shape");
        t.shape.c = r.u32("tensor shape");
        t.shape.h = r.u32("tensor shape");
        t.shape.w = r.u32("tensor shape");
        ck.tensors.push_back(std::move(t));
    }
    for (auto& t : ck.tensors) t.values = r.floats(t.shape.numel(), "tensor data");

    for (;;) {
        const auto tag = r.tag();
        if (tag == kEndTag) break;
        if (tag == kAdamTag) {
            OptimizerSnapshot o;
            o.step_count = r.u64("optimizer step");
            o.options.lr = r.f64("optimizer options");
            o.options.beta1 = r.f64("optimizer options");
            o.options.beta2 = r.f64("optimizer options");
            o.options.eps = r.f64("optimizer options");
            const std::uint32_t n = r.u32("moment count");
            for (std::uint32_t i = 0; i < n; ++i) {
                const std::uint32_t len = r.u32("moment length");
                o.first.push_back(r.floats(len, "first moments"));
                o.second.push_back(r.floats(len, "second moments"));
            }
            ck.optimizer = std::move(o);
        } else if (tag == kProgressTag) {
            ProgressSnapshot p;
            p.iteration = r.u64("iteration");
            p.seed = r.u64("seed");
            p.losses = r.floats(r.u32("loss count"), "loss history");
            p.epsilons = r.floats(r.u32("epsilon count"), "epsilon history");
            ck.progress = std::move(p);
        } else {
            r.fail("unknown section tag '" + std::string(tag.begin(), tag.end()) + "'");
        }
    }
    return ck;
}

CoarseToFineModel<float> load_model(const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    CoarseToFineModel<float> model(ck.config, 0);
    ck.apply(model);
    return model;
}

}  // namespace forgeloc
