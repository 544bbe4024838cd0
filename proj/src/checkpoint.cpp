#include "hcc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hcc/error.hpp"

namespace hcc {

namespace {

constexpr char kMagic[4] = {'H', 'C', 'C', 'M'};

class Writer {
public:
    void u32(std::uint32_t v) { put(v); }
    void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
    void u64(std::uint64_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    const std::vector<char>& data() const { return buf_; }

private:
    template <typename T>
    void put(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<unsigned char> data) : buf_(std::move(data)) {}

    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw DataError("unexpected end of checkpoint");
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

void write_config(Writer& w, const HccConfig& c) {
    w.i32(c.input_dim);
    w.i32(c.encoder_dim);
    w.i32(c.latent_dim);
    w.i32(c.context_dim);
    w.u32(c.bidirectional ? 1 : 0);
    w.f64(c.lambda_del);
    w.f64(c.lambda_kl);
    w.f64(c.lambda_ent);
    w.f64(c.lambda_geo);
    w.f64(c.huber_delta);
    w.f64(c.logvar_lo);
    w.f64(c.logvar_hi);
    w.f64(c.learning_rate);
    w.i32(c.epochs);
    w.i32(c.batch_size);
    w.u64(c.seed);
    w.f64(c.grad_clip);
    w.u32(static_cast<std::uint32_t>(c.uncertainty_target));
    w.u32(static_cast<std::uint32_t>(c.progress_target));
    w.f64(c.epsilon);
}

HccConfig read_config(Reader& r) {
    HccConfig c;
    c.input_dim = r.i32();
    c.encoder_dim = r.i32();
    c.latent_dim = r.i32();
    c.context_dim = r.i32();
    c.bidirectional = r.u32() != 0;
    c.lambda_del = r.f64();
    c.lambda_kl = r.f64();
    c.lambda_ent = r.f64();
    c.lambda_geo = r.f64();
    c.huber_delta = r.f64();
    c.logvar_lo = r.f64();
    c.logvar_hi = r.f64();
    c.learning_rate = r.f64();
    c.epochs = r.i32();
    c.batch_size = r.i32();
    c.seed = r.u64();
    c.grad_clip = r.f64();
    const auto ut = r.u32();
    const auto pt = r.u32();
    if (ut > 1 || pt > 2) throw DataError("checkpoint config has unknown target kind");
    c.uncertainty_target = static_cast<UncertaintyTarget>(ut);
    c.progress_target = static_cast<ProgressTarget>(pt);
    c.epsilon = r.f64();
    return c;
}

}  // namespace

void save_checkpoint(const HccModel& model, const std::filesystem::path& path) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    write_config(w, model.config);

    std::uint32_t count = 0;
    model.params.visit([&](const std::string&, const auto&) { ++count; });
    w.u32(count);
    model.params.visit([&](const std::string& name, const auto& t) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u32(static_cast<std::uint32_t>(t.rows()));
        w.u32(static_cast<std::uint32_t>(t.cols()));
    });
    for (const auto& span : model.params.spans()) {
        for (double v : span) w.f64(v);
    }

    const auto& s = model.scaler;
    w.u32(static_cast<std::uint32_t>(s.input_mean.size()));
    for (Eigen::Index i = 0; i < s.input_mean.size(); ++i) w.f64(s.input_mean(i));
    for (Eigen::Index i = 0; i < s.input_std.size(); ++i) w.f64(s.input_std(i));
    w.f64(s.uncertainty_mean);
    w.f64(s.uncertainty_std);
    w.f64(s.progress_mean);
    w.f64(s.progress_std);

    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw DataError("I/O failure writing checkpoint: " + path.string());
}

HccModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes));

    if (r.str(4) != std::string(kMagic, 4)) throw DataError("not a model checkpoint (bad magic)");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    HccModel model;
    model.config = read_config(r);
    model.config.validate();
    model.params = init_params(model.config, 0);

    std::vector<std::string> names;
    model.params.visit([&](const std::string& name, const auto&) { names.push_back(name); });
    const auto count = r.u32();
    if (count != names.size()) throw DataError("checkpoint shape table has wrong tensor count");
    std::size_t k = 0;
    std::string mismatch;
    struct Shape {
        std::string name;
        std::uint32_t rows, cols;
    };
    std::vector<Shape> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.u32();
        Shape s{r.str(len), 0, 0};
        s.rows = r.u32();
        s.cols = r.u32();
        table.push_back(std::move(s));
    }
    model.params.visit([&](const std::string& name, const auto& t) {
        const auto& s = table[k++];
        if (mismatch.empty() && (s.name != name || s.rows != static_cast<std::uint32_t>(t.rows()) ||
                                 s.cols != static_cast<std::uint32_t>(t.cols()))) {
            mismatch = s.name;
        }
    });
    if (!mismatch.empty()) throw DataError("checkpoint shape table inconsistent with config at " + mismatch);
    for (auto& span : model.params.spans()) {
        for (double& v : span) v = r.f64();
    }

    const auto dim = r.u32();
    if (static_cast<int>(dim) != model.config.input_dim) {
        throw DataError("checkpoint scaler dim inconsistent with config");
    }
    auto& s = model.scaler;
    s.input_mean.resize(dim);
    s.input_std.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) s.input_mean(i) = r.f64();
    for (std::uint32_t i = 0; i < dim; ++i) s.input_std(i) = r.f64();
    s.uncertainty_mean = r.f64();
    s.uncertainty_std = r.f64();
    s.progress_mean = r.f64();
    s.progress_std = r.f64();
    if (!r.at_end()) throw DataError("trailing bytes after checkpoint payload");
    return model;
}

}  // namespace hcc
