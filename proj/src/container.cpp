#include "covdet/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <stdexcept>

namespace covdet {

namespace {

constexpr char kMagic[5] = {'C', 'O', 'V', 'D', '1'};

class Writer
{
public:
    void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }

    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void f64(double v)
    {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }

    void complex_row_major(const CMatrix<double>& m)
    {
        for (Index r = 0; r < m.rows(); ++r) {
            for (Index c = 0; c < m.cols(); ++c) {
                f64(m(r, c).real());
                f64(m(r, c).imag());
            }
        }
    }

    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader
{
public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

    void need(std::size_t n) const
    {
        if (pos_ + n > in_.size()) throw std::runtime_error("instance container: truncated");
    }

    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        return v;
    }

    double f64()
    {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        return std::bit_cast<double>(bits);
    }

    bool magic()
    {
        need(sizeof(kMagic));
        const bool ok = std::memcmp(in_.data() + pos_, kMagic, sizeof(kMagic)) == 0;
        pos_ += sizeof(kMagic);
        return ok;
    }

    CMatrix<double> complex_row_major(Index rows, Index cols)
    {
        need(static_cast<std::size_t>(rows * cols) * 16);
        CMatrix<double> m(rows, cols);
        for (Index r = 0; r < rows; ++r) {
            for (Index c = 0; c < cols; ++c) {
                const double re = f64();
                m(r, c) = {re, f64()};
            }
        }
        return m;
    }

    bool done() const { return pos_ == in_.size(); }

private:
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

} // namespace

InstanceFile InstanceFile::from(const Instance<double>& inst)
{
    constexpr auto cap = static_cast<Index>(std::numeric_limits<std::uint32_t>::max());
    const auto& c = inst.cfg;
    if (c.N > cap || c.Q > cap || c.L > cap || c.M > cap) throw std::invalid_argument("instance too large for container");
    InstanceFile f;
    f.N = static_cast<std::uint32_t>(c.N);
    f.Q = static_cast<std::uint32_t>(c.Q);
    f.L = static_cast<std::uint32_t>(c.L);
    f.M = static_cast<std::uint32_t>(c.M);
    f.sigma_w_sq = c.sigma_w_sq;
    f.S = inst.S;
    f.sigma_hat = inst.sigma_hat;
    f.gamma_true = inst.truth.gamma_true;
    return f;
}

IndexSet InstanceFile::true_support() const
{
    IndexSet out;
    for (Index j = 0; j < gamma_true.size(); ++j) {
        if (gamma_true[j] > 0) out.push_back(j);
    }
    return out;
}

std::vector<Index> InstanceFile::true_selection() const
{
    std::vector<Index> out(N, -1);
    for (Index j : true_support()) out[static_cast<std::size_t>(j / Q)] = j % Q;
    return out;
}

std::vector<std::uint8_t> encode_instance(const InstanceFile& f)
{
    const Index nq = static_cast<Index>(f.N) * f.Q;
    if (f.S.rows() != f.L || f.S.cols() != nq || f.sigma_hat.rows() != f.L || f.sigma_hat.cols() != f.L ||
        f.gamma_true.size() != nq) {
        throw std::invalid_argument("encode_instance: dimensions disagree with header");
    }
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(f.N);
    w.u32(f.Q);
    w.u32(f.L);
    w.u32(f.M);
    w.f64(f.sigma_w_sq);
    w.complex_row_major(f.S);
    w.complex_row_major(f.sigma_hat);
    for (Index j = 0; j < nq; ++j) w.f64(f.gamma_true[j]);
    return w.take();
}

InstanceFile decode_instance(const std::vector<std::uint8_t>& bytes)
{
    Reader r(bytes);
    if (!r.magic()) throw std::runtime_error("instance container: bad magic");
    InstanceFile f;
    f.N = r.u32();
    f.Q = r.u32();
    f.L = r.u32();
    f.M = r.u32();
    f.sigma_w_sq = r.f64();
    const Index nq = static_cast<Index>(f.N) * f.Q;
    f.S = r.complex_row_major(f.L, nq);
    f.sigma_hat = r.complex_row_major(f.L, f.L);
    f.gamma_true.resize(nq);
    for (Index j = 0; j < nq; ++j) f.gamma_true[j] = r.f64();
    if (!r.done()) throw std::runtime_error("instance container: trailing bytes");
    return f;
}

void write_instance(const std::string& path, const InstanceFile& file)
{
    const auto bytes = encode_instance(file);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

InstanceFile read_instance(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_instance(bytes);
}

void write_gamma_csv(const std::string& path, const RVector<double>& gamma, Index Q)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "device,sequence,gamma\n" << std::setprecision(17);
    for (Index j = 0; j < gamma.size(); ++j) out << j / Q << ',' << j % Q << ',' << gamma[j] << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

} // namespace covdet
