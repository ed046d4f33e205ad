#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <boost/crc.hpp>
#include <boost/endian/conversion.hpp>

#include "semppl/error.hpp"
#include "semppl/harness/trainer.hpp"

namespace semppl::harness {

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'P', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class Writer {
public:
    template <typename T>
    void put(T v) {
        if constexpr (std::is_same_v<T, double>) {
            put(std::bit_cast<std::uint64_t>(v));
        } else {
            boost::endian::native_to_little_inplace(v);
            const auto* p = reinterpret_cast<const char*>(&v);
            bytes_.append(p, sizeof v);
        }
    }
    void put_bytes(const std::string& s) { bytes_ += s; }
    std::string& bytes() noexcept { return bytes_; }

private:
    std::string bytes_;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        if constexpr (std::is_same_v<T, double>) {
            return std::bit_cast<double>(get<std::uint64_t>());
        } else {
            T v;
            std::memcpy(&v, take(sizeof v).data(), sizeof v);
            return boost::endian::little_to_native(v);
        }
    }
    std::string get_bytes(std::size_t n) { return std::string(take(n)); }
    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated");
        const auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32(std::string_view bytes) {
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

struct NamedTensor {
    std::string name;
    ndgrad::Shape shape;
    std::vector<double> values;
};

inline std::vector<NamedTensor> collect_tensors(const Trainer& t) {
    std::vector<NamedTensor> out;
    nets::NetworkPair pair = t.networks();
    const auto online = nets::online_parameters(pair);
    for (const auto& p : online) out.push_back({p.name, p.value->shape(), p.value->to_vector()});
    for (const auto& p : nets::target_parameters(pair)) out.push_back({p.name, p.value->shape(), p.value->to_vector()});
    auto moments = [&](const std::string& prefix, const nets::MlpParams& m) {
        if (!m.use_batch_norm) return;
        out.push_back({prefix + ".bn.running_mean", {m.bn.running_mean.size()}, m.bn.running_mean});
        out.push_back({prefix + ".bn.running_var", {m.bn.running_var.size()}, m.bn.running_var});
    };
    moments("online.encoder", pair.encoder);
    moments("online.projector", pair.projector);
    moments("online.predictor", pair.predictor);
    moments("target.encoder", pair.target_encoder);
    moments("target.projector", pair.target_projector);
    const auto& m = t.optimizer().momentum;
    for (std::size_t i = 0; i < m.size(); ++i) out.push_back({"optim.momentum." + online[i].name, online[i].value->shape(), m[i]});
    return out;
}

}  // namespace detail

/// Binary checkpoint: magic, version, config echo, named tensors, queues,
/// counters and a trailing CRC-32.
inline std::string serialize_checkpoint(const Trainer& t) {
    detail::Writer w;
    w.put_bytes(std::string(kCheckpointMagic, 4));
    w.put<std::uint32_t>(kCheckpointVersion);
    const std::string echo = to_ini(t.config());
    w.put<std::uint64_t>(echo.size());
    w.put_bytes(echo);

    const auto tensors = detail::collect_tensors(t);
    w.put<std::uint64_t>(tensors.size());
    for (const auto& nt : tensors) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.name.size()));
        w.put_bytes(nt.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.shape.size()));
        for (std::size_t e : nt.shape) w.put<std::uint64_t>(e);
        for (double v : nt.values) w.put<double>(v);
    }

    const auto& bank = t.bank();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bank.num_views()));
    for (const auto& q : bank.queues) {
        w.put<std::uint64_t>(q.capacity());
        w.put<std::uint64_t>(q.dim());
        w.put<std::uint64_t>(q.counter());
        w.put<std::uint64_t>(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) {
            w.put<std::int64_t>(q.label(i));
            w.put<std::uint64_t>(q.insertion(i));
            for (double v : q.embedding(i)) w.put<double>(v);
        }
    }

    w.put<std::uint64_t>(t.config().seed);
    w.put<std::uint64_t>(t.epoch());
    w.put<std::uint64_t>(t.step());
    w.put<std::uint64_t>(t.view_hash());
    w.put<std::uint32_t>(detail::crc32(w.bytes()));
    return std::move(w.bytes());
}

inline Trainer deserialize_checkpoint(std::string_view bytes) {
    if (bytes.size() < 12) throw FormatError("checkpoint: truncated");
    if (bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) throw FormatError("checkpoint: bad magic");
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    detail::Reader tail(bytes.substr(bytes.size() - 4));
    if (tail.get<std::uint32_t>() != detail::crc32(body)) throw ChecksumError("checkpoint: checksum mismatch");

    detail::Reader r(body.substr(4));
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    const std::string echo = r.get_bytes(r.get<std::uint64_t>());
    Trainer t(parse_ini(echo, {}, "checkpoint config"));

    std::map<std::string, detail::NamedTensor> table;
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t n = 0; n < count; ++n) {
        detail::NamedTensor nt;
        nt.name = r.get_bytes(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        std::size_t size = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            nt.shape.push_back(r.get<std::uint64_t>());
            size *= nt.shape.back();
        }
        nt.values.resize(size);
        for (double& v : nt.values) v = r.get<double>();
        table[nt.name] = std::move(nt);
    }
    auto take = [&](const std::string& name, const ndgrad::Shape& shape) {
        const auto it = table.find(name);
        if (it == table.end()) throw FormatError("checkpoint: missing tensor " + name);
        if (it->second.shape != shape) throw FormatError("checkpoint: tensor " + name + " has the wrong shape");
        auto values = std::move(it->second.values);
        table.erase(it);
        return values;
    };

    nets::NetworkPair& pair = t.networks();
    auto params = nets::online_parameters(pair);
    for (auto& p : params) *p.value = ndgrad::Tensor(p.value->shape(), take(p.name, p.value->shape()));
    for (auto& p : nets::target_parameters(pair)) *p.value = ndgrad::Tensor(p.value->shape(), take(p.name, p.value->shape()));
    auto moments = [&](const std::string& prefix, nets::MlpParams& m) {
        if (!m.use_batch_norm) return;
        m.bn.running_mean = take(prefix + ".bn.running_mean", {m.bn.running_mean.size()});
        m.bn.running_var = take(prefix + ".bn.running_var", {m.bn.running_var.size()});
    };
    moments("online.encoder", pair.encoder);
    moments("online.projector", pair.projector);
    moments("online.predictor", pair.predictor);
    moments("target.encoder", pair.target_encoder);
    moments("target.projector", pair.target_projector);
    if (table.contains("optim.momentum." + params.front().name)) {
        auto& m = t.optimizer().momentum;
        m.clear();
        for (const auto& p : params) m.push_back(take("optim.momentum." + p.name, p.value->shape()));
    }
    if (!table.empty()) throw FormatError("checkpoint: unexpected tensor " + table.begin()->first);

    auto& bank = t.bank();
    if (r.get<std::uint32_t>() != bank.num_views()) throw FormatError("checkpoint: queue count does not match config");
    for (auto& q : bank.queues) {
        const auto capacity = r.get<std::uint64_t>(), dim = r.get<std::uint64_t>();
        if (capacity != q.capacity() || dim != q.dim()) throw FormatError("checkpoint: queue shape does not match config");
        const auto counter = r.get<std::uint64_t>(), size = r.get<std::uint64_t>();
        if (size > capacity) throw FormatError("checkpoint: queue holds more entries than its capacity");
        q = plqueue::LabeledQueue(capacity, dim);
        std::vector<double> e(dim);
        for (std::uint64_t i = 0; i < size; ++i) {
            const auto label = static_cast<int>(r.get<std::int64_t>());
            const auto insertion = r.get<std::uint64_t>();
            for (double& v : e) v = r.get<double>();
            q.restore(e, label, insertion);
        }
        q.set_counter(counter);
    }

    const auto seed = r.get<std::uint64_t>();
    if (seed != t.config().seed) throw FormatError("checkpoint: seed does not match config echo");
    const auto epoch = r.get<std::uint64_t>(), step = r.get<std::uint64_t>(), hash = r.get<std::uint64_t>();
    t.restore_counters(epoch, step, hash);
    if (!r.done()) throw FormatError("checkpoint: trailing bytes");
    return t;
}

inline void save_checkpoint(const Trainer& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path);
    const std::string bytes = serialize_checkpoint(t);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Trainer load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace semppl::harness
