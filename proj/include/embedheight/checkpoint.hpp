#pragma once

// Versioned little-endian checkpoint container ("ECKP"): named sections for
// the network spec, every parameter tensor, optimizer moments, PRNG state
// and training progress. Round-trips are bit-exact.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "embedheight/adamw.hpp"
#include "embedheight/grid.hpp"
#include "embedheight/nets.hpp"
#include "embedheight/rng.hpp"

namespace embedheight {

struct TrainProgress {
    std::uint32_t epochs_completed = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::uint32_t best_epoch = 0;
    std::uint32_t plateau_bad = 0;  // epochs since improvement (LR scheduler)
    std::uint32_t stop_bad = 0;     // epochs since improvement (early stopping)
    bool operator==(const TrainProgress&) const = default;
};

namespace detail {

inline void put_section(std::string& out, const std::string& name, const std::string& payload) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_u64(out, payload.size());
    out += payload;
}

template <typename T>
constexpr std::uint8_t checkpoint_dtype() {
    return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace detail

template <typename T>
struct CheckpointData {
    NetworkSpec spec;
    std::vector<typename Network<T>::Param> params;
    AdamWConfig opt_config;
    std::uint64_t opt_step = 0;
    std::vector<std::vector<double>> opt_m, opt_v;
    std::string rng_state;
    TrainProgress progress;

    /// Rebuild the network from the stored spec and overwrite its parameters.
    Network<T> restore_network() const {
        Network<T> net(spec);
        if (net.parameters().size() != params.size())
            throw FormatError("checkpoint: parameter list does not match spec topology");
        for (std::size_t i = 0; i < params.size(); ++i) {
            typename Network<T>::Param& dst = net.parameters()[i];
            if (dst.name != params[i].name || !(dst.shape == params[i].shape))
                throw FormatError("checkpoint: parameter " + params[i].name +
                                  " does not match spec topology");
            dst.data = params[i].data;
        }
        return net;
    }

    /// Rebuild the optimizer with one slot per parameter, moments restored.
    AdamW<T> restore_optimizer() const {
        AdamW<T> opt(opt_config);
        for (const auto& p : params) opt.register_buffer(p.data.size());
        opt.restore(opt_step, opt_config.lr, opt_m, opt_v);
        return opt;
    }

    Rng restore_rng() const { return Rng::deserialize(rng_state); }
};

/// Capture the live training state as an in-memory checkpoint.
template <typename T>
CheckpointData<T> snapshot_checkpoint(const Network<T>& net, const AdamW<T>& opt, const Rng& rng,
                                      const TrainProgress& progress) {
    if (opt.slot_count() != net.parameters().size())
        throw ValueError("checkpoint: optimizer slots do not match parameters");
    CheckpointData<T> ck;
    ck.spec = net.spec();
    ck.params = net.parameters();
    ck.opt_config = opt.config();
    ck.opt_step = opt.step_count();
    for (std::size_t i = 0; i < opt.slot_count(); ++i) {
        ck.opt_m.emplace_back(opt.first_moment(i).begin(), opt.first_moment(i).end());
        ck.opt_v.emplace_back(opt.second_moment(i).begin(), opt.second_moment(i).end());
    }
    ck.rng_state = rng.serialize();
    ck.progress = progress;
    return ck;
}

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const CheckpointData<T>& ck) {
    std::string out;
    out.append("ECKP", 4);
    detail::put_u16(out, 1);  // version
    out.push_back(static_cast<char>(detail::checkpoint_dtype<T>()));
    out.push_back('\0');

    std::vector<std::pair<std::string, std::string>> sections;
    {
        std::string s;
        const NetworkSpec& sp = ck.spec;
        s.push_back(static_cast<char>(static_cast<std::uint8_t>(sp.variant)));
        detail::put_u32(s, static_cast<std::uint32_t>(sp.depth));
        detail::put_u32(s, static_cast<std::uint32_t>(sp.base_channels));
        detail::put_u32(s, static_cast<std::uint32_t>(sp.in_channels));
        detail::put_u32(s, static_cast<std::uint32_t>(sp.out_channels));
        detail::put_u64(s, sp.seed);
        sections.emplace_back("spec", std::move(s));
    }
    for (const auto& p : ck.params) {
        std::string s;
        detail::put_u32(s, static_cast<std::uint32_t>(p.shape.n));
        detail::put_u32(s, static_cast<std::uint32_t>(p.shape.c));
        detail::put_u32(s, static_cast<std::uint32_t>(p.shape.h));
        detail::put_u32(s, static_cast<std::uint32_t>(p.shape.w));
        for (T v : p.data) {
            if constexpr (std::is_same_v<T, float>)
                detail::put_f32(s, v);
            else
                detail::put_f64(s, v);
        }
        sections.emplace_back("param:" + p.name, std::move(s));
    }
    {
        std::string s;
        const AdamWConfig& c = ck.opt_config;
        detail::put_f64(s, c.lr);
        detail::put_f64(s, c.beta1);
        detail::put_f64(s, c.beta2);
        detail::put_f64(s, c.eps);
        detail::put_f64(s, c.weight_decay);
        detail::put_u64(s, ck.opt_step);
        detail::put_u32(s, static_cast<std::uint32_t>(ck.opt_m.size()));
        for (std::size_t i = 0; i < ck.opt_m.size(); ++i) {
            detail::put_u64(s, ck.opt_m[i].size());
            for (double m : ck.opt_m[i]) detail::put_f64(s, m);
            for (double v : ck.opt_v[i]) detail::put_f64(s, v);
        }
        sections.emplace_back("adamw", std::move(s));
    }
    sections.emplace_back("prng", ck.rng_state);
    {
        std::string s;
        detail::put_u32(s, ck.progress.epochs_completed);
        detail::put_f64(s, ck.progress.best_val);
        detail::put_u32(s, ck.progress.best_epoch);
        detail::put_u32(s, ck.progress.plateau_bad);
        detail::put_u32(s, ck.progress.stop_bad);
        sections.emplace_back("meta", std::move(s));
    }

    detail::put_u32(out, static_cast<std::uint32_t>(sections.size()));
    for (const auto& [name, payload] : sections) detail::put_section(out, name, payload);
    write_file_bytes(path, out);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Network<T>& net,
                     const AdamW<T>& opt, const Rng& rng, const TrainProgress& progress) {
    write_checkpoint(path, snapshot_checkpoint(net, opt, rng, progress));
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    detail::ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()};
    r.need(4, "magic");
    if (bytes.compare(0, 4, "ECKP") != 0) throw FormatError("checkpoint: bad magic");
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != 1)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != detail::checkpoint_dtype<T>())
        throw FormatError("checkpoint: precision does not match this reader");
    r.u8("reserved");
    const std::uint32_t n_sections = r.u32("section count");

    CheckpointData<T> ck;
    bool have_spec = false, have_adamw = false, have_prng = false, have_meta = false;
    for (std::uint32_t si = 0; si < n_sections; ++si) {
        const std::uint16_t name_len = r.u16("section name length");
        r.need(name_len, "section name");
        const std::string name = bytes.substr(r.pos, name_len);
        r.pos += name_len;
        const std::uint64_t payload_len = r.u64("section length");
        r.need(payload_len, "section payload");
        detail::ByteReader pr{reinterpret_cast<const unsigned char*>(bytes.data()) + r.pos,
                              static_cast<std::size_t>(payload_len)};
        r.pos += payload_len;

        if (name == "spec") {
            const std::uint8_t variant = pr.u8("variant");
            if (variant > 1) throw FormatError("checkpoint: unknown network variant");
            ck.spec.variant = static_cast<NetVariant>(variant);
            ck.spec.depth = static_cast<int>(pr.u32("depth"));
            ck.spec.base_channels = static_cast<int>(pr.u32("base channels"));
            ck.spec.in_channels = static_cast<int>(pr.u32("in channels"));
            ck.spec.out_channels = static_cast<int>(pr.u32("out channels"));
            ck.spec.seed = pr.u64("seed");
            have_spec = true;
        } else if (name.rfind("param:", 0) == 0) {
            typename Network<T>::Param p;
            p.name = name.substr(6);
            p.shape.n = static_cast<int>(pr.u32("param shape"));
            p.shape.c = static_cast<int>(pr.u32("param shape"));
            p.shape.h = static_cast<int>(pr.u32("param shape"));
            p.shape.w = static_cast<int>(pr.u32("param shape"));
            const std::size_t count = p.shape.count();
            if (pr.size - pr.pos != count * sizeof(T))
                throw FormatError("checkpoint: parameter payload size mismatch");
            p.data.resize(count);
            for (std::size_t i = 0; i < count; ++i) {
                if constexpr (std::is_same_v<T, float>)
                    p.data[i] = pr.f32("param value");
                else
                    p.data[i] = pr.f64("param value");
            }
            ck.params.push_back(std::move(p));
        } else if (name == "adamw") {
            ck.opt_config.lr = pr.f64("lr");
            ck.opt_config.beta1 = pr.f64("beta1");
            ck.opt_config.beta2 = pr.f64("beta2");
            ck.opt_config.eps = pr.f64("eps");
            ck.opt_config.weight_decay = pr.f64("weight decay");
            ck.opt_step = pr.u64("step count");
            const std::uint32_t slots = pr.u32("slot count");
            for (std::uint32_t i = 0; i < slots; ++i) {
                const std::uint64_t sz = pr.u64("slot size");
                std::vector<double> m(sz), v(sz);
                for (double& x : m) x = pr.f64("first moment");
                for (double& x : v) x = pr.f64("second moment");
                ck.opt_m.push_back(std::move(m));
                ck.opt_v.push_back(std::move(v));
            }
            have_adamw = true;
        } else if (name == "prng") {
            ck.rng_state.assign(reinterpret_cast<const char*>(pr.p), pr.size);
            have_prng = true;
        } else if (name == "meta") {
            ck.progress.epochs_completed = pr.u32("epochs");
            ck.progress.best_val = pr.f64("best val");
            ck.progress.best_epoch = pr.u32("best epoch");
            ck.progress.plateau_bad = pr.u32("plateau counter");
            ck.progress.stop_bad = pr.u32("stop counter");
            have_meta = true;
        } else {
            throw FormatError("checkpoint: unknown section '" + name + "'");
        }
    }
    if (!have_spec || !have_adamw || !have_prng || !have_meta || ck.params.empty())
        throw FormatError("checkpoint: missing required sections");
    if (ck.opt_m.size() != ck.params.size())
        throw FormatError("checkpoint: optimizer slots do not match parameters");
    return ck;
}

}  // namespace embedheight
