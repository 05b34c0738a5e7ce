#pragma once

#include <string>

#include "mambo/backbone.hpp"
#include "mambo/io.hpp"

namespace mambo {

// Checkpoint format ("MBCK1", little-endian):
//   magic (5 bytes)
//   config block: u32 topology, L, N, D, input_dim, mixer kind, state_dim,
//                 head_dim, expand, conv_width, n_attn_heads, ffn_mult,
//                 f32 norm_eps
//   u32 parameter count, then per parameter:
//     u32 name length, name bytes, u32 rows, u32 cols, rows*cols f32 values
// Writing is order-stable so load-then-save reproduces the file byte for byte.

namespace detail {
inline constexpr char kCheckpointMagic[5] = {'M', 'B', 'C', 'K', '1'};
}

template <typename R>
std::string serialize_checkpoint(const Model<R>& m) {
    std::string out;
    out.append(detail::kCheckpointMagic, 5);
    const BackboneConfig& c = m.cfg;
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.topology));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.n_layers));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.ssm_per_unit));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.hidden_dim));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.input_dim));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.mixer.kind));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.mixer.state_dim));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.mixer.head_dim));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.mixer.expand));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.mixer.conv_width));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.n_attn_heads));
    detail::put_u32_le(out, static_cast<std::uint32_t>(c.ffn_mult));
    detail::put_f32_le(out, static_cast<float>(c.norm_eps));
    detail::put_u32_le(out, static_cast<std::uint32_t>(m.params.entries.size()));
    for (const auto& e : m.params.entries) {
        detail::put_u32_le(out, static_cast<std::uint32_t>(e.name.size()));
        out.append(e.name);
        detail::put_u32_le(out, static_cast<std::uint32_t>(e.value.rows()));
        detail::put_u32_le(out, static_cast<std::uint32_t>(e.value.cols()));
        for (index_t i = 0; i < e.value.size(); ++i)
            detail::put_f32_le(out, static_cast<float>(e.value.data()[i]));
    }
    return out;
}

template <typename R>
void save_checkpoint(const std::string& path, const Model<R>& m) {
    write_file_bytes(path, serialize_checkpoint(m));
}

inline Model<float> deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
    detail::ByteReader r(bytes, origin);
    const std::string magic = r.bytes(5, "magic");
    if (std::string(detail::kCheckpointMagic, 5) != magic)
        throw io_error(origin + ": bad magic (not a MBCK1 checkpoint)");

    auto enum_u32 = [&](const char* what, std::uint32_t hi) {
        const std::uint32_t v = r.u32(what);
        if (v > hi) throw io_error(origin + ": invalid value for " + what);
        return v;
    };
    // dimension sanity cap so corrupt headers fail cleanly instead of
    // triggering huge allocations
    auto dim_u32 = [&](const char* what) { return enum_u32(what, 1u << 24); };
    BackboneConfig cfg;
    cfg.topology = static_cast<Topology>(enum_u32("topology", 3));
    cfg.n_layers = dim_u32("L");
    cfg.ssm_per_unit = dim_u32("N");
    cfg.hidden_dim = dim_u32("D");
    cfg.input_dim = dim_u32("input_dim");
    cfg.mixer.kind = static_cast<MixerKind>(enum_u32("mixer kind", 3));
    cfg.mixer.state_dim = dim_u32("state_dim");
    cfg.mixer.head_dim = dim_u32("head_dim");
    cfg.mixer.expand = dim_u32("expand");
    cfg.mixer.conv_width = dim_u32("conv_width");
    cfg.n_attn_heads = dim_u32("n_attn_heads");
    cfg.ffn_mult = dim_u32("ffn_mult");
    cfg.norm_eps = static_cast<double>(r.f32("norm_eps"));
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw io_error(origin + ": invalid config block: " + e.what());
    }

    Model<float> m = assemble_backbone<float>(cfg, 0);
    const std::uint32_t n = r.u32("parameter count");
    if (n != m.params.entries.size())
        throw io_error(origin + ": parameter count does not match the config block");
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t name_len = r.u32("parameter name length");
        const std::string name = r.bytes(name_len, "parameter name");
        const std::uint32_t rows = r.u32("parameter rows");
        const std::uint32_t cols = r.u32("parameter cols");
        const int idx = m.params.find(name);
        if (idx < 0) throw io_error(origin + ": unknown parameter '" + name + "'");
        Mat<float>& dst = m.params.entries[static_cast<std::size_t>(idx)].value;
        if (dst.rows() != static_cast<index_t>(rows) || dst.cols() != static_cast<index_t>(cols))
            throw io_error(origin + ": shape mismatch for parameter '" + name + "'");
        for (index_t j = 0; j < dst.size(); ++j) dst.data()[j] = r.f32("parameter values");
    }
    if (r.remaining() != 0) throw io_error(origin + ": trailing bytes after parameters");
    return m;
}

inline Model<float> load_checkpoint(const std::string& path) {
    return deserialize_checkpoint(read_file_bytes(path), path);
}

}  // namespace mambo
