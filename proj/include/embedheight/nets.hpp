#pragma once

// U-Net and U-Net++ regression networks on top of the tape engine. Both
// variants share one graph IR: nodes X^{i,j} on a (level, stage) grid, each a
// single 3x3 reflect-padded conv + ReLU. The plain U-Net keeps the encoder
// (j = 0) and one decoder node per level; U-Net++ fills the nested grid where
// X^{i,j} consumes every same-level predecessor plus the upsampled deeper
// node. A 1x1 linear head maps the top-right node to one channel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "embedheight/errors.hpp"
#include "embedheight/rng.hpp"
#include "embedheight/tensor.hpp"

namespace embedheight {

enum class NetVariant : std::uint8_t { unet = 0, unetpp = 1 };

struct NetworkSpec {
    NetVariant variant = NetVariant::unet;
    int depth = 4;          // pooling levels
    int base_channels = 32; // channels at level 0, doubling per level
    int in_channels = 64;
    int out_channels = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (depth < 2) throw ValueError("network spec: depth must be >= 2");
        if (base_channels < 1) throw ValueError("network spec: base channels must be >= 1");
        if (in_channels < 1 || out_channels < 1)
            throw ValueError("network spec: channel counts must be >= 1");
    }

    int channels_at(int level) const { return base_channels << level; }

    /// Input patches must tile down through depth-1 poolings.
    int spatial_divisor() const { return 1 << (depth - 1); }

    bool operator==(const NetworkSpec&) const = default;
};

/// One conv node X^{level,stage} of the topology.
struct ConvNode {
    std::string name;
    int level = 0, stage = 0;
    std::vector<std::string> same_level_inputs;  // concatenated skip inputs
    std::string pool_input;  // encoder: previous-level node pooled 2x ("" for the stem)
    std::string up_input;    // decoder: deeper node upsampled 2x ("" for encoder)
    int in_channels = 0, out_channels = 0;
    bool operator==(const ConvNode&) const = default;
};

struct NetworkGraph {
    std::vector<ConvNode> nodes;  // topological order
    std::string output_node;      // the 1x1 head reads this node
    bool operator==(const NetworkGraph&) const = default;
};

namespace detail {
inline std::string node_name(int level, int stage) {
    return "x" + std::to_string(level) + "_" + std::to_string(stage);
}
}  // namespace detail

inline NetworkGraph plan_network(const NetworkSpec& spec) {
    spec.validate();
    NetworkGraph g;
    const int d = spec.depth;
    for (int i = 0; i < d; ++i) {
        ConvNode n;
        n.name = detail::node_name(i, 0);
        n.level = i;
        n.out_channels = spec.channels_at(i);
        if (i == 0) {
            n.in_channels = spec.in_channels;
        } else {
            n.pool_input = detail::node_name(i - 1, 0);
            n.in_channels = spec.channels_at(i - 1);
        }
        g.nodes.push_back(std::move(n));
    }
    if (spec.variant == NetVariant::unetpp) {
        for (int j = 1; j < d; ++j)
            for (int i = 0; i + j < d; ++i) {
                ConvNode n;
                n.name = detail::node_name(i, j);
                n.level = i;
                n.stage = j;
                for (int k = 0; k < j; ++k)
                    n.same_level_inputs.push_back(detail::node_name(i, k));
                n.up_input = detail::node_name(i + 1, j - 1);
                n.in_channels = j * spec.channels_at(i) + spec.channels_at(i + 1);
                n.out_channels = spec.channels_at(i);
                g.nodes.push_back(std::move(n));
            }
    } else {
        // backbone decoder: one node per level, deepest first
        for (int i = d - 2; i >= 0; --i) {
            ConvNode n;
            const int j = d - 1 - i;
            n.name = detail::node_name(i, j);
            n.level = i;
            n.stage = j;
            n.same_level_inputs.push_back(detail::node_name(i, 0));
            n.up_input = detail::node_name(i + 1, j - 1);
            n.in_channels = spec.channels_at(i) + spec.channels_at(i + 1);
            n.out_channels = spec.channels_at(i);
            g.nodes.push_back(std::move(n));
        }
    }
    g.output_node = detail::node_name(0, d - 1);
    return g;
}

/// Drop every nested node (0 < stage < depth-1-level) and trim the remaining
/// same-level inputs accordingly. Applied to a U-Net++ graph this recovers
/// the plain encoder-decoder wiring.
inline NetworkGraph prune_to_backbone(const NetworkGraph& g) {
    NetworkGraph out;
    out.output_node = g.output_node;
    // depth = max level + 1
    int depth = 0;
    for (const ConvNode& n : g.nodes) depth = std::max(depth, n.level + 1);
    const auto kept = [&](int level, int stage) {
        return stage == 0 || stage == depth - 1 - level;
    };
    std::map<std::string, int> channels;
    for (const ConvNode& n : g.nodes) channels[n.name] = n.out_channels;
    std::vector<ConvNode> encoder, decoder;
    for (const ConvNode& n : g.nodes) {
        if (!kept(n.level, n.stage)) continue;
        ConvNode c = n;
        std::vector<std::string> trimmed;
        for (const std::string& s : c.same_level_inputs) {
            const ConvNode* src = nullptr;
            for (const ConvNode& m : g.nodes)
                if (m.name == s) src = &m;
            if (src && kept(src->level, src->stage)) trimmed.push_back(s);
        }
        c.same_level_inputs = std::move(trimmed);
        if (!c.same_level_inputs.empty() || !c.pool_input.empty() || !c.up_input.empty()) {
            c.in_channels = 0;
            for (const std::string& s : c.same_level_inputs) c.in_channels += channels[s];
            if (!c.pool_input.empty()) c.in_channels += channels[c.pool_input];
            if (!c.up_input.empty()) c.in_channels += channels[c.up_input];
        }  // else: the stem keeps the network input channel count
        (c.stage == 0 ? encoder : decoder).push_back(std::move(c));
    }
    // match plain-U-Net ordering: encoder shallow-to-deep, decoder deep-to-shallow
    std::sort(encoder.begin(), encoder.end(),
              [](const ConvNode& a, const ConvNode& b) { return a.level < b.level; });
    std::sort(decoder.begin(), decoder.end(),
              [](const ConvNode& a, const ConvNode& b) { return a.level > b.level; });
    out.nodes = std::move(encoder);
    out.nodes.insert(out.nodes.end(), decoder.begin(), decoder.end());
    return out;
}

template <typename T = float>
class Network {
    static_assert(std::is_floating_point_v<T>);

  public:
    struct Param {
        std::string name;
        Shape shape;
        std::vector<T> data;
    };

    explicit Network(const NetworkSpec& spec) : spec_(spec), graph_(plan_network(spec)) {
        Rng rng(mix_seed(spec.seed, 7));
        for (const ConvNode& n : graph_.nodes) {
            add_param(n.name + ".w", Shape{n.out_channels, n.in_channels, 3, 3}, rng);
            add_param(n.name + ".b", Shape{n.out_channels, 1, 1, 1}, rng, /*bias=*/true);
        }
        add_param("head.w", Shape{spec.out_channels, spec.base_channels, 1, 1}, rng);
        add_param("head.b", Shape{spec.out_channels, 1, 1, 1}, rng, /*bias=*/true);
    }

    const NetworkSpec& spec() const { return spec_; }
    const NetworkGraph& graph() const { return graph_; }
    std::vector<Param>& parameters() { return params_; }
    const std::vector<Param>& parameters() const { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Param& p : params_) n += p.data.size();
        return n;
    }

    /// Bind parameters onto a tape and run the forward graph. The returned
    /// tensors are parallel to parameters(), for reading gradients after
    /// backward().
    struct Bound {
        Tensor<T> output;
        std::vector<Tensor<T>> param_tensors;
    };

    Bound forward(Tape<T>& tape, const Tensor<T>& input) const {
        if (input.shape.c != spec_.in_channels)
            throw ValueError("network forward: expected " + std::to_string(spec_.in_channels) +
                             " input channels");
        const int div = spec_.spatial_divisor();
        if (input.shape.h % div != 0 || input.shape.w % div != 0)
            throw ValueError("network forward: spatial dims must be divisible by " +
                             std::to_string(div));
        Bound bound;
        std::map<std::string, Tensor<T>> by_name;
        for (const Param& p : params_) {
            const Tensor<T> t = tape.input(p.shape, p.data);
            bound.param_tensors.push_back(t);
            by_name.emplace(p.name, t);
        }
        std::map<std::string, Tensor<T>> outs;
        for (const ConvNode& n : graph_.nodes) {
            std::vector<Tensor<T>> parts;
            for (const std::string& s : n.same_level_inputs) parts.push_back(outs.at(s));
            if (!n.pool_input.empty()) parts.push_back(maxpool2d(outs.at(n.pool_input)));
            if (!n.up_input.empty()) parts.push_back(upsample_nearest2(outs.at(n.up_input)));
            Tensor<T> x = parts.empty()
                              ? input
                              : (parts.size() == 1
                                     ? parts[0]
                                     : concat_channels(std::span<const Tensor<T>>(parts)));
            outs.emplace(n.name, relu(conv2d(x, by_name.at(n.name + ".w"),
                                             by_name.at(n.name + ".b"), 1, Padding::reflect)));
        }
        bound.output = conv2d(outs.at(graph_.output_node), by_name.at("head.w"),
                              by_name.at("head.b"), 1, Padding::zero);
        return bound;
    }

    /// Convenience inference: forward on a throwaway tape, values only.
    std::vector<T> predict(Shape in_shape, std::span<const T> data) const {
        Tape<T> tape;
        const Tensor<T> x = tape.input(in_shape, data);
        const Bound b = forward(tape, x);
        const std::span<const T> v = tape.value(b.output);
        return std::vector<T>(v.begin(), v.end());
    }

  private:
    void add_param(std::string name, Shape shape, Rng& rng, bool bias = false) {
        Param p{std::move(name), shape, std::vector<T>(shape.count(), T{0})};
        if (!bias) {
            // He-style init: N(0, sqrt(2 / fan_in)) for ReLU conv stacks
            const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
            const double sd = std::sqrt(2.0 / fan_in);
            for (T& v : p.data) v = static_cast<T>(rng.normal() * sd);
        }
        params_.push_back(std::move(p));
    }

    NetworkSpec spec_;
    NetworkGraph graph_;
    std::vector<Param> params_;
};

}  // namespace embedheight
