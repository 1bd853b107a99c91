#include "hywia/graph.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "hywia/errors.hpp"

namespace hywia {

namespace {

struct KeyHash {
    std::size_t operator()(const NodeKey& k) const {
        std::size_t h = static_cast<std::size_t>(k.layer + 2);
        h = h * 131 + static_cast<std::size_t>(k.role);
        h = h * 131 + static_cast<std::size_t>(k.side);
        h = h * 131 + k.index;
        return h;
    }
};

// Disjoint-set over node ids.
struct Dsu {
    std::vector<std::uint32_t> parent;
    explicit Dsu(std::size_t n) : parent(n) {
        std::iota(parent.begin(), parent.end(), 0u);
    }
    std::uint32_t find(std::uint32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

const char* role_name(Role r) {
    switch (r) {
        case Role::Embed: return "embed";
        case Role::Q: return "wq";
        case Role::K: return "wk";
        case Role::V: return "wv";
        case Role::O: return "wo";
        case Role::Gate: return "wgate";
        case Role::Up: return "wup";
        case Role::Down: return "wdown";
        case Role::Head: return "head";
        case Role::Stream: return "stream";
    }
    return "?";
}

const char* group_kind_name(GroupKind k) {
    return k == GroupKind::AttentionHead ? "attention-head" : "mlp-channel";
}

std::uint32_t ChannelGraph::add_node(const NodeKey& key) {
    nodes_.push_back(key);
    adj_.emplace_back();
    return static_cast<std::uint32_t>(nodes_.size() - 1);
}

void ChannelGraph::add_edge(std::uint32_t from, std::uint32_t to, double weight,
                            bool coupled) {
    adj_[from].push_back(Edge{to, weight, coupled});
}

std::size_t ChannelGraph::edge_count() const {
    std::size_t n = 0;
    for (const auto& a : adj_) n += a.size();
    return n;
}

std::uint32_t ChannelGraph::node_id(const NodeKey& key) const {
    for (std::uint32_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i] == key) return i;
    throw InputError(std::string("node_id: unknown node (layer ") +
                     std::to_string(key.layer) + ", " + role_name(key.role) +
                     ", " + (key.side == Side::In ? "in" : "out") + ", " +
                     std::to_string(key.index) + ")");
}

bool ChannelGraph::has_node(const NodeKey& key) const {
    for (const NodeKey& n : nodes_)
        if (n == key) return true;
    return false;
}

double ChannelGraph::connect(std::uint32_t from, std::uint32_t to,
                             std::size_t max_path_len) const {
    if (from >= nodes_.size() || to >= nodes_.size())
        throw InputError("connect: node id out of range");
    if (max_path_len < 1) throw InputError("connect: max_path_len must be >= 1");
    for (const Edge& e : adj_[from])
        if (e.to == to) return e.weight;  // direct connection
    // Sum over all paths of length <= max_path_len of the edge-weight
    // product. Dense frontier keeps the summation order deterministic.
    const std::size_t n = nodes_.size();
    std::vector<double> cur(n, 0.0), next(n, 0.0);
    cur[from] = 1.0;
    double total = 0.0;
    for (std::size_t step = 0; step < max_path_len; ++step) {
        std::fill(next.begin(), next.end(), 0.0);
        bool any = false;
        for (std::uint32_t u = 0; u < n; ++u) {
            const double c = cur[u];
            if (c == 0.0) continue;
            for (const Edge& e : adj_[u]) {
                next[e.to] += c * e.weight;
                any = true;
            }
        }
        total += next[to];
        cur.swap(next);
        if (!any) break;
    }
    return total;
}

double ChannelGraph::connect(const NodeKey& from, const NodeKey& to,
                             std::size_t max_path_len) const {
    return connect(node_id(from), node_id(to), max_path_len);
}

std::vector<double> ChannelGraph::connect_all_to(std::uint32_t target,
                                                 std::size_t max_path_len) const {
    if (target >= nodes_.size())
        throw InputError("connect_all_to: node id out of range");
    if (max_path_len < 1)
        throw InputError("connect_all_to: max_path_len must be >= 1");
    const std::size_t n = nodes_.size();
    // cur[v] = sum over paths v -> target of exactly `step` edges
    std::vector<double> cur(n, 0.0), next(n, 0.0), total(n, 0.0);
    for (std::uint32_t u = 0; u < n; ++u)
        for (const Edge& e : adj_[u])
            if (e.to == target) cur[u] += e.weight;
    for (std::uint32_t u = 0; u < n; ++u) total[u] = cur[u];
    for (std::size_t step = 2; step <= max_path_len; ++step) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::uint32_t u = 0; u < n; ++u)
            for (const Edge& e : adj_[u])
                if (cur[e.to] != 0.0) next[u] += e.weight * cur[e.to];
        for (std::uint32_t u = 0; u < n; ++u) total[u] += next[u];
        cur.swap(next);
    }
    // Direct connections short-circuit the path sum.
    for (std::uint32_t u = 0; u < n; ++u)
        for (const Edge& e : adj_[u])
            if (e.to == target) {
                total[u] = e.weight;
                break;
            }
    return total;
}

bool ChannelGraph::is_acyclic() const {
    std::vector<std::size_t> indeg(nodes_.size(), 0);
    for (const auto& a : adj_)
        for (const Edge& e : a) ++indeg[e.to];
    std::vector<std::uint32_t> stack;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i)
        if (indeg[i] == 0) stack.push_back(i);
    std::size_t seen = 0;
    while (!stack.empty()) {
        const std::uint32_t u = stack.back();
        stack.pop_back();
        ++seen;
        for (const Edge& e : adj_[u])
            if (--indeg[e.to] == 0) stack.push_back(e.to);
    }
    return seen == nodes_.size();
}

ChannelGraph ChannelGraph::build(const DecoderModel& model) {
    const ModelConfig& cfg = model.config();
    const std::size_t dm = cfg.d_model;
    const std::size_t hd = cfg.head_dim;

    // Shape consistency before anything else.
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        const LayerWeights& lw = model.layer(l);
        const std::size_t aw = lw.n_heads * hd;
        auto check = [&](const Tensor& w, std::size_t r, std::size_t c,
                         const char* what) {
            if (w.rows() != r || w.cols() != c)
                throw StructuralError("build_graph: layer " +
                                      std::to_string(l) + " " + what +
                                      " has shape " + shape_str(w.shape()) +
                                      ", expected [" + std::to_string(r) +
                                      " x " + std::to_string(c) + "]");
        };
        check(lw.wq, dm, aw, "wq");
        check(lw.wk, dm, aw, "wk");
        check(lw.wv, dm, aw, "wv");
        check(lw.wo, aw, dm, "wo");
        check(lw.wgate, dm, lw.d_ff, "wgate");
        check(lw.wup, dm, lw.d_ff, "wup");
        check(lw.wdown, lw.d_ff, dm, "wdown");
    }

    ChannelGraph g;
    g.d_model_ = dm;
    g.head_dim_ = hd;
    g.from_model_ = true;

    std::unordered_map<NodeKey, std::uint32_t, KeyHash> idx;
    auto put = [&](int layer, Role role, Side side, std::uint32_t i) {
        NodeKey key{layer, role, side, i};
        const std::uint32_t id = g.add_node(key);
        idx[key] = id;
        return id;
    };
    auto at = [&](int layer, Role role, Side side, std::uint32_t i) {
        return idx.at(NodeKey{layer, role, side, i});
    };

    // Embedding output channels and the stream after them.
    for (std::uint32_t d = 0; d < dm; ++d) put(-1, Role::Embed, Side::Out, d);
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        const LayerWeights& lw = model.layer(l);
        const std::uint32_t aw = static_cast<std::uint32_t>(lw.n_heads * hd);
        const std::uint32_t ff = static_cast<std::uint32_t>(lw.d_ff);
        g.layer_dims_.emplace_back(lw.n_heads, lw.d_ff);
        const int li = static_cast<int>(l);
        for (std::uint32_t d = 0; d < dm; ++d) {
            put(li, Role::Q, Side::In, d);
            put(li, Role::K, Side::In, d);
            put(li, Role::V, Side::In, d);
        }
        for (std::uint32_t c = 0; c < aw; ++c) {
            put(li, Role::Q, Side::Out, c);
            put(li, Role::K, Side::Out, c);
            put(li, Role::V, Side::Out, c);
            put(li, Role::O, Side::In, c);
        }
        for (std::uint32_t d = 0; d < dm; ++d) put(li, Role::O, Side::Out, d);
        for (std::uint32_t d = 0; d < dm; ++d) {
            put(li, Role::Gate, Side::In, d);
            put(li, Role::Up, Side::In, d);
        }
        for (std::uint32_t j = 0; j < ff; ++j) {
            put(li, Role::Gate, Side::Out, j);
            put(li, Role::Up, Side::Out, j);
            put(li, Role::Down, Side::In, j);
        }
        for (std::uint32_t d = 0; d < dm; ++d) put(li, Role::Down, Side::Out, d);
    }
    // Residual stream hops: 0 after embedding, then attention add and MLP add
    // per block.
    const std::size_t hops = 2 * model.n_layers() + 1;
    for (std::size_t s = 0; s < hops; ++s)
        for (std::uint32_t d = 0; d < dm; ++d)
            put(static_cast<int>(s), Role::Stream, Side::Out, d);
    for (std::uint32_t d = 0; d < dm; ++d) put(-1, Role::Head, Side::In, d);
    for (std::uint32_t v = 0; v < cfg.vocab_size; ++v)
        put(-1, Role::Head, Side::Out, v);

    // Matrix edges carry the actual connecting weight.
    auto matrix_edges = [&](const Tensor& w, int layer, Role role) {
        for (std::uint32_t u = 0; u < w.rows(); ++u) {
            const std::uint32_t from = at(layer, role, Side::In, u);
            for (std::uint32_t v = 0; v < w.cols(); ++v)
                g.add_edge(from, at(layer, role, Side::Out, v), w.at(u, v));
        }
    };

    for (std::uint32_t d = 0; d < dm; ++d)
        g.add_edge(at(-1, Role::Embed, Side::Out, d),
                   at(0, Role::Stream, Side::Out, d), 1.0);

    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        const LayerWeights& lw = model.layer(l);
        const int li = static_cast<int>(l);
        const std::uint32_t aw = static_cast<std::uint32_t>(lw.n_heads * hd);
        const std::uint32_t ff = static_cast<std::uint32_t>(lw.d_ff);
        const int s_in = static_cast<int>(2 * l);      // stream entering block
        const int s_mid = s_in + 1;                    // after attention add
        const int s_out = s_in + 2;                    // after MLP add

        for (std::uint32_t d = 0; d < dm; ++d) {
            const std::uint32_t sin = at(s_in, Role::Stream, Side::Out, d);
            g.add_edge(sin, at(li, Role::Q, Side::In, d), 1.0);
            g.add_edge(sin, at(li, Role::K, Side::In, d), 1.0);
            g.add_edge(sin, at(li, Role::V, Side::In, d), 1.0);
        }
        matrix_edges(lw.wq, li, Role::Q);
        matrix_edges(lw.wk, li, Role::K);
        matrix_edges(lw.wv, li, Role::V);
        // Attention mixing: the softmax couples every q/k channel of a head
        // to all of the head's outputs; v feeds its own output channel.
        for (std::size_t h = 0; h < lw.n_heads; ++h) {
            for (std::uint32_t c = static_cast<std::uint32_t>(h * hd);
                 c < (h + 1) * hd; ++c) {
                for (std::uint32_t c2 = static_cast<std::uint32_t>(h * hd);
                     c2 < (h + 1) * hd; ++c2) {
                    g.add_edge(at(li, Role::Q, Side::Out, c),
                               at(li, Role::O, Side::In, c2), 1.0, true);
                    g.add_edge(at(li, Role::K, Side::Out, c),
                               at(li, Role::O, Side::In, c2), 1.0, true);
                }
                g.add_edge(at(li, Role::V, Side::Out, c),
                           at(li, Role::O, Side::In, c), 1.0, true);
            }
        }
        (void)aw;
        matrix_edges(lw.wo, li, Role::O);
        for (std::uint32_t d = 0; d < dm; ++d) {
            // residual add after attention
            g.add_edge(at(li, Role::O, Side::Out, d),
                       at(s_mid, Role::Stream, Side::Out, d), 1.0, true);
            g.add_edge(at(s_in, Role::Stream, Side::Out, d),
                       at(s_mid, Role::Stream, Side::Out, d), 1.0, true);
            const std::uint32_t smid = at(s_mid, Role::Stream, Side::Out, d);
            g.add_edge(smid, at(li, Role::Gate, Side::In, d), 1.0);
            g.add_edge(smid, at(li, Role::Up, Side::In, d), 1.0);
        }
        matrix_edges(lw.wgate, li, Role::Gate);
        matrix_edges(lw.wup, li, Role::Up);
        // gating product
        for (std::uint32_t j = 0; j < ff; ++j) {
            g.add_edge(at(li, Role::Gate, Side::Out, j),
                       at(li, Role::Down, Side::In, j), 1.0, true);
            g.add_edge(at(li, Role::Up, Side::Out, j),
                       at(li, Role::Down, Side::In, j), 1.0, true);
        }
        matrix_edges(lw.wdown, li, Role::Down);
        for (std::uint32_t d = 0; d < dm; ++d) {
            // residual add after MLP
            g.add_edge(at(li, Role::Down, Side::Out, d),
                       at(s_out, Role::Stream, Side::Out, d), 1.0, true);
            g.add_edge(at(s_mid, Role::Stream, Side::Out, d),
                       at(s_out, Role::Stream, Side::Out, d), 1.0, true);
        }
    }
    const int s_last = static_cast<int>(2 * model.n_layers());
    for (std::uint32_t d = 0; d < dm; ++d)
        g.add_edge(at(s_last, Role::Stream, Side::Out, d),
                   at(-1, Role::Head, Side::In, d), 1.0);
    for (std::uint32_t u = 0; u < dm; ++u) {
        const std::uint32_t from = at(-1, Role::Head, Side::In, u);
        for (std::uint32_t v = 0; v < cfg.vocab_size; ++v)
            g.add_edge(from, at(-1, Role::Head, Side::Out, v),
                       model.output_head().at(u, v));
    }
    return g;
}

std::vector<DependencyGroup> ChannelGraph::discover_groups() const {
    if (!from_model_)
        throw ContractError("discover_groups: graph was not built from a model");
    auto prunable = [](const NodeKey& k) {
        switch (k.role) {
            case Role::Q:
            case Role::K:
            case Role::V:
            case Role::Gate:
            case Role::Up:
                return k.side == Side::Out;
            case Role::O:
            case Role::Down:
                return k.side == Side::In;
            default:
                return false;
        }
    };

    Dsu dsu(nodes_.size());
    for (std::uint32_t u = 0; u < nodes_.size(); ++u) {
        if (!prunable(nodes_[u])) continue;
        for (const Edge& e : adj_[u])
            if (e.coupled && prunable(nodes_[e.to])) dsu.unite(u, e.to);
    }

    // Collect components keyed by their root.
    std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> comps;
    for (std::uint32_t u = 0; u < nodes_.size(); ++u)
        if (prunable(nodes_[u])) comps[dsu.find(u)].push_back(u);

    std::vector<DependencyGroup> groups;
    for (auto& [root, members] : comps) {
        const NodeKey& k0 = nodes_[members.front()];
        DependencyGroup grp;
        grp.layer = static_cast<std::size_t>(k0.layer);
        bool attn = false;
        std::uint32_t min_index = UINT32_MAX;
        for (std::uint32_t id : members) {
            const NodeKey& k = nodes_[id];
            if (k.role == Role::Q || k.role == Role::K || k.role == Role::V ||
                k.role == Role::O)
                attn = true;
            min_index = std::min(min_index, k.index);
        }
        grp.kind = attn ? GroupKind::AttentionHead : GroupKind::MlpChannel;
        const std::size_t dm = d_model_;
        if (attn) {
            grp.index = min_index / head_dim_;
            const std::size_t c0 = grp.index * head_dim_;
            const std::size_t c1 = c0 + head_dim_;
            const std::size_t l = grp.layer;
            grp.members = {
                SliceRef{layer_param_name(l, "wq"), 1, c0, c1},
                SliceRef{layer_param_name(l, "wk"), 1, c0, c1},
                SliceRef{layer_param_name(l, "wv"), 1, c0, c1},
                SliceRef{layer_param_name(l, "wo"), 0, c0, c1},
            };
            grp.param_count = 4 * dm * head_dim_;
        } else {
            grp.index = min_index;
            const std::size_t j = grp.index;
            const std::size_t l = grp.layer;
            grp.members = {
                SliceRef{layer_param_name(l, "wgate"), 1, j, j + 1},
                SliceRef{layer_param_name(l, "wup"), 1, j, j + 1},
                SliceRef{layer_param_name(l, "wdown"), 0, j, j + 1},
            };
            grp.param_count = 3 * dm;
        }
        groups.push_back(std::move(grp));
    }
    std::sort(groups.begin(), groups.end(),
              [](const DependencyGroup& a, const DependencyGroup& b) {
                  if (a.layer != b.layer) return a.layer < b.layer;
                  if (a.kind != b.kind)
                      return static_cast<int>(a.kind) < static_cast<int>(b.kind);
                  return a.index < b.index;
              });
    for (std::size_t i = 0; i < groups.size(); ++i)
        groups[i].id = static_cast<int>(i);
    return groups;
}

std::vector<SliceRef> channel_slices(const Channel& c) {
    if (c.kind == GroupKind::AttentionHead) {
        return {
            SliceRef{layer_param_name(c.layer, "wq"), 1, c.index, c.index + 1},
            SliceRef{layer_param_name(c.layer, "wk"), 1, c.index, c.index + 1},
            SliceRef{layer_param_name(c.layer, "wv"), 1, c.index, c.index + 1},
            SliceRef{layer_param_name(c.layer, "wo"), 0, c.index, c.index + 1},
        };
    }
    return {
        SliceRef{layer_param_name(c.layer, "wgate"), 1, c.index, c.index + 1},
        SliceRef{layer_param_name(c.layer, "wup"), 1, c.index, c.index + 1},
        SliceRef{layer_param_name(c.layer, "wdown"), 0, c.index, c.index + 1},
    };
}

std::vector<Channel> group_channels(const DependencyGroup& g,
                                    std::size_t head_dim) {
    std::vector<Channel> chans;
    if (g.kind == GroupKind::AttentionHead) {
        for (std::size_t c = g.index * head_dim; c < (g.index + 1) * head_dim;
             ++c)
            chans.push_back(Channel{g.layer, g.kind, c});
    } else {
        chans.push_back(Channel{g.layer, g.kind, g.index});
    }
    return chans;
}

std::size_t expected_node_count(const DecoderModel& model) {
    const ModelConfig& cfg = model.config();
    const std::size_t dm = cfg.d_model;
    std::size_t n = dm;                               // embedding outputs
    n += (2 * model.n_layers() + 1) * dm;             // stream hops
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        const std::size_t aw = model.attn_width(l);
        const std::size_t ff = model.layer(l).d_ff;
        n += 3 * dm + 4 * aw + dm;   // q/k/v in, q/k/v out + o in, o out
        n += 2 * dm + 3 * ff + dm;   // gate/up in, gate/up out + down in, down out
    }
    n += dm + cfg.vocab_size;  // head in/out
    return n;
}

}  // namespace hywia
