// Channel-level connectivity graph of the decoder model and the coupled
// dependency groups discovered from it. Nodes are matrix input/output
// channels plus residual-stream channels; edges carry the connecting weight
// and a coupled tag for elementwise interactions (residual add, gating
// product, per-head attention mixing).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hywia/model.hpp"

namespace hywia {

enum class Role : std::uint8_t {
    Embed, Q, K, V, O, Gate, Up, Down, Head, Stream
};
enum class Side : std::uint8_t { In, Out };

const char* role_name(Role r);

struct NodeKey {
    // For Stream nodes `layer` is the hop position along the residual stream
    // (0 after embedding, then two hops per decoder block).
    int layer = -1;
    Role role = Role::Stream;
    Side side = Side::Out;
    std::uint32_t index = 0;

    bool operator==(const NodeKey&) const = default;
};

enum class GroupKind : std::uint8_t { AttentionHead, MlpChannel };

const char* group_kind_name(GroupKind k);

// One contiguous span of rows (axis 0) or columns (axis 1) of a named matrix.
struct SliceRef {
    std::string matrix;
    int axis = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct DependencyGroup {
    int id = -1;
    std::size_t layer = 0;
    GroupKind kind = GroupKind::AttentionHead;
    std::size_t index = 0;  // head index or hidden-channel index
    std::vector<SliceRef> members;
    std::size_t param_count = 0;
};

// One prunable channel: a single head-internal column (attention) or hidden
// channel (MLP). Groups own channels; attention heads own head_dim of them.
struct Channel {
    std::size_t layer = 0;
    GroupKind kind = GroupKind::AttentionHead;
    std::size_t index = 0;  // column index within the layer's q/k/v width,
                            // or hidden channel index

    bool operator==(const Channel&) const = default;
};

std::vector<SliceRef> channel_slices(const Channel& c);
std::vector<Channel> group_channels(const DependencyGroup& g,
                                    std::size_t head_dim);

class ChannelGraph {
public:
    struct Edge {
        std::uint32_t to;
        double weight;
        bool coupled;
    };

    ChannelGraph() = default;

    static ChannelGraph build(const DecoderModel& model);

    std::uint32_t add_node(const NodeKey& key);
    void add_edge(std::uint32_t from, std::uint32_t to, double weight,
                  bool coupled = false);

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t edge_count() const;
    const NodeKey& node(std::uint32_t id) const { return nodes_[id]; }
    std::uint32_t node_id(const NodeKey& key) const;  // throws InputError
    bool has_node(const NodeKey& key) const;
    const std::vector<Edge>& edges_from(std::uint32_t id) const {
        return adj_[id];
    }

    // Connection measure: the direct edge weight if one exists, otherwise the
    // sum over all directed paths of length <= max_path_len of the product of
    // edge weights, otherwise 0.
    double connect(std::uint32_t from, std::uint32_t to,
                   std::size_t max_path_len) const;
    double connect(const NodeKey& from, const NodeKey& to,
                   std::size_t max_path_len) const;

    // Connect(u, target) for every node u in one reverse sweep. Matches
    // connect() on every entry (direct-edge override included).
    std::vector<double> connect_all_to(std::uint32_t target,
                                       std::size_t max_path_len) const;

    // Coupled dependency groups over the prunable channels, ordered by
    // (layer, kind, index). Requires a model-built graph.
    std::vector<DependencyGroup> discover_groups() const;

    bool is_acyclic() const;

    std::size_t head_dim() const { return head_dim_; }

    static constexpr std::size_t kDefaultMaxPathLen = 6;

private:
    std::vector<NodeKey> nodes_;
    std::vector<std::vector<Edge>> adj_;
    // model metadata captured at build time
    std::size_t d_model_ = 0;
    std::size_t head_dim_ = 0;
    std::vector<std::pair<std::size_t, std::size_t>> layer_dims_;  // heads, ff
    bool from_model_ = false;
};

// Expected node count for a model-built graph, from shapes alone.
std::size_t expected_node_count(const DecoderModel& model);

}  // namespace hywia
