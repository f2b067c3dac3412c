#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace rrgcn {

struct ParseError : std::runtime_error {
    std::size_t line;
    std::size_t column;
    ParseError(std::size_t line_, std::size_t column_, const std::string& what_)
        : std::runtime_error("line " + std::to_string(line_) + ", col " +
                             std::to_string(column_) + ": " + what_),
          line(line_),
          column(column_) {}
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using NodeId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
    NodeId head;
    RelationId relation;  // original relation id
    NodeId tail;

    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// Compressed sparse adjacency for one directed relation:
/// neighbours of node i are neighbors[offsets[i] .. offsets[i+1]), sorted.
struct Csr {
    std::vector<std::uint64_t> offsets;  // size entity_count + 1
    std::vector<NodeId> neighbors;

    std::size_t degree(NodeId i) const { return offsets[i + 1] - offsets[i]; }
    const NodeId* begin(NodeId i) const { return neighbors.data() + offsets[i]; }
    const NodeId* end(NodeId i) const { return neighbors.data() + offsets[i + 1]; }
};

/// Dictionary-encoded immutable multigraph. Directed relation 2r holds the
/// forward edges of original relation r, 2r+1 its inverses, so every edge
/// (i, r, j) has a mirror (j, r_inv, i).
class GraphIndex {
public:
    GraphIndex() = default;

    /// Builds the index from (deduplicated) triples. `triples` may contain
    /// duplicates and self-loops; both are dropped.
    static GraphIndex build(std::uint32_t entity_count, std::uint32_t relation_count,
                            std::vector<Triple> triples,
                            std::vector<std::string> entity_names,
                            std::vector<std::string> relation_names);

    std::uint32_t entity_count() const { return entity_count_; }
    std::uint32_t relation_count() const { return relation_count_; }
    std::uint32_t directed_relation_count() const { return 2 * relation_count_; }
    std::uint64_t edge_count() const { return edge_count_; }

    static RelationId forward_id(RelationId r) { return 2 * r; }
    static RelationId inverse_id(RelationId r) { return 2 * r + 1; }

    /// Adjacency of directed relation id in [0, 2*relation_count).
    const Csr& adjacency(RelationId directed) const { return adjacency_[directed]; }

    /// Incident original (non-inverse) edge count of a node.
    std::uint32_t degree(NodeId i) const { return degrees_[i]; }
    std::uint32_t max_degree() const;

    const std::string& entity_name(NodeId i) const { return entity_names_[i]; }
    const std::string& relation_name(RelationId r) const { return relation_names_[r]; }
    std::optional<NodeId> entity_id(const std::string& name) const;
    std::optional<RelationId> relation_id(const std::string& name) const;

    /// All forward edges, ascending by (relation, head, tail).
    std::vector<Triple> export_triples() const;

    /// Distinct neighbours of i over all directed relations, ascending.
    std::vector<NodeId> undirected_neighbors(NodeId i) const;

    bool operator==(const GraphIndex& other) const;

private:
    std::uint32_t entity_count_ = 0;
    std::uint32_t relation_count_ = 0;
    std::uint64_t edge_count_ = 0;
    std::vector<Csr> adjacency_;            // size 2*relation_count
    std::vector<std::uint32_t> degrees_;    // size entity_count
    std::vector<std::string> entity_names_;
    std::vector<std::string> relation_names_;
    std::unordered_map<std::string, NodeId> entity_ids_;
    std::unordered_map<std::string, RelationId> relation_ids_;

    friend GraphIndex read_graph_cache(std::istream&);
};

/// Parses N-Triples from a stream (gzip detected by magic bytes when reading
/// from a file path overload). Ids are assigned in first-occurrence order.
GraphIndex ingest_ntriples(std::istream& in);
GraphIndex ingest_ntriples_file(const std::string& path);

struct PruneResult {
    GraphIndex graph;
    std::vector<NodeId> old_to_new;  // kNoNode for removed nodes
    static constexpr NodeId kNoNode = static_cast<NodeId>(-1);
};

/// Subgraph induced on nodes within `hops` undirected hops of any seed.
PruneResult prune_khop(const GraphIndex& g, const std::unordered_set<NodeId>& seeds,
                       std::uint32_t hops);

/// Removes non-protected nodes with degree <= threshold, single pass.
PruneResult cut_low_degree(const GraphIndex& g, std::uint32_t threshold,
                           const std::unordered_set<NodeId>& protected_nodes);

/// Restricts the graph to the kept original relations; entity set unchanged.
GraphIndex filter_relations(const GraphIndex& g,
                            const std::unordered_set<RelationId>& keep);

// ---- labelled data ------------------------------------------------------

struct LabeledNode {
    NodeId node;
    std::uint32_t label;
};

struct LabeledSplit {
    std::vector<LabeledNode> train, val, test;
    std::uint32_t class_count = 0;
};

/// TSV with header `node_iri<TAB>label<TAB>split`, split in {train,valid,test}.
/// Labels are dictionary-encoded in first-occurrence order.
LabeledSplit load_labels(std::istream& in, const GraphIndex& g);
LabeledSplit load_labels_file(const std::string& path, const GraphIndex& g);

struct TripleSplit {
    std::vector<Triple> train, val, test;
};

/// Three TSV files `head_iri<TAB>relation_iri<TAB>tail_iri`.
TripleSplit load_triple_split(const std::string& train_path, const std::string& val_path,
                              const std::string& test_path, const GraphIndex& g);

/// TSV `relation_iri<TAB>score`; returns ids with score >= 0.6 * max score.
std::unordered_set<RelationId> load_relation_filter(std::istream& in, const GraphIndex& g,
                                                    double keep_fraction = 0.6);

// ---- binary cache -------------------------------------------------------

/// Graph index cache, magic `RRGX`, bit-exact across runs.
void write_graph_cache(std::ostream& out, const GraphIndex& g);
GraphIndex read_graph_cache(std::istream& in);

/// SHA-256 of the cache serialisation; identifies graph content.
std::array<std::uint8_t, 32> graph_content_hash(const GraphIndex& g);

}  // namespace rrgcn
