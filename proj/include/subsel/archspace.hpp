#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace subsel {

// Node operation labels. Ordinal order (Input < Output < OpA < OpB < OpC) is
// part of the BFS tie-break contract, so reordering these breaks hashes.
enum class OpCode : int { Input = 0, Output = 1, OpA = 2, OpB = 3, OpC = 4 };

const char* op_name(OpCode op);
OpCode op_from_name(const std::string& name);

// Directed acyclic cell. Node 0 is Input, the last node is Output; edges are
// (src, dst) index pairs. id caches the canonical hash.
struct Architecture {
    std::vector<OpCode> nodes;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::string id;

    std::size_t node_count() const { return nodes.size(); }
};

struct Constraints {
    std::size_t max_nodes = 7;
    std::size_t max_edges = 9;
};

struct BfsOrder {
    std::vector<std::size_t> order;  // permutation; order[0] is the Input node
};

// Returns every violated invariant (empty means valid). Never throws.
std::vector<std::string> validate(const Architecture& arch, const Constraints& c = {});

// Deterministic BFS from Input; a parent's children are enqueued sorted by
// (OpCode ordinal, node index). Throws std::invalid_argument on invalid archs.
BfsOrder bfs_order(const Architecture& arch);

// FNV-1a 64 hex over the sorted-adjacency canonical form. Invariant under
// edge-list reordering; keys the labeled graph, not its isomorphism class.
std::string canonical_hash(const Architecture& arch);

// JSON round-trip: {nodes: [op strings], edges: [[src,dst]], id}.
std::string serialize(const Architecture& arch);
Architecture deserialize(const std::string& bytes);

// Rejection-sampled distinct valid architectures, deterministic in seed.
// Throws std::runtime_error when the constraints cannot supply `count`
// distinct graphs (reports the enumerable maximum when cheap to compute).
std::vector<Architecture> generate_space(std::uint64_t seed, std::size_t count,
                                         const Constraints& c = {});

void save_space(const std::filesystem::path& path, const std::vector<Architecture>& archs);
std::vector<Architecture> load_space(const std::filesystem::path& path);

// Adjacency views used by the encoder and the zoo.
std::vector<std::vector<std::size_t>> out_adjacency(const Architecture& arch);
std::vector<std::vector<std::size_t>> in_adjacency(const Architecture& arch);
std::vector<std::vector<std::size_t>> undirected_adjacency(const Architecture& arch);

// All distinct valid architectures under the constraints, or nullopt when the
// raw configuration space is too large to sweep cheaply.
std::size_t enumeration_config_bound(const Constraints& c);
std::vector<Architecture> enumerate_space(const Constraints& c, std::size_t cap);

}  // namespace subsel
