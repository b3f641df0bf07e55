#include "subsel/archspace.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "subsel/rng.hpp"
#include "subsel/util.hpp"

namespace subsel {

using nlohmann::json;

const char* op_name(OpCode op) {
    switch (op) {
        case OpCode::Input: return "input";
        case OpCode::Output: return "output";
        case OpCode::OpA: return "op_a";
        case OpCode::OpB: return "op_b";
        case OpCode::OpC: return "op_c";
    }
    throw std::invalid_argument("op_name: bad OpCode");
}

OpCode op_from_name(const std::string& name) {
    if (name == "input") return OpCode::Input;
    if (name == "output") return OpCode::Output;
    if (name == "op_a") return OpCode::OpA;
    if (name == "op_b") return OpCode::OpB;
    if (name == "op_c") return OpCode::OpC;
    throw std::invalid_argument("op_from_name: unknown op '" + name + "'");
}

std::vector<std::vector<std::size_t>> out_adjacency(const Architecture& arch) {
    std::vector<std::vector<std::size_t>> adj(arch.node_count());
    for (auto [s, d] : arch.edges)
        if (s < adj.size() && d < adj.size()) adj[s].push_back(d);
    for (auto& v : adj) std::sort(v.begin(), v.end());
    return adj;
}

std::vector<std::vector<std::size_t>> in_adjacency(const Architecture& arch) {
    std::vector<std::vector<std::size_t>> adj(arch.node_count());
    for (auto [s, d] : arch.edges)
        if (s < adj.size() && d < adj.size()) adj[d].push_back(s);
    for (auto& v : adj) std::sort(v.begin(), v.end());
    return adj;
}

std::vector<std::vector<std::size_t>> undirected_adjacency(const Architecture& arch) {
    std::vector<std::vector<std::size_t>> adj(arch.node_count());
    for (auto [s, d] : arch.edges) {
        if (s >= adj.size() || d >= adj.size()) continue;
        adj[s].push_back(d);
        adj[d].push_back(s);
    }
    for (auto& v : adj) std::sort(v.begin(), v.end());
    return adj;
}

namespace {

// DFS cycle check over possibly-malformed edge lists.
bool has_cycle(std::size_t n, const std::vector<std::vector<std::size_t>>& out) {
    std::vector<int> state(n, 0);  // 0 unseen, 1 on stack, 2 done
    std::vector<std::pair<std::size_t, std::size_t>> stack;
    for (std::size_t root = 0; root < n; ++root) {
        if (state[root] != 0) continue;
        stack.push_back({root, 0});
        state[root] = 1;
        while (!stack.empty()) {
            auto& [u, next] = stack.back();
            if (next < out[u].size()) {
                const std::size_t w = out[u][next++];
                if (state[w] == 1) return true;
                if (state[w] == 0) {
                    state[w] = 1;
                    stack.push_back({w, 0});
                }
            } else {
                state[u] = 2;
                stack.pop_back();
            }
        }
    }
    return false;
}

std::vector<bool> reachable_from(std::size_t start, std::size_t n,
                                 const std::vector<std::vector<std::size_t>>& adj) {
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack{start};
    seen[start] = true;
    while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        for (std::size_t w : adj[u])
            if (!seen[w]) {
                seen[w] = true;
                stack.push_back(w);
            }
    }
    return seen;
}

}  // namespace

std::vector<std::string> validate(const Architecture& arch, const Constraints& c) {
    std::vector<std::string> bad;
    const std::size_t n = arch.node_count();
    if (n < 2) {
        bad.push_back("too few nodes: need at least Input and Output");
        return bad;
    }
    if (n > c.max_nodes)
        bad.push_back("max_nodes exceeded: " + std::to_string(n) + " > " +
                      std::to_string(c.max_nodes));
    if (arch.edges.size() > c.max_edges)
        bad.push_back("max_edges exceeded: " + std::to_string(arch.edges.size()) + " > " +
                      std::to_string(c.max_edges));

    if (arch.nodes.front() != OpCode::Input) bad.push_back("node 0 is not Input");
    if (arch.nodes.back() != OpCode::Output) bad.push_back("last node is not Output");
    std::size_t n_in = 0, n_out = 0;
    for (OpCode op : arch.nodes) {
        n_in += op == OpCode::Input;
        n_out += op == OpCode::Output;
    }
    if (n_in != 1) bad.push_back("Input must appear exactly once");
    if (n_out != 1) bad.push_back("Output must appear exactly once");

    bool endpoints_ok = true;
    std::set<std::pair<std::size_t, std::size_t>> seen_edges;
    for (auto [s, d] : arch.edges) {
        if (s >= n || d >= n) {
            bad.push_back("edge endpoint out of range: (" + std::to_string(s) + "," +
                          std::to_string(d) + ")");
            endpoints_ok = false;
            continue;
        }
        if (s == d)
            bad.push_back("self-loop at node " + std::to_string(s));
        if (!seen_edges.insert({s, d}).second)
            bad.push_back("duplicate edge (" + std::to_string(s) + "," + std::to_string(d) + ")");
    }

    if (endpoints_ok) {
        const auto out = out_adjacency(arch);
        if (has_cycle(n, out)) bad.push_back("cycle detected");
        else {
            // A node is on an Input->Output path iff reachable from Input and
            // Output is reachable from it.
            const auto fwd = reachable_from(0, n, out);
            const auto bwd = reachable_from(n - 1, n, in_adjacency(arch));
            for (std::size_t u = 0; u < n; ++u)
                if (!fwd[u] || !bwd[u])
                    bad.push_back("dangling node " + std::to_string(u) +
                                  ": not on any Input->Output path");
        }
    }
    return bad;
}

BfsOrder bfs_order(const Architecture& arch) {
    // Structural validity only; size limits do not affect ordering.
    Constraints unbounded{std::numeric_limits<std::size_t>::max(),
                          std::numeric_limits<std::size_t>::max()};
    const auto bad = validate(arch, unbounded);
    if (!bad.empty()) throw std::invalid_argument("bfs_order: invalid architecture: " + bad[0]);

    const auto out = out_adjacency(arch);
    const std::size_t n = arch.node_count();
    std::vector<bool> seen(n, false);
    std::queue<std::size_t> q;
    BfsOrder rho;
    q.push(0);
    seen[0] = true;
    while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop();
        rho.order.push_back(u);
        std::vector<std::size_t> kids;
        for (std::size_t w : out[u])
            if (!seen[w]) kids.push_back(w);
        std::sort(kids.begin(), kids.end(), [&arch](std::size_t a, std::size_t b) {
            const int oa = static_cast<int>(arch.nodes[a]);
            const int ob = static_cast<int>(arch.nodes[b]);
            return oa != ob ? oa < ob : a < b;
        });
        for (std::size_t w : kids) {
            seen[w] = true;
            q.push(w);
        }
    }
    return rho;
}

std::string canonical_hash(const Architecture& arch) {
    std::ostringstream canon;
    canon << "n=" << arch.node_count() << ";ops=";
    for (OpCode op : arch.nodes) canon << static_cast<int>(op) << ",";
    canon << ";adj=";
    const auto out = out_adjacency(arch);  // sorted per node
    for (std::size_t u = 0; u < out.size(); ++u) {
        canon << u << ":";
        for (std::size_t w : out[u]) canon << w << ",";
        canon << ";";
    }
    return fnv1a_hex(canon.str());
}

std::string serialize(const Architecture& arch) {
    json j;
    j["nodes"] = json::array();
    for (OpCode op : arch.nodes) j["nodes"].push_back(op_name(op));
    j["edges"] = json::array();
    for (auto [s, d] : arch.edges) j["edges"].push_back({s, d});
    j["id"] = arch.id.empty() ? canonical_hash(arch) : arch.id;
    return j.dump();
}

Architecture deserialize(const std::string& bytes) {
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("architecture parse error at byte ") +
                                 std::to_string(e.byte) + ": " + e.what());
    }
    Architecture arch;
    for (const auto& s : j.at("nodes")) arch.nodes.push_back(op_from_name(s.get<std::string>()));
    for (const auto& e : j.at("edges"))
        arch.edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
    arch.id = j.value("id", "");
    if (arch.id.empty()) arch.id = canonical_hash(arch);
    return arch;
}

std::size_t enumeration_config_bound(const Constraints& c) {
    // Raw configurations: ops on interior nodes x subsets of forward pairs.
    std::size_t total = 0;
    for (std::size_t n = 2; n <= c.max_nodes; ++n) {
        const std::size_t pairs = n * (n - 1) / 2;
        if (pairs >= 40) return std::numeric_limits<std::size_t>::max();
        std::size_t ops = 1;
        for (std::size_t i = 0; i + 2 < n; ++i) ops *= 3;
        total += ops << pairs;
        if (total > (std::size_t{1} << 40)) return std::numeric_limits<std::size_t>::max();
    }
    return total;
}

std::vector<Architecture> enumerate_space(const Constraints& c, std::size_t cap) {
    std::vector<Architecture> found;
    std::set<std::string> seen;
    for (std::size_t n = 2; n <= c.max_nodes; ++n) {
        const std::size_t mid = n - 2;
        const std::size_t pairs = n * (n - 1) / 2;
        std::size_t op_combos = 1;
        for (std::size_t i = 0; i < mid; ++i) op_combos *= 3;
        for (std::size_t oc = 0; oc < op_combos; ++oc) {
            std::vector<OpCode> nodes(n);
            nodes[0] = OpCode::Input;
            nodes[n - 1] = OpCode::Output;
            std::size_t rem = oc;
            for (std::size_t i = 0; i < mid; ++i) {
                nodes[1 + i] = static_cast<OpCode>(2 + static_cast<int>(rem % 3));
                rem /= 3;
            }
            for (std::size_t mask = 0; mask < (std::size_t{1} << pairs); ++mask) {
                Architecture arch;
                arch.nodes = nodes;
                std::size_t bit = 0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = i + 1; j < n; ++j, ++bit)
                        if (mask & (std::size_t{1} << bit)) arch.edges.push_back({i, j});
                if (!validate(arch, c).empty()) continue;
                arch.id = canonical_hash(arch);
                if (!seen.insert(arch.id).second) continue;
                found.push_back(std::move(arch));
                if (found.size() > cap) return found;
            }
        }
    }
    return found;
}

std::vector<Architecture> generate_space(std::uint64_t seed, std::size_t count,
                                         const Constraints& c) {
    if (c.max_nodes < 2) throw std::runtime_error("generate_space: max_nodes must be at least 2");
    Rng rng(seed);
    std::vector<Architecture> out;
    std::set<std::string> seen;
    constexpr std::size_t kBudgetPerGraph = 1000;
    while (out.size() < count) {
        bool accepted = false;
        for (std::size_t attempt = 0; attempt < kBudgetPerGraph; ++attempt) {
            const std::size_t n = 2 + rng.index(c.max_nodes - 1);
            Architecture arch;
            arch.nodes.resize(n);
            arch.nodes[0] = OpCode::Input;
            arch.nodes[n - 1] = OpCode::Output;
            for (std::size_t i = 1; i + 1 < n; ++i)
                arch.nodes[i] = static_cast<OpCode>(2 + static_cast<int>(rng.index(3)));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j)
                    if (rng.bernoulli(0.5)) arch.edges.push_back({i, j});
            if (!validate(arch, c).empty()) continue;
            arch.id = canonical_hash(arch);
            if (!seen.insert(arch.id).second) continue;
            out.push_back(std::move(arch));
            accepted = true;
            break;
        }
        if (!accepted) {
            constexpr std::size_t kEnumCap = 10000;
            if (enumeration_config_bound(c) <= (std::size_t{1} << 22)) {
                const auto all = enumerate_space(c, kEnumCap);
                if (all.size() <= kEnumCap)
                    throw std::runtime_error(
                        "generate_space: constraints admit only " + std::to_string(all.size()) +
                        " distinct graphs, requested " + std::to_string(count));
            }
            throw std::runtime_error(
                "generate_space: rejection budget exhausted after " +
                std::to_string(kBudgetPerGraph) + " attempts for graph " +
                std::to_string(out.size() + 1) + " of " + std::to_string(count));
        }
    }
    return out;
}

void save_space(const std::filesystem::path& path, const std::vector<Architecture>& archs) {
    json arr = json::array();
    for (const auto& a : archs) arr.push_back(json::parse(serialize(a)));
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << arr.dump(2) << "\n";
}

std::vector<Architecture> load_space(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    json arr;
    try {
        arr = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw std::runtime_error("space parse error at byte " + std::to_string(e.byte) + ": " +
                                 e.what());
    }
    std::vector<Architecture> out;
    for (const auto& item : arr) out.push_back(deserialize(item.dump()));
    return out;
}

}  // namespace subsel
