#include "rrgcn/graph.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <deque>
#include <fstream>
#include <sstream>

#include "rrgcn/sha256.hpp"

namespace rrgcn {

// ---- GraphIndex ----------------------------------------------------------

GraphIndex GraphIndex::build(std::uint32_t entity_count, std::uint32_t relation_count,
                             std::vector<Triple> triples,
                             std::vector<std::string> entity_names,
                             std::vector<std::string> relation_names) {
    std::erase_if(triples, [](const Triple& t) { return t.head == t.tail; });
    std::sort(triples.begin(), triples.end());
    triples.erase(std::unique(triples.begin(), triples.end()), triples.end());

    GraphIndex g;
    g.entity_count_ = entity_count;
    g.relation_count_ = relation_count;
    g.edge_count_ = triples.size();
    g.entity_names_ = std::move(entity_names);
    g.relation_names_ = std::move(relation_names);
    for (NodeId i = 0; i < entity_count; ++i) g.entity_ids_.emplace(g.entity_names_[i], i);
    for (RelationId r = 0; r < relation_count; ++r)
        g.relation_ids_.emplace(g.relation_names_[r], r);

    g.degrees_.assign(entity_count, 0);
    for (const Triple& t : triples) {
        ++g.degrees_[t.head];
        ++g.degrees_[t.tail];
    }

    g.adjacency_.assign(2 * std::size_t(relation_count), Csr{});
    std::vector<std::uint64_t> counts;
    for (RelationId r = 0; r < relation_count; ++r) {
        for (int dir = 0; dir < 2; ++dir) {
            Csr& csr = g.adjacency_[2 * r + dir];
            counts.assign(entity_count, 0);
            for (const Triple& t : triples) {
                if (t.relation == r) ++counts[dir == 0 ? t.head : t.tail];
            }
            csr.offsets.assign(entity_count + 1, 0);
            for (NodeId i = 0; i < entity_count; ++i)
                csr.offsets[i + 1] = csr.offsets[i] + counts[i];
            csr.neighbors.resize(csr.offsets[entity_count]);
            counts.assign(entity_count, 0);
            for (const Triple& t : triples) {
                if (t.relation != r) continue;
                NodeId src = dir == 0 ? t.head : t.tail;
                NodeId dst = dir == 0 ? t.tail : t.head;
                csr.neighbors[csr.offsets[src] + counts[src]++] = dst;
            }
            for (NodeId i = 0; i < entity_count; ++i)
                std::sort(csr.neighbors.begin() + csr.offsets[i],
                          csr.neighbors.begin() + csr.offsets[i + 1]);
        }
    }
    return g;
}

std::uint32_t GraphIndex::max_degree() const {
    std::uint32_t m = 0;
    for (std::uint32_t d : degrees_) m = std::max(m, d);
    return m;
}

std::optional<NodeId> GraphIndex::entity_id(const std::string& name) const {
    auto it = entity_ids_.find(name);
    if (it == entity_ids_.end()) return std::nullopt;
    return it->second;
}

std::optional<RelationId> GraphIndex::relation_id(const std::string& name) const {
    auto it = relation_ids_.find(name);
    if (it == relation_ids_.end()) return std::nullopt;
    return it->second;
}

std::vector<Triple> GraphIndex::export_triples() const {
    std::vector<Triple> out;
    out.reserve(edge_count_);
    for (RelationId r = 0; r < relation_count_; ++r) {
        const Csr& csr = adjacency_[forward_id(r)];
        for (NodeId i = 0; i < entity_count_; ++i) {
            for (const NodeId* j = csr.begin(i); j != csr.end(i); ++j)
                out.push_back({i, r, *j});
        }
    }
    return out;
}

std::vector<NodeId> GraphIndex::undirected_neighbors(NodeId i) const {
    std::vector<NodeId> out;
    for (const Csr& csr : adjacency_) out.insert(out.end(), csr.begin(i), csr.end(i));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

bool GraphIndex::operator==(const GraphIndex& other) const {
    return entity_count_ == other.entity_count_ &&
           relation_count_ == other.relation_count_ &&
           entity_names_ == other.entity_names_ &&
           relation_names_ == other.relation_names_ &&
           export_triples() == other.export_triples();
}

// ---- N-Triples parsing ---------------------------------------------------

namespace {

// One term of a triple line; literals keep their full lexical form
// (quotes, language tag, datatype) as the dictionary key.
struct Term {
    std::string text;
    bool is_literal = false;
};

// Parses a term starting at `pos`; advances `pos` past it.
Term parse_term(const std::string& line, std::size_t& pos, std::size_t line_no) {
    if (pos >= line.size()) throw ParseError(line_no, pos + 1, "unexpected end of line");
    char c = line[pos];
    std::size_t start = pos;
    if (c == '<') {
        std::size_t end = line.find('>', pos);
        if (end == std::string::npos) throw ParseError(line_no, pos + 1, "unterminated IRI");
        pos = end + 1;
        return {line.substr(start, pos - start), false};
    }
    if (c == '_') {
        while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos])))
            ++pos;
        return {line.substr(start, pos - start), false};
    }
    if (c == '"') {
        ++pos;
        while (pos < line.size()) {
            if (line[pos] == '\\') {
                pos += 2;
                continue;
            }
            if (line[pos] == '"') break;
            ++pos;
        }
        if (pos >= line.size()) throw ParseError(line_no, start + 1, "unterminated literal");
        ++pos;  // closing quote
        if (pos < line.size() && line[pos] == '@') {
            while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos])))
                ++pos;
        } else if (pos + 1 < line.size() && line[pos] == '^' && line[pos + 1] == '^') {
            pos += 2;
            if (pos >= line.size() || line[pos] != '<')
                throw ParseError(line_no, pos + 1, "expected datatype IRI");
            std::size_t end = line.find('>', pos);
            if (end == std::string::npos)
                throw ParseError(line_no, pos + 1, "unterminated datatype IRI");
            pos = end + 1;
        }
        return {line.substr(start, pos - start), true};
    }
    throw ParseError(line_no, pos + 1, std::string("unexpected character '") + c + "'");
}

void skip_ws(const std::string& line, std::size_t& pos) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
}

struct Dict {
    std::unordered_map<std::string, std::uint32_t> ids;
    std::vector<std::string> names;

    std::uint32_t intern(const std::string& s) {
        auto [it, inserted] = ids.emplace(s, std::uint32_t(names.size()));
        if (inserted) names.push_back(s);
        return it->second;
    }
};

}  // namespace

GraphIndex ingest_ntriples(std::istream& in) {
    Dict entities, relations;
    std::vector<Triple> triples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t pos = 0;
        skip_ws(line, pos);
        if (pos >= line.size() || line[pos] == '#') continue;

        Term subj = parse_term(line, pos, line_no);
        if (subj.is_literal) throw ParseError(line_no, 1, "literal subject");
        skip_ws(line, pos);
        Term pred = parse_term(line, pos, line_no);
        if (pred.is_literal || pred.text[0] != '<')
            throw ParseError(line_no, pos, "predicate must be an IRI");
        skip_ws(line, pos);
        Term obj = parse_term(line, pos, line_no);
        skip_ws(line, pos);
        if (pos >= line.size() || line[pos] != '.')
            throw ParseError(line_no, pos + 1, "expected terminating '.'");
        ++pos;
        skip_ws(line, pos);
        if (pos < line.size() && line[pos] != '#')
            throw ParseError(line_no, pos + 1, "trailing characters after '.'");

        NodeId s = entities.intern(subj.text);
        RelationId p = relations.intern(pred.text);
        NodeId o = entities.intern(obj.text);
        triples.push_back({s, p, o});
    }
    const auto entity_count = std::uint32_t(entities.names.size());
    const auto relation_count = std::uint32_t(relations.names.size());
    return GraphIndex::build(entity_count, relation_count, std::move(triples),
                             std::move(entities.names), std::move(relations.names));
}

namespace {

// Inflates a gzip file fully into memory.
std::string gunzip_file(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open " + path);
    std::string out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, std::size_t(n));
    bool ok = n == 0;
    gzclose(f);
    if (!ok) throw DataError("gzip read error in " + path);
    return out;
}

bool is_gzip(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    unsigned char magic[2] = {0, 0};
    f.read(reinterpret_cast<char*>(magic), 2);
    return f.gcount() == 2 && magic[0] == 0x1f && magic[1] == 0x8b;
}

}  // namespace

GraphIndex ingest_ntriples_file(const std::string& path) {
    if (is_gzip(path)) {
        std::istringstream in(gunzip_file(path));
        return ingest_ntriples(in);
    }
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return ingest_ntriples(in);
}

// ---- transforms ----------------------------------------------------------

namespace {

// Rebuilds a graph on the node subset marked in `keep`, preserving id order.
PruneResult induce_subgraph(const GraphIndex& g, const std::vector<bool>& keep) {
    PruneResult res;
    res.old_to_new.assign(g.entity_count(), PruneResult::kNoNode);
    std::vector<std::string> names;
    for (NodeId i = 0; i < g.entity_count(); ++i) {
        if (keep[i]) {
            res.old_to_new[i] = NodeId(names.size());
            names.push_back(g.entity_name(i));
        }
    }
    std::vector<Triple> triples;
    for (const Triple& t : g.export_triples()) {
        if (keep[t.head] && keep[t.tail])
            triples.push_back({res.old_to_new[t.head], t.relation, res.old_to_new[t.tail]});
    }
    std::vector<std::string> rel_names;
    for (RelationId r = 0; r < g.relation_count(); ++r)
        rel_names.push_back(g.relation_name(r));
    const auto entity_count = std::uint32_t(names.size());
    res.graph = GraphIndex::build(entity_count, g.relation_count(),
                                  std::move(triples), std::move(names),
                                  std::move(rel_names));
    return res;
}

}  // namespace

PruneResult prune_khop(const GraphIndex& g, const std::unordered_set<NodeId>& seeds,
                       std::uint32_t hops) {
    if (seeds.empty()) throw DataError("prune_khop: empty seed set");
    std::vector<std::uint32_t> dist(g.entity_count(), UINT32_MAX);
    std::deque<NodeId> queue;
    for (NodeId s : seeds) {
        if (s >= g.entity_count()) throw DataError("prune_khop: seed id out of range");
        dist[s] = 0;
        queue.push_back(s);
    }
    while (!queue.empty()) {
        NodeId u = queue.front();
        queue.pop_front();
        if (dist[u] >= hops) continue;
        for (NodeId v : g.undirected_neighbors(u)) {
            if (dist[v] == UINT32_MAX) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    std::vector<bool> keep(g.entity_count());
    for (NodeId i = 0; i < g.entity_count(); ++i) keep[i] = dist[i] != UINT32_MAX;
    return induce_subgraph(g, keep);
}

PruneResult cut_low_degree(const GraphIndex& g, std::uint32_t threshold,
                           const std::unordered_set<NodeId>& protected_nodes) {
    std::vector<bool> keep(g.entity_count());
    for (NodeId i = 0; i < g.entity_count(); ++i)
        keep[i] = g.degree(i) > threshold || protected_nodes.contains(i);
    return induce_subgraph(g, keep);
}

GraphIndex filter_relations(const GraphIndex& g,
                            const std::unordered_set<RelationId>& keep) {
    if (keep.empty()) throw DataError("filter_relations: empty keep set");
    for (RelationId r : keep) {
        if (r >= g.relation_count())
            throw DataError("filter_relations: unknown relation id " + std::to_string(r));
    }
    std::vector<Triple> triples;
    std::vector<std::string> rel_names;
    std::vector<RelationId> old_to_new(g.relation_count(), UINT32_MAX);
    for (RelationId r = 0; r < g.relation_count(); ++r) {
        if (keep.contains(r)) {
            old_to_new[r] = RelationId(rel_names.size());
            rel_names.push_back(g.relation_name(r));
        }
    }
    for (const Triple& t : g.export_triples()) {
        if (old_to_new[t.relation] != UINT32_MAX)
            triples.push_back({t.head, old_to_new[t.relation], t.tail});
    }
    std::vector<std::string> names;
    for (NodeId i = 0; i < g.entity_count(); ++i) names.push_back(g.entity_name(i));
    const auto relation_count = std::uint32_t(rel_names.size());
    return GraphIndex::build(g.entity_count(), relation_count, std::move(triples),
                             std::move(names), std::move(rel_names));
}

// ---- labelled data -------------------------------------------------------

namespace {

std::vector<std::string> split_tsv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t tab = line.find('\t', pos);
        if (tab == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
        out.back().pop_back();
    return out;
}

NodeId require_entity(const GraphIndex& g, const std::string& iri, std::size_t line_no) {
    auto id = g.entity_id(iri);
    if (!id) throw DataError("line " + std::to_string(line_no) + ": unknown entity " + iri);
    return *id;
}

}  // namespace

LabeledSplit load_labels(std::istream& in, const GraphIndex& g) {
    LabeledSplit split;
    Dict label_dict;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cols = split_tsv(line);
        if (first) {
            first = false;
            if (cols.size() == 3 && cols[0] == "node_iri") continue;  // header
        }
        if (cols.size() != 3)
            throw DataError("line " + std::to_string(line_no) + ": expected 3 TSV columns");
        LabeledNode ln{require_entity(g, cols[0], line_no), label_dict.intern(cols[1])};
        if (cols[2] == "train")
            split.train.push_back(ln);
        else if (cols[2] == "valid")
            split.val.push_back(ln);
        else if (cols[2] == "test")
            split.test.push_back(ln);
        else
            throw DataError("line " + std::to_string(line_no) + ": bad split '" + cols[2] +
                            "'");
    }
    split.class_count = std::uint32_t(label_dict.names.size());
    return split;
}

LabeledSplit load_labels_file(const std::string& path, const GraphIndex& g) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return load_labels(in, g);
}

namespace {

std::vector<Triple> load_triples_tsv(const std::string& path, const GraphIndex& g) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<Triple> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cols = split_tsv(line);
        if (cols.size() != 3)
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": expected 3 TSV columns");
        auto rel = g.relation_id(cols[1]);
        if (!rel)
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": unknown relation " + cols[1]);
        out.push_back({require_entity(g, cols[0], line_no), *rel,
                       require_entity(g, cols[2], line_no)});
    }
    return out;
}

}  // namespace

TripleSplit load_triple_split(const std::string& train_path, const std::string& val_path,
                              const std::string& test_path, const GraphIndex& g) {
    return {load_triples_tsv(train_path, g), load_triples_tsv(val_path, g),
            load_triples_tsv(test_path, g)};
}

std::unordered_set<RelationId> load_relation_filter(std::istream& in, const GraphIndex& g,
                                                    double keep_fraction) {
    std::vector<std::pair<RelationId, double>> scores;
    std::string line;
    std::size_t line_no = 0;
    double max_score = 0.0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cols = split_tsv(line);
        if (cols.size() != 2)
            throw DataError("line " + std::to_string(line_no) + ": expected 2 TSV columns");
        auto rel = g.relation_id(cols[0]);
        if (!rel)
            throw DataError("line " + std::to_string(line_no) + ": unknown relation " +
                            cols[0]);
        double s = std::stod(cols[1]);
        scores.emplace_back(*rel, s);
        max_score = std::max(max_score, s);
    }
    std::unordered_set<RelationId> keep;
    for (auto [r, s] : scores) {
        if (s >= keep_fraction * max_score) keep.insert(r);
    }
    return keep;
}

// ---- binary cache --------------------------------------------------------

namespace {

constexpr char kGraphMagic[4] = {'R', 'R', 'G', 'X'};
constexpr std::uint16_t kGraphVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
    std::uint8_t bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bytes[i] = std::uint8_t(std::uint64_t(v) >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    std::uint8_t bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) throw DataError("truncated graph cache");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(bytes[i]) << (8 * i);
    return static_cast<T>(v);
}

void write_string(std::ostream& out, const std::string& s) {
    write_le<std::uint32_t>(out, std::uint32_t(s.size()));
    out.write(s.data(), std::streamsize(s.size()));
}

std::string read_string(std::istream& in) {
    auto len = read_le<std::uint32_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), std::streamsize(len));
    if (!in) throw DataError("truncated graph cache");
    return s;
}

}  // namespace

void write_graph_cache(std::ostream& out, const GraphIndex& g) {
    out.write(kGraphMagic, 4);
    write_le<std::uint16_t>(out, kGraphVersion);
    write_le<std::uint32_t>(out, g.entity_count());
    write_le<std::uint32_t>(out, g.relation_count());
    write_le<std::uint64_t>(out, g.edge_count());
    for (NodeId i = 0; i < g.entity_count(); ++i) write_string(out, g.entity_name(i));
    for (RelationId r = 0; r < g.relation_count(); ++r)
        write_string(out, g.relation_name(r));
    for (RelationId d = 0; d < g.directed_relation_count(); ++d) {
        const Csr& csr = g.adjacency(d);
        for (std::uint64_t o : csr.offsets) write_le<std::uint64_t>(out, o);
        write_le<std::uint64_t>(out, csr.neighbors.size());
        for (NodeId n : csr.neighbors) write_le<std::uint32_t>(out, n);
    }
}

GraphIndex read_graph_cache(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kGraphMagic, 4) != 0)
        throw DataError("not a graph cache (bad magic)");
    auto version = read_le<std::uint16_t>(in);
    if (version != kGraphVersion)
        throw DataError("unsupported graph cache version " + std::to_string(version));

    GraphIndex g;
    g.entity_count_ = read_le<std::uint32_t>(in);
    g.relation_count_ = read_le<std::uint32_t>(in);
    g.edge_count_ = read_le<std::uint64_t>(in);
    g.entity_names_.resize(g.entity_count_);
    for (auto& s : g.entity_names_) s = read_string(in);
    g.relation_names_.resize(g.relation_count_);
    for (auto& s : g.relation_names_) s = read_string(in);
    for (NodeId i = 0; i < g.entity_count_; ++i) g.entity_ids_.emplace(g.entity_names_[i], i);
    for (RelationId r = 0; r < g.relation_count_; ++r)
        g.relation_ids_.emplace(g.relation_names_[r], r);

    g.adjacency_.resize(2 * std::size_t(g.relation_count_));
    g.degrees_.assign(g.entity_count_, 0);
    for (RelationId d = 0; d < g.directed_relation_count(); ++d) {
        Csr& csr = g.adjacency_[d];
        csr.offsets.resize(g.entity_count_ + 1);
        for (auto& o : csr.offsets) o = read_le<std::uint64_t>(in);
        auto n_edges = read_le<std::uint64_t>(in);
        csr.neighbors.resize(n_edges);
        for (auto& n : csr.neighbors) n = read_le<std::uint32_t>(in);
        if (d % 2 == 0) {
            for (NodeId i = 0; i < g.entity_count_; ++i)
                for (const NodeId* j = csr.begin(i); j != csr.end(i); ++j) {
                    ++g.degrees_[i];
                    ++g.degrees_[*j];
                }
        }
    }
    return g;
}

std::array<std::uint8_t, 32> graph_content_hash(const GraphIndex& g) {
    std::ostringstream buf(std::ios::binary);
    write_graph_cache(buf, g);
    const std::string bytes = buf.str();
    return Sha256::digest(bytes.data(), bytes.size());
}

}  // namespace rrgcn
