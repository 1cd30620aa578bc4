#include "graphreason/knowledge_graph.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "graphreason/errors.hpp"

namespace graphreason {

namespace {

constexpr std::string_view kInverseSuffix = "^-1";

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

ClassVocabulary::ClassVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], i).second) throw ConsistencyError("duplicate class name '" + names_[i] + "'");
  }
}

std::optional<std::size_t> ClassVocabulary::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const EdgeType* KnowledgeGraph::find(const std::string& name) const {
  for (const auto& t : types) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string inverse_type_name(const std::string& name) {
  if (name.size() > kInverseSuffix.size() && name.ends_with(kInverseSuffix)) {
    return name.substr(0, name.size() - kInverseSuffix.size());
  }
  return name + std::string(kInverseSuffix);
}

KnowledgeGraph parse_graph(std::istream& in, const ClassVocabulary& vocab, const GraphLoadOptions& options) {
  KnowledgeGraph graph;
  graph.classes = vocab.size();
  const std::size_t c = vocab.size();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() != 4) {
      throw LoadError(where + "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    const std::string type_name(fields[0]);
    const auto src = vocab.index_of(std::string(fields[1]));
    const auto dst = vocab.index_of(std::string(fields[2]));
    if (!src) throw LoadError(where + "unknown class '" + std::string(fields[1]) + "'");
    if (!dst) throw LoadError(where + "unknown class '" + std::string(fields[2]) + "'");
    double weight = 0;
    auto [ptr, ec] = std::from_chars(fields[3].data(), fields[3].data() + fields[3].size(), weight);
    if (ec != std::errc() || ptr != fields[3].data() + fields[3].size() || !std::isfinite(weight)) {
      throw LoadError(where + "malformed weight '" + std::string(fields[3]) + "'");
    }
    if (weight < 0) throw LoadError(where + "negative weight " + std::string(fields[3]));

    EdgeType* type = nullptr;
    for (auto& t : graph.types) {
      if (t.name == type_name) type = &t;
    }
    if (!type) {
      EdgeType t;
      t.name = type_name;
      t.directed = !options.symmetric_types.contains(type_name);
      t.adjacency.assign(c * c, 0.0);
      graph.types.push_back(std::move(t));
      type = &graph.types.back();
    }
    type->adjacency[*src * c + *dst] += weight;
  }
  return graph;
}

KnowledgeGraph load_graph(const std::filesystem::path& path, const ClassVocabulary& vocab,
                          const GraphLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open knowledge graph " + path.string());
  return parse_graph(in, vocab, options);
}

void write_graph(std::ostream& out, const KnowledgeGraph& graph, const ClassVocabulary& vocab) {
  const std::size_t c = graph.classes;
  out << "# edge_type\tsrc\tdst\tweight\n";
  for (const auto& t : graph.types) {
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double w = t.adjacency[i * c + j];
        if (w != 0.0) out << t.name << '\t' << vocab.name(i) << '\t' << vocab.name(j) << '\t' << format_double(w) << '\n';
      }
    }
  }
}

void save_graph(const std::filesystem::path& path, const KnowledgeGraph& graph, const ClassVocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write knowledge graph " + path.string());
  write_graph(out, graph, vocab);
}

KnowledgeGraph add_inverse_edges(KnowledgeGraph graph) {
  const std::size_t c = graph.classes;
  const std::size_t original = graph.types.size();
  for (std::size_t k = 0; k < original; ++k) {
    if (!graph.types[k].directed) continue;
    const std::string inv = inverse_type_name(graph.types[k].name);
    if (graph.find(inv)) continue;
    EdgeType t;
    t.name = inv;
    t.directed = true;
    t.adjacency.assign(c * c, 0.0);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) t.adjacency[j * c + i] = graph.types[k].adjacency[i * c + j];
    graph.types.push_back(std::move(t));
  }
  return graph;
}

KnowledgeGraph row_normalize(KnowledgeGraph graph) {
  const std::size_t c = graph.classes;
  for (auto& t : graph.types) {
    for (std::size_t i = 0; i < c; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < c; ++j) total += t.adjacency[i * c + j];
      // Rows already summing to one (up to rounding) are left bit-identical.
      if (total == 0.0 || std::abs(total - 1.0) <= 1e-12) continue;
      for (std::size_t j = 0; j < c; ++j) t.adjacency[i * c + j] /= total;
    }
  }
  return graph;
}

std::vector<std::string> validate(const KnowledgeGraph& graph, const ClassVocabulary& vocab) {
  std::vector<std::string> issues;
  const std::size_t c = graph.classes;
  if (c != vocab.size()) {
    issues.push_back("graph has " + std::to_string(c) + " classes, vocabulary " + std::to_string(vocab.size()));
    return issues;
  }
  for (const auto& t : graph.types) {
    if (t.adjacency.size() != c * c) {
      issues.push_back(t.name + ": adjacency has " + std::to_string(t.adjacency.size()) + " entries");
      continue;
    }
    for (std::size_t i = 0; i < c; ++i) {
      double total = 0;
      bool negative = false;
      for (std::size_t j = 0; j < c; ++j) {
        total += t.adjacency[i * c + j];
        negative = negative || t.adjacency[i * c + j] < 0;
      }
      if (negative) issues.push_back(t.name + ": negative weight in row " + vocab.name(i));
      if (total != 0.0 && std::abs(total - 1.0) > 1e-9) {
        std::ostringstream msg;
        msg << t.name << ": row " << vocab.name(i) << " sums to " << total;
        issues.push_back(msg.str());
      }
    }
    if (!t.directed) {
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i + 1; j < c; ++j)
          if ((t.adjacency[i * c + j] != 0.0) != (t.adjacency[j * c + i] != 0.0)) {
            issues.push_back(t.name + ": symmetric type has one-way edge " + vocab.name(i) + " / " + vocab.name(j));
          }
      continue;
    }
    const EdgeType* inv = graph.find(inverse_type_name(t.name));
    if (!inv) {
      issues.push_back(t.name + ": directed type has no inverse " + inverse_type_name(t.name));
      continue;
    }
    // Row normalization rescales each direction independently, so only the
    // transposed support is required to match.
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        if ((t.adjacency[i * c + j] != 0.0) != (inv->adjacency[j * c + i] != 0.0)) {
          issues.push_back(t.name + ": edge " + vocab.name(i) + " -> " + vocab.name(j) + " has no transposed edge in " +
                           inv->name);
        }
  }
  return issues;
}

}  // namespace graphreason
