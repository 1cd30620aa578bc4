#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace graphreason {

class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  explicit ClassVocabulary(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::size_t> index_of(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One class-to-class relation. adjacency[i * C + j] is the weight of the
// edge i -> j; class i aggregates from class j during message passing.
struct EdgeType {
  std::string name;
  bool directed = true;
  std::vector<double> adjacency;
};

struct KnowledgeGraph {
  std::size_t classes = 0;
  std::vector<EdgeType> types;

  const EdgeType* find(const std::string& name) const;
  double weight(std::size_t type, std::size_t i, std::size_t j) const {
    return types[type].adjacency[i * classes + j];
  }
};

// Name of the inverse of a directed type: "T" <-> "T^-1".
std::string inverse_type_name(const std::string& name);

struct GraphLoadOptions {
  // Edge types treated as undirected; everything else is directed.
  std::set<std::string> symmetric_types{"similarity"};
};

// TSV rows `edge_type<TAB>src<TAB>dst<TAB>weight`; blank lines and lines
// starting with '#' are skipped. Duplicate (type, src, dst) rows sum.
KnowledgeGraph parse_graph(std::istream& in, const ClassVocabulary& vocab, const GraphLoadOptions& options = {});
KnowledgeGraph load_graph(const std::filesystem::path& path, const ClassVocabulary& vocab,
                          const GraphLoadOptions& options = {});
void write_graph(std::ostream& out, const KnowledgeGraph& graph, const ClassVocabulary& vocab);
void save_graph(const std::filesystem::path& path, const KnowledgeGraph& graph, const ClassVocabulary& vocab);

// Appends T^-1 with the transposed adjacency for every directed type T whose
// inverse is not already present.
KnowledgeGraph add_inverse_edges(KnowledgeGraph graph);

// Divides every nonzero row of every type by its sum.
KnowledgeGraph row_normalize(KnowledgeGraph graph);

// Lists invariant violations; empty when the graph is well formed.
std::vector<std::string> validate(const KnowledgeGraph& graph, const ClassVocabulary& vocab);

}  // namespace graphreason
