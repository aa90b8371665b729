#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace latgraph::graphs {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Simple labeled undirected graph; no self-loops, edges stored as unordered
// pairs over vertex indices.
class UndirectedGraph {
 public:
  UndirectedGraph() = default;
  explicit UndirectedGraph(std::vector<std::string> vertex_labels);

  int vertex_count() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(int v) const { return labels_.at(v); }
  int index_of(std::string_view label) const;  // throws GraphError when unknown
  std::optional<int> find(std::string_view label) const;

  void add_edge(int a, int b);
  void remove_edge(int a, int b);
  bool has_edge(int a, int b) const;
  const std::vector<int>& neighbors(int v) const { return adjacency_.at(v); }

  // Edges as (min,max) pairs in lexicographic order.
  std::vector<std::pair<int, int>> edges() const;
  int edge_count() const { return edge_count_; }

 private:
  void check_vertex(int v) const;
  std::vector<std::string> labels_;
  std::vector<std::vector<int>> adjacency_;
  int edge_count_ = 0;
};

// True iff every path from A to B meets S; evaluated by reachability on the
// graph with S removed. A, B, S must be pairwise disjoint; A, B non-empty.
bool separates(const UndirectedGraph& graph, const std::vector<int>& a,
               const std::vector<int>& b, const std::vector<int>& s);

// A violating path (as vertex indices, from A to B) when not separated.
std::optional<std::vector<int>> connecting_path(const UndirectedGraph& graph,
                                                const std::vector<int>& a,
                                                const std::vector<int>& b,
                                                const std::vector<int>& s);

// Mixed graph over latent components and their observable responses.
// Vertices 0..latent_count-1 are latent; the rest observable. Arrows run
// parent -> child; undirected edges live among the latent vertices for the
// canonical construction but may connect any pair in hand-built instances.
struct ExtendedGraph {
  std::vector<std::string> vertex_labels;
  int latent_count = 0;
  std::vector<std::pair<int, int>> undirected_edges;
  std::vector<std::pair<int, int>> arrows;  // (parent, child)
  UndirectedGraph moral_graph;

  bool is_latent(int v) const { return v < latent_count; }
  int index_of(std::string_view label) const;
};

ExtendedGraph make_extended_graph(std::vector<std::string> vertex_labels,
                                  int latent_count,
                                  std::vector<std::pair<int, int>> undirected_edges,
                                  std::vector<std::pair<int, int>> arrows);

// Canonical construction: one arrow from each latent component to its
// observable response; Geom's observable is the attempt count T_Geom.
ExtendedGraph build_extended_graph(const UndirectedGraph& latent);

// Marry non-adjacent co-parents, then drop directions.
UndirectedGraph moralize(const ExtendedGraph& extended);

// True iff no child has two non-adjacent parents.
bool check_wermuth(const ExtendedGraph& extended);

// Separation of observable sets A and B by a set S of latent components,
// evaluated on the moral graph. Throws when A/B contain latent vertices or S
// contains observables.
bool extended_separates(const ExtendedGraph& extended, const std::vector<int>& a,
                        const std::vector<int>& b, const std::vector<int>& s);

struct LabeledEdge {
  std::string a, b;
  double value = 0.0;
};

// Figure-style fixtures over the eight canonical components.
UndirectedGraph fig1a_no_bonus();
UndirectedGraph fig1b_bonus();
const std::vector<LabeledEdge>& fig1a_edge_labels();
const std::vector<LabeledEdge>& fig1b_edge_labels();
std::optional<UndirectedGraph> fixture_by_name(std::string_view name);
const std::vector<LabeledEdge>* fixture_labels_by_name(std::string_view name);

}  // namespace latgraph::graphs
