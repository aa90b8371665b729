#include "graphs.hpp"

#include <algorithm>
#include <deque>
#include <set>

namespace latgraph::graphs {

UndirectedGraph::UndirectedGraph(std::vector<std::string> vertex_labels)
    : labels_(std::move(vertex_labels)), adjacency_(labels_.size()) {
  std::set<std::string> seen;
  for (const std::string& l : labels_) {
    if (!seen.insert(l).second) {
      throw GraphError("duplicate vertex label '" + l + "'");
    }
  }
}

int UndirectedGraph::index_of(std::string_view label) const {
  if (auto v = find(label)) return *v;
  throw GraphError("unknown vertex label '" + std::string(label) + "'");
}

std::optional<int> UndirectedGraph::find(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return static_cast<int>(i);
  }
  return std::nullopt;
}

void UndirectedGraph::check_vertex(int v) const {
  if (v < 0 || v >= vertex_count()) {
    throw GraphError("vertex index out of range: " + std::to_string(v));
  }
}

void UndirectedGraph::add_edge(int a, int b) {
  check_vertex(a);
  check_vertex(b);
  if (a == b) throw GraphError("self-loops are not allowed");
  if (has_edge(a, b)) return;
  adjacency_[a].push_back(b);
  adjacency_[b].push_back(a);
  ++edge_count_;
}

void UndirectedGraph::remove_edge(int a, int b) {
  check_vertex(a);
  check_vertex(b);
  if (!has_edge(a, b)) return;
  std::erase(adjacency_[a], b);
  std::erase(adjacency_[b], a);
  --edge_count_;
}

bool UndirectedGraph::has_edge(int a, int b) const {
  check_vertex(a);
  check_vertex(b);
  return std::find(adjacency_[a].begin(), adjacency_[a].end(), b) !=
         adjacency_[a].end();
}

std::vector<std::pair<int, int>> UndirectedGraph::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int v = 0; v < vertex_count(); ++v) {
    for (int w : adjacency_[v]) {
      if (v < w) out.emplace_back(v, w);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

void check_query_sets(const UndirectedGraph& graph, const std::vector<int>& a,
                      const std::vector<int>& b, const std::vector<int>& s) {
  if (a.empty() || b.empty()) {
    throw GraphError("separation query: A and B must be non-empty");
  }
  auto check_range = [&](const std::vector<int>& set) {
    for (int v : set) {
      if (v < 0 || v >= graph.vertex_count()) {
        throw GraphError("separation query: unknown vertex index " +
                         std::to_string(v));
      }
    }
  };
  check_range(a);
  check_range(b);
  check_range(s);
  std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end()),
      ss(s.begin(), s.end());
  for (int v : sa) {
    if (sb.count(v) || ss.count(v)) {
      throw GraphError("separation query: sets must be pairwise disjoint");
    }
  }
  for (int v : sb) {
    if (ss.count(v)) {
      throw GraphError("separation query: sets must be pairwise disjoint");
    }
  }
}

}  // namespace

std::optional<std::vector<int>> connecting_path(const UndirectedGraph& graph,
                                                const std::vector<int>& a,
                                                const std::vector<int>& b,
                                                const std::vector<int>& s) {
  check_query_sets(graph, a, b, s);
  std::vector<bool> blocked(graph.vertex_count(), false);
  for (int v : s) blocked[v] = true;
  std::vector<int> parent(graph.vertex_count(), -1);
  std::vector<bool> visited(graph.vertex_count(), false);
  std::set<int> targets(b.begin(), b.end());

  std::deque<int> queue;
  for (int v : a) {
    if (!blocked[v] && !visited[v]) {
      visited[v] = true;
      queue.push_back(v);
    }
  }
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    if (targets.count(v)) {
      std::vector<int> path;
      for (int u = v; u != -1; u = parent[u]) path.push_back(u);
      std::reverse(path.begin(), path.end());
      return path;
    }
    for (int w : graph.neighbors(v)) {
      if (!blocked[w] && !visited[w]) {
        visited[w] = true;
        parent[w] = v;
        queue.push_back(w);
      }
    }
  }
  return std::nullopt;
}

bool separates(const UndirectedGraph& graph, const std::vector<int>& a,
               const std::vector<int>& b, const std::vector<int>& s) {
  return !connecting_path(graph, a, b, s).has_value();
}

int ExtendedGraph::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < vertex_labels.size(); ++i) {
    if (vertex_labels[i] == label) return static_cast<int>(i);
  }
  throw GraphError("unknown vertex label '" + std::string(label) + "'");
}

ExtendedGraph make_extended_graph(std::vector<std::string> vertex_labels,
                                  int latent_count,
                                  std::vector<std::pair<int, int>> undirected_edges,
                                  std::vector<std::pair<int, int>> arrows) {
  ExtendedGraph g;
  g.vertex_labels = std::move(vertex_labels);
  g.latent_count = latent_count;
  g.undirected_edges = std::move(undirected_edges);
  g.arrows = std::move(arrows);
  g.moral_graph = moralize(g);
  return g;
}

ExtendedGraph build_extended_graph(const UndirectedGraph& latent) {
  const int p = latent.vertex_count();
  if (p != 8) {
    throw GraphError("extended graph requires the 8 canonical latent vertices");
  }
  std::vector<std::string> labels;
  labels.reserve(2 * p);
  for (int v = 0; v < p; ++v) labels.push_back("V_" + latent.label(v));
  for (int v = 0; v < p; ++v) {
    const std::string& name = latent.label(v);
    labels.push_back(name == "Geom" ? "T_Geom" : "Y_" + name);
  }
  std::vector<std::pair<int, int>> arrows;
  for (int v = 0; v < p; ++v) arrows.emplace_back(v, p + v);
  return make_extended_graph(std::move(labels), p, latent.edges(),
                             std::move(arrows));
}

UndirectedGraph moralize(const ExtendedGraph& extended) {
  UndirectedGraph moral(extended.vertex_labels);
  for (const auto& [a, b] : extended.undirected_edges) moral.add_edge(a, b);
  for (const auto& [parent, child] : extended.arrows) moral.add_edge(parent, child);

  // Marry non-adjacent co-parents.
  const int n = static_cast<int>(extended.vertex_labels.size());
  std::vector<std::vector<int>> parents(n);
  for (const auto& [parent, child] : extended.arrows) parents[child].push_back(parent);
  for (int child = 0; child < n; ++child) {
    const auto& ps = parents[child];
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = i + 1; j < ps.size(); ++j) {
        if (!moral.has_edge(ps[i], ps[j])) moral.add_edge(ps[i], ps[j]);
      }
    }
  }
  return moral;
}

bool check_wermuth(const ExtendedGraph& extended) {
  const int n = static_cast<int>(extended.vertex_labels.size());
  std::vector<std::vector<int>> parents(n);
  for (const auto& [parent, child] : extended.arrows) parents[child].push_back(parent);

  auto adjacent = [&](int a, int b) {
    for (const auto& [x, y] : extended.undirected_edges) {
      if ((x == a && y == b) || (x == b && y == a)) return true;
    }
    for (const auto& [x, y] : extended.arrows) {
      if ((x == a && y == b) || (x == b && y == a)) return true;
    }
    return false;
  };

  for (int child = 0; child < n; ++child) {
    const auto& ps = parents[child];
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = i + 1; j < ps.size(); ++j) {
        if (!adjacent(ps[i], ps[j])) return false;
      }
    }
  }
  return true;
}

bool extended_separates(const ExtendedGraph& extended, const std::vector<int>& a,
                        const std::vector<int>& b, const std::vector<int>& s) {
  for (int v : a) {
    if (extended.is_latent(v)) {
      throw GraphError("extended query: A must contain observable responses");
    }
  }
  for (int v : b) {
    if (extended.is_latent(v)) {
      throw GraphError("extended query: B must contain observable responses");
    }
  }
  for (int v : s) {
    if (!extended.is_latent(v)) {
      throw GraphError(
          "extended query: the conditioning set must contain latent "
          "components, not observable responses");
    }
  }
  return separates(extended.moral_graph, a, b, s);
}

namespace {

const std::vector<std::string> kComponents = {"Math", "Phys", "Chem", "Bio",
                                              "His",  "Geo",  "Port", "Geom"};

const std::vector<LabeledEdge> kFig1aEdges = {
    {"His", "Geo", 0.391},  {"His", "Port", 0.361}, {"Geom", "Port", 0.256},
    {"Phys", "Math", 0.570}, {"Chem", "Math", 0.188}, {"Bio", "Chem", 0.268},
    {"Bio", "Geo", 0.330}};

const std::vector<LabeledEdge> kFig1bEdges = {
    {"His", "Geo", 0.349},  {"His", "Port", 0.242}, {"Geom", "Math", 0.118},
    {"Phys", "Math", 0.515}, {"Bio", "Math", 0.133}, {"Chem", "Math", 0.253},
    {"Bio", "Geo", 0.201}};

UndirectedGraph from_labeled(const std::vector<LabeledEdge>& edges) {
  UndirectedGraph g(kComponents);
  for (const LabeledEdge& e : edges) g.add_edge(g.index_of(e.a), g.index_of(e.b));
  return g;
}

}  // namespace

UndirectedGraph fig1a_no_bonus() { return from_labeled(kFig1aEdges); }
UndirectedGraph fig1b_bonus() { return from_labeled(kFig1bEdges); }
const std::vector<LabeledEdge>& fig1a_edge_labels() { return kFig1aEdges; }
const std::vector<LabeledEdge>& fig1b_edge_labels() { return kFig1bEdges; }

std::optional<UndirectedGraph> fixture_by_name(std::string_view name) {
  if (name == "fig1a_no_bonus") return fig1a_no_bonus();
  if (name == "fig1b_bonus") return fig1b_bonus();
  return std::nullopt;
}

const std::vector<LabeledEdge>* fixture_labels_by_name(std::string_view name) {
  if (name == "fig1a_no_bonus") return &kFig1aEdges;
  if (name == "fig1b_bonus") return &kFig1bEdges;
  return nullptr;
}

}  // namespace latgraph::graphs
