#include "cauca/graph.hpp"

#include <algorithm>
#include <deque>
#include <queue>

namespace cauca {

Dag::Dag(int d, std::vector<Edge> edges) : d_(d), edges_(std::move(edges)) {
  if (d < 1) throw ConfigError("Dag: node count must be positive");
  std::sort(edges_.begin(), edges_.end());
  if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end())
    throw ConfigError("Dag: duplicate edge");
  parents_.assign(d, {});
  children_.assign(d, {});
  for (const auto& [from, to] : edges_) {
    if (from < 0 || from >= d || to < 0 || to >= d)
      throw ConfigError("Dag: edge endpoint out of range");
    if (from == to) throw ConfigError("Dag: self-loop");
    parents_[to].push_back(from);
    children_[from].push_back(to);
  }
  for (auto& p : parents_) std::sort(p.begin(), p.end());
  for (auto& c : children_) std::sort(c.begin(), c.end());

  std::vector<int> indegree(d);
  for (int i = 0; i < d; ++i) indegree[i] = static_cast<int>(parents_[i].size());
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int i = 0; i < d; ++i)
    if (indegree[i] == 0) ready.push(i);
  while (!ready.empty()) {
    const int i = ready.top();
    ready.pop();
    order_.push_back(i);
    for (int c : children_[i])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (static_cast<int>(order_.size()) != d) throw ConfigError("Dag: graph contains a cycle");
}

void Dag::check_node(int i) const {
  if (i < 0 || i >= d_) throw ConfigError("Dag: node " + std::to_string(i) + " out of range");
}

bool Dag::has_edge(int from, int to) const {
  return std::binary_search(edges_.begin(), edges_.end(), Edge{from, to});
}

const std::vector<int>& Dag::parents(int i) const {
  check_node(i);
  return parents_[i];
}

const std::vector<int>& Dag::children(int i) const {
  check_node(i);
  return children_[i];
}

std::set<int> Dag::ancestors_closure(int i) const {
  check_node(i);
  std::set<int> seen{i};
  std::deque<int> frontier{i};
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop_front();
    for (int p : parents_[v])
      if (seen.insert(p).second) frontier.push_back(p);
  }
  return seen;
}

std::set<int> Dag::parents_closure(int i) const {
  check_node(i);
  std::set<int> out(parents_[i].begin(), parents_[i].end());
  out.insert(i);
  return out;
}

Dag Dag::transitive_closure() const {
  std::vector<Edge> closed;
  for (int j = 0; j < d_; ++j)
    for (int i : ancestors_closure(j))
      if (i != j) closed.emplace_back(i, j);
  return Dag(d_, std::move(closed));
}

Dag random_dag(int d, double density, bool require_nonempty, Rng& rng) {
  if (d < 1) throw ConfigError("random_dag: d must be >= 1");
  if (!(density >= 0.0 && density <= 1.0)) throw ConfigError("random_dag: density must be in [0,1]");
  if (require_nonempty && (d == 1 || density == 0.0))
    throw ConfigError("random_dag: a nonempty graph is impossible for this (d, density)");
  std::bernoulli_distribution coin(density);
  for (;;) {
    std::vector<Dag::Edge> edges;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j)
        if (coin(rng)) edges.emplace_back(i, j);
    if (!require_nonempty || !edges.empty()) return Dag(d, std::move(edges));
  }
}

void to_json(nlohmann::json& j, const Dag& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [from, to] : g.edges()) edges.push_back({from + 1, to + 1});
  j = {{"d", g.size()}, {"edges", edges}};
}

void from_json(const nlohmann::json& j, Dag& g) {
  std::vector<Dag::Edge> edges;
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2) throw ConfigError("Dag JSON: edge must be a pair");
    edges.emplace_back(e[0].get<int>() - 1, e[1].get<int>() - 1);
  }
  g = Dag(j.at("d").get<int>(), std::move(edges));
}

}  // namespace cauca
