#pragma once

#include "cauca/core.hpp"

#include "json.hpp"

#include <set>
#include <utility>
#include <vector>

namespace cauca {

/// Directed acyclic graph over nodes 0..d-1.
///
/// Indices are 0-based in memory; the JSON form uses 1-based indices.
/// Immutable after construction.
class Dag {
 public:
  using Edge = std::pair<int, int>;

  Dag() = default;
  /// Throws ConfigError on self-loops, out-of-range nodes, duplicates or cycles.
  Dag(int d, std::vector<Edge> edges);

  static Dag empty(int d) { return Dag(d, {}); }

  int size() const { return d_; }
  const std::vector<Edge>& edges() const { return edges_; }
  bool has_edge(int from, int to) const;
  std::size_t edge_count() const { return edges_.size(); }

  /// Parents sorted ascending.
  const std::vector<int>& parents(int i) const;
  const std::vector<int>& children(int i) const;
  bool is_root(int i) const { return parents(i).empty(); }

  /// Stable Kahn order, lowest index first among ready nodes.
  const std::vector<int>& topological_order() const { return order_; }

  /// anc(i) ∪ {i}.
  std::set<int> ancestors_closure(int i) const;
  /// pa(i) ∪ {i}.
  std::set<int> parents_closure(int i) const;
  Dag transitive_closure() const;

  bool operator==(const Dag& other) const {
    return d_ == other.d_ && edges_ == other.edges_;
  }

 private:
  void check_node(int i) const;

  int d_ = 0;
  std::vector<Edge> edges_;  // sorted
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> children_;
  std::vector<int> order_;
};

/// Samples each index-increasing edge i → j (j > i) independently with
/// probability `density`. With `require_nonempty`, redraws until at least one
/// edge exists.
Dag random_dag(int d, double density, bool require_nonempty, Rng& rng);

void to_json(nlohmann::json& j, const Dag& g);
void from_json(const nlohmann::json& j, Dag& g);

}  // namespace cauca
