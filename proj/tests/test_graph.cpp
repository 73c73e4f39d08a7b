#include "doctest.h"

#include "cauca/graph.hpp"

#include <algorithm>

using namespace cauca;

namespace {

// Reachability by Warshall's algorithm, independent of the BFS in Dag.
std::vector<std::vector<bool>> reach(const Dag& g) {
  const int d = g.size();
  std::vector<std::vector<bool>> r(d, std::vector<bool>(d, false));
  for (const auto& [i, j] : g.edges()) r[i][j] = true;
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (r[i][k] && r[k][j]) r[i][j] = true;
  return r;
}

Dag diamond() { return Dag(4, {{0, 1}, {0, 2}, {1, 3}, {2, 3}}); }

}  // namespace

TEST_CASE("random_dag edge probabilities") {
  Rng rng(1);
  CHECK(random_dag(3, 0.0, false, rng).edge_count() == 0);
  const Dag full = random_dag(3, 1.0, false, rng);
  CHECK(full.edges() == std::vector<Dag::Edge>{{0, 1}, {0, 2}, {1, 2}});
  CHECK_THROWS_AS(random_dag(1, 0.5, true, rng), ConfigError);

  double total = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) total += static_cast<double>(random_dag(4, 0.5, false, rng).edge_count());
  CHECK(std::abs(total / draws - 3.0) < 0.05);
}

TEST_CASE("random_dag nonempty redraw") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) CHECK(random_dag(3, 0.2, true, rng).edge_count() > 0);
}

TEST_CASE("construction rejects invalid graphs") {
  CHECK_THROWS_AS(Dag(2, {{0, 0}}), ConfigError);
  CHECK_THROWS_AS(Dag(2, {{0, 1}, {1, 0}}), ConfigError);
  CHECK_THROWS_AS(Dag(2, {{0, 2}}), ConfigError);
  CHECK_THROWS_AS(Dag(2, {{0, 1}, {0, 1}}), ConfigError);
}

TEST_CASE("topological order") {
  CHECK(Dag::empty(3).topological_order() == std::vector<int>{0, 1, 2});
  CHECK(Dag(3, {{0, 1}, {1, 2}}).topological_order() == std::vector<int>{0, 1, 2});
  CHECK(Dag(2, {{1, 0}}).topological_order() == std::vector<int>{1, 0});

  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Dag g = random_dag(6, 0.5, false, rng);
    std::vector<int> pos(6);
    const auto& order = g.topological_order();
    for (int i = 0; i < 6; ++i) pos[order[i]] = i;
    for (const auto& [i, j] : g.edges()) CHECK(pos[i] < pos[j]);
  }
}

TEST_CASE("closures") {
  const Dag chain(3, {{0, 1}, {1, 2}});
  CHECK(chain.ancestors_closure(2) == std::set<int>{0, 1, 2});
  CHECK(Dag::empty(3).ancestors_closure(1) == std::set<int>{1});
  CHECK(diamond().ancestors_closure(3) == std::set<int>{0, 1, 2, 3});
  CHECK(chain.parents_closure(2) == std::set<int>{1, 2});
  CHECK_THROWS_AS(chain.ancestors_closure(3), ConfigError);

  CHECK(chain.transitive_closure().edges() == std::vector<Dag::Edge>{{0, 1}, {0, 2}, {1, 2}});
  CHECK(Dag::empty(3).transitive_closure().edge_count() == 0);
  Dag dc = diamond().transitive_closure();
  CHECK(dc.edges() == std::vector<Dag::Edge>{{0, 1}, {0, 2}, {0, 3}, {1, 3}, {2, 3}});
}

TEST_CASE("closure properties on random graphs") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Dag g = random_dag(6, 0.4, false, rng);
    const Dag c = g.transitive_closure();
    CHECK(c.transitive_closure() == c);
    const auto r = reach(g);
    for (int i = 0; i < 6; ++i) {
      std::set<int> expect{i};
      for (int j = 0; j < 6; ++j)
        if (r[j][i]) expect.insert(j);
      CHECK(g.ancestors_closure(i) == expect);
      std::set<int> from_closure{i};
      for (const auto& [a, b] : c.edges())
        if (b == i) from_closure.insert(a);
      CHECK(from_closure == expect);
    }
  }
}

TEST_CASE("json round trip uses 1-based indices") {
  const Dag g = diamond();
  nlohmann::json j = g;
  CHECK(j["d"] == 4);
  CHECK(j["edges"][0] == nlohmann::json::array({1, 2}));
  CHECK(j.get<Dag>() == g);
}
