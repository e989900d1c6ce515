// Hand-wired examples for the integration tests, built straight from the
// grounder without the harness.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "concordia/fusion.hpp"
#include "concordia/grounding.hpp"
#include "concordia/logic.hpp"

namespace fixture {

using concordia::grounding::AtomKey;

struct Built {
  concordia::logic::Theory theory;
  std::shared_ptr<const concordia::grounding::GroundFactorGraph> graph;
};

// Grounds `rules` over `facts` with `query` atoms forced free. Neural atoms
// should already be in the facts (any value) so the grounder keeps them.
inline Built build(const std::string& rules, const concordia::grounding::FactSet& facts,
                   const std::vector<AtomKey>& query) {
  using namespace concordia;
  Built b;
  b.theory = logic::parse_theory(rules);
  const auto domains = grounding::collect_constants(b.theory, facts, query);
  grounding::GroundingOptions opt;
  opt.query = query;
  b.graph = std::make_shared<grounding::GroundFactorGraph>(grounding::ground_theory(b.theory, domains, facts, opt));
  return b;
}

inline concordia::grounding::AtomId id(const Built& b, const AtomKey& key) { return *b.graph->atoms.find(key); }

inline concordia::fusion::Example example(const Built& b, std::vector<double> features,
                                          const std::vector<std::vector<AtomKey>>& heads,
                                          const std::vector<std::vector<AtomKey>>& neural, std::vector<double> label,
                                          bool regression = false) {
  using namespace concordia;
  fusion::Example x;
  x.id = "x";
  x.features = std::move(features);
  x.graph = b.graph;
  x.observed = hlmrf::observed_assignment(*b.graph);
  for (const auto& h : heads) {
    hlmrf::TargetSpec spec;
    spec.regression = regression;
    for (const auto& k : h) spec.targets.push_back(id(b, k));
    x.heads.push_back(spec);
  }
  if (!neural.empty()) {
    fusion::PriorSlot slot;
    slot.features = x.features;
    for (const auto& h : neural) {
      slot.atoms.emplace_back();
      for (const auto& k : h) slot.atoms.back().push_back(id(b, k));
    }
    x.priors.push_back(slot);
  }
  x.label = std::move(label);
  return x;
}

}  // namespace fixture
