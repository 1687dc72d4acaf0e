#pragma once

// FSM topology as JSON and as a Graphviz digraph.

#include "fsmcmc/fsm.hpp"

#include <json.hpp>

#include <sstream>
#include <string>

namespace fsmcmc {

template <class L>
nlohmann::json fsm_to_json(const FsmDefinition<L>& fsm, const std::string& name) {
  nlohmann::json states = nlohmann::json::array();
  for (StateIndex s = 0; s < fsm.size(); ++s) {
    states.push_back({{"index", s},
                      {"label", fsm.label(s)},
                      {"initial", s == fsm.initial()},
                      {"final", s == fsm.final_state()},
                      {"evaluations", fsm.block_evaluations()[s]}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : fsm.edges()) edges.push_back({{"from", e.from}, {"to", e.to}});
  nlohmann::json out{{"name", name},
                     {"states", states},
                     {"edges", edges},
                     {"initial", fsm.initial()},
                     {"final", fsm.final_state()},
                     {"shared_computation", fsm.shared() != nullptr}};
  if (fsm.shared()) out["shared_evaluations"] = fsm.shared()->evaluations;
  return out;
}

template <class L>
std::string fsm_to_dot(const FsmDefinition<L>& fsm, const std::string& name) {
  std::ostringstream os;
  os << "digraph \"" << name << "\" {\n  rankdir=LR;\n";
  for (StateIndex s = 0; s < fsm.size(); ++s) {
    os << "  s" << s << " [label=\"" << fsm.label(s) << "\"";
    if (s == fsm.final_state()) os << ", shape=doublecircle";
    else if (s == fsm.initial()) os << ", shape=box";
    os << "];\n";
  }
  for (const Edge& e : fsm.edges()) {
    os << "  s" << e.from << " -> s" << e.to;
    if (e.from == fsm.final_state()) os << " [style=dashed]";
    os << ";\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace fsmcmc
