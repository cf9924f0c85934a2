// Copyright 2026 The Weavenet Authors
// SPDX-License-Identifier: Apache-2.0
//
// SMILES parsing and chemical perception for the featurizer: molecular graph
// construction, kekulization, implicit hydrogens, shortest-path distances,
// SSSR rings, aromaticity, hybridization, PEOE partial charges, hydrogen-bond
// roles, and R/S chirality from @/@@ annotations.
//
// Supported SMILES subset: organic-subset atoms, bracket atoms with charge,
// explicit H counts and @/@@ chirality, bonds - = # :, branches, ring
// closures (digits and %nn), lowercase aromatic atoms, and dot-separated
// components. Isotope labels, atom class labels and directional bonds / \
// are accepted and discarded. Hydrogens are never instantiated as graph
// atoms; explicit [H] neighbors fold into the heavy atom's implicit count.

#ifndef WEAVENET_MOLGRAPH_HPP_
#define WEAVENET_MOLGRAPH_HPP_

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "weavenet/common.hpp"

namespace weavenet {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class BondOrder : std::uint8_t { kSingle = 1, kDouble = 2, kTriple = 3 };

enum class Parity : std::uint8_t { kNone, kCounterClockwise, kClockwise };  // @, @@

enum class Hybridization : std::uint8_t { kNone, kSp, kSp2, kSp3 };

enum class ChiralityRS : std::uint8_t { kNone, kR, kS };

// The 11 atom-type classes of the featurizer.
enum class ElementClass : std::uint8_t {
  kH, kC, kN, kO, kF, kP, kS, kCl, kBr, kI, kMetal
};

inline int atomic_number(std::string_view symbol) {
  static const std::unordered_map<std::string_view, int> kTable = {
      {"H", 1},   {"He", 2},  {"Li", 3},  {"Be", 4},  {"B", 5},   {"C", 6},
      {"N", 7},   {"O", 8},   {"F", 9},   {"Ne", 10}, {"Na", 11}, {"Mg", 12},
      {"Al", 13}, {"Si", 14}, {"P", 15},  {"S", 16},  {"Cl", 17}, {"Ar", 18},
      {"K", 19},  {"Ca", 20}, {"Sc", 21}, {"Ti", 22}, {"V", 23},  {"Cr", 24},
      {"Mn", 25}, {"Fe", 26}, {"Co", 27}, {"Ni", 28}, {"Cu", 29}, {"Zn", 30},
      {"Ga", 31}, {"Ge", 32}, {"As", 33}, {"Se", 34}, {"Br", 35}, {"Kr", 36},
      {"Rb", 37}, {"Sr", 38}, {"Y", 39},  {"Zr", 40}, {"Nb", 41}, {"Mo", 42},
      {"Tc", 43}, {"Ru", 44}, {"Rh", 45}, {"Pd", 46}, {"Ag", 47}, {"Cd", 48},
      {"In", 49}, {"Sn", 50}, {"Sb", 51}, {"Te", 52}, {"I", 53},  {"Xe", 54},
      {"Cs", 55}, {"Ba", 56}, {"La", 57}, {"Ce", 58}, {"Pr", 59}, {"Nd", 60},
      {"Sm", 62}, {"Eu", 63}, {"Gd", 64}, {"Tb", 65}, {"Dy", 66}, {"Ho", 67},
      {"Er", 68}, {"Yb", 70}, {"Lu", 71}, {"Hf", 72}, {"Ta", 73}, {"W", 74},
      {"Re", 75}, {"Os", 76}, {"Ir", 77}, {"Pt", 78}, {"Au", 79}, {"Hg", 80},
      {"Tl", 81}, {"Pb", 82}, {"Bi", 83}, {"Po", 84}, {"At", 85}, {"Rn", 86},
      {"Fr", 87}, {"Ra", 88}, {"Ac", 89}, {"Th", 90}, {"Pa", 91}, {"U", 92},
  };
  auto it = kTable.find(symbol);
  return it == kTable.end() ? 0 : it->second;
}

inline ElementClass element_class(int z) {
  switch (z) {
    case 1: return ElementClass::kH;
    case 6: return ElementClass::kC;
    case 7: return ElementClass::kN;
    case 8: return ElementClass::kO;
    case 9: return ElementClass::kF;
    case 15: return ElementClass::kP;
    case 16: return ElementClass::kS;
    case 17: return ElementClass::kCl;
    case 35: return ElementClass::kBr;
    case 53: return ElementClass::kI;
    default: return ElementClass::kMetal;
  }
}

struct Atom {
  std::string symbol;
  int atomic_number = 0;
  int formal_charge = 0;
  bool aromatic = false;  // input annotation, possibly upgraded by perception
  Parity parity = Parity::kNone;
  int implicit_h = 0;
  bool bracket = false;
  // Neighbor atom indices in SMILES written order; -1 marks the in-bracket
  // implicit hydrogen. Drives the @/@@ -> R/S mapping.
  std::vector<int> stereo_order;

  ElementClass element() const { return element_class(atomic_number); }
};

struct Bond {
  int a = -1, b = -1;  // stored with a < b
  BondOrder order = BondOrder::kSingle;  // kekule order for aromatic bonds
  bool aromatic = false;

  int other(int atom) const { return atom == a ? b : a; }
};

inline constexpr int kDistanceInf = std::numeric_limits<int>::max() / 4;

struct PerceptionResult {
  std::vector<std::array<int, 6>> ring_count;       // ring sizes 3..8 per atom
  std::vector<std::vector<int>> sssr;               // rings as atom index lists
  std::vector<std::uint8_t> same_ring;              // n*n pair flags
  std::vector<int> graph_distance;                  // n*n, kDistanceInf if apart
  std::vector<Hybridization> hybridization;
  std::vector<double> partial_charge;
  std::vector<std::uint8_t> charge_warning;         // element lacked parameters
  std::vector<std::uint8_t> donor, acceptor;
  std::vector<ChiralityRS> chirality_rs;
};

struct MolecularGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  // adjacency[i] lists (neighbor atom, bond index); symmetric, no self loops.
  std::vector<std::vector<std::pair<int, int>>> adjacency;
  PerceptionResult perceived;
  bool perception_done = false;

  int num_atoms() const { return static_cast<int>(atoms.size()); }
  int num_bonds() const { return static_cast<int>(bonds.size()); }

  int bond_between(int x, int y) const {
    for (const auto& [nbr, bi] : adjacency[x])
      if (nbr == y) return bi;
    return -1;
  }

  int distance(int x, int y) const { return perceived.graph_distance[x * num_atoms() + y]; }
  bool in_same_ring(int x, int y) const { return perceived.same_ring[x * num_atoms() + y] != 0; }

  void add_bond(int x, int y, BondOrder order, bool aromatic) {
    Bond b;
    b.a = std::min(x, y);
    b.b = std::max(x, y);
    b.order = order;
    b.aromatic = aromatic;
    int bi = num_bonds();
    bonds.push_back(b);
    adjacency[x].emplace_back(y, bi);
    adjacency[y].emplace_back(x, bi);
  }
};

// ---------------------------------------------------------------------------
// SMILES parser
// ---------------------------------------------------------------------------

namespace smiles_detail {

inline bool is_organic_shorthand(char c) {
  return c == 'B' || c == 'C' || c == 'N' || c == 'O' || c == 'P' || c == 'S' ||
         c == 'F' || c == 'I';
}

inline bool is_aromatic_shorthand(char c) {
  return c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's';
}

// Permitted total valence (bond order sum + hydrogens) per element and
// charge. Atoms outside this table (metals etc.) are not checked.
inline std::vector<int> allowed_valences(int z, int charge) {
  switch (z) {
    case 1: return charge == 0 ? std::vector<int>{1} : std::vector<int>{0};
    case 5:  // B
      return charge == -1 ? std::vector<int>{4} : std::vector<int>{3};
    case 6:  // C
      if (charge == -1 || charge == 1) return {3};
      return {4};
    case 7:  // N
      if (charge == 1) return {4};
      if (charge == -1) return {2};
      return {3, 5};
    case 8:  // O
      if (charge == 1) return {3};
      if (charge == -1) return {1};
      return {2};
    case 15:  // P
      if (charge == 1) return {4};
      return {3, 5};
    case 16:  // S
      if (charge == 1) return {3, 5};
      if (charge == -1) return {1};
      return {2, 4, 6};
    case 9: case 17: case 35: case 53:  // halogens
      if (charge == -1) return {0};
      return {1};
    default:
      return {};  // unchecked
  }
}

struct RingClosure {
  int atom = -1;
  char bond_char = 0;     // 0 = unspecified
  std::size_t pos = 0;    // text position, for error reports
  std::size_t stereo_slot = 0;  // index reserved in atom's stereo_order
};

struct ParserState {
  MolecularGraph g;
  std::vector<int> branch_stack;
  std::map<int, RingClosure> open_rings;
  int prev = -1;
  char pending_bond = 0;  // bond symbol waiting for the next atom
  std::size_t pending_bond_pos = 0;
  // Explicitly written double/triple bonds per atom, used by kekulization.
  std::vector<int> explicit_double, explicit_triple;
};

inline BondOrder order_from_char(char c, std::size_t pos) {
  switch (c) {
    case 0:
    case '-':
    case '/':
    case '\\': return BondOrder::kSingle;
    case '=': return BondOrder::kDouble;
    case '#': return BondOrder::kTriple;
    default: throw ParseError(std::string("unsupported bond symbol '") + c + "'", pos);
  }
}

// True when removing bond bi still leaves its endpoints connected, i.e. the
// bond lies on a cycle. Decides whether an implicit bond between two aromatic
// atoms is aromatic (in-ring) or a plain single bond (biphenyl-style link).
inline bool bond_in_ring(const MolecularGraph& g, int bi) {
  const Bond& bond = g.bonds[bi];
  std::vector<char> seen(g.num_atoms(), 0);
  std::deque<int> queue{bond.a};
  seen[bond.a] = 1;
  while (!queue.empty()) {
    int cur = queue.front();
    queue.pop_front();
    if (cur == bond.b) return true;
    for (const auto& [nbr, nbi] : g.adjacency[cur]) {
      if (nbi == bi || seen[nbr]) continue;
      seen[nbr] = 1;
      queue.push_back(nbr);
    }
  }
  return false;
}

// Kekulization of the aromatic-bond subgraph: every aromatic atom that needs
// an in-ring double bond must be perfectly matched along aromatic bonds.
// Backtracking search; molecules are small.
inline bool kekulize_match(const MolecularGraph& g,
                           const std::vector<std::vector<std::pair<int, int>>>& arom_adj,
                           const std::vector<char>& needs, std::vector<int>& match,
                           std::vector<char>& done, std::size_t next) {
  while (next < needs.size() && (!needs[next] || done[next])) ++next;
  if (next >= needs.size()) return true;
  for (const auto& [nbr, bi] : arom_adj[next]) {
    if (!needs[nbr] || done[nbr]) continue;
    done[next] = done[nbr] = 1;
    match[next] = bi;
    match[nbr] = bi;
    if (kekulize_match(g, arom_adj, needs, match, done, next + 1)) return true;
    done[next] = done[nbr] = 0;
    match[next] = match[nbr] = -1;
  }
  return false;
}

inline void kekulize(MolecularGraph& g, const std::vector<int>& explicit_double,
                     const std::vector<int>& explicit_triple) {
  const int n = g.num_atoms();
  std::vector<std::vector<std::pair<int, int>>> arom_adj(n);
  bool any = false;
  for (int bi = 0; bi < g.num_bonds(); ++bi) {
    if (!g.bonds[bi].aromatic) continue;
    arom_adj[g.bonds[bi].a].emplace_back(g.bonds[bi].b, bi);
    arom_adj[g.bonds[bi].b].emplace_back(g.bonds[bi].a, bi);
    any = true;
  }
  if (!any) return;

  std::vector<char> needs(n, 0);
  for (int i = 0; i < n; ++i) {
    const Atom& a = g.atoms[i];
    if (arom_adj[i].empty()) continue;
    if (explicit_double[i] > 0 || explicit_triple[i] > 0) continue;
    int conn = static_cast<int>(g.adjacency[i].size()) + a.implicit_h;  // bracket H only here
    switch (a.atomic_number) {
      case 6:  // c
        needs[i] = (a.formal_charge == 0) ? 1 : 0;
        break;
      case 7:   // n
      case 15:  // p
        if (a.formal_charge == 1) {
          needs[i] = conn < 4 ? 1 : 0;
        } else if (a.formal_charge == 0) {
          needs[i] = conn < 3 ? 1 : 0;
        }
        break;
      case 8:   // o
      case 16:  // s
        needs[i] = (a.formal_charge == 1) ? 1 : 0;
        break;
      default:
        break;
    }
  }
  std::vector<int> match(n, -1);
  std::vector<char> done(n, 0);
  if (!kekulize_match(g, arom_adj, needs, match, done, 0)) {
    throw ParseError("kekulization failure: aromatic system admits no alternating bond assignment", 0);
  }
  for (int i = 0; i < n; ++i) {
    if (match[i] >= 0) g.bonds[match[i]].order = BondOrder::kDouble;
  }
}

}  // namespace smiles_detail

// Parses a SMILES string into a molecular graph with resolved ring closures,
// kekulized aromatic bonds and implicit hydrogen counts. Throws ParseError
// with the character offset on syntax, ring/branch balance, kekulization and
// valence problems.
inline MolecularGraph parse_smiles(std::string_view text) {
  using namespace smiles_detail;
  if (text.empty()) throw ParseError("empty SMILES", 0);

  ParserState st;
  std::size_t i = 0;
  const std::size_t n = text.size();

  auto new_atom = [&](std::string symbol, bool aromatic, bool bracket,
                      std::size_t pos) -> int {
    Atom a;
    a.symbol = symbol;
    a.atomic_number = atomic_number(symbol);
    if (a.atomic_number == 0) throw ParseError("unknown element '" + symbol + "'", pos);
    a.aromatic = aromatic;
    a.bracket = bracket;
    int idx = st.g.num_atoms();
    st.g.atoms.push_back(std::move(a));
    st.g.adjacency.emplace_back();
    st.explicit_double.push_back(0);
    st.explicit_triple.push_back(0);
    return idx;
  };

  auto connect = [&](int from, int to, char bond_char, std::size_t pos) {
    if (from == to) throw ParseError("self bond", pos);
    if (st.g.bond_between(from, to) >= 0) throw ParseError("duplicate bond", pos);
    bool arom_bond = false;
    BondOrder order = BondOrder::kSingle;
    if (bond_char == ':') {
      if (!st.g.atoms[from].aromatic || !st.g.atoms[to].aromatic) {
        throw ParseError("aromatic bond between non-aromatic atoms", pos);
      }
      arom_bond = true;
    } else if (bond_char == 0 && st.g.atoms[from].aromatic && st.g.atoms[to].aromatic) {
      arom_bond = true;  // provisional; demoted to single if not in a ring
    } else {
      order = order_from_char(bond_char, pos);
    }
    st.g.add_bond(from, to, order, arom_bond);
    if (order == BondOrder::kDouble) {
      st.explicit_double[from]++;
      st.explicit_double[to]++;
    } else if (order == BondOrder::kTriple) {
      st.explicit_triple[from]++;
      st.explicit_triple[to]++;
    }
    st.g.atoms[from].stereo_order.push_back(to);
    st.g.atoms[to].stereo_order.push_back(from);
  };

  auto handle_ring_digit = [&](int digit, std::size_t pos) {
    if (st.prev < 0) throw ParseError("ring closure before any atom", pos);
    auto it = st.open_rings.find(digit);
    if (it == st.open_rings.end()) {
      RingClosure rc;
      rc.atom = st.prev;
      rc.bond_char = st.pending_bond;
      rc.pos = pos;
      rc.stereo_slot = st.g.atoms[st.prev].stereo_order.size();
      st.g.atoms[st.prev].stereo_order.push_back(-2);  // placeholder
      st.open_rings.emplace(digit, rc);
    } else {
      RingClosure rc = it->second;
      st.open_rings.erase(it);
      char bond_char = st.pending_bond;
      if (bond_char == 0) {
        bond_char = rc.bond_char;
      } else if (rc.bond_char != 0 && rc.bond_char != bond_char) {
        throw ParseError("conflicting ring closure bond orders", pos);
      }
      // Closing side appends normally; the opening side fills its slot.
      connect(st.prev, rc.atom, bond_char, pos);
      st.g.atoms[rc.atom].stereo_order[rc.stereo_slot] = st.prev;
      // connect() appended prev to rc.atom's list; remove that duplicate.
      st.g.atoms[rc.atom].stereo_order.pop_back();
    }
    st.pending_bond = 0;
  };

  auto attach = [&](int atom, std::size_t pos) {
    if (st.prev >= 0) connect(st.prev, atom, st.pending_bond, pos);
    st.pending_bond = 0;
    st.prev = atom;
  };

  while (i < n) {
    const char c = text[i];
    if (c == '(') {
      if (st.prev < 0) throw ParseError("branch before any atom", i);
      if (st.pending_bond != 0) throw ParseError("bond symbol before '('", i);
      st.branch_stack.push_back(st.prev);
      ++i;
    } else if (c == ')') {
      if (st.branch_stack.empty()) throw ParseError("unmatched ')'", i);
      if (st.pending_bond != 0) throw ParseError("dangling bond symbol before ')'", i);
      st.prev = st.branch_stack.back();
      st.branch_stack.pop_back();
      ++i;
    } else if (c == '-' || c == '=' || c == '#' || c == ':' || c == '/' || c == '\\') {
      if (st.pending_bond != 0) throw ParseError("two consecutive bond symbols", i);
      st.pending_bond = c;
      st.pending_bond_pos = i;
      ++i;
    } else if (c == '.') {
      if (st.pending_bond != 0) throw ParseError("bond before dot separator", i);
      st.prev = -1;
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      handle_ring_digit(c - '0', i);
      ++i;
    } else if (c == '%') {
      if (i + 2 >= n || !std::isdigit(static_cast<unsigned char>(text[i + 1])) ||
          !std::isdigit(static_cast<unsigned char>(text[i + 2]))) {
        throw ParseError("'%' ring closure needs two digits", i);
      }
      handle_ring_digit((text[i + 1] - '0') * 10 + (text[i + 2] - '0'), i);
      i += 3;
    } else if (c == '[') {
      const std::size_t start = i;
      ++i;
      while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;  // isotope
      if (i >= n) throw ParseError("unterminated bracket atom", start);
      std::string symbol;
      bool aromatic = false;
      if (std::islower(static_cast<unsigned char>(text[i])) &&
          is_aromatic_shorthand(text[i])) {
        symbol = std::string(1, static_cast<char>(std::toupper(text[i])));
        aromatic = true;
        ++i;
      } else if (std::isupper(static_cast<unsigned char>(text[i]))) {
        symbol = text[i];
        ++i;
        if (i < n && std::islower(static_cast<unsigned char>(text[i])) &&
            atomic_number(symbol + text[i]) != 0) {
          symbol += text[i];
          ++i;
        }
      } else {
        throw ParseError("expected element symbol in bracket", i);
      }
      int atom = new_atom(symbol, aromatic, true, start);
      Atom& a = st.g.atoms[atom];
      if (i < n && text[i] == '@') {
        ++i;
        if (i < n && text[i] == '@') {
          a.parity = Parity::kClockwise;
          ++i;
        } else {
          a.parity = Parity::kCounterClockwise;
        }
      }
      int h_count = 0;
      if (i < n && text[i] == 'H') {
        ++i;
        h_count = 1;
        if (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) {
          h_count = text[i] - '0';
          ++i;
        }
      }
      if (i < n && (text[i] == '+' || text[i] == '-')) {
        const char sign_char = text[i];
        const int sign = sign_char == '+' ? 1 : -1;
        int count = 1;
        ++i;
        if (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) {
          count = text[i] - '0';
          ++i;
        } else {
          while (i < n && text[i] == sign_char) {
            ++count;
            ++i;
          }
        }
        a.formal_charge = sign * count;
      }
      if (i < n && text[i] == ':') {  // atom class, discarded
        ++i;
        if (i >= n || !std::isdigit(static_cast<unsigned char>(text[i]))) {
          throw ParseError("atom class needs a number", i);
        }
        while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      }
      if (i >= n || text[i] != ']') throw ParseError("expected ']'", i);
      ++i;
      a.implicit_h = h_count;
      attach(atom, start);
      // The in-bracket H sits right after the preceding atom (or first when
      // the chiral atom opens the SMILES); at this point that is the tail.
      if (h_count == 1) st.g.atoms[atom].stereo_order.push_back(-1);
    } else if (std::isupper(static_cast<unsigned char>(c))) {
      std::string symbol(1, c);
      std::size_t pos = i;
      ++i;
      if (c == 'C' && i < n && text[i] == 'l') {
        symbol = "Cl";
        ++i;
      } else if (c == 'B' && i < n && text[i] == 'r') {
        symbol = "Br";
        ++i;
      } else if (!is_organic_shorthand(c)) {
        throw ParseError(std::string("atom '") + c + "' must be written in brackets", pos);
      }
      attach(new_atom(symbol, false, false, pos), pos);
    } else if (std::islower(static_cast<unsigned char>(c))) {
      if (!is_aromatic_shorthand(c)) {
        throw ParseError(std::string("unsupported aromatic shorthand '") + c + "'", i);
      }
      std::string symbol(1, static_cast<char>(std::toupper(c)));
      attach(new_atom(symbol, true, false, i), i);
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      break;  // trailing title/whitespace
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", i);
    }
  }

  if (!st.branch_stack.empty()) throw ParseError("unclosed branch", n);
  if (!st.open_rings.empty()) {
    throw ParseError("unclosed ring bond " + std::to_string(st.open_rings.begin()->first),
                     st.open_rings.begin()->second.pos);
  }
  if (st.pending_bond != 0) throw ParseError("dangling bond symbol", st.pending_bond_pos);
  if (st.g.num_atoms() == 0) throw ParseError("no atoms", 0);

  // Demote implicit aromatic-aromatic bonds that are not part of any ring.
  for (int bi = 0; bi < st.g.num_bonds(); ++bi) {
    if (st.g.bonds[bi].aromatic && !bond_in_ring(st.g, bi)) {
      st.g.bonds[bi].aromatic = false;
      st.g.bonds[bi].order = BondOrder::kSingle;
    }
  }

  kekulize(st.g, st.explicit_double, st.explicit_triple);

  // Fold explicit [H] atoms into their heavy neighbor.
  {
    std::vector<int> fold(st.g.num_atoms(), 0);
    bool any = false;
    for (int ai = 0; ai < st.g.num_atoms(); ++ai) {
      const Atom& a = st.g.atoms[ai];
      if (a.atomic_number == 1 && a.formal_charge == 0 &&
          st.g.adjacency[ai].size() == 1 &&
          st.g.bonds[st.g.adjacency[ai][0].second].order == BondOrder::kSingle) {
        fold[ai] = 1;
        any = true;
      }
    }
    if (any) {
      MolecularGraph reduced;
      std::vector<int> remap(st.g.num_atoms(), -1);
      for (int ai = 0; ai < st.g.num_atoms(); ++ai) {
        if (fold[ai]) continue;
        remap[ai] = reduced.num_atoms();
        reduced.atoms.push_back(st.g.atoms[ai]);
        reduced.adjacency.emplace_back();
      }
      if (reduced.num_atoms() == 0) {
        // e.g. "[H][H]": nothing heavy to fold into, keep the original graph.
      } else {
        for (int ai = 0; ai < st.g.num_atoms(); ++ai) {
          if (!fold[ai]) continue;
          int heavy = st.g.adjacency[ai][0].first;
          if (remap[heavy] >= 0) reduced.atoms[remap[heavy]].implicit_h++;
        }
        for (const Bond& b : st.g.bonds) {
          if (fold[b.a] || fold[b.b]) continue;
          reduced.add_bond(remap[b.a], remap[b.b], b.order, b.aromatic);
        }
        for (auto& atom : reduced.atoms) {
          std::vector<int> so;
          for (int nb : atom.stereo_order) {
            if (nb == -1 || nb == -2) {
              so.push_back(nb);
            } else if (fold[nb]) {
              so.push_back(-1);  // folded H keeps its stereo slot
            } else {
              so.push_back(remap[nb]);
            }
          }
          atom.stereo_order = std::move(so);
        }
        st.g = std::move(reduced);
      }
    }
  }

  // Implicit hydrogens for organic-subset shorthand atoms, plus valence
  // checks for every atom the table covers.
  for (int ai = 0; ai < st.g.num_atoms(); ++ai) {
    Atom& a = st.g.atoms[ai];
    int order_sum = 0;
    for (const auto& [nbr, bi] : st.g.adjacency[ai]) {
      order_sum += static_cast<int>(st.g.bonds[bi].order);
    }
    std::vector<int> allowed = allowed_valences(a.atomic_number, a.formal_charge);
    if (!a.bracket) {
      int hydrogens = 0;
      if (!allowed.empty()) {
        int target = -1;
        for (int v : allowed) {
          if (order_sum <= v) {
            target = v;
            break;
          }
        }
        if (target < 0) {
          throw ParseError("valence violation on atom " + std::to_string(ai) + " (" +
                               a.symbol + ", bond order sum " + std::to_string(order_sum) + ")",
                           0);
        }
        hydrogens = target - order_sum;
      }
      a.implicit_h = hydrogens;
    } else if (!allowed.empty()) {
      int total = order_sum + a.implicit_h;
      if (total > *std::max_element(allowed.begin(), allowed.end())) {
        throw ParseError("valence violation on bracket atom " + std::to_string(ai) + " (" +
                             a.symbol + ", total valence " + std::to_string(total) + ")",
                         0);
      }
    }
  }
  return st.g;
}

// ---------------------------------------------------------------------------
// Perception: distances
// ---------------------------------------------------------------------------

// All-pairs shortest path length in bonds via per-atom BFS; disconnected
// pairs get kDistanceInf.
inline void perceive_distances(MolecularGraph& g) {
  const int n = g.num_atoms();
  g.perceived.graph_distance.assign(static_cast<std::size_t>(n) * n, kDistanceInf);
  std::deque<int> queue;
  for (int s = 0; s < n; ++s) {
    int* dist = g.perceived.graph_distance.data() + static_cast<std::size_t>(s) * n;
    dist[s] = 0;
    queue.clear();
    queue.push_back(s);
    while (!queue.empty()) {
      int cur = queue.front();
      queue.pop_front();
      for (const auto& [nbr, bi] : g.adjacency[cur]) {
        if (dist[nbr] != kDistanceInf) continue;
        dist[nbr] = dist[cur] + 1;
        queue.push_back(nbr);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Perception: SSSR
// ---------------------------------------------------------------------------

// Label-invariant atom ranks from iterative neighborhood refinement over
// (element, charge, implicit H, degree, incident bond orders). Used to make
// ring perception independent of the input atom order.
inline std::vector<int> canonical_ranks(const MolecularGraph& g) {
  const int n = g.num_atoms();
  std::vector<std::vector<std::int64_t>> keys(n);
  for (int i = 0; i < n; ++i) {
    const Atom& a = g.atoms[i];
    std::vector<std::int64_t> orders;
    for (const auto& [nbr, bi] : g.adjacency[i]) {
      orders.push_back(g.bonds[bi].aromatic ? 4 : static_cast<int>(g.bonds[bi].order));
    }
    std::sort(orders.begin(), orders.end());
    keys[i] = {a.atomic_number, a.formal_charge, a.implicit_h,
               static_cast<std::int64_t>(g.adjacency[i].size())};
    keys[i].insert(keys[i].end(), orders.begin(), orders.end());
  }
  auto dense_rank = [&](const std::vector<std::vector<std::int64_t>>& ks) {
    std::vector<std::vector<std::int64_t>> sorted = ks;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<int> ranks(n);
    for (int i = 0; i < n; ++i) {
      ranks[i] = static_cast<int>(
          std::lower_bound(sorted.begin(), sorted.end(), ks[i]) - sorted.begin());
    }
    return ranks;
  };
  std::vector<int> ranks = dense_rank(keys);
  for (int round = 0; round < n; ++round) {
    std::vector<std::vector<std::int64_t>> next(n);
    for (int i = 0; i < n; ++i) {
      std::vector<std::int64_t> nbrs;
      for (const auto& [nbr, bi] : g.adjacency[i]) {
        std::int64_t order = g.bonds[bi].aromatic ? 4 : static_cast<int>(g.bonds[bi].order);
        nbrs.push_back(order * 100000 + ranks[nbr]);
      }
      std::sort(nbrs.begin(), nbrs.end());
      next[i] = {ranks[i]};
      next[i].insert(next[i].end(), nbrs.begin(), nbrs.end());
    }
    std::vector<int> refined = dense_rank(next);
    if (refined == ranks) break;
    ranks = std::move(refined);
  }
  return ranks;
}

namespace ring_detail {

struct Candidate {
  std::vector<std::uint64_t> edges;  // bitset over bond indices
  std::vector<int> atoms;           // cycle members, unordered
  int length = 0;
  std::vector<int> rank_key;        // label-invariant tie-break key
  std::vector<int> sorted_atoms;    // final determinism fallback
};

inline bool bit(const std::vector<std::uint64_t>& v, int i) {
  return (v[i >> 6] >> (i & 63)) & 1;
}
inline void flip(std::vector<std::uint64_t>& v, int i) { v[i >> 6] ^= 1ull << (i & 63); }

}  // namespace ring_detail

// Smallest set of smallest rings as a minimum cycle basis: Horton candidate
// cycles, sorted by (length, sorted atom tuple) for determinism, greedily
// accepted under GF(2) independence until the basis has |bonds| - |atoms| +
// |components| members.
inline void perceive_rings(MolecularGraph& g) {
  using namespace ring_detail;
  const int n = g.num_atoms();
  const int m = g.num_bonds();
  auto& per = g.perceived;
  per.ring_count.assign(n, {});
  per.same_ring.assign(static_cast<std::size_t>(n) * n, 0);
  per.sssr.clear();

  int components = 0;
  {
    std::vector<char> seen(n, 0);
    std::deque<int> queue;
    for (int s = 0; s < n; ++s) {
      if (seen[s]) continue;
      ++components;
      seen[s] = 1;
      queue.push_back(s);
      while (!queue.empty()) {
        int cur = queue.front();
        queue.pop_front();
        for (const auto& [nbr, bi] : g.adjacency[cur]) {
          if (!seen[nbr]) {
            seen[nbr] = 1;
            queue.push_back(nbr);
          }
        }
      }
    }
  }
  const int rank = m - n + components;
  if (rank <= 0) return;

  // Per-root BFS trees for Horton cycles. Neighbor expansion follows the
  // canonical atom ranks so the candidate trees (and with them the chosen
  // basis) do not depend on the input atom order.
  const std::vector<int> ranks = canonical_ranks(g);
  std::vector<std::vector<std::pair<int, int>>> ordered_adj(n);
  for (int i = 0; i < n; ++i) {
    ordered_adj[i] = g.adjacency[i];
    std::sort(ordered_adj[i].begin(), ordered_adj[i].end(),
              [&](const auto& x, const auto& y) {
                if (ranks[x.first] != ranks[y.first]) return ranks[x.first] < ranks[y.first];
                return x.first < y.first;
              });
  }
  const int words = (m + 63) / 64;
  std::vector<Candidate> candidates;
  std::vector<int> dist(n), parent_atom(n), parent_bond(n);
  std::vector<int> roots(n);
  {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      if (ranks[x] != ranks[y]) return ranks[x] < ranks[y];
      return x < y;
    });
    roots = std::move(order);
  }
  for (int root : roots) {
    std::fill(dist.begin(), dist.end(), -1);
    dist[root] = 0;
    parent_atom[root] = -1;
    std::deque<int> queue{root};
    while (!queue.empty()) {
      int cur = queue.front();
      queue.pop_front();
      for (const auto& [nbr, bi] : ordered_adj[cur]) {
        if (dist[nbr] >= 0) continue;
        dist[nbr] = dist[cur] + 1;
        parent_atom[nbr] = cur;
        parent_bond[nbr] = bi;
        queue.push_back(nbr);
      }
    }
    for (int bi = 0; bi < m; ++bi) {
      const Bond& b = g.bonds[bi];
      if (dist[b.a] < 0 || dist[b.b] < 0) continue;
      // Walk both tree paths to the root; require them disjoint except root.
      Candidate cand;
      cand.edges.assign(words, 0);
      std::vector<char> on_path(n, 0);
      bool ok = true;
      auto walk = [&](int from) {
        for (int cur = from; cur != root; cur = parent_atom[cur]) {
          if (cur != from && on_path[cur]) {
            ok = false;
            return;
          }
          on_path[cur] = 1;
          flip(cand.edges, parent_bond[cur]);
          cand.atoms.push_back(cur);
        }
      };
      walk(b.a);
      if (ok) walk(b.b);
      if (!ok || bit(cand.edges, bi)) continue;  // tree edge or overlapping paths
      flip(cand.edges, bi);
      cand.atoms.push_back(root);
      // Count edges; valid simple cycle has #edges == #atoms.
      int edges = 0;
      for (auto w : cand.edges) edges += __builtin_popcountll(w);
      if (edges != static_cast<int>(cand.atoms.size())) continue;
      cand.length = edges;
      cand.sorted_atoms = cand.atoms;
      std::sort(cand.sorted_atoms.begin(), cand.sorted_atoms.end());
      for (int a : cand.sorted_atoms) cand.rank_key.push_back(ranks[a]);
      std::sort(cand.rank_key.begin(), cand.rank_key.end());
      candidates.push_back(std::move(cand));
    }
  }

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    if (x.length != y.length) return x.length < y.length;
    if (x.rank_key != y.rank_key) return x.rank_key < y.rank_key;
    if (x.sorted_atoms != y.sorted_atoms) return x.sorted_atoms < y.sorted_atoms;
    return x.edges < y.edges;  // full determinism for equal atom sets
  });
  candidates.erase(std::unique(candidates.begin(), candidates.end(),
                               [](const Candidate& x, const Candidate& y) {
                                 return x.edges == y.edges;
                               }),
                   candidates.end());

  // Greedy GF(2) independence via Gaussian elimination.
  std::vector<std::vector<std::uint64_t>> basis;  // reduced rows
  std::vector<int> pivots;
  for (const Candidate& cand : candidates) {
    if (static_cast<int>(per.sssr.size()) == rank) break;
    std::vector<std::uint64_t> row = cand.edges;
    for (std::size_t r = 0; r < basis.size(); ++r) {
      if (bit(row, pivots[r])) {
        for (int w = 0; w < words; ++w) row[w] ^= basis[r][w];
      }
    }
    int pivot = -1;
    for (int e = 0; e < m && pivot < 0; ++e) {
      if (bit(row, e)) pivot = e;
    }
    if (pivot < 0) continue;  // dependent
    basis.push_back(row);
    pivots.push_back(pivot);
    std::vector<int> ring = cand.sorted_atoms;
    per.sssr.push_back(ring);
    if (cand.length >= 3 && cand.length <= 8) {
      for (int a : ring) per.ring_count[a][cand.length - 3]++;
    }
    for (std::size_t x = 0; x < ring.size(); ++x) {
      for (std::size_t y = 0; y < ring.size(); ++y) {
        per.same_ring[static_cast<std::size_t>(ring[x]) * n + ring[y]] = 1;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Perception: aromaticity (Hueckel upgrade of kekule-form input)
// ---------------------------------------------------------------------------

namespace aromatic_detail {

// Pi-electron contribution of `atom` within candidate ring `ring`, or
// nullopt when the atom cannot take part in an aromatic system.
//
// Contribution table:
//   any triple bond, or >3 sigma connections          -> ineligible
//   C  with double bond inside the ring               -> 1
//   C  with double bond to an already-aromatic atom   -> 1
//   C  with other exocyclic double bond (e.g. C=O)    -> 0
//   C+ / C- without a double bond                     -> 0 / 2
//   C  without any double bond                        -> ineligible
//   N,P with double bond (ring or exocyclic)          -> 1
//   N,P neutral without a double bond (pyrrole-like)  -> 2
//   N+ with double bond / without                     -> 1 / ineligible
//   O,S neutral without double bond                   -> 2
//   O+,S+ with in-ring double bond                    -> 1
//   anything else                                     -> ineligible
inline std::optional<int> pi_contribution(const MolecularGraph& g, int atom,
                                          const std::vector<char>& in_ring) {
  const Atom& a = g.atoms[atom];
  int sigma = static_cast<int>(g.adjacency[atom].size()) + a.implicit_h;
  if (sigma > 3) return std::nullopt;
  bool double_in_ring = false, double_to_aromatic = false, double_other = false;
  for (const auto& [nbr, bi] : g.adjacency[atom]) {
    const Bond& b = g.bonds[bi];
    if (b.order == BondOrder::kTriple) return std::nullopt;
    if (b.order != BondOrder::kDouble) continue;
    if (in_ring[nbr]) {
      double_in_ring = true;
    } else if (g.atoms[nbr].aromatic) {
      double_to_aromatic = true;
    } else {
      double_other = true;
    }
  }
  const bool has_double = double_in_ring || double_to_aromatic || double_other;
  switch (a.atomic_number) {
    case 6:
      if (double_in_ring || double_to_aromatic) return 1;
      if (double_other) return 0;
      if (a.formal_charge == 1) return 0;
      if (a.formal_charge == -1) return 2;
      return std::nullopt;
    case 7:
    case 15:
      if (a.formal_charge == 1) return has_double ? std::optional<int>(1) : std::nullopt;
      if (has_double) return 1;
      return 2;
    case 8:
    case 16:
      if (a.formal_charge == 1) return double_in_ring ? std::optional<int>(1) : std::nullopt;
      if (has_double) return std::nullopt;
      return 2;
    default:
      return std::nullopt;
  }
}

}  // namespace aromatic_detail

// Honors input annotations and additionally flags SSSR rings of size 5-7
// whose pi-electron count satisfies the 4n+2 rule. Runs to a fixpoint so that
// fused systems written in kekule form light up ring by ring.
inline void perceive_aromaticity(MolecularGraph& g) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& ring : g.perceived.sssr) {
      const int size = static_cast<int>(ring.size());
      if (size < 5 || size > 7) continue;
      bool all_aromatic = true;
      for (int a : ring) all_aromatic &= g.atoms[a].aromatic;
      if (all_aromatic) continue;
      std::vector<char> in_ring(g.num_atoms(), 0);
      for (int a : ring) in_ring[a] = 1;
      int pi = 0;
      bool eligible = true;
      for (int a : ring) {
        auto c = aromatic_detail::pi_contribution(g, a, in_ring);
        if (!c.has_value()) {
          eligible = false;
          break;
        }
        pi += *c;
      }
      if (!eligible || pi < 2 || (pi - 2) % 4 != 0) continue;
      for (int a : ring) g.atoms[a].aromatic = true;
      for (std::size_t k = 0; k < ring.size(); ++k) {
        for (std::size_t l = k + 1; l < ring.size(); ++l) {
          int bi = g.bond_between(ring[k], ring[l]);
          if (bi >= 0) g.bonds[bi].aromatic = true;
        }
      }
      changed = true;
    }
  }
}

// ---------------------------------------------------------------------------
// Perception: hybridization
// ---------------------------------------------------------------------------

// Triple bond or two double bonds -> sp; one double bond or aromatic -> sp2;
// otherwise sp3 for C/N/O/P/S; halogens, hydrogen and metals -> none.
inline void perceive_hybridization(MolecularGraph& g) {
  const int n = g.num_atoms();
  g.perceived.hybridization.assign(n, Hybridization::kNone);
  for (int ai = 0; ai < n; ++ai) {
    const Atom& a = g.atoms[ai];
    switch (a.atomic_number) {
      case 6: case 7: case 8: case 15: case 16: break;
      default: continue;
    }
    int doubles = 0, triples = 0;
    for (const auto& [nbr, bi] : g.adjacency[ai]) {
      if (g.bonds[bi].order == BondOrder::kDouble) ++doubles;
      if (g.bonds[bi].order == BondOrder::kTriple) ++triples;
    }
    Hybridization h;
    if (triples > 0 || doubles >= 2) {
      h = Hybridization::kSp;
    } else if (doubles == 1 || a.aromatic) {
      h = Hybridization::kSp2;
    } else {
      h = Hybridization::kSp3;
    }
    g.perceived.hybridization[ai] = h;
  }
}

// ---------------------------------------------------------------------------
// Perception: PEOE (Gasteiger-Marsili) partial charges
// ---------------------------------------------------------------------------

namespace peoe_detail {

struct ElectronegativityParams {
  double a, b, c;
  double chi(double q) const { return a + b * q + c * q * q; }
  double chi_cation() const { return a + b + c; }
};

// Published Gasteiger-Marsili parameters per element/hybridization; the
// phosphorus row follows the common PEOE extension.
inline std::optional<ElectronegativityParams> params(int z, Hybridization h) {
  switch (z) {
    case 1: return ElectronegativityParams{7.17, 6.24, -0.56};
    case 6:
      if (h == Hybridization::kSp) return ElectronegativityParams{10.39, 9.45, 0.73};
      if (h == Hybridization::kSp2) return ElectronegativityParams{8.79, 9.32, 1.51};
      return ElectronegativityParams{7.98, 9.18, 1.88};
    case 7:
      if (h == Hybridization::kSp) return ElectronegativityParams{15.68, 11.70, -0.27};
      if (h == Hybridization::kSp2) return ElectronegativityParams{12.87, 11.15, 0.85};
      return ElectronegativityParams{11.54, 10.82, 1.36};
    case 8:
      if (h == Hybridization::kSp2) return ElectronegativityParams{17.07, 13.79, 0.47};
      return ElectronegativityParams{14.18, 12.92, 1.39};
    case 9: return ElectronegativityParams{14.66, 13.85, 2.31};
    case 15: return ElectronegativityParams{8.90, 8.24, 0.96};
    case 16: return ElectronegativityParams{10.14, 9.13, 1.38};
    case 17: return ElectronegativityParams{11.00, 9.69, 1.35};
    case 35: return ElectronegativityParams{10.08, 8.47, 1.16};
    case 53: return ElectronegativityParams{9.90, 7.96, 0.96};
    default: return std::nullopt;
  }
}

inline constexpr double kHydrogenCationChi = 20.02;

}  // namespace peoe_detail

// Iterative partial equalization of orbital electronegativity, 8 iterations
// with damping (1/2)^k. Implicit hydrogens take part as pseudo-atoms and are
// folded back into their heavy atom afterwards. Atoms whose element lacks
// parameters keep charge 0 and raise a warning flag; their bonds transfer
// nothing.
inline void compute_partial_charges(MolecularGraph& g) {
  using namespace peoe_detail;
  const int n = g.num_atoms();
  auto& per = g.perceived;
  per.partial_charge.assign(n, 0.0);
  per.charge_warning.assign(n, 0);

  // Extended system: heavy atoms then one pseudo-atom per implicit H.
  struct Site {
    int heavy = -1;  // owner for H sites, self for heavy sites
    std::optional<ElectronegativityParams> p;
    double q = 0.0;
  };
  std::vector<Site> sites(n);
  std::vector<std::pair<int, int>> edges;  // site index pairs
  for (int ai = 0; ai < n; ++ai) {
    sites[ai].heavy = ai;
    sites[ai].p = params(g.atoms[ai].atomic_number, per.hybridization[ai]);
    sites[ai].q = g.atoms[ai].formal_charge;
    if (!sites[ai].p.has_value()) per.charge_warning[ai] = 1;
  }
  for (const Bond& b : g.bonds) edges.emplace_back(b.a, b.b);
  for (int ai = 0; ai < n; ++ai) {
    for (int h = 0; h < g.atoms[ai].implicit_h; ++h) {
      Site s;
      s.heavy = ai;
      s.p = params(1, Hybridization::kNone);
      edges.emplace_back(ai, static_cast<int>(sites.size()));
      sites.push_back(s);
    }
  }

  std::vector<double> delta(sites.size());
  double damping = 1.0;
  for (int iter = 1; iter <= 8; ++iter) {
    damping *= 0.5;
    std::fill(delta.begin(), delta.end(), 0.0);
    for (const auto& [x, y] : edges) {
      const Site& sx = sites[x];
      const Site& sy = sites[y];
      if (!sx.p.has_value() || !sy.p.has_value()) continue;
      const double chix = sx.p->chi(sx.q);
      const double chiy = sy.p->chi(sy.q);
      if (chix == chiy) continue;
      // Charge flows toward the more electronegative side, scaled by the
      // cation electronegativity of the donor.
      int donor = chix < chiy ? x : y;
      int acceptor = chix < chiy ? y : x;
      double denom = sites[donor].p->chi_cation();
      if (sites[donor].heavy >= 0 &&
          ((donor < n && g.atoms[donor].atomic_number == 1) || donor >= n)) {
        denom = kHydrogenCationChi;
      }
      double dq = std::abs(chiy - chix) / denom * damping;
      delta[donor] += dq;
      delta[acceptor] -= dq;
    }
    for (std::size_t s = 0; s < sites.size(); ++s) sites[s].q += delta[s];
  }

  for (std::size_t s = 0; s < sites.size(); ++s) {
    per.partial_charge[sites[s].heavy] += sites[s].q;
  }
  // Ownership glitch guard: heavy sites accumulated their own q plus their
  // hydrogens'; nothing else to do.
}

// ---------------------------------------------------------------------------
// Perception: hydrogen bonding
// ---------------------------------------------------------------------------

// Donor: N or O carrying at least one hydrogen. Acceptor: any O; N unless
// positively charged or aromatic with its lone pair donated to the ring
// (pyrrole-type, i.e. aromatic N with an H or three connections).
inline void perceive_hbond(MolecularGraph& g) {
  const int n = g.num_atoms();
  auto& per = g.perceived;
  per.donor.assign(n, 0);
  per.acceptor.assign(n, 0);
  for (int ai = 0; ai < n; ++ai) {
    const Atom& a = g.atoms[ai];
    const bool no = a.atomic_number == 7 || a.atomic_number == 8;
    if (!no) continue;
    if (a.implicit_h >= 1) per.donor[ai] = 1;
    if (a.atomic_number == 8) {
      per.acceptor[ai] = 1;
    } else {
      bool pyrrole_type =
          a.aromatic && (a.implicit_h >= 1 || g.adjacency[ai].size() >= 3);
      if (a.formal_charge <= 0 && !pyrrole_type) per.acceptor[ai] = 1;
    }
  }
}

// ---------------------------------------------------------------------------
// Perception: R/S chirality
// ---------------------------------------------------------------------------

namespace cip_detail {

inline constexpr int kMaxDepth = 8;

// Sphere-by-sphere branch description: level k holds the sorted (descending)
// atomic numbers of the hierarchical digraph nodes at depth k, with phantom
// duplicates for multiple bonds and ring closures.
inline std::vector<std::vector<int>> expand_branch(const MolecularGraph& g, int center,
                                                   int first) {
  std::vector<std::vector<int>> levels;
  struct Node {
    int atom;          // -1 for phantom
    int z;             // atomic number
    int parent_atom;   // atom we arrived from
    std::vector<int> path;  // ancestor atoms, for ring-closure duplication
  };
  std::vector<Node> frontier;
  if (first == -1) {
    levels.push_back({1});
    return levels;  // implicit hydrogen branch
  }
  frontier.push_back({first, g.atoms[first].atomic_number, center, {center}});
  levels.push_back({g.atoms[first].atomic_number});
  for (int depth = 1; depth <= kMaxDepth && !frontier.empty(); ++depth) {
    std::vector<Node> next;
    std::vector<int> level;
    for (const Node& node : frontier) {
      if (node.atom < 0) continue;  // phantoms have no children
      // Phantom duplicates for the bond back to the parent.
      int back = g.bond_between(node.atom, node.parent_atom);
      if (back >= 0) {
        int extra = static_cast<int>(g.bonds[back].order) - 1;
        for (int e = 0; e < extra; ++e) {
          level.push_back(g.atoms[node.parent_atom].atomic_number);
          next.push_back({-1, g.atoms[node.parent_atom].atomic_number, node.atom, {}});
        }
      }
      for (int h = 0; h < g.atoms[node.atom].implicit_h; ++h) {
        level.push_back(1);
        next.push_back({-1, 1, node.atom, {}});
      }
      for (const auto& [nbr, bi] : g.adjacency[node.atom]) {
        if (nbr == node.parent_atom) continue;
        int extra = static_cast<int>(g.bonds[bi].order) - 1;
        for (int e = 0; e < extra; ++e) {
          level.push_back(g.atoms[nbr].atomic_number);
          next.push_back({-1, g.atoms[nbr].atomic_number, node.atom, {}});
        }
        bool closes_ring =
            std::find(node.path.begin(), node.path.end(), nbr) != node.path.end();
        level.push_back(g.atoms[nbr].atomic_number);
        if (closes_ring) {
          next.push_back({-1, g.atoms[nbr].atomic_number, node.atom, {}});
        } else {
          Node child{nbr, g.atoms[nbr].atomic_number, node.atom, node.path};
          child.path.push_back(node.atom);
          next.push_back(std::move(child));
        }
      }
    }
    if (level.empty()) break;
    std::sort(level.begin(), level.end(), std::greater<int>());
    levels.push_back(std::move(level));
    frontier = std::move(next);
  }
  return levels;
}

// Three-way comparison by atomic-number spheres; 0 means tied to depth 8.
inline int compare_branches(const std::vector<std::vector<int>>& x,
                            const std::vector<std::vector<int>>& y) {
  const std::size_t levels = std::max(x.size(), y.size());
  for (std::size_t l = 0; l < levels; ++l) {
    static const std::vector<int> kEmpty;
    const auto& xs = l < x.size() ? x[l] : kEmpty;
    const auto& ys = l < y.size() ? y[l] : kEmpty;
    const std::size_t len = std::max(xs.size(), ys.size());
    for (std::size_t i = 0; i < len; ++i) {
      int xv = i < xs.size() ? xs[i] : 0;
      int yv = i < ys.size() ? ys[i] : 0;
      if (xv != yv) return xv < yv ? -1 : 1;
    }
  }
  return 0;
}

inline int permutation_parity(const std::vector<int>& perm) {
  std::vector<char> seen(perm.size(), 0);
  int parity = 0;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (seen[i]) continue;
    int len = 0;
    for (std::size_t j = i; !seen[j]; j = perm[j]) {
      seen[j] = 1;
      ++len;
    }
    parity ^= (len - 1) & 1;
  }
  return parity;
}

}  // namespace cip_detail

// Maps @/@@ parity annotations to R/S labels using a simplified CIP priority
// (atomic-number spheres with duplicated atoms for multiple bonds and ring
// closures, depth-limited to 8). Atoms without an annotation, without four
// distinct substituent branches, or with tied priorities get none.
inline void assign_chirality_rs(MolecularGraph& g) {
  using namespace cip_detail;
  const int n = g.num_atoms();
  g.perceived.chirality_rs.assign(n, ChiralityRS::kNone);
  for (int ai = 0; ai < n; ++ai) {
    const Atom& a = g.atoms[ai];
    if (a.parity == Parity::kNone) continue;
    std::vector<int> nbrs;
    for (int nb : a.stereo_order) {
      if (nb == -2) continue;  // unfilled placeholder (defensive)
      nbrs.push_back(nb);
    }
    if (nbrs.size() != 4) continue;

    std::vector<std::vector<std::vector<int>>> branches;
    branches.reserve(4);
    for (int nb : nbrs) branches.push_back(expand_branch(g, ai, nb));
    // priority[p] = index into nbrs of the p-th highest branch.
    std::vector<int> priority = {0, 1, 2, 3};
    bool tie = false;
    std::sort(priority.begin(), priority.end(), [&](int x, int y) {
      return compare_branches(branches[x], branches[y]) > 0;
    });
    for (int p = 0; p + 1 < 4; ++p) {
      if (compare_branches(branches[priority[p]], branches[priority[p + 1]]) == 0) tie = true;
    }
    if (tie) continue;

    // Reorder written -> priority, then bring the lowest-priority branch to
    // the front (odd 4-cycle). Each odd permutation flips the sense.
    int flips = permutation_parity(priority);
    flips ^= 1;  // the 4-cycle moving p3 first
    bool ccw = a.parity == Parity::kCounterClockwise;
    if (flips) ccw = !ccw;
    // ccw now means: viewed from the lowest-priority branch toward the
    // center, the remaining branches run counterclockwise in priority order;
    // with the lowest branch pointing away that is clockwise, i.e. R.
    g.perceived.chirality_rs[ai] = ccw ? ChiralityRS::kR : ChiralityRS::kS;
  }
}

// Runs the full perception pipeline in dependency order. The graph is
// immutable afterwards and safe to share across threads.
inline void perceive_all(MolecularGraph& g) {
  perceive_distances(g);
  perceive_rings(g);
  perceive_aromaticity(g);
  perceive_hybridization(g);
  compute_partial_charges(g);
  perceive_hbond(g);
  assign_chirality_rs(g);
  g.perception_done = true;
}

inline MolecularGraph parse_and_perceive(std::string_view smiles) {
  MolecularGraph g = parse_smiles(smiles);
  perceive_all(g);
  return g;
}

}  // namespace weavenet

#endif  // WEAVENET_MOLGRAPH_HPP_
