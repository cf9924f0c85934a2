// Copyright 2026 The Weavenet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Encoding of perceived molecular graphs into the initial atom and pair
// layers, with masking for variable molecule size and the full/simple
// feature variants.
//
// Full atom columns, in order: atom type one-hot (H,C,N,O,F,P,S,Cl,Br,I,
// metal | 11), chirality R,S (2), formal charge (1), partial charge (1),
// ring-size counts 3-8 (6), hybridization sp,sp2,sp3 (3), H-bond donor,
// acceptor (2), aromaticity (1) = 27. Simple mode keeps the atom type block
// only (11). "One-hot or null" encodes null as all zeros.
//
// Full pair columns: bond type one-hot single,double,triple,aromatic (4,
// null when not bonded), graph-distance thresholds <=1..<=7 (7), same-ring
// flag (1) = 12. Simple mode drops same-ring (11). Distance bit d is 1 iff
// the shortest path is <= d bonds; bits saturate to all-zero beyond 7.

#ifndef WEAVENET_FEATURIZE_HPP_
#define WEAVENET_FEATURIZE_HPP_

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "weavenet/common.hpp"
#include "weavenet/molgraph.hpp"

namespace weavenet {

enum class FeatureMode { kFull, kSimple };

inline constexpr int kUnboundedPairDistance = -1;

struct FeatureConfig {
  FeatureMode mode = FeatureMode::kFull;
  int max_atoms = 60;
  int max_pair_distance = 2;  // kUnboundedPairDistance for no cutoff

  bool unbounded() const { return max_pair_distance == kUnboundedPairDistance; }

  void validate() const {
    if (max_atoms < 1) throw ConfigError("max_atoms must be >= 1");
    if (max_pair_distance < 1 && !unbounded()) {
      throw ConfigError("max_pair_distance must be >= 1 or unbounded");
    }
  }
};

inline int atom_feature_depth(FeatureMode mode) {
  return mode == FeatureMode::kFull ? 27 : 11;
}
inline int pair_feature_depth(FeatureMode mode) {
  return mode == FeatureMode::kFull ? 12 : 11;
}

struct AtomLayer {
  int max_atoms = 0;
  int depth = 0;
  std::vector<double> values;      // [max_atoms, depth], masked rows all-zero
  std::vector<std::uint8_t> mask;  // [max_atoms]

  double at(int a, int c) const { return values[static_cast<std::size_t>(a) * depth + c]; }
  int num_valid() const {
    int n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

struct PairLayer {
  int max_atoms = 0;
  int depth = 0;
  std::vector<double> values;      // [max_atoms, max_atoms, depth], symmetric
  std::vector<std::uint8_t> mask;  // [max_atoms, max_atoms]; diagonal masked

  const double* row(int a, int b) const {
    return values.data() + (static_cast<std::size_t>(a) * max_atoms + b) * depth;
  }
  bool masked(int a, int b) const {
    return mask[static_cast<std::size_t>(a) * max_atoms + b] == 0;
  }
};

inline std::vector<std::string> atom_feature_names(FeatureMode mode) {
  std::vector<std::string> names = {
      "type_H", "type_C", "type_N", "type_O",  "type_F",  "type_P",
      "type_S", "type_Cl", "type_Br", "type_I", "type_metal"};
  if (mode == FeatureMode::kSimple) return names;
  names.insert(names.end(),
               {"chirality_R", "chirality_S", "formal_charge", "partial_charge",
                "ring_size_3", "ring_size_4", "ring_size_5", "ring_size_6",
                "ring_size_7", "ring_size_8", "hybridization_sp",
                "hybridization_sp2", "hybridization_sp3", "hbond_donor",
                "hbond_acceptor", "aromatic"});
  return names;
}

inline std::vector<std::string> pair_feature_names(FeatureMode mode) {
  std::vector<std::string> names = {"bond_single", "bond_double", "bond_triple",
                                    "bond_aromatic"};
  for (int d = 1; d <= 7; ++d) names.push_back("graph_distance_le_" + std::to_string(d));
  if (mode == FeatureMode::kFull) names.push_back("same_ring");
  return names;
}

// Molecules beyond max_atoms are truncated to the first max_atoms atoms in
// parse order; truncated and padded rows are masked and zero.
inline AtomLayer featurize_atoms(const MolecularGraph& g, const FeatureConfig& cfg) {
  cfg.validate();
  if (!g.perception_done) throw Error("featurize_atoms: perception not run");
  AtomLayer layer;
  layer.max_atoms = cfg.max_atoms;
  layer.depth = atom_feature_depth(cfg.mode);
  layer.values.assign(static_cast<std::size_t>(cfg.max_atoms) * layer.depth, 0.0);
  layer.mask.assign(cfg.max_atoms, 0);
  const int used = std::min(g.num_atoms(), cfg.max_atoms);
  for (int a = 0; a < used; ++a) {
    layer.mask[a] = 1;
    double* row = layer.values.data() + static_cast<std::size_t>(a) * layer.depth;
    const Atom& atom = g.atoms[a];
    row[static_cast<int>(atom.element())] = 1.0;
    if (cfg.mode == FeatureMode::kSimple) continue;
    int i = 11;
    ChiralityRS rs = g.perceived.chirality_rs[a];
    if (rs == ChiralityRS::kR) row[i] = 1.0;
    if (rs == ChiralityRS::kS) row[i + 1] = 1.0;
    i += 2;
    row[i++] = atom.formal_charge;
    row[i++] = g.perceived.partial_charge[a];
    for (int s = 0; s < 6; ++s) row[i + s] = g.perceived.ring_count[a][s];
    i += 6;
    Hybridization h = g.perceived.hybridization[a];
    if (h == Hybridization::kSp) row[i] = 1.0;
    if (h == Hybridization::kSp2) row[i + 1] = 1.0;
    if (h == Hybridization::kSp3) row[i + 2] = 1.0;
    i += 3;
    row[i++] = g.perceived.donor[a];
    row[i++] = g.perceived.acceptor[a];
    row[i++] = atom.aromatic ? 1.0 : 0.0;
  }
  return layer;
}

// Pairs are kept (unmasked) when both atoms survive truncation, a != b, and
// the graph distance is within max_pair_distance; an unbounded config keeps
// every off-diagonal pair, including across disconnected components.
inline PairLayer featurize_pairs(const MolecularGraph& g, const FeatureConfig& cfg) {
  cfg.validate();
  if (!g.perception_done) throw Error("featurize_pairs: perception not run");
  PairLayer layer;
  layer.max_atoms = cfg.max_atoms;
  layer.depth = pair_feature_depth(cfg.mode);
  layer.values.assign(
      static_cast<std::size_t>(cfg.max_atoms) * cfg.max_atoms * layer.depth, 0.0);
  layer.mask.assign(static_cast<std::size_t>(cfg.max_atoms) * cfg.max_atoms, 0);
  const int used = std::min(g.num_atoms(), cfg.max_atoms);
  for (int a = 0; a < used; ++a) {
    for (int b = 0; b < used; ++b) {
      if (a == b) continue;
      const int dist = g.distance(a, b);
      if (!cfg.unbounded() && dist > cfg.max_pair_distance) continue;
      layer.mask[static_cast<std::size_t>(a) * cfg.max_atoms + b] = 1;
      double* row = layer.values.data() +
                    (static_cast<std::size_t>(a) * cfg.max_atoms + b) * layer.depth;
      int bi = g.bond_between(a, b);
      if (bi >= 0) {
        const Bond& bond = g.bonds[bi];
        int cls = bond.aromatic ? 3 : static_cast<int>(bond.order) - 1;
        row[cls] = 1.0;
      }
      for (int d = 1; d <= 7; ++d) {
        if (dist <= d) row[4 + d - 1] = 1.0;
      }
      if (cfg.mode == FeatureMode::kFull) {
        row[11] = g.in_same_ring(a, b) ? 1.0 : 0.0;
      }
    }
  }
  return layer;
}

struct BatchedFeatures {
  int batch_size = 0;
  int max_atoms = 0;
  int atom_depth = 0;
  int pair_depth = 0;
  std::vector<double> atom_values;       // [B, A, atom_depth]
  std::vector<std::uint8_t> atom_mask;   // [B, A]
  std::vector<double> pair_values;       // [B, A, A, pair_depth]
  std::vector<std::uint8_t> pair_mask;   // [B, A, A]
  std::vector<std::int64_t> molecule_index;  // row -> input list position
  int truncated_molecules = 0;
};

inline BatchedFeatures featurize_batch(const std::vector<MolecularGraph>& mols,
                                       const FeatureConfig& cfg) {
  if (mols.empty()) throw DataError("featurize_batch: empty molecule list");
  BatchedFeatures batch;
  batch.batch_size = static_cast<int>(mols.size());
  batch.max_atoms = cfg.max_atoms;
  batch.atom_depth = atom_feature_depth(cfg.mode);
  batch.pair_depth = pair_feature_depth(cfg.mode);
  const std::size_t astride = static_cast<std::size_t>(cfg.max_atoms) * batch.atom_depth;
  const std::size_t pstride =
      static_cast<std::size_t>(cfg.max_atoms) * cfg.max_atoms * batch.pair_depth;
  batch.atom_values.assign(mols.size() * astride, 0.0);
  batch.atom_mask.assign(mols.size() * cfg.max_atoms, 0);
  batch.pair_values.assign(mols.size() * pstride, 0.0);
  batch.pair_mask.assign(mols.size() * static_cast<std::size_t>(cfg.max_atoms) * cfg.max_atoms, 0);
  for (std::size_t m = 0; m < mols.size(); ++m) {
    if (mols[m].num_atoms() > cfg.max_atoms) batch.truncated_molecules++;
    AtomLayer atoms = featurize_atoms(mols[m], cfg);
    PairLayer pairs = featurize_pairs(mols[m], cfg);
    std::copy(atoms.values.begin(), atoms.values.end(),
              batch.atom_values.begin() + m * astride);
    std::copy(atoms.mask.begin(), atoms.mask.end(),
              batch.atom_mask.begin() + m * cfg.max_atoms);
    std::copy(pairs.values.begin(), pairs.values.end(),
              batch.pair_values.begin() + m * pstride);
    std::copy(pairs.mask.begin(), pairs.mask.end(),
              batch.pair_mask.begin() +
                  m * static_cast<std::size_t>(cfg.max_atoms) * cfg.max_atoms);
    batch.molecule_index.push_back(static_cast<std::int64_t>(m));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Feature dump files (one CSV per molecule; rows = atoms or unique pairs)
// ---------------------------------------------------------------------------

inline void write_atom_features_csv(std::ostream& os, const AtomLayer& layer,
                                    FeatureMode mode) {
  os << "atom";
  for (const auto& name : atom_feature_names(mode)) os << "," << name;
  os << "\n";
  for (int a = 0; a < layer.max_atoms; ++a) {
    if (!layer.mask[a]) continue;
    os << a;
    for (int c = 0; c < layer.depth; ++c) os << "," << layer.at(a, c);
    os << "\n";
  }
}

inline void write_pair_features_csv(std::ostream& os, const PairLayer& layer,
                                    FeatureMode mode) {
  os << "atom_a,atom_b";
  for (const auto& name : pair_feature_names(mode)) os << "," << name;
  os << "\n";
  for (int a = 0; a < layer.max_atoms; ++a) {
    for (int b = a + 1; b < layer.max_atoms; ++b) {
      if (layer.masked(a, b)) continue;
      os << a << "," << b;
      const double* row = layer.row(a, b);
      for (int c = 0; c < layer.depth; ++c) os << "," << row[c];
      os << "\n";
    }
  }
}

}  // namespace weavenet

#endif  // WEAVENET_FEATURIZE_HPP_
