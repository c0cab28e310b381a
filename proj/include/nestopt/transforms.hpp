#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nestopt/errors.hpp"
#include "nestopt/ir.hpp"

namespace nestopt {

enum class TransformKind {
  Interchange,
  StripMine,
  Tile,
  Unroll,
  Fuse,
  Split,
  Bottleneck,
  Group,
  Depthwise,
  SpatialBottleneck,
  Simplify,
  Sequence1,
  Sequence2,
  Sequence3,
};

enum class TransformClass { Semantic, Neural };

inline TransformClass transform_class(TransformKind k) {
  switch (k) {
    case TransformKind::Interchange:
    case TransformKind::StripMine:
    case TransformKind::Tile:
    case TransformKind::Unroll:
    case TransformKind::Fuse:
    case TransformKind::Split:
    case TransformKind::Simplify:
      return TransformClass::Semantic;
    default:
      return TransformClass::Neural;
  }
}

inline const char* kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::Interchange: return "interchange";
    case TransformKind::StripMine: return "strip_mine";
    case TransformKind::Tile: return "tile";
    case TransformKind::Unroll: return "unroll";
    case TransformKind::Fuse: return "fuse";
    case TransformKind::Split: return "split";
    case TransformKind::Bottleneck: return "bottleneck";
    case TransformKind::Group: return "group";
    case TransformKind::Depthwise: return "depthwise";
    case TransformKind::SpatialBottleneck: return "spatial_bottleneck";
    case TransformKind::Simplify: return "simplify";
    case TransformKind::Sequence1: return "sequence1";
    case TransformKind::Sequence2: return "sequence2";
    case TransformKind::Sequence3: return "sequence3";
  }
  return "?";
}

struct Transform {
  TransformKind kind = TransformKind::Interchange;
  int target = 0;  // nest part index (after any preceding splits)
  std::string a, b;
  long long factor = 0;
  std::vector<long long> partition;  // split part lengths
  std::vector<long long> params;     // named-sequence parameters

  TransformClass cls() const { return transform_class(kind); }
};

struct TransformSequence {
  std::vector<Transform> steps;
  std::string label;

  std::vector<std::string> kinds() const {
    std::vector<std::string> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(kind_name(s.kind));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Primitive rewrites

namespace detail {

inline NestPart& part_at(LoopNest& nest, int target) {
  if (target < 0 || static_cast<size_t>(target) >= nest.parts.size())
    throw TransformError("nest part @" + std::to_string(target) +
                         " does not exist");
  return nest.parts[static_cast<size_t>(target)];
}

inline int require_iter(const NestPart& part, const std::string& name) {
  int i = part.index_of(name);
  if (i < 0) throw IterNotFound("iterator '" + name + "' not found in nest");
  return i;
}

inline std::string unique_name(const NestPart& part, const std::string& base) {
  if (!part.find(base)) return base;
  for (int i = 2;; ++i) {
    std::string cand = base + std::to_string(i);
    if (!part.find(cand)) return cand;
  }
}

inline void rewrite_coords(NestPart& part, const std::string& var,
                           const AffineExpr& repl) {
  ExtentMap ext = part.extents();
  for (auto& st : part.stmts)
    for (auto& [_, e] : st.coord) e = simplify(substitute(e, var, repl), ext);
}

inline void resimplify(NestPart& part) {
  ExtentMap ext = part.extents();
  for (auto& st : part.stmts)
    for (auto& [_, e] : st.coord) e = simplify(e, ext);
}

inline void drop_provenance(LoopNest& nest) { nest.provenance.reset(); }

inline void revalidate_provenance(LoopNest& nest) {
  if (!nest.provenance) return;
  try {
    nest.provenance->validate();
  } catch (const InvalidSpec&) {
    nest.provenance.reset();
  }
}

}  // namespace detail

inline LoopNest interchange(const LoopNest& nest, const std::string& a,
                            const std::string& b, int target = 0) {
  LoopNest out = nest;
  NestPart& part = detail::part_at(out, target);
  int ia = detail::require_iter(part, a);
  int ib = detail::require_iter(part, b);
  if (ia != ib) std::swap(part.spine[ia], part.spine[ib]);
  compute_blocks(out);
  return out;
}

// Reorders a part's spine to the given permutation of iterator names.
inline LoopNest permute(const LoopNest& nest, const std::vector<std::string>& order,
                        int target = 0) {
  LoopNest out = nest;
  NestPart& part = detail::part_at(out, target);
  if (order.size() != part.spine.size())
    throw TransformError("permutation must name every iterator exactly once");
  std::vector<IterVar> spine;
  for (const auto& name : order) {
    int i = detail::require_iter(part, name);
    spine.push_back(part.spine[i]);
  }
  std::set<std::string> seen;
  for (const auto& iv : spine)
    if (!seen.insert(iv.name).second)
      throw TransformError("duplicate iterator in permutation");
  part.spine = std::move(spine);
  compute_blocks(out);
  return out;
}

inline LoopNest strip_mine(const LoopNest& nest, const std::string& i,
                           long long f, int target = 0) {
  if (f <= 0) throw NonDivisible("strip-mine factor must be positive");
  LoopNest out = nest;
  NestPart& part = detail::part_at(out, target);
  int ii = detail::require_iter(part, i);
  IterVar iv = part.spine[ii];
  if (iv.extent % f != 0)
    throw NonDivisible("trip count " + std::to_string(iv.extent) +
                       " of '" + i + "' is not divisible by " + std::to_string(f));
  std::string outer = detail::unique_name(part, i + "_o");
  IterVar outer_iv{outer, iv.extent / f, 1, iv.kernel};
  part.spine[ii] = outer_iv;
  std::string inner = detail::unique_name(part, i + "_i");
  part.spine.insert(part.spine.begin() + ii + 1, {inner, f, iv.unroll, iv.kernel});
  detail::rewrite_coords(part, i,
                         AffineExpr::add(AffineExpr::mul(AffineExpr::variable(outer), f),
                                         AffineExpr::variable(inner)));
  compute_blocks(out);
  return out;
}

// Strip-mine followed by interchange of the new outer iterator to the
// outermost position.
inline LoopNest tile(const LoopNest& nest, const std::string& i, long long f,
                     int target = 0) {
  LoopNest out = strip_mine(nest, i, f, target);
  NestPart& part = detail::part_at(out, target);
  int io = detail::require_iter(part, i + "_o");
  IterVar iv = part.spine[io];
  part.spine.erase(part.spine.begin() + io);
  part.spine.insert(part.spine.begin(), iv);
  compute_blocks(out);
  return out;
}

inline LoopNest unroll(const LoopNest& nest, const std::string& i, long long f,
                       int target = 0) {
  if (f <= 0) throw NonDivisible("unroll factor must be positive");
  LoopNest out = nest;
  NestPart& part = detail::part_at(out, target);
  int ii = detail::require_iter(part, i);
  if (part.spine[ii].extent % f != 0)
    throw NonDivisible("trip count of '" + i + "' is not divisible by unroll factor");
  if (f > 1) part.spine[ii].unroll = f;
  compute_blocks(out);
  return out;
}

inline LoopNest fuse(const LoopNest& nest, const std::string& a,
                     const std::string& b, int target = 0) {
  LoopNest out = nest;
  NestPart& part = detail::part_at(out, target);
  int ia = detail::require_iter(part, a);
  int ib = detail::require_iter(part, b);
  if (ib != ia + 1)
    throw NotAdjacent("'" + a + "' and '" + b + "' are not adjacent nested loops");
  for (const auto& st : part.stmts) {
    std::set<std::string> req = st.required_vars();
    if (req.count(a) != req.count(b))
      throw NotAdjacent("statement " + st.id + " uses only one of the fused loops");
  }
  IterVar av = part.spine[ia];
  IterVar bv = part.spine[ib];
  std::string fused = detail::unique_name(part, a + "_" + b);
  part.spine[ia] = {fused, av.extent * bv.extent, 1, av.kernel || bv.kernel};
  part.spine.erase(part.spine.begin() + ib);
  detail::rewrite_coords(part, a,
                         AffineExpr::floordiv(AffineExpr::variable(fused), bv.extent));
  detail::rewrite_coords(part, b,
                         AffineExpr::modulo(AffineExpr::variable(fused), bv.extent));
  compute_blocks(out);
  return out;
}

// Loop fission: the targeted part becomes one part per contiguous sub-range
// of iterator `i`, with the range offset folded into the coordinates.
inline LoopNest split(const LoopNest& nest, const std::string& i,
                      const std::vector<long long>& partition, int target = 0) {
  if (partition.empty()) throw BadPartition("split needs at least one part");
  for (long long p : partition)
    if (p <= 0) throw BadPartition("split part lengths must be positive");
  LoopNest out = nest;
  NestPart& part = detail::part_at(out, target);
  int ii = detail::require_iter(part, i);
  long long total = 0;
  for (long long p : partition) total += p;
  if (total != part.spine[ii].extent)
    throw BadPartition("part lengths sum to " + std::to_string(total) +
                       " but '" + i + "' has trip count " +
                       std::to_string(part.spine[ii].extent));
  if (partition.size() == 1) return out;

  std::vector<NestPart> pieces;
  long long offset = 0;
  for (long long len : partition) {
    NestPart piece = part;
    piece.spine[ii].extent = len;
    if (offset != 0)
      detail::rewrite_coords(piece, i,
                             AffineExpr::add(AffineExpr::variable(i),
                                             AffineExpr::constant(offset)));
    else
      detail::resimplify(piece);
    if (i == "co" && part.co_range && part.group_factor == 1) {
      long long base = part.co_range->first;
      piece.co_range = {base + offset, base + offset + len};
    } else if (i == "co") {
      piece.co_range.reset();
    }
    offset += len;
    pieces.push_back(std::move(piece));
  }
  out.parts.erase(out.parts.begin() + target);
  out.parts.insert(out.parts.begin() + target,
                   std::make_move_iterator(pieces.begin()),
                   std::make_move_iterator(pieces.end()));
  compute_blocks(out);
  return out;
}

inline LoopNest bottleneck(const LoopNest& nest, const std::string& i,
                           long long factor, int target = 0) {
  if (factor <= 0) throw NonDivisible("bottleneck factor must be positive");
  LoopNest out = nest;
  NestPart& part = detail::part_at(out, target);
  int ii = detail::require_iter(part, i);
  if (part.spine[ii].kernel)
    throw KernelAxis("cannot bottleneck kernel iterator '" + i + "'");
  if (part.spine[ii].extent % factor != 0)
    throw NonDivisible("trip count of '" + i + "' is not divisible by " +
                       std::to_string(factor));
  part.spine[ii].extent /= factor;
  detail::resimplify(part);
  if (factor == 1) return out;

  if (out.provenance) {
    bool single = out.parts.size() == 1;
    if (i == "co" && single && part.group_factor == 1) {
      out.provenance->bottleneck_out *= factor;
      part.co_range = {0, out.provenance->co_eff()};
    } else if (i == "ci" && single && part.group_factor == 1) {
      out.provenance->ci /= factor;
    } else if (i == "h" && single) {
      out.provenance->spatial_div_h *= factor;
    } else if (i == "w" && single) {
      out.provenance->spatial_div_w *= factor;
    } else {
      detail::drop_provenance(out);
    }
    detail::revalidate_provenance(out);
  }
  compute_blocks(out);
  return out;
}

// Slices loops `a` and `b` by a common factor under a new outermost group
// iterator, Algorithm-2 style.
inline LoopNest group(const LoopNest& nest, const std::string& a,
                      const std::string& b, long long g_factor, int target = 0) {
  if (g_factor <= 0) throw NonDivisible("group factor must be positive");
  LoopNest out = nest;
  if (g_factor == 1) return out;
  NestPart& part = detail::part_at(out, target);
  int ia = detail::require_iter(part, a);
  int ib = detail::require_iter(part, b);
  if (ia == ib) throw TransformError("group needs two distinct iterators");
  if (part.spine[ia].extent % g_factor != 0 || part.spine[ib].extent % g_factor != 0)
    throw NonDivisible("trip counts of '" + a + "' and '" + b +
                       "' must both be divisible by " + std::to_string(g_factor));
  long long slice_a = part.spine[ia].extent / g_factor;
  long long slice_b = part.spine[ib].extent / g_factor;
  part.spine[ia].extent = slice_a;
  part.spine[ib].extent = slice_b;
  std::string g_name = detail::unique_name(part, "g");
  part.spine.insert(part.spine.begin(), {g_name, g_factor, 1, false});
  detail::rewrite_coords(
      part, a,
      AffineExpr::add(AffineExpr::mul(AffineExpr::variable(g_name), slice_a),
                      AffineExpr::variable(a)));
  detail::rewrite_coords(
      part, b,
      AffineExpr::add(AffineExpr::mul(AffineExpr::variable(g_name), slice_b),
                      AffineExpr::variable(b)));
  bool channel_pair = (a == "co" && b == "ci") || (a == "ci" && b == "co");
  if (channel_pair && part.group_factor > 0)
    part.group_factor *= g_factor;
  else
    part.group_factor = -1;
  if (out.provenance && out.parts.size() == 1) {
    if (part.group_factor > 0)
      out.provenance->groups = part.group_factor;
    else
      detail::drop_provenance(out);
    detail::revalidate_provenance(out);
  }
  compute_blocks(out);
  return out;
}

// Removes unit-trip loops, fixing their coordinates at zero.
inline LoopNest simplify_unit_loops(const LoopNest& nest) {
  LoopNest out = nest;
  for (auto& part : out.parts) {
    for (size_t i = part.spine.size(); i-- > 0;) {
      if (part.spine[i].extent != 1) continue;
      std::string name = part.spine[i].name;
      part.spine.erase(part.spine.begin() + static_cast<long>(i));
      detail::rewrite_coords(part, name, AffineExpr::constant(0));
    }
  }
  compute_blocks(out);
  return out;
}

// Grouping with the group size equal to the channel count; the unit-trip
// slice loops are simplified away, Algorithm-3 style.
inline LoopNest depthwise(const LoopNest& nest) {
  std::optional<ConvSpec> spec = derived_spec(nest);
  if (!spec || nest.parts.size() != 1)
    throw ChannelMismatch("depthwise requires an unsplit convolution nest");
  if (spec->co_eff() != spec->ci)
    throw ChannelMismatch("depthwise requires Co = Ci (have " +
                          std::to_string(spec->co_eff()) + " vs " +
                          std::to_string(spec->ci) + ")");
  const NestPart& part = nest.parts[0];
  const IterVar* co = part.find("co");
  long long factor = co ? co->extent : 1;
  LoopNest out = factor > 1 ? group(nest, "co", "ci", factor) : nest;
  return simplify_unit_loops(out);
}

// The spatial bottleneck composition: rotate a spatial loop outermost,
// bottleneck it, rotate the other spatial loop outermost, bottleneck it,
// and restore the original loop order.
inline LoopNest spatial_bottleneck(const LoopNest& nest, long long b) {
  if (b <= 0) throw NonDivisible("spatial bottleneck factor must be positive");
  LoopNest out = nest;
  for (int target = 0; target < static_cast<int>(out.parts.size()); ++target) {
    std::vector<std::string> original;
    for (const auto& iv : out.parts[static_cast<size_t>(target)].spine)
      original.push_back(iv.name);
    auto front = [&](const std::string& first, const std::string& second) {
      std::vector<std::string> order{first, second};
      for (const auto& n : original)
        if (n != first && n != second) order.push_back(n);
      return order;
    };
    auto shrink = [&](const std::string& axis) {
      NestPart& part = out.parts[static_cast<size_t>(target)];
      const IterVar* iv = part.find(axis);
      long long extent = iv ? iv->extent : 1;
      if (extent % b != 0)
        throw NonDivisible("spatial trip count " + std::to_string(extent) +
                           " of '" + axis + "' is not divisible by " +
                           std::to_string(b));
      if (iv) {
        part.spine[static_cast<size_t>(part.index_of(axis))].extent = extent / b;
        detail::resimplify(part);
      }
    };
    bool have_h = out.parts[static_cast<size_t>(target)].find("h") != nullptr;
    bool have_w = out.parts[static_cast<size_t>(target)].find("w") != nullptr;
    if (have_h && have_w) {
      out = permute(out, front("h", "w"), target);
      shrink("h");
      out = permute(out, front("w", "h"), target);
      shrink("w");
      out = permute(out, original, target);
    } else {
      shrink("h");
      shrink("w");
    }
  }
  if (b > 1 && out.provenance) {
    out.provenance->spatial_div_h *= b;
    out.provenance->spatial_div_w *= b;
    detail::revalidate_provenance(out);
  }
  compute_blocks(out);
  return out;
}

// ---------------------------------------------------------------------------
// Named sequences (the compositions of the transformation case studies)

inline std::vector<Transform> sequence1_steps(const LoopNest& nest,
                                              long long split_arity = 2,
                                              long long g_factor = 2);
inline std::vector<Transform> sequence2_steps(const LoopNest& nest,
                                              long long unroll_factor = 16,
                                              long long g_factor = 2);
inline std::vector<Transform> sequence3_steps(const LoopNest& nest,
                                              long long g_first = 2,
                                              long long g_second = 4);

inline LoopNest apply(const LoopNest& nest, const Transform& t);

inline LoopNest apply(const LoopNest& nest, const std::vector<Transform>& steps) {
  LoopNest out = nest;
  for (const auto& s : steps) out = apply(out, s);
  return out;
}

inline LoopNest apply(const LoopNest& nest, const TransformSequence& seq) {
  return nestopt::apply(nest, seq.steps);
}

inline LoopNest apply(const LoopNest& nest, const Transform& t) {
  switch (t.kind) {
    case TransformKind::Interchange:
      return interchange(nest, t.a, t.b, t.target);
    case TransformKind::StripMine:
      return strip_mine(nest, t.a, t.factor, t.target);
    case TransformKind::Tile:
      return tile(nest, t.a, t.factor, t.target);
    case TransformKind::Unroll:
      return unroll(nest, t.a, t.factor, t.target);
    case TransformKind::Fuse:
      return fuse(nest, t.a, t.b, t.target);
    case TransformKind::Split:
      return split(nest, t.a, t.partition, t.target);
    case TransformKind::Bottleneck:
      return bottleneck(nest, t.a, t.factor, t.target);
    case TransformKind::Group:
      return group(nest, t.a, t.b, t.factor, t.target);
    case TransformKind::Depthwise:
      return depthwise(nest);
    case TransformKind::SpatialBottleneck:
      return spatial_bottleneck(nest, t.factor);
    case TransformKind::Simplify:
      return simplify_unit_loops(nest);
    case TransformKind::Sequence1: {
      auto p = t.params;
      return nestopt::apply(nest, sequence1_steps(nest, p.size() > 0 ? p[0] : 2,
                                         p.size() > 1 ? p[1] : 2));
    }
    case TransformKind::Sequence2: {
      auto p = t.params;
      return nestopt::apply(nest, sequence2_steps(nest, p.size() > 0 ? p[0] : 16,
                                         p.size() > 1 ? p[1] : 2));
    }
    case TransformKind::Sequence3: {
      auto p = t.params;
      return nestopt::apply(nest, sequence3_steps(nest, p.size() > 0 ? p[0] : 2,
                                         p.size() > 1 ? p[1] : 4));
    }
  }
  throw TransformError("unknown transform kind");
}

// Sequence 1: spatial grouping of the kernels with the grouped slices
// concatenated back onto the output-channel axis.
inline std::vector<Transform> sequence1_steps(const LoopNest& nest,
                                              long long split_arity,
                                              long long g_factor) {
  const NestPart& part = nest.parts.empty() ? throw TransformError("empty nest")
                                            : nest.parts[0];
  const IterVar* h = part.find("h");
  long long extent = h ? h->extent : 1;
  if (split_arity <= 0 || extent % split_arity != 0 ||
      (split_arity > 1 && extent < split_arity))
    throw BadPartition("cannot split spatial trip count " +
                       std::to_string(extent) + " into " +
                       std::to_string(split_arity) + " parts");
  std::vector<long long> partition(static_cast<size_t>(split_arity),
                                   extent / split_arity);
  Transform s1{TransformKind::Split, 0, "h", "", 0, partition, {}};
  Transform s2{TransformKind::Interchange, 0, "h", "co", 0, {}, {}};
  Transform s3{TransformKind::Group, 0, "h", "co", g_factor, {}, {}};
  Transform s4{TransformKind::Interchange, 0, "h", "co", 0, {}, {}};
  Transform s5{TransformKind::Fuse, 0, "g", "co", 0, {}, {}};
  return {s1, s2, s3, s4, s5};
}

// Sequence 2: unroll the output channels, group the remaining domain, and
// move the unrolled slice innermost.
inline std::vector<Transform> sequence2_steps(const LoopNest&,
                                              long long unroll_factor,
                                              long long g_factor) {
  Transform s1{TransformKind::Unroll, 0, "co", "", unroll_factor, {}, {}};
  Transform s2{TransformKind::Group, 0, "co", "ci", g_factor, {}, {}};
  Transform s3{TransformKind::Interchange, 0, "co", "ci", 0, {}, {}};
  return {s1, s2, s3};
}

// Sequence 3: split the output channels and group each half by its own
// factor.
inline std::vector<Transform> sequence3_steps(const LoopNest& nest,
                                              long long g_first,
                                              long long g_second) {
  const NestPart& part = nest.parts.empty() ? throw TransformError("empty nest")
                                            : nest.parts[0];
  const IterVar* co = part.find("co");
  long long extent = co ? co->extent : 1;
  if (extent % 2 != 0)
    throw BadPartition("cannot split output channels " + std::to_string(extent) +
                       " in half");
  std::vector<long long> partition{extent / 2, extent / 2};
  Transform s1{TransformKind::Split, 0, "co", "", 0, partition, {}};
  Transform s2{TransformKind::Group, 0, "co", "ci", g_first, {}, {}};
  Transform s3{TransformKind::Interchange, 1, "co", "ci", 0, {}, {}};
  Transform s4{TransformKind::Group, 1, "co", "ci", g_second, {}, {}};
  return {s1, s2, s3, s4};
}

// ---------------------------------------------------------------------------
// Semantic legality by brute-force dependence preservation

enum class Verdict { Legal, Illegal, NotApplicable };

struct LegalityResult {
  Verdict verdict = Verdict::Legal;
  std::string reason;
};

// A dependence (i -> j) of the original nest is preserved when the
// transformed schedule still runs i before j. Reordering within a single
// accumulation chain (RMW instances of one statement on one cell) is
// accepted. Instance identity is the (statement, domain coordinate) pair.
inline LegalityResult check_semantic_legality(const LoopNest& original,
                                              const LoopNest& transformed,
                                              long long cap = kDefaultInstanceCap) {
  if (instance_count(transformed) > cap)
    throw CapExceeded("transformed nest exceeds brute-force cap");
  DependenceSet deps = compute_dependences(original, cap, false);

  // Intern statement ids across both nests so instance keys are integers.
  std::map<std::string, int> sid;
  auto sid_of = [&](const std::string& id) {
    return sid.emplace(id, static_cast<int>(sid.size())).first->second;
  };
  struct Entry {
    int sid;
    std::vector<long long> coord;
    std::uint64_t rank;
  };
  std::vector<Entry> entries;
  std::uint64_t next = 0;
  for_each_instance(transformed, [&](const Instance& inst, const Statement& st) {
    entries.push_back({sid_of(st.id), inst.coord, next++});
  });
  auto key_less = [](const Entry& a, const Entry& b) {
    if (a.sid != b.sid) return a.sid < b.sid;
    return a.coord < b.coord;
  };
  std::sort(entries.begin(), entries.end(), key_less);
  for (size_t i = 1; i < entries.size(); ++i)
    if (entries[i - 1].sid == entries[i].sid &&
        entries[i - 1].coord == entries[i].coord)
      return {Verdict::Illegal, "transformed schedule duplicates an instance"};
  if (entries.size() != deps.instances.size())
    return {Verdict::NotApplicable,
            "instance sets differ (neural rewrite changes the domain)"};
  auto rank_of = [&](std::uint32_t idx) -> std::uint64_t {
    const Instance& inst = deps.instances[idx];
    const Statement& st = original.parts[inst.part].stmts[inst.stmt];
    auto it = sid.find(st.id);
    if (it == sid.end()) return UINT64_MAX;
    Entry probe{it->second, inst.coord, 0};
    auto e = std::lower_bound(entries.begin(), entries.end(), probe, key_less);
    if (e == entries.end() || e->sid != probe.sid || e->coord != probe.coord)
      return UINT64_MAX;
    return e->rank;
  };
  for (const DepPair& p : deps.pairs) {
    if (p.reduction) continue;
    std::uint64_t rs = rank_of(p.src);
    std::uint64_t rd = rank_of(p.dst);
    if (rs == UINT64_MAX || rd == UINT64_MAX)
      return {Verdict::NotApplicable,
              "instance sets differ (neural rewrite changes the domain)"};
    if (rs >= rd) {
      const Instance& s = deps.instances[p.src];
      const Instance& d = deps.instances[p.dst];
      std::ostringstream os;
      os << "dependence " << original.parts[s.part].stmts[s.stmt].id << "(";
      for (size_t i = 0; i < s.coord.size(); ++i) os << (i ? "," : "") << s.coord[i];
      os << ") -> " << original.parts[d.part].stmts[d.stmt].id << "(";
      for (size_t i = 0; i < d.coord.size(); ++i) os << (i ? "," : "") << d.coord[i];
      os << ") is reordered";
      return {Verdict::Illegal, os.str()};
    }
  }
  return {Verdict::Legal, ""};
}

inline LegalityResult check_semantic_legality(const LoopNest& original,
                                              const TransformSequence& seq,
                                              const LoopNest& transformed,
                                              long long cap = kDefaultInstanceCap) {
  for (const auto& s : seq.steps)
    if (s.cls() == TransformClass::Neural)
      return {Verdict::NotApplicable, "sequence contains neural transforms"};
  return check_semantic_legality(original, transformed, cap);
}

// ---------------------------------------------------------------------------
// Sequence DSL: pipe-separated steps, case-insensitive, e.g.
//   interchange(co,ci) | group@1(co,ci,2) | bottleneck(co,4)

inline std::string to_dsl(const Transform& t) {
  std::string s = kind_name(t.kind);
  if (t.target != 0) s += "@" + std::to_string(t.target);
  auto args = [&](std::vector<std::string> xs) {
    s += "(";
    for (size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + xs[i];
    s += ")";
  };
  switch (t.kind) {
    case TransformKind::Interchange:
    case TransformKind::Fuse:
      args({t.a, t.b});
      break;
    case TransformKind::StripMine:
    case TransformKind::Tile:
    case TransformKind::Unroll:
    case TransformKind::Bottleneck:
      args({t.a, std::to_string(t.factor)});
      break;
    case TransformKind::Group:
      args({t.a, t.b, std::to_string(t.factor)});
      break;
    case TransformKind::Split: {
      std::vector<std::string> xs{t.a};
      for (long long p : t.partition) xs.push_back(std::to_string(p));
      args(xs);
      break;
    }
    case TransformKind::SpatialBottleneck:
      args({std::to_string(t.factor)});
      break;
    case TransformKind::Depthwise:
    case TransformKind::Simplify:
      break;
    case TransformKind::Sequence1:
    case TransformKind::Sequence2:
    case TransformKind::Sequence3: {
      if (!t.params.empty()) {
        std::vector<std::string> xs;
        for (long long p : t.params) xs.push_back(std::to_string(p));
        args(xs);
      }
      break;
    }
  }
  return s;
}

inline std::string to_dsl(const TransformSequence& seq) {
  std::string s;
  for (size_t i = 0; i < seq.steps.size(); ++i) {
    if (i) s += " | ";
    s += to_dsl(seq.steps[i]);
  }
  return s;
}

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool is_number(const std::string& s) {
  if (s.empty()) return false;
  size_t i = s[0] == '-' ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

}  // namespace detail

inline TransformSequence parse_sequence(const std::string& dsl) {
  static const std::map<std::string, TransformKind> kinds = {
      {"interchange", TransformKind::Interchange},
      {"reorder", TransformKind::Interchange},
      {"strip_mine", TransformKind::StripMine},
      {"tile", TransformKind::Tile},
      {"unroll", TransformKind::Unroll},
      {"fuse", TransformKind::Fuse},
      {"split", TransformKind::Split},
      {"bottleneck", TransformKind::Bottleneck},
      {"group", TransformKind::Group},
      {"depthwise", TransformKind::Depthwise},
      {"spatial_bottleneck", TransformKind::SpatialBottleneck},
      {"simplify", TransformKind::Simplify},
      {"sequence1", TransformKind::Sequence1},
      {"sequence2", TransformKind::Sequence2},
      {"sequence3", TransformKind::Sequence3},
  };
  TransformSequence seq;
  std::string text = dsl;
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  size_t pos = 0;
  int step_index = 0;
  while (pos <= text.size()) {
    size_t bar = text.find('|', pos);
    std::string token = detail::trim(
        text.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos));
    pos = bar == std::string::npos ? text.size() + 1 : bar + 1;
    if (token.empty()) {
      if (bar == std::string::npos) break;
      throw ParseError("step " + std::to_string(step_index + 1) + ": empty step");
    }
    auto err = [&](const std::string& msg) {
      throw ParseError("step " + std::to_string(step_index + 1) + " '" + token +
                       "': " + msg);
    };
    std::string head = token, arglist;
    size_t paren = token.find('(');
    if (paren != std::string::npos) {
      if (token.back() != ')') err("missing ')'");
      head = detail::trim(token.substr(0, paren));
      arglist = token.substr(paren + 1, token.size() - paren - 2);
    }
    Transform t;
    size_t at = head.find('@');
    if (at != std::string::npos) {
      std::string idx = detail::trim(head.substr(at + 1));
      if (!detail::is_number(idx)) err("bad nest index after '@'");
      t.target = std::stoi(idx);
      head = detail::trim(head.substr(0, at));
    }
    auto kit = kinds.find(head);
    if (kit == kinds.end()) err("unknown transform '" + head + "'");
    t.kind = kit->second;
    std::vector<std::string> args;
    if (!arglist.empty()) {
      std::istringstream as(arglist);
      std::string a;
      while (std::getline(as, a, ',')) args.push_back(detail::trim(a));
    }
    auto num = [&](const std::string& s) -> long long {
      if (!detail::is_number(s)) err("expected a number, got '" + s + "'");
      return std::stoll(s);
    };
    switch (t.kind) {
      case TransformKind::Interchange:
      case TransformKind::Fuse:
        if (args.size() != 2) err("expected two iterator names");
        t.a = args[0];
        t.b = args[1];
        break;
      case TransformKind::StripMine:
      case TransformKind::Tile:
      case TransformKind::Unroll:
      case TransformKind::Bottleneck:
        if (args.size() != 2) err("expected iterator and factor");
        t.a = args[0];
        t.factor = num(args[1]);
        break;
      case TransformKind::Group:
        if (args.size() != 3) err("expected two iterators and a factor");
        t.a = args[0];
        t.b = args[1];
        t.factor = num(args[2]);
        break;
      case TransformKind::Split:
        if (args.size() < 2) err("expected iterator and part lengths");
        t.a = args[0];
        for (size_t i = 1; i < args.size(); ++i) t.partition.push_back(num(args[i]));
        break;
      case TransformKind::SpatialBottleneck:
        if (args.size() != 1) err("expected a factor");
        t.factor = num(args[0]);
        break;
      case TransformKind::Depthwise:
      case TransformKind::Simplify:
        if (!args.empty()) err("expected no arguments");
        break;
      case TransformKind::Sequence1:
      case TransformKind::Sequence2:
      case TransformKind::Sequence3:
        for (const auto& a : args) t.params.push_back(num(a));
        break;
    }
    seq.steps.push_back(std::move(t));
    ++step_index;
  }
  return seq;
}

// Validated construction: the sequence must apply cleanly to the given nest.
inline TransformSequence make_sequence(std::vector<Transform> steps,
                                       const LoopNest& nest,
                                       std::string label = "") {
  TransformSequence seq{std::move(steps), std::move(label)};
  nestopt::apply(nest, seq);
  return seq;
}

}  // namespace nestopt
