#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nestopt/affine.hpp"
#include "nestopt/errors.hpp"

namespace nestopt {

// Semantic descriptor of a convolution variant. Spatial divisors model
// spatial bottlenecking of the output domain; channel splits give each
// contiguous output-channel range its own group factor.
struct ChannelSplit {
  long long begin = 0;
  long long end = 0;
  long long groups = 1;
};

struct ConvSpec {
  long long ci = 1;
  long long co = 1;
  long long h = 1;
  long long w = 1;
  long long kh = 1;
  long long kw = 1;
  long long stride = 1;
  long long pad = 0;
  long long groups = 1;
  long long bottleneck_out = 1;
  long long spatial_div_h = 1;
  long long spatial_div_w = 1;
  std::vector<ChannelSplit> channel_splits;

  void set_bottleneck_spatial(long long b) {
    spatial_div_h = b;
    spatial_div_w = b;
  }

  long long co_eff() const { return co / bottleneck_out; }
  long long raw_out_h() const { return (h + 2 * pad - kh) / stride + 1; }
  long long raw_out_w() const { return (w + 2 * pad - kw) / stride + 1; }
  long long out_h() const { return raw_out_h() / spatial_div_h; }
  long long out_w() const { return raw_out_w() / spatial_div_w; }

  // Output-channel ranges with their group factors (the whole range when
  // no splits are present).
  std::vector<ChannelSplit> ranges() const {
    if (!channel_splits.empty()) return channel_splits;
    return {{0, co_eff(), groups}};
  }

  void validate() const {
    auto req = [](bool ok, const std::string& msg) {
      if (!ok) throw InvalidSpec(msg);
    };
    req(ci >= 1 && co >= 1 && h >= 1 && w >= 1, "dims must be positive");
    req(kh >= 1 && kw >= 1 && stride >= 1 && pad >= 0, "bad kernel/stride/pad");
    req(groups >= 1 && co % groups == 0 && ci % groups == 0,
        "Co and Ci must be divisible by groups");
    req(bottleneck_out >= 1 && co % bottleneck_out == 0,
        "Co must be divisible by bottleneck factor");
    req(raw_out_h() >= 1 && raw_out_w() >= 1, "kernel larger than padded input");
    req(spatial_div_h >= 1 && raw_out_h() % spatial_div_h == 0 &&
            spatial_div_w >= 1 && raw_out_w() % spatial_div_w == 0,
        "spatial size must be divisible by spatial bottleneck factor");
    long long pos = 0;
    for (const auto& s : channel_splits) {
      req(s.begin == pos && s.end > s.begin && s.end <= co_eff(),
          "channel splits must be contiguous and disjoint");
      req(s.groups >= 1 && (s.end - s.begin) % s.groups == 0 &&
              ci % s.groups == 0,
          "split range and Ci must be divisible by its group factor");
      pos = s.end;
    }
    if (!channel_splits.empty())
      req(pos == co_eff(), "channel splits must cover [0, Co)");
    else
      req(co_eff() % groups == 0, "effective Co must be divisible by groups");
  }
};

struct IterVar {
  std::string name;
  long long extent = 1;
  long long unroll = 1;
  bool kernel = false;  // kernel spatial axis (k_h / k_w); excluded from bottleneck

  bool operator==(const IterVar&) const = default;
};

enum class AccessMode { Read, Write, ReadModifyWrite };

struct AccessMap {
  std::string tensor;
  std::vector<AffineExpr> indices;  // over domain iterator names
  AccessMode mode = AccessMode::Read;
  bool zero_pad = false;  // out-of-range reads yield zero
};

enum class StmtKind { Init, Mac };

// A statement keeps its access maps over the *original* domain iterators;
// `coord` maps each domain iterator to an expression over the current loop
// variables. Transforms rewrite coords, never access maps, so a statement
// instance is identified across rewrites by its domain coordinate.
struct Statement {
  std::string id;
  StmtKind kind = StmtKind::Mac;
  std::vector<AccessMap> accesses;
  std::vector<std::string> domain;
  std::map<std::string, AffineExpr> coord;

  std::set<std::string> required_vars() const {
    std::set<std::string> vars;
    for (const auto& [_, e] : coord) collect_vars(e, vars);
    return vars;
  }
};

// One fission-free unit of the schedule: a loop spine plus statements.
// `co_range` and `group_factor` carry convolution provenance through
// split/group so a ConvSpec can be rebuilt from a transformed nest.
struct NestPart {
  std::vector<IterVar> spine;
  std::vector<Statement> stmts;
  std::optional<std::pair<long long, long long>> co_range;
  long long group_factor = 1;  // -1 marks grouping not expressible as ConvSpec

  ExtentMap extents() const {
    ExtentMap m;
    for (const auto& iv : spine) m[iv.name] = iv.extent;
    return m;
  }
  const IterVar* find(const std::string& name) const {
    for (const auto& iv : spine)
      if (iv.name == name) return &iv;
    return nullptr;
  }
  int index_of(const std::string& name) const {
    for (size_t i = 0; i < spine.size(); ++i)
      if (spine[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

struct LoopNest {
  std::vector<NestPart> parts;
  std::optional<ConvSpec> provenance;
};

// ---------------------------------------------------------------------------
// Layout: statements whose required loop variables form a spine prefix sit at
// that depth; init statements that no longer fit the spine are fissioned into
// their own block scheduled before the main one.

struct Block {
  int part = 0;
  std::vector<IterVar> iters;
  std::vector<std::pair<int, int>> stmts;  // (statement index, depth)
};

inline std::vector<Block> compute_blocks(const LoopNest& nest) {
  std::vector<Block> blocks;
  for (size_t p = 0; p < nest.parts.size(); ++p) {
    const NestPart& part = nest.parts[p];
    Block main;
    main.part = static_cast<int>(p);
    main.iters = part.spine;
    std::vector<Block> fissioned;
    for (size_t s = 0; s < part.stmts.size(); ++s) {
      const Statement& st = part.stmts[s];
      std::set<std::string> req = st.required_vars();
      std::set<std::string> prefix;
      for (size_t i = 0; i < req.size() && i < part.spine.size(); ++i)
        prefix.insert(part.spine[i].name);
      if (req == prefix) {
        main.stmts.emplace_back(static_cast<int>(s), static_cast<int>(req.size()));
        continue;
      }
      if (st.kind != StmtKind::Init)
        throw NotPermutable("statement " + st.id +
                            " cannot be scheduled under the permuted spine");
      Block fb;
      fb.part = static_cast<int>(p);
      for (const auto& iv : part.spine)
        if (req.count(iv.name)) fb.iters.push_back(iv);
      if (fb.iters.size() != req.size())
        throw TransformError("statement " + st.id +
                             " references an unknown loop variable");
      fb.stmts.emplace_back(static_cast<int>(s), static_cast<int>(req.size()));
      fissioned.push_back(std::move(fb));
    }
    for (auto& b : fissioned) blocks.push_back(std::move(b));
    blocks.push_back(std::move(main));
  }
  return blocks;
}

// ---------------------------------------------------------------------------
// Enumeration

struct Instance {
  int part = 0;
  int stmt = 0;  // index into parts[part].stmts
  std::vector<long long> coord;  // aligned with the statement's domain list
};

inline long long instance_count(const LoopNest& nest) {
  long long total = 0;
  for (const Block& b : compute_blocks(nest)) {
    for (auto [_, depth] : b.stmts) {
      long long n = 1;
      for (int d = 0; d < depth; ++d) n *= b.iters[d].extent;
      total += n;
    }
  }
  return total;
}

namespace detail {

struct PlannedStmt {
  int stmt = 0;
  size_t depth = 0;
  std::vector<SlotExpr> coord;  // aligned with the statement's domain list
};

struct PlannedBlock {
  int part = 0;
  std::vector<IterVar> iters;
  std::vector<PlannedStmt> stmts;
};

inline std::vector<PlannedBlock> plan_blocks(const LoopNest& nest) {
  std::vector<PlannedBlock> out;
  for (const Block& b : compute_blocks(nest)) {
    PlannedBlock pb;
    pb.part = b.part;
    pb.iters = b.iters;
    std::map<std::string, int> slots;
    for (size_t i = 0; i < b.iters.size(); ++i)
      slots[b.iters[i].name] = static_cast<int>(i);
    for (auto [si, depth] : b.stmts) {
      const Statement& st = nest.parts[b.part].stmts[si];
      PlannedStmt ps;
      ps.stmt = si;
      ps.depth = static_cast<size_t>(depth);
      ps.coord.reserve(st.domain.size());
      for (const auto& dv : st.domain)
        ps.coord.push_back(compile_expr(st.coord.at(dv), slots));
      pb.stmts.push_back(std::move(ps));
    }
    out.push_back(std::move(pb));
  }
  return out;
}

template <typename Fn>
void walk_block(const LoopNest& nest, const PlannedBlock& b,
                std::vector<long long>& vals, size_t depth, Fn&& fn) {
  const NestPart& part = nest.parts[b.part];
  for (const PlannedStmt& ps : b.stmts) {
    if (ps.depth != depth) continue;
    Instance inst;
    inst.part = b.part;
    inst.stmt = ps.stmt;
    inst.coord.reserve(ps.coord.size());
    for (const SlotExpr& e : ps.coord) inst.coord.push_back(eval(e, vals.data()));
    fn(inst, part.stmts[ps.stmt]);
  }
  if (depth == b.iters.size()) return;
  for (long long v = 0; v < b.iters[depth].extent; ++v) {
    vals[depth] = v;
    walk_block(nest, b, vals, depth + 1, fn);
  }
}

}  // namespace detail

// Visits every statement instance in schedule order.
template <typename Fn>
void for_each_instance(const LoopNest& nest, Fn&& fn) {
  for (const detail::PlannedBlock& b : detail::plan_blocks(nest)) {
    std::vector<long long> vals(b.iters.size(), 0);
    detail::walk_block(nest, b, vals, 0, fn);
  }
}

inline std::vector<Instance> enumerate_instances(const LoopNest& nest) {
  std::vector<Instance> out;
  out.reserve(static_cast<size_t>(instance_count(nest)));
  for_each_instance(nest, [&](const Instance& inst, const Statement&) {
    out.push_back(inst);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dependences (brute force)

struct DepPair {
  std::uint32_t src = 0;  // indices into DependenceSet::instances
  std::uint32_t dst = 0;
  bool reduction = false;  // both ends are RMW instances of the same statement
};

struct DependenceSet {
  std::vector<Instance> instances;  // in schedule order of the originating nest
  std::vector<DepPair> pairs;
};

constexpr long long kDefaultInstanceCap = 1'000'000;

// Enumerates the nest and pairs up every conflicting access (two touches of
// one memory cell, at least one of them a write). Pairs of read-modify-write
// instances of the same statement are the commutative accumulation chains;
// `include_reduction=false` drops them at construction, which keeps the pair
// table linear in chain length for the legality checker.
inline DependenceSet compute_dependences(const LoopNest& nest,
                                         long long cap = kDefaultInstanceCap,
                                         bool include_reduction = true) {
  if (instance_count(nest) > cap)
    throw CapExceeded("instance count exceeds brute-force cap of " +
                      std::to_string(cap));
  DependenceSet deps;

  // Intern tensor names and per-statement global ids; precompile the access
  // index expressions against each statement's domain slots.
  std::map<std::string, int> tensor_ids;
  struct CompiledAccess {
    int tensor;
    AccessMode mode;
    std::vector<SlotExpr> indices;
  };
  std::vector<std::vector<std::vector<CompiledAccess>>> acc;  // [part][stmt]
  std::vector<std::vector<int>> stmt_gid(nest.parts.size());
  std::map<std::string, int> gid_of;
  acc.resize(nest.parts.size());
  for (size_t p = 0; p < nest.parts.size(); ++p) {
    acc[p].resize(nest.parts[p].stmts.size());
    stmt_gid[p].resize(nest.parts[p].stmts.size());
    for (size_t s = 0; s < nest.parts[p].stmts.size(); ++s) {
      const Statement& st = nest.parts[p].stmts[s];
      stmt_gid[p][s] =
          gid_of.emplace(st.id, static_cast<int>(gid_of.size())).first->second;
      std::map<std::string, int> slots;
      for (size_t i = 0; i < st.domain.size(); ++i)
        slots[st.domain[i]] = static_cast<int>(i);
      for (const auto& a : st.accesses) {
        CompiledAccess ca;
        ca.tensor =
            tensor_ids.emplace(a.tensor, static_cast<int>(tensor_ids.size()))
                .first->second;
        ca.mode = a.mode;
        for (const auto& e : a.indices) ca.indices.push_back(compile_expr(e, slots));
        acc[p][s].push_back(std::move(ca));
      }
    }
  }

  struct Touch {
    int tensor;
    std::vector<long long> cell;
    std::uint32_t inst;
    AccessMode mode;
    int gid;
  };
  std::vector<Touch> touches;
  for_each_instance(nest, [&](const Instance& inst, const Statement&) {
    auto idx = static_cast<std::uint32_t>(deps.instances.size());
    deps.instances.push_back(inst);
    const long long* vals = inst.coord.data();
    for (const CompiledAccess& ca : acc[inst.part][inst.stmt]) {
      Touch t;
      t.tensor = ca.tensor;
      t.cell.reserve(ca.indices.size());
      for (const SlotExpr& e : ca.indices) t.cell.push_back(eval(e, vals));
      t.inst = idx;
      t.mode = ca.mode;
      t.gid = stmt_gid[inst.part][inst.stmt];
      touches.push_back(std::move(t));
    }
  });
  std::sort(touches.begin(), touches.end(), [](const Touch& a, const Touch& b) {
    if (a.tensor != b.tensor) return a.tensor < b.tensor;
    if (a.cell != b.cell) return a.cell < b.cell;
    return a.inst < b.inst;
  });
  for (size_t lo = 0; lo < touches.size();) {
    size_t hi = lo;
    while (hi < touches.size() && touches[hi].tensor == touches[lo].tensor &&
           touches[hi].cell == touches[lo].cell)
      ++hi;
    for (size_t i = lo; i < hi; ++i) {
      for (size_t j = i + 1; j < hi; ++j) {
        bool iw = touches[i].mode != AccessMode::Read;
        bool jw = touches[j].mode != AccessMode::Read;
        if (!iw && !jw) continue;
        if (touches[i].inst == touches[j].inst) continue;
        bool reduction = touches[i].mode == AccessMode::ReadModifyWrite &&
                         touches[j].mode == AccessMode::ReadModifyWrite &&
                         touches[i].gid == touches[j].gid;
        if (reduction && !include_reduction) continue;
        deps.pairs.push_back({touches[i].inst, touches[j].inst, reduction});
      }
    }
    lo = hi;
  }
  return deps;
}

// ---------------------------------------------------------------------------
// Construction from a ConvSpec

// Builds the loop nest realizing a ConvSpec: statements S1 (init) and S2
// (multiply-accumulate), loop order [c_o, h, w, c_i, k_h, k_w] outermost
// first, a group loop g outermost when grouping is present, and one part per
// channel split. Unit-extent loops are omitted; their coordinates are fixed
// at zero.
inline LoopNest conv_nest(const ConvSpec& spec) {
  spec.validate();
  LoopNest nest;
  nest.provenance = spec;

  const long long oh = spec.out_h();
  const long long ow = spec.out_w();
  const bool has_kh = spec.kh > 1;
  const bool has_kw = spec.kw > 1;

  for (const ChannelSplit& r : spec.ranges()) {
    const long long len = r.end - r.begin;
    const long long g = r.groups;
    const bool has_g = g > 1;
    const long long co_ext = len / g;
    const long long ci_ext = spec.ci / g;

    NestPart part;
    part.co_range = {r.begin, r.end};
    part.group_factor = g;
    auto push = [&part](const std::string& name, long long extent, bool kernel = false) {
      if (extent > 1) part.spine.push_back({name, extent, 1, kernel});
    };
    if (has_g) part.spine.push_back({"g", g, 1, false});
    push("co", co_ext);
    push("h", oh);
    push("w", ow);
    push("ci", ci_ext);
    push("kh", spec.kh, true);
    push("kw", spec.kw, true);

    auto coord_for = [&](const std::string& name, long long extent,
                         long long scale_g, long long offset) -> AffineExpr {
      std::vector<AffineExpr> terms;
      if (has_g && scale_g != 0)
        terms.push_back(AffineExpr::mul(AffineExpr::variable("g"), scale_g));
      if (extent > 1) terms.push_back(AffineExpr::variable(name));
      terms.push_back(AffineExpr::constant(offset));
      return simplify(AffineExpr::sum(std::move(terms)), ExtentMap{});
    };

    AffineExpr co_coord = coord_for("co", co_ext, co_ext, r.begin);
    AffineExpr ci_coord = coord_for("ci", ci_ext, ci_ext, 0);
    AffineExpr h_coord = oh > 1 ? AffineExpr::variable("h") : AffineExpr::constant(0);
    AffineExpr w_coord = ow > 1 ? AffineExpr::variable("w") : AffineExpr::constant(0);
    AffineExpr kh_coord = has_kh ? AffineExpr::variable("kh") : AffineExpr::constant(0);
    AffineExpr kw_coord = has_kw ? AffineExpr::variable("kw") : AffineExpr::constant(0);

    auto v = [](const std::string& n) { return AffineExpr::variable(n); };

    // Input row index: stride*h - pad + kh (and likewise for columns).
    auto in_idx = [&](const std::string& sp, long long kdim, bool has_k,
                      const std::string& kn) {
      std::vector<AffineExpr> terms;
      terms.push_back(AffineExpr::mul(v(sp), spec.stride));
      if (has_k) terms.push_back(v(kn));
      if (spec.pad != 0) terms.push_back(AffineExpr::constant(-spec.pad));
      (void)kdim;
      ExtentMap none;
      return simplify(AffineExpr::sum(std::move(terms)), none);
    };

    Statement s1;
    s1.id = "S1";
    s1.kind = StmtKind::Init;
    s1.domain = {"co", "h", "w"};
    s1.coord = {{"co", co_coord}, {"h", h_coord}, {"w", w_coord}};
    s1.accesses.push_back({"O", {v("co"), v("h"), v("w")}, AccessMode::Write, false});

    Statement s2;
    s2.id = "S2";
    s2.kind = StmtKind::Mac;
    s2.domain = {"co", "h", "w", "ci"};
    if (has_kh) s2.domain.push_back("kh");
    if (has_kw) s2.domain.push_back("kw");
    s2.coord = {{"co", co_coord}, {"h", h_coord}, {"w", w_coord}, {"ci", ci_coord}};
    if (has_kh) s2.coord["kh"] = kh_coord;
    if (has_kw) s2.coord["kw"] = kw_coord;
    s2.accesses.push_back(
        {"O", {v("co"), v("h"), v("w")}, AccessMode::ReadModifyWrite, false});
    s2.accesses.push_back({"K",
                           {v("co"), v("ci"), has_kh ? v("kh") : AffineExpr::constant(0),
                            has_kw ? v("kw") : AffineExpr::constant(0)},
                           AccessMode::Read, false});
    s2.accesses.push_back({"I",
                           {v("ci"), in_idx("h", spec.kh, has_kh, "kh"),
                            in_idx("w", spec.kw, has_kw, "kw")},
                           AccessMode::Read, spec.pad > 0});

    part.stmts.push_back(std::move(s1));
    part.stmts.push_back(std::move(s2));
    nest.parts.push_back(std::move(part));
  }
  return nest;
}

// Rebuilds the ConvSpec a transformed nest realizes, when representable.
inline std::optional<ConvSpec> derived_spec(const LoopNest& nest) {
  if (!nest.provenance) return std::nullopt;
  ConvSpec spec = *nest.provenance;
  if (nest.parts.size() == 1) {
    if (nest.parts[0].group_factor < 0) return std::nullopt;
    spec.groups = nest.parts[0].group_factor;
    spec.channel_splits.clear();
  } else {
    std::vector<ChannelSplit> splits;
    for (const auto& p : nest.parts) {
      if (!p.co_range || p.group_factor < 0) return std::nullopt;
      splits.push_back({p.co_range->first, p.co_range->second, p.group_factor});
    }
    spec.channel_splits = std::move(splits);
  }
  try {
    spec.validate();
  } catch (const InvalidSpec&) {
    return std::nullopt;
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string to_text(const LoopNest& nest) {
  std::ostringstream os;
  std::vector<Block> blocks = compute_blocks(nest);
  int last_part = -1;
  for (const Block& b : blocks) {
    if (b.part != last_part) {
      os << "part " << b.part << ":\n";
      last_part = b.part;
    }
    const NestPart& part = nest.parts[b.part];
    ExtentMap ext;
    for (const auto& iv : b.iters) ext[iv.name] = iv.extent;
    auto indent = [&](int depth) { return std::string(2 * (depth + 1), ' '); };
    auto access_str = [&](const Statement& st, const AccessMap& acc) {
      std::string s = acc.zero_pad ? "zext " + acc.tensor : acc.tensor;
      s += "[";
      for (size_t i = 0; i < acc.indices.size(); ++i) {
        AffineExpr composed = acc.indices[i];
        for (const auto& [dv, ce] : st.coord) composed = substitute(composed, dv, ce);
        if (i) s += ", ";
        s += to_string(simplify(composed, ext));
      }
      s += "]";
      return s;
    };
    auto emit_stmts_at = [&](size_t depth) {
      for (auto [si, sd] : b.stmts) {
        if (static_cast<size_t>(sd) != depth) continue;
        const Statement& st = part.stmts[si];
        os << indent(static_cast<int>(depth)) << st.id
           << (st.kind == StmtKind::Init ? " init: " : " mac: ");
        if (st.kind == StmtKind::Init) {
          os << access_str(st, st.accesses[0]) << " = 0";
        } else {
          std::string out, rhs;
          for (const auto& acc : st.accesses) {
            if (acc.mode == AccessMode::ReadModifyWrite)
              out = access_str(st, acc);
            else {
              if (!rhs.empty()) rhs += " * ";
              rhs += access_str(st, acc);
            }
          }
          os << out << " += " << rhs;
        }
        os << "\n";
      }
    };
    for (size_t d = 0; d <= b.iters.size(); ++d) {
      emit_stmts_at(d);
      if (d == b.iters.size()) break;
      const IterVar& iv = b.iters[d];
      os << indent(static_cast<int>(d)) << "for " << iv.name << " in [0, "
         << iv.extent << ") step 1";
      if (iv.unroll > 1) os << " unroll " << iv.unroll;
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace nestopt
