#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "nestopt/interp.hpp"
#include "nestopt/ir.hpp"

using namespace nestopt;

namespace {
ConvSpec spec(long long ci, long long co, long long h, long long w,
              long long kh = 1, long long kw = 1, long long pad = 0,
              long long groups = 1) {
  ConvSpec s;
  s.ci = ci;
  s.co = co;
  s.h = h;
  s.w = w;
  s.kh = kh;
  s.kw = kw;
  s.pad = pad;
  s.groups = groups;
  return s;
}

long long count_stmt(const LoopNest& nest, const std::string& id) {
  long long n = 0;
  for_each_instance(nest, [&](const Instance&, const Statement& st) {
    if (st.id == id) ++n;
  });
  return n;
}
}  // namespace

TEST_CASE("spec validation rejects bad divisibility", "[ir]") {
  ConvSpec s = spec(3, 8, 4, 4);
  CHECK_NOTHROW(s.validate());
  s.groups = 3;
  CHECK_THROWS_AS(s.validate(), InvalidSpec);
  s = spec(4, 8, 4, 4);
  s.bottleneck_out = 3;
  CHECK_THROWS_AS(s.validate(), InvalidSpec);
  s = spec(4, 8, 5, 4);
  s.spatial_div_h = 2;
  CHECK_THROWS_AS(s.validate(), InvalidSpec);
}

TEST_CASE("single-point nest has one init and one mac instance", "[ir]") {
  LoopNest nest = conv_nest(spec(1, 1, 1, 1));
  CHECK(count_stmt(nest, "S1") == 1);
  CHECK(count_stmt(nest, "S2") == 1);
  auto insts = enumerate_instances(nest);
  REQUIRE(insts.size() == 2);
  // Init is scheduled before the accumulation on the shared cell.
  CHECK(nest.parts[0].stmts[insts[0].stmt].kind == StmtKind::Init);
}

TEST_CASE("pointwise nest matches the two-statement domain shape", "[ir]") {
  // S1 ranges over (co,h,w); S2 over (co,h,w,ci).
  LoopNest nest = conv_nest(spec(3, 5, 2, 2));
  const NestPart& part = nest.parts[0];
  REQUIRE(part.stmts.size() == 2);
  CHECK(part.stmts[0].domain == std::vector<std::string>{"co", "h", "w"});
  CHECK(part.stmts[1].domain == std::vector<std::string>{"co", "h", "w", "ci"});
  CHECK(count_stmt(nest, "S1") == 5 * 2 * 2);
  CHECK(count_stmt(nest, "S2") == 5 * 2 * 2 * 3);
}

TEST_CASE("3x3 padded nest enumerates 648 mac instances", "[ir]") {
  LoopNest nest = conv_nest(spec(2, 4, 3, 3, 3, 3, 1));
  CHECK(count_stmt(nest, "S2") == 4 * 3 * 3 * 2 * 3 * 3);
  CHECK(count_macs(nest) == 648);
}

TEST_CASE("all-bounds-2 nest has 8 init and 16 mac instances", "[ir]") {
  LoopNest nest = conv_nest(spec(2, 2, 2, 2));
  CHECK(count_stmt(nest, "S1") == 8);
  CHECK(count_stmt(nest, "S2") == 16);
}

TEST_CASE("grouped nest with unit bounds enumerates g x slices", "[ir]") {
  ConvSpec s = spec(4, 4, 1, 1);
  s.groups = 2;
  LoopNest nest = conv_nest(s);
  CHECK(count_stmt(nest, "S2") == 8);  // 2 groups x 2 co x 2 ci
}

TEST_CASE("enumeration is duplicate-free and in schedule order", "[ir]") {
  LoopNest nest = conv_nest(spec(2, 3, 2, 2, 3, 3, 1));
  std::set<std::pair<int, std::vector<long long>>> seen;
  long long n = 0;
  for_each_instance(nest, [&](const Instance& inst, const Statement&) {
    CHECK(seen.insert({inst.stmt, inst.coord}).second);
    ++n;
  });
  CHECK(n == instance_count(nest));
}

TEST_CASE("dependences pair init with every accumulation on its cell", "[ir]") {
  LoopNest nest = conv_nest(spec(3, 2, 1, 1));
  DependenceSet deps = compute_dependences(nest);
  // Per output cell: 1 init + 3 RMW. Pairs: 3 init->rmw + 3 rmw-rmw chains.
  long long init_pairs = 0, reduction_pairs = 0;
  for (const DepPair& p : deps.pairs) {
    if (p.reduction)
      ++reduction_pairs;
    else
      ++init_pairs;
    CHECK(p.src < p.dst);  // source precedes sink in schedule order
  }
  CHECK(init_pairs == 2 * 3);
  CHECK(reduction_pairs == 2 * 3);
  // The legality path drops the commutative chains at construction.
  DependenceSet lean = compute_dependences(nest, kDefaultInstanceCap, false);
  CHECK(lean.pairs.size() == 6);
}

TEST_CASE("read-only statements produce no dependences", "[ir]") {
  LoopNest nest;
  NestPart part;
  part.spine = {{"i", 4, 1, false}};
  Statement st;
  st.id = "R";
  st.kind = StmtKind::Mac;
  st.domain = {"i"};
  st.coord["i"] = AffineExpr::variable("i");
  st.accesses.push_back(
      {"T", {AffineExpr::variable("i")}, AccessMode::Read, false});
  // A read-modify-write is required for execution but not for dependence
  // analysis; keep this statement read-only on purpose.
  part.stmts.push_back(st);
  nest.parts.push_back(part);
  CHECK(compute_dependences(nest).pairs.empty());
}

TEST_CASE("cap aborts brute force", "[ir]") {
  LoopNest nest = conv_nest(spec(8, 8, 8, 8, 3, 3, 1));
  CHECK_THROWS_AS(compute_dependences(nest, 100), CapExceeded);
}

TEST_CASE("serialization is deterministic and loop-per-line", "[ir]") {
  LoopNest nest = conv_nest(spec(2, 4, 3, 3, 3, 3, 1));
  std::string a = to_text(nest);
  CHECK(a == to_text(nest));
  CHECK(a.find("for co in [0, 4) step 1") != std::string::npos);
  CHECK(a.find("S1 init") != std::string::npos);
  CHECK(a.find("S2 mac") != std::string::npos);
}

TEST_CASE("derived spec round-trips construction", "[ir]") {
  ConvSpec s = spec(8, 16, 8, 8, 3, 3, 1, 2);
  auto d = derived_spec(conv_nest(s));
  REQUIRE(d.has_value());
  CHECK(d->co == s.co);
  CHECK(d->ci == s.ci);
  CHECK(d->groups == s.groups);
}

TEST_CASE("instance counts equal trip-count products", "[ir]") {
  ConvSpec s = spec(4, 6, 4, 4, 3, 3, 1);
  LoopNest nest = conv_nest(s);
  CHECK(instance_count(nest) ==
        6 * 4 * 4         // S1 over (co,h,w)
            + 6 * 4 * 4 * 4 * 3 * 3);  // S2 over (co,h,w,ci,kh,kw)
}
