// Acceptance harness: runs the eight end-to-end acceptance checks and prints
// one [PASS]/[FAIL] line per criterion. Exits nonzero when any check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "nestopt/nestopt.hpp"

using namespace nestopt;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int idx, const std::string& name, bool ok, double seconds,
            const std::string& note = "") {
  std::printf("[%s] %d. %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", idx,
              name.c_str(), seconds, note.empty() ? "" : " - ",
              note.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

ConvSpec make_spec(long long ci, long long co, long long h, long long w,
                   long long kh = 1, long long kw = 1, long long pad = 0,
                   long long groups = 1, long long b = 1) {
  ConvSpec s;
  s.ci = ci;
  s.co = co;
  s.h = h;
  s.w = w;
  s.kh = kh;
  s.kw = kw;
  s.pad = pad;
  s.groups = groups;
  s.bottleneck_out = b;
  return s;
}

TensorI random_tensor(std::vector<long long> shape, std::mt19937_64& rng) {
  TensorI t(std::move(shape));
  for (auto& v : t.data) v = static_cast<long long>(rng() % 17) - 8;
  return t;
}

// Applies 1..3 random applicable semantic rewrites.
LoopNest random_semantic(const LoopNest& nest, std::mt19937_64& rng) {
  LoopNest cur = nest;
  long long len = 1 + rng() % 3;
  for (long long step = 0; step < len; ++step) {
    for (int attempt = 0; attempt < 25; ++attempt) {
      const NestPart& part = cur.parts[rng() % cur.parts.size()];
      int target = 0;
      for (size_t p = 0; p < cur.parts.size(); ++p)
        if (&cur.parts[p] == &part) target = static_cast<int>(p);
      if (part.spine.empty()) break;
      auto pick = [&] { return part.spine[rng() % part.spine.size()].name; };
      try {
        switch (rng() % 5) {
          case 0: cur = interchange(cur, pick(), pick(), target); break;
          case 1: cur = strip_mine(cur, pick(), 2, target); break;
          case 2: cur = tile(cur, pick(), 2, target); break;
          case 3: cur = unroll(cur, pick(), 2, target); break;
          default: {
            size_t i = rng() % part.spine.size();
            if (i + 1 >= part.spine.size()) continue;
            cur = fuse(cur, part.spine[i].name, part.spine[i + 1].name, target);
            break;
          }
        }
        break;
      } catch (const TransformError&) {
      }
    }
  }
  return cur;
}

Network search_network() {
  Network net;
  net.seed = 42;
  net.num_classes = 10;
  net.layers.push_back({make_spec(3, 8, 6, 6, 3, 3, 1), true});
  net.layers.push_back({make_spec(8, 8, 6, 6, 3, 3, 1), true});
  net.layers.push_back({make_spec(8, 8, 6, 6, 3, 3, 1), true});
  net.layers.push_back({make_spec(8, 8, 6, 6, 3, 3, 1), true});
  net.init_weights();
  return net;
}

// --- criterion 1 -----------------------------------------------------------

void criterion1() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  int total = 0, good = 0;
  for (long long g : {1LL, 2LL, 4LL})
    for (long long b : {1LL, 2LL, 4LL})
      for (long long k : {1LL, 3LL})
        for (int rep = 0; rep < 14; ++rep) {
          ConvSpec s = make_spec(4, 8, 4, 4, k, k, k > 1 ? 1 : 0, g, b);
          if (s.co_eff() % s.groups != 0) continue;
          LoopNest nest = conv_nest(s);
          LoopNest xf = random_semantic(nest, rng);
          ExecEnv<long long> env;
          env.bindings["I"] = random_tensor({s.ci, s.h, s.w}, rng);
          env.bindings["K"] =
              random_tensor({s.co_eff(), s.ci, s.kh, s.kw}, rng);
          ++total;
          if (execute(nest, env) == execute(xf, env)) ++good;
        }
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream note;
  note << good << "/" << total << " randomized specs oracle-equal";
  report(1, "interpreter oracle equivalence under random semantic rewrites",
         total >= 200 && good == total && secs < 60.0, secs, note.str());
}

// --- criterion 2 -----------------------------------------------------------

LoopNest chain_nest(long long n, long long offset, bool rmw_read) {
  LoopNest nest;
  NestPart part;
  part.spine = {{"i", n, 1, false}};
  Statement st;
  st.id = "S";
  st.kind = StmtKind::Mac;
  st.domain = {"i"};
  st.coord["i"] = AffineExpr::variable("i");
  st.accesses.push_back(
      {"T", {AffineExpr::variable("i")}, AccessMode::ReadModifyWrite, false});
  st.accesses.push_back(
      {rmw_read ? "T" : "X",
       {AffineExpr::add(AffineExpr::variable("i"), AffineExpr::constant(offset))},
       AccessMode::Read, false});
  part.stmts.push_back(st);
  nest.parts.push_back(part);
  return nest;
}

void criterion2() {
  auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream note;

  // Legal rewrites must all pass.
  std::mt19937_64 rng(2);
  ConvSpec s = make_spec(4, 8, 4, 4, 3, 3, 1);
  LoopNest nest = conv_nest(s);
  int legal = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    LoopNest xf = random_semantic(nest, rng);
    if (check_semantic_legality(nest, xf).verdict == Verdict::Legal) ++legal;
  }
  if (legal != trials) ok = false;
  note << legal << "/" << trials << " legal rewrites accepted";

  // Hand-injected illegal rewrites must all be caught.
  int caught = 0, injected = 0;
  auto expect_illegal = [&](const LoopNest& orig, const LoopNest& bad) {
    ++injected;
    if (check_semantic_legality(orig, bad).verdict == Verdict::Illegal)
      ++caught;
  };
  {  // 1: init statements rescheduled after every accumulation
    LoopNest orig = conv_nest(make_spec(2, 2, 2, 2));
    LoopNest bad = orig;
    NestPart inits;
    inits.spine = bad.parts[0].spine;
    inits.stmts.push_back(bad.parts[0].stmts[0]);
    bad.parts[0].stmts.erase(bad.parts[0].stmts.begin());
    bad.parts.push_back(inits);
    expect_illegal(orig, bad);
  }
  {  // 2: producer part swapped behind its consumer
    LoopNest orig;
    orig.parts = chain_nest(4, 0, false).parts;
    NestPart cons = orig.parts[0];
    cons.stmts[0].id = "C";
    cons.stmts[0].accesses[0].tensor = "U";
    cons.stmts[0].accesses[1].tensor = "T";
    orig.parts.push_back(cons);
    LoopNest bad = orig;
    std::swap(bad.parts[0], bad.parts[1]);
    expect_illegal(orig, bad);
  }
  {  // 3: forward-shifted consumer interleaved into the producer loop
    LoopNest orig;
    orig.parts = chain_nest(4, 0, false).parts;
    NestPart cons = orig.parts[0];
    cons.stmts[0].id = "C";
    cons.stmts[0].accesses[0].tensor = "U";
    cons.stmts[0].accesses[1].tensor = "T";
    cons.stmts[0].accesses[1].indices[0] =
        AffineExpr::add(AffineExpr::variable("i"), AffineExpr::constant(1));
    orig.parts.push_back(cons);
    LoopNest bad;
    NestPart merged = orig.parts[0];
    merged.stmts.push_back(orig.parts[1].stmts[0]);
    bad.parts.push_back(merged);
    expect_illegal(orig, bad);
  }
  {  // 4: write-after-write order swapped
    LoopNest orig;
    NestPart part;
    part.spine = {{"i", 4, 1, false}};
    for (const char* id : {"A", "C"}) {
      Statement st;
      st.id = id;
      st.kind = StmtKind::Init;
      st.domain = {"i"};
      st.coord["i"] = AffineExpr::variable("i");
      st.accesses.push_back(
          {"T", {AffineExpr::variable("i")}, AccessMode::Write, false});
      part.stmts.push_back(st);
    }
    orig.parts.push_back(part);
    LoopNest bad = orig;
    std::swap(bad.parts[0].stmts[0], bad.parts[0].stmts[1]);
    expect_illegal(orig, bad);
  }
  {  // 5: reversal of a loop carrying a recurrence
    LoopNest orig = chain_nest(4, -1, true);
    LoopNest bad = orig;
    bad.parts[0].stmts[0].coord["i"] = AffineExpr::add(
        AffineExpr::mul(AffineExpr::variable("i"), -1), AffineExpr::constant(3));
    expect_illegal(orig, bad);
  }
  {  // 6: coordinate rewrite that collapses distinct instances
    LoopNest orig = conv_nest(make_spec(4, 2, 1, 1));
    LoopNest bad = orig;
    bad.parts[0].stmts[1].coord["ci"] =
        AffineExpr::floordiv(AffineExpr::variable("ci"), 2);
    expect_illegal(orig, bad);
  }
  if (caught != injected) ok = false;
  note << "; " << caught << "/" << injected << " injected violations caught";

  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  report(2, "dependence-based legality soundness", ok, secs, note.str());
}

// --- criterion 3 -----------------------------------------------------------

void criterion3() {
  auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream note;

  ConvSpec s = make_spec(8, 8, 6, 6, 3, 3, 1);
  LoopNest nest = conv_nest(s);
  long long base = count_macs(nest);
  for (long long g : {2LL, 4LL, 8LL}) {
    long long got = count_macs(group(nest, "co", "ci", g));
    if (got * g != base) {
      ok = false;
      note << "group " << g << " gave " << got << "; ";
    }
  }
  ConvSpec bs = make_spec(8, 16, 6, 6, 3, 3, 1);
  LoopNest bnest = conv_nest(bs);
  long long bbase = count_macs(bnest);
  for (long long b : {2LL, 4LL}) {
    long long got = count_macs(bottleneck(bnest, "co", b));
    if (got * b != bbase) {
      ok = false;
      note << "bottleneck " << b << " gave " << got << "; ";
    }
  }
  long long dw = count_macs(depthwise(nest));
  if (dw * s.co != base) {
    ok = false;
    note << "depthwise gave " << dw << "; ";
  }
  if (ok)
    note << "group /G, bottleneck /B, depthwise /Co all exact";

  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  report(3, "neural rewrite cost factors", ok, secs, note.str());
}

// --- criterion 4 -----------------------------------------------------------

void criterion4() {
  auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream note;
  for (long long b : {2LL, 4LL}) {
    ConvSpec s = make_spec(4, 8, 8, 8, 3, 3, 1);
    LoopNest nest = conv_nest(s);
    LoopNest sb = spatial_bottleneck(nest, b);
    ConvSpec direct = s;
    direct.set_bottleneck_spatial(b);
    if (to_text(sb) != to_text(conv_nest(direct))) {
      ok = false;
      note << "b=" << b << " text mismatch; ";
    }
    if (count_macs(sb) * b * b != count_macs(nest)) {
      ok = false;
      note << "b=" << b << " cost mismatch; ";
    }
  }
  if (ok) note << "b in {2,4} matches direct construction and cost /b^2";
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  report(4, "spatial bottleneck composition on an 8x8 layer", ok, secs,
         note.str());
}

// --- criterion 5 -----------------------------------------------------------

void criterion5() {
  auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream note;

  // Closed-form point check of the channel score.
  TensorF a({1, 1, 1}), g({1, 1, 1});
  a.data = {2.0};
  g.data = {3.0};
  double v = fisher_channel(a, g);
  if (std::abs(v - 18.0) > 1e-10 * 18.0) {
    ok = false;
    note << "point score " << v << " != 18; ";
  }

  // Analytic activation gradients vs central finite differences.
  Network net;
  net.seed = 21;
  net.num_classes = 5;
  net.layers.push_back({make_spec(2, 4, 5, 5, 3, 3, 1), true});
  net.layers.push_back({make_spec(4, 4, 5, 5, 3, 3, 1), true});
  net.layers.push_back({make_spec(4, 3, 5, 5, 1, 1, 0), true});
  net.init_weights();
  Batch batch = make_batch(net, 3, 17);
  ForwardCache fc = forward(net, batch);
  auto grads = activation_gradients(net, batch, fc);
  const double eps = 1e-5;
  int checked = 0, agreeing = 0;
  double worst = 0.0;
  for (size_t l = 0; l < net.layers.size(); ++l) {
    for (size_t n = 0; n < batch.inputs.size(); ++n) {
      const TensorF& act = fc.acts[n][l + 1];
      for (size_t probe = 0; probe < 8; ++probe) {
        size_t i = (probe * 131 + n * 17 + l * 5) % act.data.size();
        TensorF up = act, down = act;
        up.data[i] += eps;
        down.data[i] -= eps;
        double fd = (loss_with_activation(net, batch, fc, n, l, up) -
                     loss_with_activation(net, batch, fc, n, l, down)) /
                    (2.0 * eps);
        double an = grads[n][l].data[i];
        double rel = std::abs(fd - an) / std::max(1e-8, std::abs(fd));
        worst = std::max(worst, rel);
        ++checked;
        if (rel <= 1e-4) ++agreeing;
      }
    }
  }
  if (agreeing != checked) ok = false;
  note << agreeing << "/" << checked
       << " gradient probes within 1e-4 of finite differences (worst rel "
       << worst << ")";

  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  report(5, "channel scores and gradients against independent numerics",
         ok && secs < 30.0, secs, note.str());
}

// --- criterion 6 -----------------------------------------------------------

void criterion6() {
  auto t0 = Clock::now();
  Network net = search_network();
  int rejected = 0, identity_ok = 0;
  const int seeds = 50;
  for (int seed = 1; seed <= seeds; ++seed) {
    Batch batch = make_batch(net, 8, static_cast<std::uint64_t>(seed));
    FisherReport origin = fisher_potential(net, batch);
    if (fisher_accepts(origin, origin)) ++identity_ok;
    // Degenerate rewrite: bottleneck every layer down to one output channel.
    Network cand = net;
    for (auto& layer : cand.layers)
      layer.spec.bottleneck_out = layer.spec.co;
    repair_network(cand);
    FisherReport after = fisher_potential(cand, batch);
    if (!fisher_accepts(origin, after)) ++rejected;
  }
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream note;
  note << rejected << "/" << seeds << " degenerate rewrites rejected, "
       << identity_ok << "/" << seeds << " identities accepted";
  report(6, "saliency-based rejection across 50 batch seeds",
         rejected * 10 >= seeds * 9 && identity_ok == seeds && secs < 120.0,
         secs, note.str());
}

// --- criterion 7 -----------------------------------------------------------

void criterion7() {
  auto t0 = Clock::now();
  Network net = search_network();
  SearchConfig cfg;
  cfg.candidate_count = 1000;
  cfg.max_seq_len = 4;
  cfg.seed = 7;
  cfg.batch_n = 4;
  cfg.batch_seed = 1;
  SearchReport r1 = run_search(net, cfg);
  double first = std::chrono::duration<double>(Clock::now() - t0).count();
  SearchReport r2 = run_search(net, cfg);
  nlohmann::json j1 = search_report_to_json(r1);
  nlohmann::json j2 = search_report_to_json(r2);
  j1.erase("timing");
  j2.erase("timing");
  bool identical = j1.dump() == j2.dump();
  bool buckets = r1.survivors + r1.rejected_semantic + r1.rejected_fisher ==
                 r1.candidates.size();
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream note;
  note << r1.candidates.size() << " candidates in " << first << "s ("
       << r1.survivors << " survivors, " << r1.rejected_semantic
       << " semantic / " << r1.rejected_fisher << " saliency rejections), "
       << (identical ? "reruns identical" : "reruns differ");
  report(7, "1000-candidate randomized search, reproducible modulo timing",
         identical && buckets && first < 300.0, secs, note.str());
}

// --- criterion 8 -----------------------------------------------------------

void criterion8() {
  auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream note;
  ConvSpec s = make_spec(8, 32, 8, 8, 3, 3, 1);
  LoopNest nest = conv_nest(s);

  auto check = [&](const char* label, const std::vector<Transform>& steps,
                   const std::vector<std::string>& want) {
    TransformSequence seq{steps, label};
    if (seq.kinds() != want) {
      ok = false;
      note << label << " tokens diverge; ";
    }
    try {
      nestopt::apply(nest, seq);
    } catch (const Error& e) {
      ok = false;
      note << label << " failed to apply: " << e.what() << "; ";
    }
  };
  check("sequence1", sequence1_steps(nest, 2, 2),
        {"split", "interchange", "group", "interchange", "fuse"});
  check("sequence2", sequence2_steps(nest, 16, 2),
        {"unroll", "group", "interchange"});
  check("sequence3", sequence3_steps(nest, 2, 4),
        {"split", "group", "interchange", "group"});
  if (ok) note << "all named sequences expand token-for-token";
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  report(8, "named transformation sequences expand to their step lists", ok,
         secs, note.str());
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  if (failures) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
