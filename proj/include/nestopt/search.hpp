#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "nestopt/errors.hpp"
#include "nestopt/interp.hpp"
#include "nestopt/ir.hpp"
#include "nestopt/nnet.hpp"
#include "nestopt/transforms.hpp"

namespace nestopt {

struct ParamRanges {
  std::vector<long long> bottleneck{2, 4};
  std::vector<long long> group{2, 4, 8};
  std::vector<long long> tile{2, 4};
  std::vector<long long> strip{2, 4};
  std::vector<long long> unroll{2, 4, 16};
};

struct SearchConfig {
  int candidate_count = 1000;
  int max_seq_len = 6;
  std::vector<TransformKind> kinds = {
      TransformKind::Interchange, TransformKind::StripMine,
      TransformKind::Tile,        TransformKind::Unroll,
      TransformKind::Bottleneck,  TransformKind::Group,
      TransformKind::Depthwise};
  ParamRanges ranges;
  std::vector<bool> layer_mask;  // empty = every layer modifiable
  std::uint64_t seed = 0;
  long long cap = kDefaultInstanceCap;
  int jobs = 1;
  size_t batch_n = 32;
  std::uint64_t batch_seed = 1;

  void validate() const {
    if (candidate_count < 0) throw ConfigError("candidate_count must be >= 0");
    if (max_seq_len < 0) throw ConfigError("max_seq_len must be >= 0");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (kinds.empty()) throw ConfigError("no transform kinds allowed");
  }

  bool layer_allowed(size_t l) const {
    return layer_mask.empty() || (l < layer_mask.size() && layer_mask[l]);
  }
};

enum class CandidateStatus { Survivor, RejectedSemantic, RejectedFisher };

inline const char* status_name(CandidateStatus s) {
  switch (s) {
    case CandidateStatus::Survivor: return "survivor";
    case CandidateStatus::RejectedSemantic: return "rejected_semantic";
    case CandidateStatus::RejectedFisher: return "rejected_fisher";
  }
  return "?";
}

struct Candidate {
  std::vector<TransformSequence> layer_seqs;  // one per network layer
  bool neural = false;
  CandidateStatus status = CandidateStatus::Survivor;
  std::string reason;
  long long macs = 0;
  double fisher_total = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> fisher_per_layer;
};

inline long long network_macs(const Network& net) {
  long long total = 0;
  for (const auto& l : net.layers) total += count_macs(conv_nest(l.spec));
  return total;
}

// ---------------------------------------------------------------------------
// Candidate drawing: uniform over allowed kinds, then uniform over valid
// parameters; draws that do not apply to the current nest are re-drawn.

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t idx) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (idx + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& xs) {
  return xs[std::uniform_int_distribution<size_t>(0, xs.size() - 1)(rng)];
}

// Draws one applicable transform against the current nest, or nothing after
// a bounded number of attempts.
inline std::optional<Transform> draw_step(std::mt19937_64& rng,
                                          const LoopNest& nest,
                                          const SearchConfig& cfg,
                                          LoopNest& next) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    TransformKind kind = pick(rng, cfg.kinds);
    int target = static_cast<int>(std::uniform_int_distribution<size_t>(
        0, nest.parts.size() - 1)(rng));
    const NestPart& part = nest.parts[static_cast<size_t>(target)];
    if (part.spine.empty()) continue;
    auto iter = [&]() -> std::string {
      return pick(rng, part.spine).name;
    };
    Transform t;
    t.kind = kind;
    t.target = target;
    switch (kind) {
      case TransformKind::Interchange:
      case TransformKind::Group:
      case TransformKind::Fuse:
        t.a = iter();
        t.b = iter();
        if (t.a == t.b) continue;
        if (kind == TransformKind::Group) t.factor = pick(rng, cfg.ranges.group);
        break;
      case TransformKind::StripMine:
        t.a = iter();
        t.factor = pick(rng, cfg.ranges.strip);
        break;
      case TransformKind::Tile:
        t.a = iter();
        t.factor = pick(rng, cfg.ranges.tile);
        break;
      case TransformKind::Unroll:
        t.a = iter();
        t.factor = pick(rng, cfg.ranges.unroll);
        break;
      case TransformKind::Bottleneck:
        t.a = iter();
        t.factor = pick(rng, cfg.ranges.bottleneck);
        break;
      case TransformKind::SpatialBottleneck:
        t.factor = pick(rng, cfg.ranges.bottleneck);
        break;
      case TransformKind::Split: {
        t.a = iter();
        const IterVar* iv = part.find(t.a);
        if (!iv || iv->extent % 2 != 0) continue;
        t.partition = {iv->extent / 2, iv->extent / 2};
        break;
      }
      case TransformKind::Depthwise:
      case TransformKind::Simplify:
      case TransformKind::Sequence1:
      case TransformKind::Sequence2:
      case TransformKind::Sequence3:
        break;
    }
    try {
      LoopNest candidate = apply(nest, t);
      // Keep candidates representable as convolution specs so the rewritten
      // network can be rebuilt and scored.
      if (t.cls() == TransformClass::Neural && !derived_spec(candidate)) continue;
      next = std::move(candidate);
      return t;
    } catch (const TransformError&) {
      continue;
    }
  }
  return std::nullopt;
}

}  // namespace detail

inline std::vector<Candidate> draw_candidates(const Network& origin,
                                              const SearchConfig& cfg) {
  cfg.validate();
  std::vector<Candidate> out;
  out.reserve(static_cast<size_t>(cfg.candidate_count));
  for (int idx = 0; idx < cfg.candidate_count; ++idx) {
    std::mt19937_64 rng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(idx)));
    Candidate cand;
    for (size_t l = 0; l < origin.layers.size(); ++l) {
      TransformSequence seq;
      if (cfg.layer_allowed(l)) {
        int len = std::uniform_int_distribution<int>(0, cfg.max_seq_len)(rng);
        LoopNest nest = conv_nest(origin.layers[l].spec);
        for (int s = 0; s < len; ++s) {
          LoopNest next;
          auto t = detail::draw_step(rng, nest, cfg, next);
          if (!t) break;
          seq.steps.push_back(*t);
          nest = std::move(next);
          if (t->cls() == TransformClass::Neural) cand.neural = true;
        }
      }
      cand.layer_seqs.push_back(std::move(seq));
    }
    out.push_back(std::move(cand));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidate evaluation

inline void evaluate_candidate(Candidate& cand, const Network& origin,
                               const SearchConfig& cfg, const Batch& batch,
                               const FisherReport& origin_fisher) {
  std::vector<ConvSpec> specs;
  for (size_t l = 0; l < origin.layers.size(); ++l) {
    LoopNest nest = conv_nest(origin.layers[l].spec);
    // Consecutive semantic steps are verified as one run: dependence
    // preservation of the run's endpoint against its start implies the
    // run is a valid reordering.
    LoopNest run_origin = nest;
    bool pending_semantic = false;
    auto flush = [&](size_t s) {
      if (!pending_semantic) return true;
      LegalityResult lr = check_semantic_legality(run_origin, nest, cfg.cap);
      pending_semantic = false;
      if (lr.verdict == Verdict::Illegal) {
        cand.status = CandidateStatus::RejectedSemantic;
        cand.reason = "layer " + std::to_string(l) + " steps up to " +
                      std::to_string(s) + ": " + lr.reason;
        return false;
      }
      return true;
    };
    for (size_t s = 0; s < cand.layer_seqs[l].steps.size(); ++s) {
      const Transform& t = cand.layer_seqs[l].steps[s];
      try {
        if (t.cls() == TransformClass::Semantic) {
          nest = apply(nest, t);
          pending_semantic = true;
        } else {
          if (!flush(s)) return;
          nest = apply(nest, t);
          run_origin = nest;
        }
      } catch (const Error& e) {
        cand.status = CandidateStatus::RejectedSemantic;
        cand.reason = "layer " + std::to_string(l) + " step " +
                      std::to_string(s + 1) + " (" + to_dsl(t) + "): " + e.what();
        return;
      }
    }
    try {
      if (!flush(cand.layer_seqs[l].steps.size())) return;
    } catch (const Error& e) {
      cand.status = CandidateStatus::RejectedSemantic;
      cand.reason = "layer " + std::to_string(l) + ": " + e.what();
      return;
    }
    std::optional<ConvSpec> spec = derived_spec(nest);
    if (!spec) {
      cand.status = CandidateStatus::RejectedSemantic;
      cand.reason = "layer " + std::to_string(l) +
                    ": rewritten nest is not a convolution operator";
      return;
    }
    specs.push_back(*spec);
  }

  Network cand_net = origin;
  for (size_t l = 0; l < specs.size(); ++l) cand_net.layers[l].spec = specs[l];
  try {
    repair_network(cand_net);
  } catch (const Error& e) {
    cand.status = CandidateStatus::RejectedSemantic;
    cand.reason = std::string("network repair failed: ") + e.what();
    return;
  }
  const ConvSpec& in0 = origin.layers[0].spec;
  const ConvSpec& in1 = cand_net.layers[0].spec;
  if (in0.ci != in1.ci || in0.h != in1.h || in0.w != in1.w) {
    cand.status = CandidateStatus::RejectedSemantic;
    cand.reason = "network input shape changed";
    return;
  }
  cand.macs = network_macs(cand_net);

  if (!cand.neural) {
    cand.status = CandidateStatus::Survivor;
    cand.fisher_total = origin_fisher.total;
    cand.fisher_per_layer = origin_fisher.per_layer;
    return;
  }
  FisherReport rep = fisher_potential(cand_net, batch);
  cand.fisher_total = rep.total;
  cand.fisher_per_layer = rep.per_layer;
  if (!fisher_accepts(origin_fisher, rep)) {
    cand.status = CandidateStatus::RejectedFisher;
    std::ostringstream os;
    os << "fisher potential dropped: " << rep.total << " < "
       << origin_fisher.total;
    cand.reason = os.str();
    return;
  }
  cand.status = CandidateStatus::Survivor;
}

inline void evaluate_all(std::vector<Candidate>& cands, const Network& origin,
                         const SearchConfig& cfg, const Batch& batch,
                         const FisherReport& origin_fisher) {
  int jobs = std::max(1, cfg.jobs);
  if (jobs == 1 || cands.size() < 2) {
    for (auto& c : cands) evaluate_candidate(c, origin, cfg, batch, origin_fisher);
    return;
  }
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= cands.size()) return;
      evaluate_candidate(cands[i], origin, cfg, batch, origin_fisher);
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

// Ranked survivor indices: MAC cost ascending, then Fisher total descending,
// then draw order.
inline std::vector<size_t> rank_survivors(const std::vector<Candidate>& cands) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < cands.size(); ++i)
    if (cands[i].status == CandidateStatus::Survivor) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (cands[a].macs != cands[b].macs) return cands[a].macs < cands[b].macs;
    if (cands[a].fisher_total != cands[b].fisher_total)
      return cands[a].fisher_total > cands[b].fisher_total;
    return a < b;
  });
  return idx;
}

// ---------------------------------------------------------------------------
// End-to-end pipeline and report

struct SearchReport {
  SearchConfig config;
  long long origin_macs = 0;
  double origin_fisher = 0.0;
  std::vector<Candidate> candidates;
  std::vector<size_t> survivors_ranked;
  size_t survivors = 0, rejected_semantic = 0, rejected_fisher = 0;
  double draw_ms = 0.0, eval_ms = 0.0, total_ms = 0.0;
};

inline SearchReport run_search(const Network& origin, const SearchConfig& cfg) {
  cfg.validate();
  origin.validate();
  auto t0 = std::chrono::steady_clock::now();
  SearchReport rep;
  rep.config = cfg;
  rep.origin_macs = network_macs(origin);
  Batch batch = make_batch(origin, cfg.batch_n, cfg.batch_seed);
  FisherReport origin_fisher = fisher_potential(origin, batch);
  rep.origin_fisher = origin_fisher.total;

  auto t1 = std::chrono::steady_clock::now();
  rep.candidates = draw_candidates(origin, cfg);
  auto t2 = std::chrono::steady_clock::now();
  evaluate_all(rep.candidates, origin, cfg, batch, origin_fisher);
  auto t3 = std::chrono::steady_clock::now();

  rep.survivors_ranked = rank_survivors(rep.candidates);
  for (const auto& c : rep.candidates) {
    switch (c.status) {
      case CandidateStatus::Survivor: ++rep.survivors; break;
      case CandidateStatus::RejectedSemantic: ++rep.rejected_semantic; break;
      case CandidateStatus::RejectedFisher: ++rep.rejected_fisher; break;
    }
  }
  rep.draw_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  rep.eval_ms = std::chrono::duration<double, std::milli>(t3 - t2).count();
  rep.total_ms = std::chrono::duration<double, std::milli>(t3 - t0).count();
  return rep;
}

inline TransformKind kind_from_name(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (int k = 0; k <= static_cast<int>(TransformKind::Sequence3); ++k)
    if (lower == kind_name(static_cast<TransformKind>(k)))
      return static_cast<TransformKind>(k);
  if (lower == "reorder") return TransformKind::Interchange;
  throw ConfigError("bad transform kind '" + name + "'");
}

inline nlohmann::json search_config_to_json(const SearchConfig& cfg) {
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : cfg.kinds) kinds.push_back(kind_name(k));
  nlohmann::json j{{"schema_version", 1},
                   {"candidate_count", cfg.candidate_count},
                   {"max_seq_len", cfg.max_seq_len},
                   {"kinds", kinds},
                   {"seed", cfg.seed},
                   {"cap", cfg.cap},
                   {"jobs", cfg.jobs},
                   {"batch", {{"n", cfg.batch_n}, {"seed", cfg.batch_seed}}},
                   {"params",
                    {{"bottleneck", cfg.ranges.bottleneck},
                     {"group", cfg.ranges.group},
                     {"tile", cfg.ranges.tile},
                     {"strip", cfg.ranges.strip},
                     {"unroll", cfg.ranges.unroll}}}};
  if (!cfg.layer_mask.empty()) j["layer_mask"] = cfg.layer_mask;
  return j;
}

inline SearchConfig search_config_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 1) != 1)
    throw ConfigError("unsupported search schema version");
  SearchConfig cfg;
  cfg.candidate_count = j.value("candidate_count", cfg.candidate_count);
  cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.cap = j.value("cap", cfg.cap);
  cfg.jobs = j.value("jobs", cfg.jobs);
  if (j.contains("batch")) {
    cfg.batch_n = j["batch"].value("n", cfg.batch_n);
    cfg.batch_seed = j["batch"].value("seed", cfg.batch_seed);
  }
  if (j.contains("kinds")) {
    cfg.kinds.clear();
    for (const auto& k : j["kinds"]) cfg.kinds.push_back(kind_from_name(k.get<std::string>()));
  }
  if (j.contains("params")) {
    const auto& p = j["params"];
    auto get = [&](const char* key, std::vector<long long>& out) {
      if (p.contains(key)) out = p[key].get<std::vector<long long>>();
    };
    get("bottleneck", cfg.ranges.bottleneck);
    get("group", cfg.ranges.group);
    get("tile", cfg.ranges.tile);
    get("strip", cfg.ranges.strip);
    get("unroll", cfg.ranges.unroll);
  }
  if (j.contains("layer_mask"))
    cfg.layer_mask = j["layer_mask"].get<std::vector<bool>>();
  cfg.validate();
  return cfg;
}

inline nlohmann::json search_report_to_json(const SearchReport& rep) {
  nlohmann::json cands = nlohmann::json::array();
  for (size_t i = 0; i < rep.candidates.size(); ++i) {
    const Candidate& c = rep.candidates[i];
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& s : c.layer_seqs) seqs.push_back(to_dsl(s));
    nlohmann::json cj{{"index", i},
                      {"sequences", seqs},
                      {"status", status_name(c.status)},
                      {"neural", c.neural},
                      {"macs", c.macs}};
    if (!c.reason.empty()) cj["reason"] = c.reason;
    if (std::isfinite(c.fisher_total)) {
      cj["fisher_total"] = c.fisher_total;
      cj["fisher_per_layer"] = c.fisher_per_layer;
    }
    cands.push_back(std::move(cj));
  }
  size_t n = rep.candidates.size();
  double rejection_rate =
      n ? double(rep.rejected_semantic + rep.rejected_fisher) / double(n) : 0.0;
  return nlohmann::json{
      {"schema_version", 1},
      {"config", search_config_to_json(rep.config)},
      {"origin", {{"macs", rep.origin_macs}, {"fisher_total", rep.origin_fisher}}},
      {"candidates", cands},
      {"survivors_ranked", rep.survivors_ranked},
      {"stats",
       {{"survivors", rep.survivors},
        {"rejected_semantic", rep.rejected_semantic},
        {"rejected_fisher", rep.rejected_fisher},
        {"rejection_rate", rejection_rate}}},
      {"timing",
       {{"draw_ms", rep.draw_ms}, {"eval_ms", rep.eval_ms},
        {"total_ms", rep.total_ms}}}};
}

inline std::string search_report_csv(const SearchReport& rep) {
  std::ostringstream os;
  os << "index,status,neural,macs,fisher_total,sequences,reason\n";
  auto quote = [](std::string s) {
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  for (size_t i = 0; i < rep.candidates.size(); ++i) {
    const Candidate& c = rep.candidates[i];
    std::string seqs;
    for (size_t l = 0; l < c.layer_seqs.size(); ++l) {
      if (l) seqs += "; ";
      seqs += to_dsl(c.layer_seqs[l]);
    }
    os << i << "," << status_name(c.status) << "," << (c.neural ? 1 : 0) << ","
       << c.macs << ",";
    if (std::isfinite(c.fisher_total)) os << c.fisher_total;
    os << "," << quote(seqs) << "," << quote(c.reason) << "\n";
  }
  return os.str();
}

inline void write_search_report(const SearchReport& rep,
                                const std::string& json_path,
                                const std::string& csv_path) {
  {
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot write '" + json_path + "'");
    out << search_report_to_json(rep).dump(2) << "\n";
  }
  {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write '" + csv_path + "'");
    out << search_report_csv(rep);
  }
}

}  // namespace nestopt
