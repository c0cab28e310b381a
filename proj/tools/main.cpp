#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "nestopt/interp.hpp"
#include "nestopt/ir.hpp"
#include "nestopt/nnet.hpp"
#include "nestopt/search.hpp"
#include "nestopt/transforms.hpp"

namespace {

using namespace nestopt;

struct Options {
  std::string config;
  std::string out;
  std::string sequence;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<long long> caps;
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad JSON in '" + path + "': " + e.what());
  }
  return j;
}

ConvSpec load_spec(const std::string& path) {
  nlohmann::json j = read_json(path);
  if (j.value("schema_version", 1) != 1)
    throw ConfigError("unsupported spec schema version in '" + path + "'");
  try {
    return conv_spec_from_json(j.contains("spec") ? j["spec"] : j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad spec '" + path + "': " + e.what());
  }
}

std::ostream& open_out(std::ofstream& file, const Options& opt) {
  if (opt.out.empty()) return std::cout;
  file.open(opt.out);
  if (!file) throw IoError("cannot write '" + opt.out + "'");
  return file;
}

int cmd_dump(const Options& opt) {
  ConvSpec spec = load_spec(opt.config);
  LoopNest nest = conv_nest(spec);
  std::ofstream file;
  std::ostream& os = open_out(file, opt);
  os << to_text(nest);
  os << "macs: " << count_macs(nest) << "\n";
  return 0;
}

int cmd_transform(const Options& opt) {
  ConvSpec spec = load_spec(opt.config);
  LoopNest nest = conv_nest(spec);
  long long before = count_macs(nest);
  TransformSequence seq = parse_sequence(opt.sequence);
  LoopNest transformed = apply(nest, seq);
  long long after = count_macs(transformed);
  std::ofstream file;
  std::ostream& os = open_out(file, opt);
  os << to_text(transformed);
  os << "macs: " << before << " -> " << after << "\n";
  return 0;
}

int cmd_verify(const Options& opt) {
  ConvSpec spec = load_spec(opt.config);
  LoopNest nest = conv_nest(spec);
  TransformSequence seq = parse_sequence(opt.sequence);
  long long cap = opt.caps.value_or(kDefaultInstanceCap);
  LoopNest transformed = apply(nest, seq);

  LegalityResult lr;
  try {
    lr = check_semantic_legality(nest, seq, transformed, cap);
  } catch (const CapExceeded& e) {
    std::cout << "legality: cap exceeded (" << e.what()
              << "); retry with a smaller spec or larger --caps\n";
    return 4;
  }

  // Interpreter oracle: both nests are run on the same random tensors.
  std::uint64_t seed = opt.seed.value_or(0);
  std::mt19937_64 rng(seed);
  TensorI input({spec.ci, spec.h, spec.w});
  TensorI weights({spec.co_eff(), spec.ci, spec.kh, spec.kw});
  for (auto& v : input.data) v = static_cast<long long>(rng() % 17) - 8;
  for (auto& v : weights.data) v = static_cast<long long>(rng() % 17) - 8;
  ExecEnv<long long> env0, env1;
  env0.bindings["I"] = input;
  env0.bindings["K"] = weights;
  TensorI ref = execute(nest, env0);
  bool oracle_equal = false;
  std::string oracle_note;
  try {
    env1.bindings["I"] = input;
    env1.bindings["K"] = weights;
    TensorI got = execute(transformed, env1);
    oracle_equal = got == ref;
    if (!oracle_equal) oracle_note = "outputs differ";
  } catch (const Error& e) {
    oracle_note = e.what();
  }

  const char* verdict = lr.verdict == Verdict::Legal ? "legal"
                        : lr.verdict == Verdict::Illegal ? "illegal"
                                                         : "not-applicable";
  std::cout << "sequence: " << to_dsl(seq) << "\n";
  std::cout << "semantic legality: " << verdict;
  if (!lr.reason.empty()) std::cout << " (" << lr.reason << ")";
  std::cout << "\n";
  std::cout << "oracle: " << (oracle_equal ? "equal" : "not equal");
  if (!oracle_note.empty()) std::cout << " (" << oracle_note << ")";
  std::cout << " [seed " << seed << "]\n";
  return lr.verdict == Verdict::Illegal ? 4 : 0;
}

int cmd_fisher(const Options& opt) {
  nlohmann::json j = read_json(opt.config);
  Network net = network_from_json(j.contains("network") ? j["network"] : j);
  if (opt.seed) {
    net.seed = *opt.seed;
    net.init_weights();
  }
  size_t batch_n = 32;
  std::uint64_t batch_seed = 1;
  if (j.contains("batch")) {
    batch_n = j["batch"].value("n", batch_n);
    batch_seed = j["batch"].value("seed", batch_seed);
  }
  Batch batch = make_batch(net, batch_n, batch_seed);
  FisherReport rep = fisher_potential(net, batch);
  std::ofstream file;
  std::ostream& os = open_out(file, opt);
  os << "seed: " << net.seed << " batch_seed: " << batch_seed
     << " batch_n: " << batch_n << "\n";
  for (size_t l = 0; l < rep.per_layer.size(); ++l)
    os << "layer " << l << " delta: " << rep.per_layer[l] << "\n";
  os << "total: " << rep.total << "\n";
  return 0;
}

int cmd_search(const Options& opt) {
  nlohmann::json j = read_json(opt.config);
  if (!j.contains("network"))
    throw ConfigError("search config needs a 'network' object");
  Network net = network_from_json(j["network"]);
  SearchConfig cfg = search_config_from_json(j);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.jobs) cfg.jobs = *opt.jobs;
  if (opt.caps) cfg.cap = *opt.caps;
  SearchReport rep = run_search(net, cfg);
  std::string json_path = opt.out.empty() ? "search_report.json" : opt.out;
  std::string csv_path = json_path;
  if (csv_path.size() > 5 && csv_path.substr(csv_path.size() - 5) == ".json")
    csv_path = csv_path.substr(0, csv_path.size() - 5) + ".csv";
  else
    csv_path += ".csv";
  write_search_report(rep, json_path, csv_path);
  std::cout << "candidates: " << rep.candidates.size()
            << " survivors: " << rep.survivors
            << " rejected_semantic: " << rep.rejected_semantic
            << " rejected_fisher: " << rep.rejected_fisher << "\n";
  double rate = rep.candidates.empty()
                    ? 0.0
                    : double(rep.rejected_semantic + rep.rejected_fisher) /
                          double(rep.candidates.size());
  std::cout << "rejection_rate: " << rate << "\n";
  if (!rep.survivors_ranked.empty()) {
    const Candidate& best = rep.candidates[rep.survivors_ranked.front()];
    std::cout << "best_macs: " << best.macs << " (origin " << rep.origin_macs
              << ")\n";
    for (size_t l = 0; l < best.layer_seqs.size(); ++l)
      if (!best.layer_seqs[l].steps.empty())
        std::cout << "best layer " << l << ": " << to_dsl(best.layer_seqs[l])
                  << "\n";
  }
  std::cout << "report: " << json_path << " and " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Loop-nest transformation toolkit for convolution operators"};
  app.require_subcommand(1);
  Options opt;
  std::string subcmd;
  for (const char* name :
       {"dump", "transform", "verify", "fisher", "search"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config, "configuration file")->required();
    sub->add_option("--out", opt.out, "output path");
    sub->add_option("--sequence", opt.sequence, "transformation sequence DSL");
    sub->add_option("--seed", opt.seed, "seed override");
    sub->add_option("--jobs", opt.jobs, "worker count");
    sub->add_option("--caps", opt.caps, "brute-force instance cap");
    sub->callback([&subcmd, name]() { subcmd = name; });
  }
  CLI11_PARSE(app, argc, argv);

  int code = 0;
  try {
    if (subcmd == "dump") code = cmd_dump(opt);
    else if (subcmd == "transform") code = cmd_transform(opt);
    else if (subcmd == "verify") code = cmd_verify(opt);
    else if (subcmd == "fisher") code = cmd_fisher(opt);
    else if (subcmd == "search") code = cmd_search(opt);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  } catch (const InvalidSpec& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  } catch (const CapExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 4;
  } catch (const TransformError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 5;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 1;
  }
  std::cout << "RESULT " << (code == 0 ? "ok" : "fail") << " " << code << "\n";
  return code;
}
