#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "nestopt/errors.hpp"
#include "nestopt/interp.hpp"
#include "nestopt/ir.hpp"

namespace nestopt {

// ---------------------------------------------------------------------------
// A minimal convolutional classifier: a stack of convolution layers (each
// described by a ConvSpec, optionally followed by ReLU), global average
// pooling, and a linear head.

struct Layer {
  ConvSpec spec;
  bool relu = true;
};

struct Network {
  std::vector<Layer> layers;
  int num_classes = 10;
  std::uint64_t seed = 0;

  std::vector<TensorF> weights;        // per layer: (Co_eff, Ci, Kh, Kw)
  std::vector<std::vector<double>> head;  // num_classes x last Co_eff

  long long head_features() const {
    if (layers.empty()) throw ConfigError("network has no layers");
    return layers.back().spec.co_eff();
  }

  void validate() const {
    if (layers.empty()) throw ConfigError("network has no layers");
    if (num_classes < 2) throw ConfigError("need at least two classes");
    for (size_t l = 0; l < layers.size(); ++l) {
      layers[l].spec.validate();
      if (l > 0) {
        const ConvSpec& prev = layers[l - 1].spec;
        const ConvSpec& cur = layers[l].spec;
        if (cur.ci != prev.co_eff() || cur.h != prev.out_h() || cur.w != prev.out_w())
          throw ConfigError("layer " + std::to_string(l) +
                            " input shape does not match layer " +
                            std::to_string(l - 1) + " output shape");
      }
    }
  }

  // Draw fan-in-scaled Gaussian weights deterministically from the seed.
  void init_weights() {
    validate();
    weights.clear();
    head.clear();
    for (size_t l = 0; l < layers.size(); ++l) {
      const ConvSpec& s = layers[l].spec;
      std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + l + 1);
      double stddev = 1.0 / std::sqrt(double(s.ci * s.kh * s.kw));
      std::normal_distribution<double> dist(0.0, stddev);
      TensorF w({s.co_eff(), s.ci, s.kh, s.kw});
      for (double& v : w.data) v = dist(rng);
      weights.push_back(std::move(w));
    }
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + layers.size() + 1);
    double stddev = 1.0 / std::sqrt(double(head_features()));
    std::normal_distribution<double> dist(0.0, stddev);
    head.assign(static_cast<size_t>(num_classes),
                std::vector<double>(static_cast<size_t>(head_features())));
    for (auto& row : head)
      for (double& v : row) v = dist(rng);
  }
};

struct Batch {
  std::vector<TensorF> inputs;  // (Ci, H, W) each
  std::vector<int> labels;
  std::uint64_t seed = 0;
};

inline Batch make_batch(const Network& net, size_t n, std::uint64_t seed) {
  const ConvSpec& s0 = net.layers.front().spec;
  Batch b;
  b.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, net.num_classes - 1);
  for (size_t i = 0; i < n; ++i) {
    TensorF x({s0.ci, s0.h, s0.w});
    for (double& v : x.data) v = dist(rng);
    b.inputs.push_back(std::move(x));
    b.labels.push_back(lab(rng));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Shared multiply-accumulate iteration over the convolution formulas.
// fn(co, oh, ow, ci, ih, iw, kh, kw) with absolute channel indices; padded
// taps are skipped (they contribute zero both forward and backward).

template <typename Fn>
void for_each_conv_mac(const ConvSpec& spec, Fn&& fn) {
  long long oh_max = spec.out_h(), ow_max = spec.out_w();
  for (const ChannelSplit& r : spec.ranges()) {
    long long slice_co = (r.end - r.begin) / r.groups;
    long long slice_ci = spec.ci / r.groups;
    for (long long g = 0; g < r.groups; ++g)
      for (long long co = 0; co < slice_co; ++co)
        for (long long oh = 0; oh < oh_max; ++oh)
          for (long long ow = 0; ow < ow_max; ++ow)
            for (long long ci = 0; ci < slice_ci; ++ci)
              for (long long kh = 0; kh < spec.kh; ++kh)
                for (long long kw = 0; kw < spec.kw; ++kw) {
                  long long ih = spec.stride * oh - spec.pad + kh;
                  long long iw = spec.stride * ow - spec.pad + kw;
                  if (ih < 0 || ih >= spec.h || iw < 0 || iw >= spec.w) continue;
                  fn(r.begin + g * slice_co + co, oh, ow, g * slice_ci + ci,
                     ih, iw, kh, kw);
                }
  }
}

inline TensorF layer_forward(const Layer& layer, const TensorF& weights,
                             const TensorF& input) {
  TensorF out(output_shape(layer.spec));
  for_each_conv_mac(layer.spec, [&](long long co, long long oh, long long ow,
                                    long long ci, long long ih, long long iw,
                                    long long kh, long long kw) {
    out.at({co, oh, ow}) += weights.at({co, ci, kh, kw}) * input.at({ci, ih, iw});
  });
  if (layer.relu)
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

struct ForwardCache {
  // acts[n][0] is the input; acts[n][l+1] the post-activation output of
  // layer l.
  std::vector<std::vector<TensorF>> acts;
  std::vector<std::vector<double>> probs;  // softmax per example
  std::vector<double> example_loss;
  double loss = 0.0;
};

inline std::vector<double> head_logits(const Network& net, const TensorF& act) {
  long long c = act.shape[0];
  long long hw = act.shape[1] * act.shape[2];
  std::vector<double> pooled(static_cast<size_t>(c), 0.0);
  for (long long i = 0; i < c; ++i) {
    for (long long j = 0; j < hw; ++j)
      pooled[static_cast<size_t>(i)] += act.data[static_cast<size_t>(i * hw + j)];
    pooled[static_cast<size_t>(i)] /= double(hw);
  }
  std::vector<double> z(static_cast<size_t>(net.num_classes), 0.0);
  for (int k = 0; k < net.num_classes; ++k)
    for (long long i = 0; i < c; ++i)
      z[static_cast<size_t>(k)] +=
          net.head[static_cast<size_t>(k)][static_cast<size_t>(i)] *
          pooled[static_cast<size_t>(i)];
  return z;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - m));
  for (double& v : p) v /= sum;
  return p;
}

inline ForwardCache forward(const Network& net, const Batch& batch) {
  if (net.weights.size() != net.layers.size())
    throw ConfigError("network weights are not initialized");
  ForwardCache fc;
  for (size_t n = 0; n < batch.inputs.size(); ++n) {
    std::vector<TensorF> acts{batch.inputs[n]};
    for (size_t l = 0; l < net.layers.size(); ++l)
      acts.push_back(layer_forward(net.layers[l], net.weights[l], acts.back()));
    std::vector<double> p = softmax(head_logits(net, acts.back()));
    double ln = -std::log(std::max(p[static_cast<size_t>(batch.labels[n])], 1e-300));
    fc.acts.push_back(std::move(acts));
    fc.probs.push_back(std::move(p));
    fc.example_loss.push_back(ln);
    fc.loss += ln;
  }
  fc.loss /= double(batch.inputs.size());
  return fc;
}

// Gradients of the mean cross-entropy loss with respect to each layer's
// post-activation output: grads[n][l] matches fc.acts[n][l+1].
inline std::vector<std::vector<TensorF>> activation_gradients(
    const Network& net, const Batch& batch, const ForwardCache& fc) {
  size_t N = batch.inputs.size();
  size_t L = net.layers.size();
  std::vector<std::vector<TensorF>> grads(N);
  for (size_t n = 0; n < N; ++n) {
    const TensorF& last = fc.acts[n][L];
    long long c = last.shape[0];
    long long hw = last.shape[1] * last.shape[2];
    std::vector<double> dz(fc.probs[n]);
    dz[static_cast<size_t>(batch.labels[n])] -= 1.0;
    for (double& v : dz) v /= double(N);
    std::vector<double> dpool(static_cast<size_t>(c), 0.0);
    for (int k = 0; k < net.num_classes; ++k)
      for (long long i = 0; i < c; ++i)
        dpool[static_cast<size_t>(i)] +=
            net.head[static_cast<size_t>(k)][static_cast<size_t>(i)] *
            dz[static_cast<size_t>(k)];
    std::vector<TensorF> g(L);
    g[L - 1] = TensorF(last.shape);
    for (long long i = 0; i < c; ++i)
      for (long long j = 0; j < hw; ++j)
        g[L - 1].data[static_cast<size_t>(i * hw + j)] =
            dpool[static_cast<size_t>(i)] / double(hw);
    for (size_t l = L; l-- > 1;) {
      // Gradient through layer l's activation and convolution onto the
      // previous layer's output.
      TensorF dpre = g[l];
      if (net.layers[l].relu) {
        const TensorF& a = fc.acts[n][l + 1];
        for (size_t i = 0; i < dpre.data.size(); ++i)
          if (a.data[i] <= 0.0) dpre.data[i] = 0.0;
      }
      g[l - 1] = TensorF(fc.acts[n][l].shape);
      for_each_conv_mac(net.layers[l].spec,
                        [&](long long co, long long oh, long long ow,
                            long long ci, long long ih, long long iw,
                            long long kh, long long kw) {
                          g[l - 1].at({ci, ih, iw}) +=
                              net.weights[l].at({co, ci, kh, kw}) *
                              dpre.at({co, oh, ow});
                        });
    }
    grads[n] = std::move(g);
  }
  return grads;
}

// Re-evaluates the batch loss with one example's layer-l post-activation
// output replaced; used to validate the analytic gradients numerically.
inline double loss_with_activation(const Network& net, const Batch& batch,
                                   const ForwardCache& fc, size_t example,
                                   size_t layer, const TensorF& act) {
  double total = 0.0;
  for (size_t n = 0; n < batch.inputs.size(); ++n) {
    if (n != example) {
      total += fc.example_loss[n];
      continue;
    }
    TensorF a = act;
    for (size_t l = layer + 1; l < net.layers.size(); ++l)
      a = layer_forward(net.layers[l], net.weights[l], a);
    std::vector<double> p = softmax(head_logits(net, a));
    total += -std::log(std::max(p[static_cast<size_t>(batch.labels[n])], 1e-300));
  }
  return total / double(batch.inputs.size());
}

// ---------------------------------------------------------------------------
// Channel saliency: per channel, half the batch mean of the squared inner
// product between the channel's activation map and its loss gradient; per
// layer, the sum over output channels.

struct FisherReport {
  std::vector<std::vector<double>> per_channel;  // [layer][channel]
  std::vector<double> per_layer;
  double total = 0.0;
  std::uint64_t seed = 0;  // batch seed the scores were computed under
};

// One channel's saliency from its activation and gradient maps, each shaped
// (N, H, W): half the batch mean of the squared activation-gradient inner
// product.
inline double fisher_channel(const TensorF& a, const TensorF& g) {
  if (a.shape != g.shape || a.rank() != 3)
    throw ShapeMismatch("activation and gradient slices must share shape N x H x W");
  long long n = a.shape[0];
  long long hw = a.shape[1] * a.shape[2];
  double acc = 0.0;
  for (long long e = 0; e < n; ++e) {
    double s = 0.0;
    for (long long j = 0; j < hw; ++j)
      s -= a.data[static_cast<size_t>(e * hw + j)] *
           g.data[static_cast<size_t>(e * hw + j)];
    acc += s * s;
  }
  return acc / (2.0 * double(n));
}

// Layer saliency: the channel values summed over output channels; inputs
// shaped (N, C, H, W).
inline double fisher_layer(const TensorF& a, const TensorF& g) {
  if (a.shape != g.shape || a.rank() != 4)
    throw ShapeMismatch("activation and gradient maps must share shape N x C x H x W");
  long long n = a.shape[0], c = a.shape[1], h = a.shape[2], w = a.shape[3];
  double total = 0.0;
  for (long long ch = 0; ch < c; ++ch) {
    TensorF as({n, h, w}), gs({n, h, w});
    for (long long e = 0; e < n; ++e)
      for (long long j = 0; j < h * w; ++j) {
        as.data[static_cast<size_t>(e * h * w + j)] =
            a.data[static_cast<size_t>((e * c + ch) * h * w + j)];
        gs.data[static_cast<size_t>(e * h * w + j)] =
            g.data[static_cast<size_t>((e * c + ch) * h * w + j)];
      }
    total += fisher_channel(as, gs);
  }
  return total;
}

inline FisherReport fisher_potential(const Network& net, const Batch& batch) {
  ForwardCache fc = forward(net, batch);
  auto grads = activation_gradients(net, batch, fc);
  size_t N = batch.inputs.size();
  size_t L = net.layers.size();
  FisherReport rep;
  rep.seed = batch.seed;
  rep.per_channel.resize(L);
  rep.per_layer.assign(L, 0.0);
  for (size_t l = 0; l < L; ++l) {
    long long c = net.layers[l].spec.co_eff();
    rep.per_channel[l].assign(static_cast<size_t>(c), 0.0);
    for (long long ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (size_t n = 0; n < N; ++n) {
        const TensorF& a = fc.acts[n][l + 1];
        const TensorF& g = grads[n][l];
        long long hw = a.shape[1] * a.shape[2];
        double s = 0.0;
        for (long long j = 0; j < hw; ++j)
          s -= a.data[static_cast<size_t>(ch * hw + j)] *
               g.data[static_cast<size_t>(ch * hw + j)];
        acc += s * s;
      }
      double delta = acc / (2.0 * double(N));
      rep.per_channel[l][static_cast<size_t>(ch)] = delta;
      rep.per_layer[l] += delta;
    }
    rep.total += rep.per_layer[l];
  }
  return rep;
}

// Neural rewrites are kept only when they do not lose saliency: a candidate
// is rejected when its score drops below the original's.
inline bool fisher_accepts(const FisherReport& original,
                           const FisherReport& candidate) {
  return candidate.total >= original.total;
}

inline bool legality_fisher(const Network& original, const Network& candidate,
                            const Batch& batch) {
  return fisher_accepts(fisher_potential(original, batch),
                        fisher_potential(candidate, batch));
}

// ---------------------------------------------------------------------------
// Propagates layer-shape consequences of an edited layer spec downstream:
// each layer's input channel count and spatial size must match its
// predecessor's output.

inline void repair_network(Network& net) {
  for (size_t l = 1; l < net.layers.size(); ++l) {
    const ConvSpec& prev = net.layers[l - 1].spec;
    ConvSpec& cur = net.layers[l].spec;
    cur.ci = prev.co_eff();
    cur.h = prev.out_h();
    cur.w = prev.out_w();
  }
  net.validate();
  net.init_weights();
}

// ---------------------------------------------------------------------------
// JSON configuration

inline ConvSpec conv_spec_from_json(const nlohmann::json& j) {
  ConvSpec s;
  s.ci = j.at("ci").get<long long>();
  s.co = j.at("co").get<long long>();
  s.h = j.at("h").get<long long>();
  s.w = j.at("w").get<long long>();
  s.kh = j.value("kh", 1ll);
  s.kw = j.value("kw", 1ll);
  s.stride = j.value("stride", 1ll);
  s.pad = j.value("pad", 0ll);
  s.groups = j.value("groups", 1ll);
  s.bottleneck_out = j.value("bottleneck", 1ll);
  s.spatial_div_h = j.value("spatial_div_h", 1ll);
  s.spatial_div_w = j.value("spatial_div_w", 1ll);
  if (j.contains("channel_splits"))
    for (const auto& r : j.at("channel_splits"))
      s.channel_splits.push_back(
          {r.at("begin").get<long long>(), r.at("end").get<long long>(),
           r.value("groups", 1ll)});
  s.validate();
  return s;
}

inline nlohmann::json conv_spec_to_json(const ConvSpec& s) {
  nlohmann::json j{{"ci", s.ci},       {"co", s.co},
                   {"h", s.h},         {"w", s.w},
                   {"kh", s.kh},       {"kw", s.kw},
                   {"stride", s.stride}, {"pad", s.pad},
                   {"groups", s.groups}, {"bottleneck", s.bottleneck_out},
                   {"spatial_div_h", s.spatial_div_h},
                   {"spatial_div_w", s.spatial_div_w}};
  if (!s.channel_splits.empty()) {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : s.channel_splits)
      rs.push_back({{"begin", r.begin}, {"end", r.end}, {"groups", r.groups}});
    j["channel_splits"] = rs;
  }
  return j;
}

inline Network network_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 1) != 1)
    throw ConfigError("unsupported network schema version");
  Network net;
  net.seed = j.value("seed", 0ull);
  net.num_classes = j.value("num_classes", 10);
  for (const auto& lj : j.at("layers")) {
    Layer layer;
    layer.spec = conv_spec_from_json(lj);
    layer.relu = lj.value("relu", true);
    net.layers.push_back(std::move(layer));
  }
  net.init_weights();
  return net;
}

inline nlohmann::json network_to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json lj = conv_spec_to_json(l.spec);
    lj["relu"] = l.relu;
    layers.push_back(lj);
  }
  return nlohmann::json{{"schema_version", 1},
                        {"seed", net.seed},
                        {"num_classes", net.num_classes},
                        {"layers", layers}};
}

inline Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad JSON in '" + path + "': " + e.what());
  }
  try {
    return network_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad network config '" + path + "': " + e.what());
  }
}

}  // namespace nestopt
