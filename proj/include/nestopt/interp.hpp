#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nestopt/errors.hpp"
#include "nestopt/ir.hpp"

namespace nestopt {

template <typename T>
struct Tensor {
  std::vector<long long> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<long long> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(size()), T{});
  }

  long long size() const {
    long long n = 1;
    for (long long d : shape) n *= d;
    return n;
  }
  size_t rank() const { return shape.size(); }

  bool in_bounds(const std::vector<long long>& idx) const {
    for (size_t i = 0; i < shape.size(); ++i)
      if (idx[i] < 0 || idx[i] >= shape[i]) return false;
    return true;
  }
  long long flat(const std::vector<long long>& idx) const {
    long long f = 0;
    for (size_t i = 0; i < shape.size(); ++i) f = f * shape[i] + idx[i];
    return f;
  }
  T& at(const std::vector<long long>& idx) { return data[static_cast<size_t>(flat(idx))]; }
  const T& at(const std::vector<long long>& idx) const {
    return data[static_cast<size_t>(flat(idx))];
  }

  bool operator==(const Tensor&) const = default;
};

using TensorI = Tensor<long long>;
using TensorF = Tensor<double>;

template <typename T>
struct ExecEnv {
  std::map<std::string, Tensor<T>> bindings;
};

inline std::vector<long long> output_shape(const ConvSpec& spec) {
  return {spec.co_eff(), spec.out_h(), spec.out_w()};
}

// Executes every statement instance of the nest in schedule order over the
// bound tensors. The tensor written by the nest is returned; it is taken
// from the environment when bound, otherwise allocated from provenance.
template <typename T>
Tensor<T> execute(const LoopNest& nest, const ExecEnv<T>& env) {
  std::string out_name;
  for (const auto& part : nest.parts)
    for (const auto& st : part.stmts)
      for (const auto& acc : st.accesses)
        if (acc.mode != AccessMode::Read) {
          if (!out_name.empty() && out_name != acc.tensor)
            throw Error("nest writes more than one tensor");
          out_name = acc.tensor;
        }
  if (out_name.empty()) throw Error("nest has no written tensor");

  for (const auto& part : nest.parts)
    for (const auto& st : part.stmts)
      for (const auto& acc : st.accesses) {
        if (acc.tensor == out_name) continue;
        auto it = env.bindings.find(acc.tensor);
        if (it == env.bindings.end())
          throw UnboundTensor("tensor '" + acc.tensor + "' is not bound");
        if (it->second.rank() != acc.indices.size())
          throw RankMismatch("tensor '" + acc.tensor + "' rank " +
                             std::to_string(it->second.rank()) +
                             " does not match access arity " +
                             std::to_string(acc.indices.size()));
      }

  Tensor<T> out;
  if (auto it = env.bindings.find(out_name); it != env.bindings.end()) {
    out = it->second;
  } else if (nest.provenance) {
    out = Tensor<T>(output_shape(*nest.provenance));
  } else {
    throw UnboundTensor("output tensor '" + out_name + "' is not bound");
  }

  for_each_instance(nest, [&](const Instance& inst, const Statement& st) {
    std::map<std::string, long long> denv;
    for (size_t i = 0; i < st.domain.size(); ++i) denv[st.domain[i]] = inst.coord[i];
    auto resolve = [&](const AccessMap& acc) {
      std::vector<long long> idx;
      idx.reserve(acc.indices.size());
      for (const auto& e : acc.indices) idx.push_back(eval(e, denv));
      return idx;
    };
    if (st.kind == StmtKind::Init) {
      std::vector<long long> idx = resolve(st.accesses[0]);
      if (!out.in_bounds(idx))
        throw IndexOutOfRange("init write outside '" + out_name + "'");
      out.at(idx) = T{};
      return;
    }
    T prod{1};
    const AccessMap* rmw = nullptr;
    std::vector<long long> rmw_idx;
    for (const auto& acc : st.accesses) {
      std::vector<long long> idx = resolve(acc);
      if (acc.mode == AccessMode::ReadModifyWrite) {
        rmw = &acc;
        rmw_idx = std::move(idx);
        continue;
      }
      const Tensor<T>& t = env.bindings.at(acc.tensor);
      if (!t.in_bounds(idx)) {
        if (acc.zero_pad) {
          prod = T{};
          continue;
        }
        throw IndexOutOfRange("read outside tensor '" + acc.tensor + "'");
      }
      prod *= t.at(idx);
    }
    if (!rmw) throw Error("multiply-accumulate statement lacks an RMW access");
    if (!out.in_bounds(rmw_idx))
      throw IndexOutOfRange("accumulate outside '" + out_name + "'");
    out.at(rmw_idx) += prod;
  });
  return out;
}

// Straight-line evaluation of the convolution formulas, independent of the
// IR path. Dispatches on group factor, bottleneck and channel splits.
// Weights always carry shape (Co_eff, Ci, Kh, Kw); grouped variants read the
// slice belonging to each group.
template <typename T>
Tensor<T> reference_conv(const ConvSpec& spec, const Tensor<T>& input,
                         const Tensor<T>& weights) {
  spec.validate();
  if (input.shape != std::vector<long long>{spec.ci, spec.h, spec.w})
    throw ShapeMismatch("input tensor shape does not match spec");
  if (weights.shape != std::vector<long long>{spec.co_eff(), spec.ci, spec.kh, spec.kw})
    throw ShapeMismatch("weight tensor shape does not match spec");

  Tensor<T> out(output_shape(spec));
  for (const ChannelSplit& r : spec.ranges()) {
    const long long co_per_group = (r.end - r.begin) / r.groups;
    const long long ci_per_group = spec.ci / r.groups;
    for (long long co = r.begin; co < r.end; ++co) {
      const long long g = (co - r.begin) / co_per_group;
      for (long long oh = 0; oh < spec.out_h(); ++oh) {
        for (long long ow = 0; ow < spec.out_w(); ++ow) {
          T acc{};
          for (long long ci = g * ci_per_group; ci < (g + 1) * ci_per_group; ++ci) {
            for (long long kh = 0; kh < spec.kh; ++kh) {
              long long ih = spec.stride * oh - spec.pad + kh;
              if (ih < 0 || ih >= spec.h) continue;
              for (long long kw = 0; kw < spec.kw; ++kw) {
                long long iw = spec.stride * ow - spec.pad + kw;
                if (iw < 0 || iw >= spec.w) continue;
                acc += input.at({ci, ih, iw}) * weights.at({co, ci, kh, kw});
              }
            }
          }
          out.at({co, oh, ow}) = acc;
        }
      }
    }
  }
  return out;
}

// Number of multiply-accumulate statement instances. Unroll annotations do
// not affect the count.
inline long long count_macs(const LoopNest& nest) {
  long long total = 0;
  for (const Block& b : compute_blocks(nest)) {
    const NestPart& part = nest.parts[b.part];
    for (auto [si, depth] : b.stmts) {
      if (part.stmts[si].kind != StmtKind::Mac) continue;
      long long n = 1;
      for (int d = 0; d < depth; ++d) n *= b.iters[d].extent;
      total += n;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Tensor file formats

namespace detail {

template <typename T>
constexpr std::uint8_t tensor_tag() {
  return std::is_same_v<T, long long> ? 0 : 1;
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw IoError("truncated tensor file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <typename T>
void save_tensor(const Tensor<T>& t, std::ostream& os) {
  detail::write_u64(os, t.rank());
  for (long long d : t.shape) detail::write_u64(os, static_cast<std::uint64_t>(d));
  char tag = static_cast<char>(detail::tensor_tag<T>());
  os.write(&tag, 1);
  for (const T& v : t.data) {
    std::uint64_t bits;
    static_assert(sizeof(T) == 8);
    std::memcpy(&bits, &v, 8);
    detail::write_u64(os, bits);
  }
}

template <typename T>
Tensor<T> load_tensor(std::istream& is) {
  std::uint64_t rank = detail::read_u64(is);
  std::vector<long long> shape;
  for (std::uint64_t i = 0; i < rank; ++i)
    shape.push_back(static_cast<long long>(detail::read_u64(is)));
  char tag = 0;
  is.read(&tag, 1);
  if (!is) throw IoError("truncated tensor file");
  if (static_cast<std::uint8_t>(tag) != detail::tensor_tag<T>())
    throw IoError("tensor element mode does not match");
  Tensor<T> t(shape);
  for (auto& v : t.data) {
    std::uint64_t bits = detail::read_u64(is);
    std::memcpy(&v, &bits, 8);
  }
  return t;
}

// Whitespace text form for test fixtures: "tensor <mode>", dims line, values.
template <typename T>
void save_tensor_text(const Tensor<T>& t, std::ostream& os) {
  os << "tensor " << (detail::tensor_tag<T>() == 0 ? "int64" : "float64") << "\n";
  for (size_t i = 0; i < t.shape.size(); ++i) os << (i ? " " : "") << t.shape[i];
  os << "\n";
  for (size_t i = 0; i < t.data.size(); ++i) os << (i ? " " : "") << t.data[i];
  os << "\n";
}

template <typename T>
Tensor<T> load_tensor_text(std::istream& is) {
  std::string word, mode;
  is >> word >> mode;
  if (word != "tensor") throw IoError("not a tensor text file");
  const char* want = detail::tensor_tag<T>() == 0 ? "int64" : "float64";
  if (mode != want) throw IoError("tensor element mode does not match");
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  std::istringstream dims(line);
  std::vector<long long> shape;
  long long d;
  while (dims >> d) shape.push_back(d);
  Tensor<T> t(shape);
  for (auto& v : t.data)
    if (!(is >> v)) throw IoError("truncated tensor text file");
  return t;
}

}  // namespace nestopt
