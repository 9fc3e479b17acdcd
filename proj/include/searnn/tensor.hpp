#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "searnn/error.hpp"

namespace searnn {

namespace detail {

inline long long shape_numel(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) {
    if (d < 1) throw DimensionError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Order-sensitive fold of several seeds/tags into one stream seed.
inline std::uint64_t seed_mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x7c0fff3915aa6e2bULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ p);
  return h;
}

}  // namespace detail

/// Dense row-major array of 64-bit floats. Scalars are length-1 vectors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    v_.assign(static_cast<std::size_t>(detail::shape_numel(shape_)), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)), v_(std::move(values)) {
    if (detail::shape_numel(shape_) != static_cast<long long>(v_.size()))
      throw DimensionError("tensor shape does not match value count");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }
  int numel() const { return static_cast<int>(v_.size()); }
  bool empty() const { return v_.empty(); }

  double operator[](int i) const { return v_[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return v_[static_cast<std::size_t>(i)]; }
  double at(int r, int c) const {
    require_2d();
    return v_[static_cast<std::size_t>(r) * dim(1) + c];
  }
  double& at(int r, int c) {
    require_2d();
    return v_[static_cast<std::size_t>(r) * dim(1) + c];
  }

  std::span<const double> data() const { return v_; }
  std::span<double> data() { return v_; }

  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  // Reshape in place, reusing storage; contents are unspecified afterwards.
  void resize(const std::vector<int>& shape) {
    if (shape_ != shape) {
      shape_ = shape;
      v_.resize(static_cast<std::size_t>(detail::shape_numel(shape_)));
    }
  }

 private:
  void require_2d() const {
    if (ndim() != 2) throw DimensionError("2-D access on a tensor that is not 2-D");
  }
  std::vector<int> shape_;
  std::vector<double> v_;
};

namespace kernels {

inline int argmax(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// out = a @ b for a[m,k] with b[k,n] or b[k]; the 1-D form yields a 1-D result.
inline void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  if (a.ndim() != 2) throw DimensionError("matmul: left operand must be 2-D");
  const int m = a.dim(0), k = a.dim(1);
  if (b.ndim() == 1) {
    if (b.dim(0) != k) throw DimensionError("matmul: inner dimensions disagree");
    out.resize({m});
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      const double* row = ad + static_cast<std::size_t>(i) * k;
      for (int j = 0; j < k; ++j) acc += row[j] * bd[j];
      out[i] = acc;
    }
    return;
  }
  if (b.ndim() != 2 || b.dim(0) != k) throw DimensionError("matmul: inner dimensions disagree");
  const int n = b.dim(1);
  out.resize({m, n});
  out.fill(0.0);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      for (int j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
    }
}

// Elementwise with scalar (length-1) broadcast on either side.
template <class F>
inline void binary_broadcast(const Tensor& a, const Tensor& b, Tensor& out, F f,
                             const char* name) {
  if (a.same_shape(b)) {
    out.resize(a.shape());
    for (int i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  } else if (b.numel() == 1) {
    out.resize(a.shape());
    const double bv = b[0];
    for (int i = 0; i < a.numel(); ++i) out[i] = f(a[i], bv);
  } else if (a.numel() == 1) {
    out.resize(b.shape());
    const double av = a[0];
    for (int i = 0; i < b.numel(); ++i) out[i] = f(av, b[i]);
  } else {
    throw DimensionError(std::string(name) + ": shapes must match or one side must be scalar");
  }
}

inline void add(const Tensor& a, const Tensor& b, Tensor& out) {
  binary_broadcast(a, b, out, [](double x, double y) { return x + y; }, "add");
}
inline void mul(const Tensor& a, const Tensor& b, Tensor& out) {
  binary_broadcast(a, b, out, [](double x, double y) { return x * y; }, "mul");
}

inline void sigmoid(const Tensor& a, Tensor& out) {
  out.resize(a.shape());
  for (int i = 0; i < a.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
}

inline void tanh(const Tensor& a, Tensor& out) {
  out.resize(a.shape());
  for (int i = 0; i < a.numel(); ++i) out[i] = std::tanh(a[i]);
}

// Max-subtracted exponential normalizer; finite for any finite input.
inline void softmax(const Tensor& a, Tensor& out) {
  if (a.ndim() != 1) throw DimensionError("softmax: expects a 1-D tensor");
  out.resize(a.shape());
  const double m = *std::max_element(a.data().begin(), a.data().end());
  double z = 0.0;
  for (int i = 0; i < a.numel(); ++i) {
    out[i] = std::exp(a[i] - m);
    z += out[i];
  }
  for (int i = 0; i < a.numel(); ++i) out[i] /= z;
}

inline void log_softmax(const Tensor& a, Tensor& out) {
  if (a.ndim() != 1) throw DimensionError("log_softmax: expects a 1-D tensor");
  out.resize(a.shape());
  const double m = *std::max_element(a.data().begin(), a.data().end());
  double z = 0.0;
  for (int i = 0; i < a.numel(); ++i) z += std::exp(a[i] - m);
  const double lz = m + std::log(z);
  for (int i = 0; i < a.numel(); ++i) out[i] = a[i] - lz;
}

inline void embed_row(const Tensor& table, int row, Tensor& out) {
  if (table.ndim() != 2) throw DimensionError("embed: table must be 2-D");
  if (row < 0 || row >= table.dim(0)) throw DimensionError("embed: row index out of range");
  const int e = table.dim(1);
  out.resize({e});
  for (int j = 0; j < e; ++j) out[j] = table.at(row, j);
}

inline void gather(const Tensor& v, std::span<const int> idx, Tensor& out) {
  if (v.ndim() != 1) throw DimensionError("gather: expects a 1-D tensor");
  if (idx.empty()) throw DimensionError("gather: empty index set");
  out.resize({static_cast<int>(idx.size())});
  for (int j = 0; j < static_cast<int>(idx.size()); ++j) {
    if (idx[j] < 0 || idx[j] >= v.numel()) throw DimensionError("gather: index out of range");
    out[j] = v[idx[j]];
  }
}

inline void concat(std::span<const Tensor* const> parts, Tensor& out) {
  int n = 0;
  for (const Tensor* p : parts) {
    if (p->ndim() != 1) throw DimensionError("concat: expects 1-D tensors");
    n += p->numel();
  }
  if (n == 0) throw DimensionError("concat: nothing to concatenate");
  out.resize({n});
  int o = 0;
  for (const Tensor* p : parts)
    for (int i = 0; i < p->numel(); ++i) out[o++] = (*p)[i];
}

inline void reduce_sum(const Tensor& a, Tensor& out) {
  out.resize({1});
  double acc = 0.0;
  for (int i = 0; i < a.numel(); ++i) acc += a[i];
  out[0] = acc;
}

inline void reduce_max(const Tensor& a, Tensor& out, int* arg = nullptr) {
  const int j = argmax(a.data());
  out.resize({1});
  out[0] = a[j];
  if (arg) *arg = j;
}

inline void scale_add(const Tensor& a, double alpha, double beta, Tensor& out) {
  out.resize(a.shape());
  for (int i = 0; i < a.numel(); ++i) out[i] = alpha * a[i] + beta;
}

}  // namespace kernels

/// Named tensors with trainable flags and matching gradient buffers.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& o) { *this = o; }
  ParameterStore& operator=(const ParameterStore& o) {
    entries_.clear();
    index_.clear();
    for (const auto& e : o.entries_) {
      entries_.push_back(std::make_unique<Entry>(*e));
      index_[e->name] = static_cast<int>(entries_.size()) - 1;
    }
    return *this;
  }
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Tensor& create(const std::string& name, std::vector<int> shape, bool trainable = true) {
    if (has(name)) throw ContractError("parameter already exists: " + name);
    auto e = std::make_unique<Entry>();
    e->name = name;
    e->value = Tensor(shape);
    e->grad = Tensor(shape);
    e->trainable = trainable;
    entries_.push_back(std::move(e));
    index_[name] = static_cast<int>(entries_.size()) - 1;
    return entries_.back()->value;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }
  const Tensor& grad(const std::string& name) const { return entry(name).grad; }
  bool trainable(const std::string& name) const { return entry(name).trainable; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e->name);
    return out;
  }

  void zero_grads() {
    for (auto& e : entries_) e->grad.fill(0.0);
  }

  void fill_values(double x) {
    for (auto& e : entries_) e->value.fill(x);
  }

  int total_params() const {
    int n = 0;
    for (const auto& e : entries_)
      if (e->trainable) n += e->value.numel();
    return n;
  }

  // FNV-1a over names, shapes, and raw value bytes, in creation order.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto eat = [&h](std::uint64_t b) { h = (h ^ b) * 0x100000001b3ULL; };
    for (const auto& e : entries_) {
      for (char c : e->name) eat(static_cast<std::uint8_t>(c));
      eat(0xffULL);
      for (int d : e->value.shape()) eat(static_cast<std::uint64_t>(d));
      for (double x : e->value.data()) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
        for (int s = 0; s < 64; s += 8) eat((bits >> s) & 0xffULL);
      }
    }
    return h;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));
    for (const auto& e : entries_) {
      put_u32(out, static_cast<std::uint32_t>(e->name.size()));
      out.write(e->name.data(), static_cast<std::streamsize>(e->name.size()));
      put_u32(out, static_cast<std::uint32_t>(e->value.ndim()));
      for (int d : e->value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
      for (double x : e->value.data()) put_f64(out, x);
    }
    if (!out) throw IoError("failed writing checkpoint: " + path);
  }

  static ParameterStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4))
      throw ParseError("bad checkpoint magic: " + path);
    const int ver = in.get();
    if (ver != kVersion) throw ParseError("unsupported checkpoint version");
    ParameterStore store;
    while (true) {
      std::uint32_t name_len = 0;
      if (!try_u32(in, &name_len)) break;  // clean EOF
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      std::uint32_t ndim = read_u32(in);
      std::vector<int> shape(ndim);
      for (auto& d : shape) d = static_cast<int>(read_u32(in));
      Tensor& v = store.create(name, shape);
      for (int i = 0; i < v.numel(); ++i) v[i] = read_f64(in);
      if (!in) throw ParseError("truncated checkpoint: " + path);
    }
    return store;
  }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
  };

  static constexpr const char kMagic[5] = "SRNN";
  static constexpr int kVersion = 1;

  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return *entries_[static_cast<std::size_t>(it->second)];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return *entries_[static_cast<std::size_t>(it->second)];
  }

  static void put_u32(std::ostream& o, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) o.put(static_cast<char>((v >> s) & 0xff));
  }
  static void put_f64(std::ostream& o, double x) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    for (int s = 0; s < 64; s += 8) o.put(static_cast<char>((bits >> s) & 0xff));
  }
  static bool try_u32(std::istream& in, std::uint32_t* out) {
    std::uint32_t v = 0;
    for (int s = 0; s < 32; s += 8) {
      const int c = in.get();
      if (c == EOF) return s == 0 ? false : throw ParseError("truncated checkpoint record");
      v |= static_cast<std::uint32_t>(c) << s;
    }
    *out = v;
    return true;
  }
  static std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!try_u32(in, &v)) throw ParseError("truncated checkpoint record");
    return v;
  }
  static double read_f64(std::istream& in) {
    std::uint64_t v = 0;
    for (int s = 0; s < 64; s += 8) {
      const int c = in.get();
      if (c == EOF) throw ParseError("truncated checkpoint record");
      v |= static_cast<std::uint64_t>(c) << s;
    }
    return std::bit_cast<double>(v);
  }

  std::vector<std::unique_ptr<Entry>> entries_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace searnn
