#include "coroi/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace coroi {

const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }
size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

namespace {
thread_local int g_no_grad_depth = 0;

int64_t checked_numel(const std::vector<int64_t>& shape) {
  if (shape.empty()) throw DimError("tensor: rank must be >= 1");
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw DimError("tensor: extents must be positive");
    n *= e;
  }
  return n;
}
}  // namespace

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

Tensor Tensor::zeros(std::vector<int64_t> shape, DType dt, bool requires_grad) {
  int64_t n = checked_numel(shape);
  auto im = std::make_shared<Impl>();
  im->shape = std::move(shape);
  im->dtype = dt;
  if (dt == DType::F32)
    im->d32.assign(static_cast<size_t>(n), 0.0f);
  else
    im->d64.assign(static_cast<size_t>(n), 0.0);
  im->requires_grad = requires_grad && grad_enabled();
  return Tensor(im);
}

Tensor Tensor::full(std::vector<int64_t> shape, double v, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.set(i, v);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, const std::vector<double>& v,
                    DType dt, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  if (static_cast<int64_t>(v.size()) != t.numel())
    throw DimError("tensor::from: value count does not match shape");
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, v[static_cast<size_t>(i)]);
  return t;
}

Tensor Tensor::scalar(double v, DType dt, bool requires_grad) {
  return from({1}, {v}, dt, requires_grad);
}

int64_t Tensor::dim(int i) const {
  int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw DimError("tensor::dim: axis out of range");
  return impl->shape[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (int64_t e : impl->shape) n *= e;
  return n;
}

void Tensor::set_requires_grad(bool rg) {
  impl->requires_grad = rg;
  if (!rg) {
    impl->g32.clear();
    impl->g64.clear();
  }
}

template <>
float* Tensor::data<float>() {
  return impl->d32.data();
}
template <>
double* Tensor::data<double>() {
  return impl->d64.data();
}
template <>
const float* Tensor::data<float>() const {
  return impl->d32.data();
}
template <>
const double* Tensor::data<double>() const {
  return impl->d64.data();
}
template <>
float* Tensor::grad_data<float>() {
  return impl->g32.data();
}
template <>
double* Tensor::grad_data<double>() {
  return impl->g64.data();
}

void Tensor::ensure_grad() {
  size_t n = static_cast<size_t>(numel());
  if (impl->dtype == DType::F32) {
    if (impl->g32.size() != n) impl->g32.assign(n, 0.0f);
  } else {
    if (impl->g64.size() != n) impl->g64.assign(n, 0.0);
  }
}

bool Tensor::has_grad() const {
  return impl && (!impl->g32.empty() || !impl->g64.empty());
}

void Tensor::zero_grad() {
  ensure_grad();
  if (impl->dtype == DType::F32)
    std::fill(impl->g32.begin(), impl->g32.end(), 0.0f);
  else
    std::fill(impl->g64.begin(), impl->g64.end(), 0.0);
}

double Tensor::at(int64_t i) const {
  if (i < 0 || i >= numel()) throw DimError("tensor::at: index out of range");
  return impl->dtype == DType::F32
             ? static_cast<double>(impl->d32[static_cast<size_t>(i)])
             : impl->d64[static_cast<size_t>(i)];
}

void Tensor::set(int64_t i, double v) {
  if (i < 0 || i >= numel()) throw DimError("tensor::set: index out of range");
  if (impl->dtype == DType::F32)
    impl->d32[static_cast<size_t>(i)] = static_cast<float>(v);
  else
    impl->d64[static_cast<size_t>(i)] = v;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("tensor::item: tensor is not scalar");
  return at(0);
}

std::vector<double> Tensor::values() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (int64_t i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = at(i);
  return out;
}

double Tensor::grad_at(int64_t i) const {
  if (!has_grad()) throw ContractError("tensor::grad_at: no grad buffer");
  return impl->dtype == DType::F32
             ? static_cast<double>(impl->g32[static_cast<size_t>(i)])
             : impl->g64[static_cast<size_t>(i)];
}

std::vector<double> Tensor::grad_values() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (int64_t i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = grad_at(i);
  return out;
}

Tensor Tensor::detach() const {
  auto im = std::make_shared<Impl>();
  im->shape = impl->shape;
  im->dtype = impl->dtype;
  im->d32 = impl->d32;
  im->d64 = impl->d64;
  im->requires_grad = false;
  return Tensor(im);
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  return t;
}

Tensor Tensor::astype(DType dt) const {
  if (dt == impl->dtype) return clone();
  Tensor t = Tensor::zeros(impl->shape, dt);
  for (int64_t i = 0; i < numel(); ++i) t.set(i, at(i));
  return t;
}

void Tensor::backward() {
  if (!defined() || numel() != 1)
    throw ContractError("backward: loss must be a scalar tensor");

  // Reverse topological order via iterative post-order DFS.
  std::vector<std::shared_ptr<Impl>> order;
  std::unordered_set<Impl*> visited;
  struct Frame {
    std::shared_ptr<Impl> im;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  visited.insert(impl.get());
  stack.push_back({impl, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    Node* nd = f.im->node.get();
    size_t np = nd ? nd->parents.size() : 0;
    if (f.next_parent < np) {
      const auto& p = nd->parents[f.next_parent].impl;
      ++f.next_parent;
      if (p && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.im);
      stack.pop_back();
    }
  }

  ensure_grad();
  if (impl->dtype == DType::F32)
    impl->g32[0] = 1.0f;
  else
    impl->g64[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& im = *it;
    if (im->node && im->node->backward) {
      Tensor t(im);
      if (!t.has_grad()) t.ensure_grad();
      im->node->backward(t);
    }
  }
  // Drop the tape. Releasing nodes in topological order frees activation
  // chains iteratively instead of via recursive destructors.
  for (auto& im : order) im->node.reset();
}

void check_finite(const Tensor& t, const char* op) {
  int64_t n = t.numel();
  if (t.dtype() == DType::F32) {
    const float* p = t.data<float>();
    for (int64_t i = 0; i < n; ++i)
      if (!std::isfinite(p[i]))
        throw NumericalError(std::string(op) + ": non-finite value produced");
  } else {
    const double* p = t.data<double>();
    for (int64_t i = 0; i < n; ++i)
      if (!std::isfinite(p[i]))
        throw NumericalError(std::string(op) + ": non-finite value produced");
  }
}

Tensor& ParamSet::declare(const std::string& name, std::vector<int64_t> shape,
                          DType dt) {
  if (params.count(name))
    throw ContractError("paramset: duplicate parameter name " + name);
  params.emplace(name, Tensor::zeros(std::move(shape), dt, true));
  return params.at(name);
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    throw ContractError("paramset: unknown parameter " + name);
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end())
    throw ContractError("paramset: unknown parameter " + name);
  return it->second;
}

bool ParamSet::contains(const std::string& name) const {
  return params.count(name) > 0;
}

void ParamSet::freeze_prefix(const std::string& prefix) {
  bool any = false;
  for (auto& [name, t] : params) {
    if (name.rfind(prefix, 0) == 0) {
      frozen.insert(name);
      any = true;
    }
  }
  if (!any) throw ContractError("paramset: no parameters match prefix " + prefix);
}

void ParamSet::unfreeze_all() { frozen.clear(); }

bool ParamSet::is_frozen(const std::string& name) const {
  return frozen.count(name) > 0;
}

void ParamSet::apply_freeze() {
  for (auto& [name, t] : params) t.set_requires_grad(!is_frozen(name));
}

std::vector<std::string> ParamSet::names_with_prefix(
    const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, t] : params)
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

void ParamSet::zero_grads() {
  for (auto& [name, t] : params)
    if (t.requires_grad()) t.zero_grad();
}

}  // namespace coroi
