#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace coroi {

// Error taxonomy shared by the whole library. The CLI maps these to exit
// codes: config/contract/dimension/io -> 1, numerical -> 2.
struct DimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DType : uint8_t { F32 = 0, F64 = 1 };

const char* dtype_name(DType dt);
size_t dtype_size(DType dt);

class Tensor;

// One reverse-mode graph node. `backward` accumulates into the parents'
// grad buffers given the output tensor (whose grad is already populated).
struct Node {
  std::vector<Tensor> parents;
  std::function<void(Tensor&)> backward;
};

// Dense row-major tensor. Value semantics with a shared immutable buffer:
// copies alias the same storage, ops always allocate fresh outputs. The
// only sanctioned mutation is grad accumulation during backward and the
// optimizer's in-place parameter update between steps.
class Tensor {
 public:
  struct Impl {
    std::vector<int64_t> shape;
    DType dtype = DType::F64;
    std::vector<float> d32;
    std::vector<double> d64;
    bool requires_grad = false;
    std::vector<float> g32;
    std::vector<double> g64;
    std::shared_ptr<Node> node;
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> im) : impl(std::move(im)) {}

  static Tensor zeros(std::vector<int64_t> shape, DType dt,
                      bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double v, DType dt);
  static Tensor from(std::vector<int64_t> shape, const std::vector<double>& v,
                     DType dt, bool requires_grad = false);
  static Tensor scalar(double v, DType dt, bool requires_grad = false);

  bool defined() const { return impl != nullptr; }
  const std::vector<int64_t>& shape() const { return impl->shape; }
  int rank() const { return static_cast<int>(impl->shape.size()); }
  int64_t dim(int i) const;
  int64_t numel() const;
  DType dtype() const { return impl->dtype; }

  bool requires_grad() const { return impl && impl->requires_grad; }
  void set_requires_grad(bool rg);

  template <typename T>
  T* data();
  template <typename T>
  const T* data() const;
  template <typename T>
  T* grad_data();

  void ensure_grad();
  bool has_grad() const;
  void zero_grad();

  double at(int64_t i) const;
  void set(int64_t i, double v);  // initialization/tests only, pre-graph
  double item() const;
  std::vector<double> values() const;
  std::vector<double> grad_values() const;
  double grad_at(int64_t i) const;

  Tensor detach() const;  // shares storage, no node, no grad participation
  Tensor clone() const;   // deep value copy, no node
  Tensor astype(DType dt) const;

  // Reverse pass from a scalar. Walks the graph in reverse topological
  // order, then drops every node so activations free immediately.
  void backward();

  std::shared_ptr<Node>& node() { return impl->node; }
  const std::shared_ptr<Node>& node() const { return impl->node; }

  std::shared_ptr<Impl> impl;
};

bool grad_enabled();

// RAII scope that disables tape recording (forward-only evaluation).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Throws NumericalError if any element is non-finite. Every op calls this
// on its output: NaN/Inf is an error surface, not a value.
void check_finite(const Tensor& t, const char* op);

// Named parameter collection. Iteration order is the sorted name order,
// which fixes the accumulation order for clipping and optimizer updates.
struct ParamSet {
  std::map<std::string, Tensor> params;
  std::set<std::string> frozen;

  Tensor& declare(const std::string& name, std::vector<int64_t> shape,
                  DType dt);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  void freeze_prefix(const std::string& prefix);
  void unfreeze_all();
  bool is_frozen(const std::string& name) const;
  // requires_grad := !frozen for every parameter; call after changing the
  // frozen set and before building a graph.
  void apply_freeze();

  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  void zero_grads();
  size_t size() const { return params.size(); }
};

}  // namespace coroi
