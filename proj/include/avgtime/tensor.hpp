#pragma once

// Dense row-major float64 tensors with tape-style reverse-mode differentiation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace avgtime {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Seeded generator for parameter init and dropout masks. Wraps mt19937_64 with
// the standard distributions, so streams are reproducible for a given toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches the node
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents
  std::uint64_t sequence = next_sequence();
  bool requires_grad = false;
  const char* op = "leaf";

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Handle to a graph node. Copies share the node; values are not mutated once an
// op has consumed them (optimizers update leaves between graph constructions).
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                       " values, got " + std::to_string(values.size()));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  // Result of a differentiable op. `backward` is dropped when no parent needs a gradient.
  static Tensor from_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    out.node_->op = op;
    bool needs = detail::grad_mode() && std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->backward = std::move(backward);
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }

  std::span<const double> data() const { return node_->data; }
  // Leaves only: callers must not mutate values that an existing graph still references.
  std::span<double> mutable_data() { return node_->data; }
  double item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Detached copy with its own storage.
  Tensor clone(bool requires_grad = false) const { return Tensor(shape(), node_->data, requires_grad); }

  detail::Node& node() const { return *node_; }
  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  detail::NodePtr node_;
};

// Assigns dLoss/dLeaf to every leaf reachable from `loss` (previous gradients are
// discarded). Nodes are processed in reverse construction order, which is a valid
// topological order because an op's inputs always exist before its output.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1 || loss.rank() > 1) {
    throw ShapeError("backward: loss must be a scalar of shape [] or [1], got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{&loss.node()};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->sequence > b->sequence; });

  for (auto* n : order) n->grad.assign(n->data.size(), 0.0);
  loss.node().grad[0] = 1.0;
  for (auto* n : order) {
    if (n->backward) n->backward(*n);
  }
  // Interior buffers are released; leaves keep theirs.
  for (auto* n : order) {
    if (n->backward) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

}  // namespace avgtime
