#pragma once

// Reverse-mode differentiable tensor.
//
// A Tensor is a shared handle to a graph node holding a row-major value
// buffer. Operations on tensors that require gradients record a backward
// closure and their parents; the graph lives as long as some handle to
// its output does, so a training step's tape is released when the loss
// goes out of scope.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace ocra {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage aligned to the widest vector register. Vectorized reductions split
// work by pointer alignment, so a fixed alignment keeps results bit-identical
// from run to run regardless of heap state.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor from_buffer(Shape shape, Buffer<T> values, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<NodeType> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative axes count from the back.
  int64_t dim(int axis) const;
  int64_t numel() const;

  std::span<const T> data() const;
  // Direct write access; reserved for initialization and optimizer updates.
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Copy of the value with no history.
  Tensor detach() const;

  // Populates grads of every requires_grad ancestor. Leaf grads accumulate
  // across calls; interior grads are reset first.
  void backward() const;

  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}
  std::shared_ptr<NodeType> node_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  loss.backward();
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace ocra
