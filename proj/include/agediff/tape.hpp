#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "agediff/tensor.hpp"

namespace agediff {

// Reverse-mode tape. Records primitive operations in creation order, which
// is a valid topological order, and replays their adjoint rules in reverse.
// One tape per training step; reset between steps. Single-threaded; each
// thread has its own active tape.
template <class S>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;
  ~TapeT() {
    if (active_ == this) active_ = nullptr;
  }

  // RAII activation of a tape on the current thread.
  class Scope {
   public:
    explicit Scope(TapeT& tape) : prev_(active_) { active_ = &tape; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    TapeT* prev_;
  };

  static TapeT* active() { return active_; }

  void record(std::shared_ptr<TensorDataT<S>> out, std::function<void()> backprop) {
    nodes_.push_back(Node{std::move(out), std::move(backprop)});
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Seed d(loss)/d(loss)=1 and propagate adjoints through every recorded
  // node in reverse order. Gradients land in each tracked tensor's grad.
  void backward(const TensorT<S>& loss) {
    if (consumed_) throw Error("backward called twice without reset");
    if (!loss.is_scalar()) throw ShapeError("backward requires a scalar loss");
    if (!loss.tracked())
      throw Error("loss is not connected to tracked inputs on this tape");
    auto loss_data = loss.handle();
    loss_data->grad.assign(1, S(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->out->grad.empty()) it->backprop();
    }
    consumed_ = true;
  }

  // Drop all recorded nodes and intermediate gradients. Leaf gradients are
  // owned by the leaves themselves and survive until cleared there.
  void reset() {
    for (auto& n : nodes_) {
      n.out->grad.clear();
      n.out->tracked = false;
    }
    nodes_.clear();
    consumed_ = false;
  }

 private:
  struct Node {
    std::shared_ptr<TensorDataT<S>> out;
    std::function<void()> backprop;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
  static thread_local TapeT* active_;
};

template <class S>
thread_local TapeT<S>* TapeT<S>::active_ = nullptr;

using Tape = TapeT<float>;

}  // namespace agediff
