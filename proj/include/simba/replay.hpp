#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "simba/autodiff.hpp"

namespace simba {

/// One environment interaction. Observations are stored exactly as handed in;
/// with the rsnorm scheme that means raw, un-normalized values. `done` is true
/// only for genuine termination, never for time-limit truncation.
struct Transition {
  std::vector<double> o;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> o_next;
  bool done = false;
};

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be > 0");
    items_.reserve(capacity);
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  size_t size() const { return items_.size(); }
  size_t capacity() const { return capacity_; }
  const Transition& at(size_t i) const { return items_[i]; }

  std::vector<size_t> sample_indices(size_t n, std::mt19937_64& rng) const {
    if (items_.empty()) throw std::runtime_error("ReplayBuffer: sample from empty buffer");
    std::uniform_int_distribution<size_t> pick(0, items_.size() - 1);
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = pick(rng);
    return idx;
  }

 private:
  size_t capacity_;
  size_t head_ = 0;  // oldest element once full
  std::vector<Transition> items_;
};

/// Minibatch assembled into dense matrices, still in buffer (raw) units.
struct Batch {
  Tensor o;      // (B, d_o)
  Tensor a;      // (B, |A|)
  Tensor r;      // (B, 1)
  Tensor o_next; // (B, d_o)
  Tensor done;   // (B, 1), 0.0 or 1.0
};

inline Batch assemble_batch(const ReplayBuffer& buf, const std::vector<size_t>& idx) {
  const int b = static_cast<int>(idx.size());
  const int d = static_cast<int>(buf.at(idx[0]).o.size());
  const int ad = static_cast<int>(buf.at(idx[0]).a.size());
  Batch out;
  out.o = Tensor::empty({b, d});
  out.a = Tensor::empty({b, ad});
  out.r = Tensor::empty({b, 1});
  out.o_next = Tensor::empty({b, d});
  out.done = Tensor::empty({b, 1});
  for (int i = 0; i < b; ++i) {
    const Transition& t = buf.at(idx[i]);
    std::copy(t.o.begin(), t.o.end(), out.o.data() + static_cast<std::int64_t>(i) * d);
    std::copy(t.a.begin(), t.a.end(), out.a.data() + static_cast<std::int64_t>(i) * ad);
    std::copy(t.o_next.begin(), t.o_next.end(), out.o_next.data() + static_cast<std::int64_t>(i) * d);
    out.r[i] = t.r;
    out.done[i] = t.done ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace simba
