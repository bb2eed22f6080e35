#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "stainlab/tensor.hpp"

namespace stainlab {

/// Reverse-mode gradient tape.
///
/// Ops append one record per call whose inputs require grad. Records are
/// appended in evaluation order, so replaying them back to front is a valid
/// topological order; each record runs at most once per `backward`.
/// `clear()` drops every record and with it every captured intermediate.
template <typename T>
class BasicTape {
 public:
  using BackwardFn = std::function<void()>;

  explicit BasicTape(bool recording = true) : recording_(recording) {}
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool recording() const noexcept { return recording_; }
  void set_recording(bool on) noexcept { recording_ = on; }

  /// True when an op over `inputs` has to be recorded.
  bool needs(std::initializer_list<const BasicTensor<T>*> inputs) const;
  bool needs(const std::vector<BasicTensor<T>>& inputs) const;

  /// Marks `output` as tracked and stores its backward rule. The rule reads
  /// `output.grad()` and accumulates into its inputs' gradients.
  void record(BasicTensor<T>& output, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 for a one-element root and replays the tape.
  void backward(BasicTensor<T>& root);

  void clear() noexcept { records_.clear(); }
  std::size_t size() const noexcept { return records_.size(); }

 private:
  struct Record {
    BasicTensor<T> output;
    BackwardFn backward;
  };
  bool recording_;
  std::vector<Record> records_;
};

using Tape = BasicTape<float>;
using TapeD = BasicTape<double>;

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace stainlab
