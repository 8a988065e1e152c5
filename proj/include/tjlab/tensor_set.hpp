#pragma once

#include <concepts>
#include <span>
#include <vector>

#include "tjlab/error.hpp"
#include "tjlab/network.hpp"

namespace tjlab {

// Contiguous batch of network-ready samples (CHW, normalized) plus labels.
template <std::floating_point T>
struct TensorSet {
  Shape shape;
  std::vector<T> data;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const T> sample(std::size_t i) const { return {data.data() + i * shape.size(), shape.size()}; }
  std::span<T> sample(std::size_t i) { return {data.data() + i * shape.size(), shape.size()}; }

  void push_back(std::span<const T> x, int label) {
    if (x.size() != shape.size()) throw ShapeError("TensorSet::push_back: sample size mismatch");
    data.insert(data.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  TensorSet subset(std::span<const std::size_t> idx) const {
    TensorSet out{shape, {}, {}};
    out.data.reserve(idx.size() * shape.size());
    out.labels.reserve(idx.size());
    for (auto i : idx) out.push_back(sample(i), labels[i]);
    return out;
  }
};

}  // namespace tjlab
