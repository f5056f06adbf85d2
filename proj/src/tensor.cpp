#include "emtm/tensor.hpp"

namespace emtm {

std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

Index Tensor::checked_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_to_string(s));
    n *= d;
  }
  return n;
}

AxisView axis_view(const Shape& shape, Index axis) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size()))
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape));
  AxisView v;
  for (Index i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  v.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace emtm
