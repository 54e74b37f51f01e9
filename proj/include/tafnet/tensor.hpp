#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tafnet {

// Shape of a rank-4 tensor in (batch, channel, height, width) order.
struct Shape4 {
  int n = 1, c = 1, h = 1, w = 1;

  int64_t numel() const {
    return int64_t(n) * c * h * w;
  }
  bool operator==(const Shape4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape4& o) const { return !(*this == o); }
  std::string str() const;
};

// Dense rank-4 array of doubles, row-major in (n,c,h,w) order.
// Values are plain storage; gradients live in a separate Tensor4 of the
// same shape (see autograd.hpp).
class Tensor4 {
 public:
  Shape4 shape;
  std::vector<double> data;

  Tensor4() : data(1, 0.0) {}
  explicit Tensor4(Shape4 s, double fill = 0.0);
  static Tensor4 from(Shape4 s, std::vector<double> values);
  static Tensor4 scalar(double v);

  double& at(int n, int c, int h, int w) {
    return data[idx(n, c, h, w)];
  }
  double at(int n, int c, int h, int w) const {
    return data[idx(n, c, h, w)];
  }
  size_t idx(int n, int c, int h, int w) const {
    return ((size_t(n) * shape.c + c) * shape.h + h) * shape.w + w;
  }
  size_t size() const { return data.size(); }

  double sum() const;
  bool all_finite() const;
  bool bitwise_equal(const Tensor4& o) const;
};

void check_shape(bool ok, const std::string& message);

}  // namespace tafnet
