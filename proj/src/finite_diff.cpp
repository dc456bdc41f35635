#include "metaemb/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "metaemb/errors.hpp"

namespace metaemb {

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Tensor numeric_hvp(const std::function<Tensor(const Tensor&)>& grad_fn, const Tensor& x, const Tensor& v, double h) {
  if (v.shape() != x.shape()) throw ShapeError("numeric_hvp: direction shape mismatch");
  Tensor up = x, down = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    up[i] += h * v[i];
    down[i] -= h * v[i];
  }
  Tensor gu = grad_fn(up);
  Tensor gd = grad_fn(down);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (gu[i] - gd[i]) / (2.0 * h);
  return out;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.numel() != b.numel()) throw ShapeError("relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    na = std::max(na, std::abs(a[i]));
    nb = std::max(nb, std::abs(b[i]));
  }
  return diff / std::max({na, nb, floor});
}

}  // namespace metaemb
