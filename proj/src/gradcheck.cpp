#include "kacl/gradcheck.hpp"

#include <cmath>
#include <string>

namespace kacl {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (eps < 1e-7 || eps > 1e-3) throw UsageError("grad_check: eps must be in [1e-7, 1e-3]");

  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Graph g;
  std::vector<double> analytic;
  {
    Recording rec(g);
    Tensor loss = f(probe);
    if (loss.size() != 1) throw UsageError("grad_check: f must be scalar-valued");
    g.backward(loss);
    analytic = probe.grad();
  }

  Tensor pt = x.clone();
  double worst = 0.0;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    const double saved = pt[i];
    pt[i] = saved + eps;
    const double fp = f(pt).value();
    pt[i] = saved - eps;
    const double fm = f(pt).value();
    pt[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite probe at coordinate " + std::to_string(i));
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    if (err > worst) worst = err;
  }
  return worst;
}

}  // namespace kacl
