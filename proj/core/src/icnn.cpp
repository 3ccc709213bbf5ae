#include "illid/icnn.hpp"

#include <cmath>
#include <limits>

#include "illid/error.hpp"

namespace illid {

using namespace ad;

namespace {

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

void check_input(const IcnnParams& p, const Tensor& z) {
  if (z.rank() != 2 || z.cols() != p.input_dim) {
    throw DimensionError("ICNN input " + to_string(z.shape()) + " does not match input dimension " +
                         std::to_string(p.input_dim));
  }
}

IcnnParams make_params(std::size_t l, std::size_t hidden, std::size_t width, double L, Rng* rng) {
  if (l == 0) throw DimensionError("ICNN input dimension must be positive");
  if (hidden > 0 && width == 0) throw DimensionError("ICNN hidden width must be positive");
  if (L < 0.0) throw ContractError("strong convexity constant must be non-negative");
  IcnnParams p;
  p.input_dim = l;
  p.strong_convexity = L;
  const double bound = 1.0 / std::sqrt(static_cast<double>(l));
  std::size_t in = 0;
  for (std::size_t i = 0; i <= hidden; ++i) {
    const std::size_t out = i == hidden ? 1 : width;
    IcnnLayer layer;
    if (rng) {
      layer.wz = uniform(out, l, -bound, bound, *rng);
      layer.b = uniform(1, out, -bound, bound, *rng);
    } else {
      layer.wz = Tensor::zeros({out, l});
      layer.b = Tensor::zeros({1, out});
    }
    if (i > 0) layer.wy_raw = Tensor::filled({out, in}, inverse_softplus(1.0 / static_cast<double>(in)));
    p.layers.push_back(std::move(layer));
    in = out;
  }
  return p;
}

}  // namespace

IcnnParams IcnnParams::random(std::size_t input_dim, std::size_t hidden_layers, std::size_t width,
                              double strong_convexity, Rng& rng) {
  return make_params(input_dim, hidden_layers, width, strong_convexity, &rng);
}

IcnnParams IcnnParams::zero(std::size_t input_dim, std::size_t hidden_layers, std::size_t width,
                            double strong_convexity) {
  return make_params(input_dim, hidden_layers, width, strong_convexity, nullptr);
}

std::vector<Tensor*> IcnnParams::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers) {
    out.push_back(&layer.wz);
    out.push_back(&layer.b);
    if (!layer.wy_raw.empty()) out.push_back(&layer.wy_raw);
  }
  return out;
}

std::vector<const Tensor*> IcnnParams::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers) {
    out.push_back(&layer.wz);
    out.push_back(&layer.b);
    if (!layer.wy_raw.empty()) out.push_back(&layer.wy_raw);
  }
  return out;
}

void IcnnParams::validate() const {
  if (layers.empty()) throw DimensionError("ICNN has no layers");
  std::size_t in = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    const std::size_t out = layer.wz.rank() == 2 ? layer.wz.rows() : 0;
    const std::string where = "ICNN layer " + std::to_string(i) + ": ";
    if (layer.wz.rank() != 2 || layer.wz.cols() != input_dim || out == 0)
      throw DimensionError(where + "Wz has shape " + to_string(layer.wz.shape()));
    if (layer.b.shape() != Shape{1, out}) throw DimensionError(where + "b has shape " + to_string(layer.b.shape()));
    if (i == 0 && !layer.wy_raw.empty()) throw DimensionError(where + "first layer has no Wy");
    if (i > 0 && layer.wy_raw.shape() != Shape{out, in})
      throw DimensionError(where + "Wy has shape " + to_string(layer.wy_raw.shape()));
    in = out;
  }
  if (in != 1) throw DimensionError("ICNN output layer must have width 1");
}

Tensor icnn_eval(const IcnnParams& p, const Tensor& z) {
  check_input(p, z);
  const std::size_t batch = z.rows();
  Tensor y;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& layer = p.layers[i];
    Tensor pre = matmul(z, transpose(layer.wz)) + repeat_rows(layer.b, batch);
    if (i > 0) pre = pre + matmul(y, transpose(softplus(layer.wy_raw)));
    y = i + 1 == p.layers.size() ? pre : softplus(pre);
  }
  return y + scale(row_sum(square(z)), 0.5 * p.strong_convexity);
}

double icnn_eval(const IcnnParams& p, std::span<const double> z) {
  return icnn_eval(p, Tensor::matrix(1, z.size(), {z.begin(), z.end()})).item();
}

Tensor brenier_forward(const IcnnParams& p, const Tensor& z) {
  check_input(p, z);
  const std::size_t batch = z.rows();
  const std::size_t l = p.input_dim;
  Tensor y;
  // jac[j] holds d y_i / d z_j for the current layer, one row per sample.
  std::vector<Tensor> jac(l);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& layer = p.layers[i];
    const bool last = i + 1 == p.layers.size();
    const Tensor wz_t = transpose(layer.wz);
    Tensor pre = matmul(z, wz_t) + repeat_rows(layer.b, batch);
    Tensor wy_t;
    if (i > 0) {
      wy_t = transpose(softplus(layer.wy_raw));
      pre = pre + matmul(y, wy_t);
    }
    std::vector<Tensor> next(l);
    for (std::size_t j = 0; j < l; ++j) {
      next[j] = repeat_rows(slice_row(wz_t, j), batch);
      if (i > 0) next[j] = next[j] + matmul(jac[j], wy_t);
    }
    if (last) {
      y = pre;
    } else {
      const Tensor slope = sigmoid(pre);
      y = softplus(pre);
      for (auto& jj : next) jj = slope * jj;
    }
    jac = std::move(next);
  }
  return concat_cols(jac) + scale(z, p.strong_convexity);
}

BrenierMap::BrenierMap(IcnnParams params) : params_(std::move(params)) { params_.validate(); }

void BrenierMap::set_strong_convexity(double L) {
  if (!(L >= 0.0)) throw ContractError("strong convexity constant must be non-negative");
  params_.strong_convexity = L;
}

std::vector<double> BrenierMap::operator()(std::span<const double> z) const {
  const Tensor out = brenier_forward(params_, Tensor::matrix(1, z.size(), {z.begin(), z.end()}));
  return {out.data().begin(), out.data().end()};
}

Tensor brenier_jacobian(const BrenierMap& m, std::span<const double> z, double h) {
  if (!(h > 0.0)) throw ContractError("finite-difference step must be positive");
  const std::size_t l = z.size();
  if (l != m.dim()) throw DimensionError("brenier_jacobian: point dimension mismatch");
  std::vector<double> shifted(2 * l * l);
  for (std::size_t j = 0; j < l; ++j)
    for (int s = 0; s < 2; ++s) {
      double* row = &shifted[(2 * j + s) * l];
      std::copy(z.begin(), z.end(), row);
      row[j] += s == 0 ? h : -h;
    }
  const Tensor out = m(Tensor::matrix(2 * l, l, std::move(shifted)));
  std::vector<double> jac(l * l);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      const double dij = (out(2 * j, i) - out(2 * j + 1, i)) / (2.0 * h);
      const double dji = (out(2 * i, j) - out(2 * i + 1, j)) / (2.0 * h);
      jac[i * l + j] = 0.5 * (dij + dji);
    }
  return Tensor::matrix(l, l, std::move(jac));
}

Tensor brenier_jacobian(const BrenierMap& m, std::span<const double> z) {
  double inf = 0.0;
  for (double v : z) inf = std::max(inf, std::abs(v));
  return brenier_jacobian(m, z, 1e-4 * (1.0 + inf));
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

constexpr double kMinSeparation = 1e-12;

}  // namespace

double empirical_inverse_lipschitz(
    const BrenierMap& m, const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs) {
  std::vector<double> stacked;
  std::size_t usable = 0;
  for (const auto& [x, y] : pairs) {
    if (x.size() != m.dim() || y.size() != m.dim())
      throw DimensionError("empirical_inverse_lipschitz: pair dimension mismatch");
    if (distance(x, y) < kMinSeparation) continue;
    stacked.insert(stacked.end(), x.begin(), x.end());
    stacked.insert(stacked.end(), y.begin(), y.end());
    ++usable;
  }
  if (usable == 0) throw ContractError("empirical_inverse_lipschitz: no pair with distinct points");
  const std::size_t l = m.dim();
  const Tensor in = Tensor::matrix(2 * usable, l, stacked);
  const Tensor out = m(in);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < usable; ++k) {
    const auto o = out.data();
    const double num = distance(o.subspan(2 * k * l, l), o.subspan((2 * k + 1) * l, l));
    const double den = distance(std::span<const double>(stacked).subspan(2 * k * l, l),
                                std::span<const double>(stacked).subspan((2 * k + 1) * l, l));
    best = std::min(best, num / den);
  }
  return best;
}

double empirical_inverse_lipschitz(std::span<const RecycledPair> pairs) {
  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& p : pairs) {
    const double den = distance(p.x, p.y);
    if (den < kMinSeparation) continue;
    best = std::min(best, distance(p.fx, p.fy) / den);
    any = true;
  }
  if (!any) throw ContractError("empirical_inverse_lipschitz: no pair with distinct points");
  return best;
}

Tensor zero_pad(const Tensor& u, std::size_t t) {
  if (u.rank() != 2 || u.cols() > t) {
    throw DimensionError("zero_pad: cannot embed " + to_string(u.shape()) + " into width " + std::to_string(t));
  }
  if (u.cols() == t) return u;
  return concat_cols({u, Tensor::zeros({u.rows(), t - u.cols()})});
}

Tensor composed_decoder(const BrenierMap& f1, const BrenierMap& f2, const Tensor& z) {
  if (f1.dim() > f2.dim()) {
    throw DimensionError("composed_decoder: inner dimension " + std::to_string(f1.dim()) +
                         " exceeds outer dimension " + std::to_string(f2.dim()));
  }
  return f2(zero_pad(f1(z), f2.dim()));
}

}  // namespace illid
