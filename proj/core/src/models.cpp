#include "illid/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "illid/error.hpp"

namespace illid {

using namespace ad;

namespace {

constexpr char kMagic[] = {'I', 'L', 'V', 'A', 'E', '1'};
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_finite(const Tensor& t, const char* term) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw TrainingError(term, std::string("non-finite value in ELBO term '") + term + "'");
}

void check_data(const Tensor& x, std::size_t m) {
  if (x.rank() != 2 || x.cols() != m)
    throw DimensionError("model input " + to_string(x.shape()) + " does not match data dimension " +
                         std::to_string(m));
}

ExpFamily make_likelihood(const ModelConfig& cfg) {
  return cfg.likelihood == ModelConfig::Likelihood::gaussian ? ExpFamily::gaussian(cfg.data_dim, cfg.sigma_dec)
                                                             : ExpFamily::bernoulli(cfg.data_dim);
}

Tensor one_hot_rows(std::size_t rows, std::size_t c, std::size_t y) {
  Tensor t = Tensor::zeros({rows, c});
  auto d = t.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) d[r * c + y] = 1.0;
  return t;
}

Tensor reparameterize(const Tensor& mu, const Tensor& log_var, Rng& rng) {
  const Tensor eps = standard_normal(mu.rows(), mu.cols(), rng);
  return mu + exp(scale(log_var, 0.5)) * eps;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::size_t in, std::size_t hidden_layers, std::size_t width, std::size_t out, Rng& rng) {
  std::size_t fan_in = in;
  for (std::size_t i = 0; i <= hidden_layers; ++i) {
    const std::size_t fan_out = i == hidden_layers ? out : width;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    w_.push_back(uniform(fan_in, fan_out, -bound, bound, rng));
    b_.push_back(uniform(1, fan_out, -bound, bound, rng));
    fan_in = fan_out;
  }
}

std::size_t Mlp::input_dim() const { return w_.empty() ? 0 : w_.front().rows(); }
std::size_t Mlp::output_dim() const { return w_.empty() ? 0 : w_.back().cols(); }

Tensor Mlp::operator()(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != input_dim())
    throw DimensionError("MLP input " + to_string(x.shape()) + " expects " + std::to_string(input_dim()) +
                         " columns");
  Tensor h = x;
  for (std::size_t i = 0; i < w_.size(); ++i) {
    Tensor a = matmul(h, w_[i]) + repeat_rows(b_[i], x.rows());
    h = i + 1 == w_.size() ? std::move(a) : tanh(a);
  }
  return h;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < w_.size(); ++i) {
    out.push_back(&w_[i]);
    out.push_back(&b_[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(BrenierMap single) : first_(std::move(single)) {}

Decoder::Decoder(BrenierMap f1, BrenierMap f2) : first_(std::move(f1)), second_(std::move(f2)) {
  if (first_.dim() >= second_->dim())
    throw DimensionError("composed decoder needs latent dimension " + std::to_string(first_.dim()) +
                         " below output dimension " + std::to_string(second_->dim()));
}

Decoder Decoder::random(const ModelConfig& cfg, Rng& rng) {
  auto f1 = BrenierMap(IcnnParams::random(cfg.latent_dim, cfg.icnn.layers, cfg.icnn.width, cfg.L1, rng));
  if (cfg.latent_dim == cfg.data_dim) return Decoder(std::move(f1));
  auto f2 = BrenierMap(IcnnParams::random(cfg.data_dim, cfg.icnn.layers, cfg.icnn.width, cfg.L2, rng));
  return Decoder(std::move(f1), std::move(f2));
}

Tensor Decoder::operator()(const Tensor& z, Tensor* stage1) const {
  Tensor u = first_(z);
  if (stage1) *stage1 = u.detached();
  if (!second_) return u;
  return (*second_)(zero_pad(u, second_->dim()));
}

std::vector<double> Decoder::operator()(std::span<const double> z) const {
  const Tensor out = (*this)(Tensor::matrix(1, z.size(), {z.begin(), z.end()}));
  return {out.data().begin(), out.data().end()};
}

std::vector<Tensor*> Decoder::parameters() {
  auto out = first_.params().parameters();
  if (second_) {
    auto more = second_->params().parameters();
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// DiagGaussianMixture

DiagGaussianMixture::DiagGaussianMixture(std::size_t r, std::size_t k, std::size_t d)
    : rows(r), components(k), dim(d), log_weight(r * k, 0.0), mean(r * k * d, 0.0), log_var(r * k * d, 0.0) {}

double DiagGaussianMixture::log_density(std::size_t row, std::span<const double> z) const {
  if (z.size() != dim) throw DimensionError("mixture density: point has " + std::to_string(z.size()) + " entries");
  std::vector<double> terms(components);
  for (std::size_t k = 0; k < components; ++k) {
    const auto mu = component_mean(row, k);
    const auto lv = component_log_var(row, k);
    double s = log_weight[row * components + k];
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = z[d] - mu[d];
      s -= 0.5 * (kLog2Pi + lv[d] + diff * diff * std::exp(-lv[d]));
    }
    terms[k] = s;
  }
  return log_sum_exp(terms);
}

std::vector<double> DiagGaussianMixture::score(std::size_t row, std::span<const double> z) const {
  std::vector<double> terms(components);
  for (std::size_t k = 0; k < components; ++k) {
    const auto mu = component_mean(row, k);
    const auto lv = component_log_var(row, k);
    double s = log_weight[row * components + k];
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = z[d] - mu[d];
      s -= 0.5 * (lv[d] + diff * diff * std::exp(-lv[d]));
    }
    terms[k] = s;
  }
  const double norm = log_sum_exp(terms);
  std::vector<double> g(dim, 0.0);
  for (std::size_t k = 0; k < components; ++k) {
    const double r = std::exp(terms[k] - norm);
    const auto mu = component_mean(row, k);
    const auto lv = component_log_var(row, k);
    for (std::size_t d = 0; d < dim; ++d) g[d] -= r * (z[d] - mu[d]) * std::exp(-lv[d]);
  }
  return g;
}

std::vector<double> DiagGaussianMixture::sample(std::size_t row, Rng& rng, std::size_t* component) const {
  std::size_t k = 0;
  if (components > 1) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (k = 0; k + 1 < components; ++k) {
      u -= std::exp(log_weight[row * components + k]);
      if (u < 0) break;
    }
  }
  if (component) *component = k;
  std::normal_distribution<double> n01;
  const auto mu = component_mean(row, k);
  const auto lv = component_log_var(row, k);
  std::vector<double> z(dim);
  for (std::size_t d = 0; d < dim; ++d) z[d] = mu[d] + std::exp(0.5 * lv[d]) * n01(rng);
  return z;
}

std::vector<double> DiagGaussianMixture::mixture_mean(std::size_t row) const {
  std::vector<double> m(dim, 0.0);
  for (std::size_t k = 0; k < components; ++k) {
    const double w = std::exp(log_weight[row * components + k]);
    const auto mu = component_mean(row, k);
    for (std::size_t d = 0; d < dim; ++d) m[d] += w * mu[d];
  }
  return m;
}

// ---------------------------------------------------------------------------
// LatentModel

LatentModel::LatentModel(ModelConfig cfg) : cfg_(std::move(cfg)), likelihood_(make_likelihood(cfg_)) {
  validate(cfg_, "/model");
}

void LatentModel::set_first_stage_L(double L) {
  decoder_.first().set_strong_convexity(L);
  cfg_.L1 = L;
}

std::vector<const Tensor*> LatentModel::parameters() const {
  auto mut = const_cast<LatentModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

Generated LatentModel::generate(std::size_t n, Rng& rng) const {
  if (n == 0) throw ContractError("generate needs n >= 1");
  const auto p = prior();
  std::vector<double> z(n * latent_dim());
  Generated g;
  g.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto zi = p.sample(0, rng, &g.y[i]);
    std::copy(zi.begin(), zi.end(), z.begin() + i * latent_dim());
  }
  g.z = Tensor::matrix(n, latent_dim(), std::move(z));
  g.x = likelihood_.sample(decoder_(g.z), rng);
  return g;
}

Tensor LatentModel::log_likelihood(const Tensor& x, const Tensor& z) const {
  check_data(x, data_dim());
  return likelihood_.log_density(x, decoder_(z));
}

Tensor gaussian_kl_to_standard(const Tensor& mu, const Tensor& log_var) {
  return scale(row_sum(add_scalar(exp(log_var) + square(mu) - log_var, -1.0)), 0.5);
}

// ---------------------------------------------------------------------------
// IlLidVaeModel

IlLidVaeModel::IlLidVaeModel(const ModelConfig& cfg, Rng& rng) : LatentModel(cfg) {
  encoder_ = Mlp(cfg.data_dim, cfg.encoder.layers, cfg.encoder.width, 2 * cfg.latent_dim, rng);
  decoder_ = Decoder::random(cfg, rng);
}

std::vector<Tensor*> IlLidVaeModel::parameters() {
  auto out = encoder_.parameters();
  auto dec = decoder_.parameters();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

std::pair<Tensor, Tensor> IlLidVaeModel::encode(const Tensor& x) const {
  check_data(x, data_dim());
  const Tensor h = encoder_(x);
  return {slice_cols(h, 0, latent_dim()), slice_cols(h, latent_dim(), latent_dim())};
}

Tensor IlLidVaeModel::elbo(const Tensor& x, Rng& rng, ElboCapture* capture) const {
  const auto [mu, lv] = encode(x);
  const Tensor z = reparameterize(mu, lv, rng);
  Tensor stage1;
  const Tensor xi = decoder_(z, capture ? &stage1 : nullptr);
  const Tensor rec = likelihood_.log_density(x, xi);
  check_finite(rec, "reconstruction");
  const Tensor kl = gaussian_kl_to_standard(mu, lv);
  check_finite(kl, "kl");
  if (capture) *capture = {z.detached(), std::move(stage1)};
  return rec - kl;
}

DiagGaussianMixture IlLidVaeModel::posterior(const Tensor& x) const {
  const auto [mu, lv] = encode(x);
  DiagGaussianMixture q(x.rows(), 1, latent_dim());
  std::copy(mu.data().begin(), mu.data().end(), q.mean.begin());
  std::copy(lv.data().begin(), lv.data().end(), q.log_var.begin());
  return q;
}

DiagGaussianMixture IlLidVaeModel::prior() const { return DiagGaussianMixture(1, 1, latent_dim()); }

std::vector<double> IlLidVaeModel::kl_to_prior(const Tensor& x) const {
  const auto [mu, lv] = encode(x);
  const Tensor kl = gaussian_kl_to_standard(mu, lv);
  return {kl.data().begin(), kl.data().end()};
}

// ---------------------------------------------------------------------------
// IlLidMVaeModel

IlLidMVaeModel::IlLidMVaeModel(const ModelConfig& cfg, Rng& rng) : LatentModel(cfg) {
  qy_ = Mlp(cfg.data_dim, cfg.encoder.layers, cfg.encoder.width, cfg.c, rng);
  qz_ = Mlp(cfg.data_dim + cfg.c, cfg.encoder.layers, cfg.encoder.width, 2 * cfg.latent_dim, rng);
  decoder_ = Decoder::random(cfg, rng);
  std::vector<double> means(cfg.c * cfg.latent_dim, 0.0);
  for (std::size_t y = 0; y < std::min(cfg.c, cfg.latent_dim); ++y) means[y * cfg.latent_dim + y] = 1.0;
  prior_mean_ = Tensor::matrix(cfg.c, cfg.latent_dim, std::move(means));
  prior_log_var_ = Tensor::zeros({cfg.c, cfg.latent_dim});
}

std::vector<Tensor*> IlLidMVaeModel::parameters() {
  auto out = qy_.parameters();
  for (auto* p : qz_.parameters()) out.push_back(p);
  for (auto* p : decoder_.parameters()) out.push_back(p);
  out.push_back(&prior_mean_);
  out.push_back(&prior_log_var_);
  return out;
}

Tensor IlLidMVaeModel::log_responsibilities(const Tensor& x) const {
  check_data(x, data_dim());
  return log_softmax_rows(qy_(x));
}

std::pair<Tensor, Tensor> IlLidMVaeModel::encode(const Tensor& x, std::size_t y) const {
  check_data(x, data_dim());
  if (y >= cfg_.c) throw ContractError("component index out of range");
  const Tensor h = qz_(concat_cols({x, one_hot_rows(x.rows(), cfg_.c, y)}));
  return {slice_cols(h, 0, latent_dim()), slice_cols(h, latent_dim(), latent_dim())};
}

Tensor IlLidMVaeModel::elbo(const Tensor& x, Rng& rng, ElboCapture* capture) const {
  const std::size_t B = x.rows();
  const Tensor log_q = log_responsibilities(x);
  const Tensor q = exp(log_q);
  Tensor total;
  std::vector<double> zs, s1;
  for (std::size_t y = 0; y < cfg_.c; ++y) {
    const auto [mu, lv] = encode(x, y);
    const Tensor z = reparameterize(mu, lv, rng);
    Tensor stage1;
    const Tensor xi = decoder_(z, capture ? &stage1 : nullptr);
    const Tensor rec = likelihood_.log_density(x, xi);
    check_finite(rec, "reconstruction");
    const Tensor pm = repeat_rows(slice_row(prior_mean_, y), B);
    const Tensor plv = repeat_rows(slice_row(prior_log_var_, y), B);
    const Tensor kl =
        scale(row_sum(add_scalar(plv - lv + (exp(lv) + square(mu - pm)) * exp(negate(plv)), -1.0)), 0.5);
    check_finite(kl, "kl");
    const Tensor term = slice_col(q, y) * (rec - kl);
    total = y == 0 ? term : total + term;
    if (capture) {
      zs.insert(zs.end(), z.data().begin(), z.data().end());
      s1.insert(s1.end(), stage1.data().begin(), stage1.data().end());
    }
  }
  const Tensor cat_kl = row_sum(q * add_scalar(log_q, std::log(static_cast<double>(cfg_.c))));
  check_finite(cat_kl, "categorical_kl");
  if (capture) {
    capture->z = Tensor::matrix(B * cfg_.c, latent_dim(), std::move(zs));
    capture->stage1 = Tensor::matrix(B * cfg_.c, latent_dim(), std::move(s1));
  }
  return total - cat_kl;
}

DiagGaussianMixture IlLidMVaeModel::posterior(const Tensor& x) const {
  const std::size_t n = x.rows(), c = cfg_.c, l = latent_dim();
  DiagGaussianMixture q(n, c, l);
  const Tensor log_q = log_responsibilities(x);
  std::copy(log_q.data().begin(), log_q.data().end(), q.log_weight.begin());
  for (std::size_t y = 0; y < c; ++y) {
    const auto [mu, lv] = encode(x, y);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t d = 0; d < l; ++d) {
        q.mean[(r * c + y) * l + d] = mu(r, d);
        q.log_var[(r * c + y) * l + d] = lv(r, d);
      }
  }
  return q;
}

DiagGaussianMixture IlLidMVaeModel::prior() const {
  DiagGaussianMixture p(1, cfg_.c, latent_dim());
  std::fill(p.log_weight.begin(), p.log_weight.end(), -std::log(static_cast<double>(cfg_.c)));
  std::copy(prior_mean_.data().begin(), prior_mean_.data().end(), p.mean.begin());
  std::copy(prior_log_var_.data().begin(), prior_log_var_.data().end(), p.log_var.begin());
  return p;
}

std::vector<double> IlLidMVaeModel::kl_to_prior(const Tensor& x) const {
  const auto q = posterior(x);
  const auto p = prior();
  const std::size_t c = cfg_.c, l = latent_dim();
  std::vector<double> out(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double total = 0.0;
    for (std::size_t y = 0; y < c; ++y) {
      const double lw = q.log_weight[r * c + y];
      const double w = std::exp(lw);
      const auto mu = q.component_mean(r, y), lv = q.component_log_var(r, y);
      const auto pm = p.component_mean(0, y), plv = p.component_log_var(0, y);
      double kl = 0.0;
      for (std::size_t d = 0; d < l; ++d) {
        const double diff = mu[d] - pm[d];
        kl += 0.5 * (plv[d] - lv[d] + (std::exp(lv[d]) + diff * diff) * std::exp(-plv[d]) - 1.0);
      }
      total += w * kl;
      if (w > 0) total += w * (lw + std::log(static_cast<double>(c)));
    }
    out[r] = total;
  }
  return out;
}

Tensor posterior_responsibilities(const IlLidMVaeModel& model, const Tensor& x) {
  return exp(model.log_responsibilities(x));
}

std::unique_ptr<LatentModel> make_model(const ModelConfig& cfg, Rng& rng) {
  if (cfg.kind == ModelConfig::Kind::vae) return std::make_unique<IlLidVaeModel>(cfg, rng);
  return std::make_unique<IlLidMVaeModel>(cfg, rng);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(const std::vector<unsigned char>& buf, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[at + i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const LatentModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  const std::string header = to_json(model.config());
  os.write(kMagic, sizeof kMagic);
  write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const Tensor* p : model.parameters())
    for (double v : p->data()) write_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

std::unique_ptr<LatentModel> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("checkpoint magic is not ILVAE1", 0);
  std::size_t at = sizeof kMagic;
  if (buf.size() < at + 8) throw FormatError("truncated checkpoint header", at);
  const std::uint64_t len = read_u64(buf, at);
  at += 8;
  if (buf.size() - at < len) throw FormatError("truncated checkpoint config", at);
  ModelConfig cfg;
  try {
    cfg = parse_model_config(std::string_view(reinterpret_cast<const char*>(buf.data() + at), len));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what(), at);
  }
  at += len;
  Rng rng(0);
  auto model = make_model(cfg, rng);
  for (Tensor* p : model->parameters()) {
    auto d = p->mutable_data();
    if (buf.size() - at < 8 * d.size()) throw FormatError("truncated parameter data", at);
    for (auto& v : d) {
      v = std::bit_cast<double>(read_u64(buf, at));
      at += 8;
    }
  }
  if (at != buf.size()) throw FormatError("trailing bytes after parameters", at);
  return model;
}

}  // namespace illid
