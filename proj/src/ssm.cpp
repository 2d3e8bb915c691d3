#include "ssmil/ssm.hpp"

#include <cmath>
#include <memory>

namespace ssmil {

namespace {

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

void check_scan_inputs(const Matrix& u, const Matrix& delta, const Matrix& b_in,
                       const Matrix& c_out, const Array& rates, const MaskVec& mask,
                       const MaskVec& exempt) {
  const Index n = u.rows(), channels = u.cols(), param_dims = rates.size();
  contract(n >= 1, "selective_scan: empty sequence");
  contract(delta.rows() == n && b_in.rows() == n && c_out.rows() == n,
           "selective_scan: sequence lengths disagree");
  contract(param_dims >= 1 && channels % param_dims == 0,
           "selective_scan: channels " + std::to_string(channels) +
               " not divisible into param dims " + std::to_string(param_dims));
  contract(delta.cols() == param_dims, "selective_scan: delta has " +
                                           std::to_string(delta.cols()) + " dims, expected " +
                                           std::to_string(param_dims));
  contract(b_in.cols() == c_out.cols(), "selective_scan: B/C state dims differ");
  contract((rates < 0.0).all(), "selective_scan: decay rate A must be negative");
  contract((delta.array() > 0.0).all(), "selective_scan: delta must be positive");
  contract(mask.empty() || static_cast<Index>(mask.size()) == n,
           "selective_scan: mask length " + std::to_string(mask.size()) + " vs sequence " +
               std::to_string(n));
  contract(exempt.empty() || static_cast<Index>(exempt.size()) == channels,
           "selective_scan: channel_exempt length " + std::to_string(exempt.size()) +
               " vs channels " + std::to_string(channels));
}

inline bool updates_state(const MaskVec& mask, const MaskVec& exempt, Index token, Index channel) {
  if (mask.empty() || mask[static_cast<size_t>(token)]) return true;
  return !exempt.empty() && exempt[static_cast<size_t>(channel)];
}

}  // namespace

Array SsmParams::decay_rates() const { return -a_log.value().row(0).array().exp(); }

SsmParams make_ssm_params(Index d_model, Index state_dim, SsmMode mode, Index n_heads,
                          Discretization method, std::mt19937_64& rng) {
  contract(d_model >= 1 && state_dim >= 1 && n_heads >= 1, "make_ssm_params: bad extents");
  SsmParams p;
  p.mode = mode;
  p.method = method;
  p.n_heads = n_heads;
  p.d_model = d_model;
  p.channels = d_model;
  p.state_dim = state_dim;
  contract(p.channels % p.param_dims() == 0, "make_ssm_params: heads must divide channels");

  std::normal_distribution<double> normal(0.0, 1.0);
  const auto init = [&](Index rows, Index cols, double scale) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng) * scale;
    return m;
  };
  const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
  const Index pd = p.param_dims();

  p.in_proj = Tensor::param(init(d_model, p.channels, s));
  p.delta_proj = Tensor::param(init(d_model, pd, s * 0.1));
  p.delta_bias = Tensor::param(Matrix::Constant(1, pd, inverse_softplus(0.01)));
  p.b_proj = Tensor::param(init(d_model, state_dim, s));
  p.c_proj = Tensor::param(init(d_model, state_dim, s));
  p.out_proj = Tensor::param(init(p.channels, d_model, s));

  // Decay rates spread evenly over [1, state_dim] so timescales differ.
  Matrix a_log(1, pd);
  for (Index k = 0; k < pd; ++k) {
    const double target =
        pd > 1 ? 1.0 + (static_cast<double>(state_dim) - 1.0) * k / (pd - 1) : 1.0;
    a_log(0, k) = std::log(target);
  }
  p.a_log = Tensor::param(std::move(a_log));
  return p;
}

ScanTrace scan_core(const Matrix& u, const Matrix& delta, const Matrix& b_in,
                    const Matrix& c_out, const Array& decay_rates, Discretization method,
                    const MaskVec& mask, const MaskVec& channel_exempt) {
  check_scan_inputs(u, delta, b_in, c_out, decay_rates, mask, channel_exempt);
  const Index n = u.rows(), channels = u.cols();
  const Index param_dims = decay_rates.size();
  const Index group = channels / param_dims;
  const Index state = b_in.cols();

  ScanTrace t;
  t.delta = delta;
  t.b_in = b_in;
  t.c_out = c_out;
  t.u = u;
  t.abar.resize(n, param_dims);
  t.bcoef.resize(n, param_dims);
  t.y.resize(n, channels);
  t.h.reserve(static_cast<size_t>(n));

  // state kept transposed ([state x channels]) so per-channel updates touch
  // contiguous memory; the trace exposes the conventional orientation
  Matrix h_t = Matrix::Zero(state, channels);
  Vector b_i(state), c_i(state);
  for (Index i = 0; i < n; ++i) {
    for (Index p = 0; p < param_dims; ++p) {
      const double a = decay_rates(p);
      const double d = delta(i, p);
      const double ab = std::exp(d * a);
      t.abar(i, p) = ab;
      t.bcoef(i, p) = method == Discretization::euler ? d : (ab - 1.0) / a;
    }
    b_i = b_in.row(i).transpose();
    c_i = c_out.row(i).transpose();
    for (Index c = 0; c < channels; ++c) {
      if (!updates_state(mask, channel_exempt, i, c)) continue;
      const Index p = c / group;
      h_t.col(c) = t.abar(i, p) * h_t.col(c) + (t.bcoef(i, p) * u(i, c)) * b_i;
    }
    t.y.row(i).noalias() = c_i.transpose() * h_t;
    t.h.push_back(h_t.transpose());
  }
  return t;
}

ScanResult selective_scan(const Matrix& tokens, const SsmParams& params, const MaskVec& mask,
                          const MaskVec& channel_exempt) {
  contract(tokens.rows() >= 1, "selective_scan: empty sequence");
  contract(tokens.cols() == params.d_model,
           "selective_scan: token dim " + std::to_string(tokens.cols()) + " vs d_model " +
               std::to_string(params.d_model));
  const Matrix u = tokens * params.in_proj.value();
  Matrix delta_pre = tokens * params.delta_proj.value();
  delta_pre.rowwise() += params.delta_bias.value().row(0);
  const Matrix delta = delta_pre.unaryExpr([](double z) { return softplus_value(z); });
  const Matrix b_in = tokens * params.b_proj.value();
  const Matrix c_out = tokens * params.c_proj.value();

  ScanResult r;
  r.trace = scan_core(u, delta, b_in, c_out, params.decay_rates(), params.method, mask,
                      channel_exempt);
  r.outputs = r.trace.y * params.out_proj.value();
  r.state.h = r.trace.h.back();
  r.state.step = tokens.rows();
  return r;
}

Tensor selective_scan_op(const Tensor& u, const Tensor& delta, const Tensor& b_in,
                         const Tensor& c_out, const Tensor& a_log, Discretization method,
                         const MaskVec& mask, const MaskVec& channel_exempt) {
  const Array rates = -a_log.value().row(0).array().exp();
  auto trace = std::make_shared<ScanTrace>(scan_core(u.value(), delta.value(), b_in.value(),
                                                     c_out.value(), rates, method, mask,
                                                     channel_exempt));
  Matrix value = trace->y;
  return make_op(
      "selective_scan", std::move(value), {u, delta, b_in, c_out, a_log},
      [trace, rates, method, mask, channel_exempt](TensorNode& node) {
        const Matrix& g = node.grad;  // [N x channels]
        const Index n = trace->u.rows();
        const Index channels = trace->u.cols();
        const Index param_dims = rates.size();
        const Index group = channels / param_dims;
        const Index state = trace->b_in.cols();

        // adjoint state transposed, matching the forward layout
        Matrix gh_t = Matrix::Zero(state, channels);
        Matrix h_prev_t(state, channels);
        Matrix du = Matrix::Zero(n, channels);
        Matrix ddelta = Matrix::Zero(n, param_dims);
        Matrix db = Matrix::Zero(n, state);
        Matrix dc = Matrix::Zero(n, state);
        Array da = Array::Zero(param_dims);

        Vector g_i(channels), b_i(state), db_i(state);
        Array dabar(param_dims), dbcoef(param_dims);
        for (Index i = n - 1; i >= 0; --i) {
          const Matrix& h_i = trace->h[static_cast<size_t>(i)];
          g_i = g.row(i).transpose();
          b_i = trace->b_in.row(i).transpose();
          // y_i = h_i * C_i
          dc.row(i).noalias() += g.row(i) * h_i;
          gh_t.noalias() += trace->c_out.row(i).transpose() * g.row(i);
          if (i > 0) h_prev_t = trace->h[static_cast<size_t>(i - 1)].transpose();

          dabar.setZero();
          dbcoef.setZero();
          db_i.setZero();
          for (Index c = 0; c < channels; ++c) {
            if (!updates_state(mask, channel_exempt, i, c)) continue;
            const Index p = c / group;
            const double ghb = gh_t.col(c).dot(b_i);
            if (i > 0) dabar(p) += gh_t.col(c).dot(h_prev_t.col(c));
            dbcoef(p) += ghb * trace->u(i, c);
            du(i, c) += trace->bcoef(i, p) * ghb;
            db_i += (trace->bcoef(i, p) * trace->u(i, c)) * gh_t.col(c);
            gh_t.col(c) *= trace->abar(i, p);
          }
          db.row(i) += db_i.transpose();
          for (Index p = 0; p < param_dims; ++p) {
            const double a = rates(p);
            const double d = trace->delta(i, p);
            const double ab = trace->abar(i, p);
            const double dab_ddelta = a * ab;
            const double dab_da = d * ab;
            double dco_ddelta, dco_da;
            if (method == Discretization::euler) {
              dco_ddelta = 1.0;
              dco_da = 0.0;
            } else {
              dco_ddelta = ab;
              dco_da = (d * ab * a - (ab - 1.0)) / (a * a);
            }
            ddelta(i, p) += dabar(p) * dab_ddelta + dbcoef(p) * dco_ddelta;
            da(p) += dabar(p) * dab_da + dbcoef(p) * dco_da;
          }
        }
        TensorNode::accumulate(node.parents[0], du);
        TensorNode::accumulate(node.parents[1], ddelta);
        TensorNode::accumulate(node.parents[2], db);
        TensorNode::accumulate(node.parents[3], dc);
        // chain A = -exp(a_log): dL/da_log = dL/dA * A
        TensorNode::accumulate(node.parents[4], (da * rates).matrix().transpose());
      });
}

std::pair<Array, Matrix> discretize(const Array& decay_rates, const Matrix& b_in, double delta,
                                    Discretization method) {
  contract(delta > 0.0, "discretize: delta must be positive, got " + std::to_string(delta));
  contract((decay_rates < 0.0).all(), "discretize: A must be elementwise negative");
  contract(b_in.rows() == decay_rates.size(),
           "discretize: B rows " + std::to_string(b_in.rows()) + " vs A size " +
               std::to_string(decay_rates.size()));
  Array abar = (delta * decay_rates).exp();
  Matrix bbar(b_in.rows(), b_in.cols());
  for (Index c = 0; c < b_in.rows(); ++c) {
    const double coef =
        method == Discretization::euler ? delta : (abar(c) - 1.0) / decay_rates(c);
    bbar.row(c) = coef * b_in.row(c);
  }
  return {std::move(abar), std::move(bbar)};
}

Matrix hidden_state_oracle(const Matrix& abar, const std::vector<Matrix>& bbar, const Matrix& x,
                           Index i) {
  const Index n = abar.rows();
  contract(i >= 1 && i <= n, "hidden_state_oracle: index " + std::to_string(i) +
                                 " outside [1," + std::to_string(n) + "]");
  contract(static_cast<Index>(bbar.size()) == n && x.rows() == n,
           "hidden_state_oracle: sequences misaligned");
  const Index channels = abar.cols();
  const Index state = bbar.empty() ? 0 : bbar[0].cols();
  Matrix h = Matrix::Zero(channels, state);
  for (Index j = 1; j <= i; ++j) {
    for (Index c = 0; c < channels; ++c) {
      double prod = 1.0;
      for (Index k = j + 1; k <= i; ++k) prod *= abar(k - 1, c);
      h.row(c) += prod * x(j - 1, c) * bbar[static_cast<size_t>(j - 1)].row(c);
    }
  }
  return h;
}

double hidden_state_oracle_scalar(const Vector& abar, const Vector& bbar, const Vector& x,
                                  Index i) {
  std::vector<Matrix> b;
  b.reserve(static_cast<size_t>(bbar.size()));
  for (Index j = 0; j < bbar.size(); ++j) b.push_back(Matrix::Constant(1, 1, bbar(j)));
  return hidden_state_oracle(abar, b, x, i)(0, 0);
}

Matrix trace_abar_per_channel(const ScanTrace& trace, Index channels) {
  const Index n = trace.abar.rows();
  const Index group = channels / trace.abar.cols();
  Matrix out(n, channels);
  for (Index c = 0; c < channels; ++c) out.col(c) = trace.abar.col(c / group);
  return out;
}

std::vector<Matrix> trace_bbar_per_channel(const ScanTrace& trace, Index channels) {
  const Index n = trace.abar.rows();
  const Index group = channels / trace.abar.cols();
  std::vector<Matrix> out;
  out.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Matrix b(channels, trace.b_in.cols());
    for (Index c = 0; c < channels; ++c) b.row(c) = trace.bcoef(i, c / group) * trace.b_in.row(i);
    out.push_back(std::move(b));
  }
  return out;
}

double decay_factor(double decay_rate, const std::vector<double>& deltas) {
  contract(decay_rate < 0.0, "decay_factor: A must be negative");
  double sum = 0.0;
  for (double d : deltas) {
    contract(d > 0.0, "decay_factor: deltas must be positive");
    sum += d;
  }
  return std::exp(decay_rate * sum);
}

Index linearize(Index i, Index j, Index width) {
  contract(j >= 1 && j <= width, "linearize: column " + std::to_string(j) + " outside [1," +
                                     std::to_string(width) + "]");
  contract(i >= 1, "linearize: row must be >= 1");
  return (i - 1) * width + j;
}

double scan_2d_oracle(const Matrix& x, const Vector& abar_rows, const Vector& abar_cols,
                      const Matrix& bbar, Index i, Index j) {
  const Index h = x.rows(), w = x.cols();
  contract(abar_rows.size() == h && abar_cols.size() == w && bbar.rows() == h && bbar.cols() == w,
           "scan_2d_oracle: factor extents disagree with grid");
  contract(i >= 1 && i <= h && j >= 1 && j <= w,
           "scan_2d_oracle: location (" + std::to_string(i) + "," + std::to_string(j) +
               ") outside " + shape_str(h, w));
  double acc = 0.0;
  for (Index u = 1; u <= i; ++u)
    for (Index v = 1; v <= j; ++v) {
      double phi = 1.0;
      for (Index p = u + 1; p <= i; ++p) phi *= abar_rows(p - 1);
      for (Index q = v + 1; q <= j; ++q) phi *= abar_cols(q - 1);
      acc += phi * bbar(u - 1, v - 1) * x(u - 1, v - 1);
    }
  return acc;
}

double split_recurrence_oracle(const Matrix& x, const Vector& abar_flat, const Matrix& bbar,
                               Index i, Index j) {
  const Index h = x.rows(), w = x.cols();
  contract(abar_flat.size() == h * w && bbar.rows() == h && bbar.cols() == w,
           "split_recurrence_oracle: extents disagree");
  contract(i >= 1 && i <= h && j >= 1 && j <= w,
           "split_recurrence_oracle: location outside grid");
  const Index target = linearize(i, j, w);
  const auto tail_product = [&](Index from_exclusive) {
    double prod = 1.0;
    for (Index k = from_exclusive + 1; k <= target; ++k) prod *= abar_flat(k - 1);
    return prod;
  };
  // contributions from rows 1..i-1, all columns
  double acc = 0.0;
  for (Index u = 1; u <= i - 1; ++u)
    for (Index v = 1; v <= w; ++v)
      acc += tail_product(linearize(u, v, w)) * bbar(u - 1, v - 1) * x(u - 1, v - 1);
  // contributions within row i, columns 1..j
  for (Index v = 1; v <= j; ++v)
    acc += tail_product(linearize(i, v, w)) * bbar(i - 1, v - 1) * x(i - 1, v - 1);
  return acc;
}

Array channel_locality(const Array& decay_rates, const Matrix& delta, const Matrix& b_in,
                       const Matrix& c_out, Index j, Index i, Discretization method,
                       Index channels) {
  const Index n = delta.rows();
  contract(j >= 0 && i < n && j < i, "channel_locality: need span j < i inside the sequence");
  const Index param_dims = decay_rates.size();
  const Index group = channels / param_dims;
  const double cb = c_out.row(j).dot(b_in.row(j));
  Array alpha(channels);
  for (Index c = 0; c < channels; ++c) {
    const Index p = c / group;
    const double a = decay_rates(p);
    const double abar_j = std::exp(delta(j, p) * a);
    const double coef =
        method == Discretization::euler ? delta(j, p) : (abar_j - 1.0) / a;
    double span_sum = 0.0;
    for (Index k = j + 1; k <= i; ++k) span_sum += delta(k, p);
    alpha(c) = cb * coef * std::exp(a * span_sum);
  }
  return alpha;
}

Array channel_locality(const SsmParams& params, const Matrix& tokens, Index j, Index i) {
  Matrix delta_pre = tokens * params.delta_proj.value();
  delta_pre.rowwise() += params.delta_bias.value().row(0);
  const Matrix delta = delta_pre.unaryExpr([](double z) { return softplus_value(z); });
  const Matrix b_in = tokens * params.b_proj.value();
  const Matrix c_out = tokens * params.c_proj.value();
  if (i < 0) i = tokens.rows() - 1;
  return channel_locality(params.decay_rates(), delta, b_in, c_out, j, i, params.method,
                          params.channels);
}

}  // namespace ssmil
