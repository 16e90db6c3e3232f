#include "pointillist/gaussfunc.hpp"

#include <algorithm>

namespace pointillist {

Eigen::Index GaussianFunctional::local(Eigen::Index i) const {
  const auto it = std::find(free_index.begin(), free_index.end(), i);
  if (it == free_index.end()) throw std::invalid_argument("moment requested on a pinned coordinate");
  return static_cast<Eigen::Index>(it - free_index.begin());
}

double GaussianFunctional::second_moment(Eigen::Index i, Eigen::Index j) const {
  const Eigen::Index a = local(i), b = local(j);
  return cov(a, b) + mean[a] * mean[b];
}

GaussianFunctional gaussian_functional(const GaussianDensity& prior, std::span<const LinearGaussianFactor> factors,
                                       std::span<const PinnedBlock> pinned) {
  const Eigen::Index n = prior.dim();
  std::vector<bool> is_pinned(static_cast<std::size_t>(n), false);
  Vec pinned_value = Vec::Zero(n);
  for (const auto& blk : pinned) {
    if (blk.offset < 0 || blk.offset + blk.value.size() > n) throw std::invalid_argument("pinned block out of range");
    for (Eigen::Index k = 0; k < blk.value.size(); ++k) {
      is_pinned[static_cast<std::size_t>(blk.offset + k)] = true;
      pinned_value[blk.offset + k] = blk.value[k];
    }
  }
  std::vector<Eigen::Index> d_idx, r_idx;
  for (Eigen::Index i = 0; i < n; ++i) (is_pinned[static_cast<std::size_t>(i)] ? d_idx : r_idx).push_back(i);

  GaussianFunctional out;
  out.free_index = r_idx;
  const auto nd = static_cast<Eigen::Index>(d_idx.size());
  const auto nr = static_cast<Eigen::Index>(r_idx.size());

  double weight = 1.0;
  for (const auto& f : factors) weight *= f.scale;

  Vec m_r = prior.mean(r_idx);
  Mat p_r = prior.cov(r_idx, r_idx);
  Vec x_d = pinned_value(d_idx);
  if (nd > 0) {
    const Mat p_dd = prior.cov(d_idx, d_idx);
    weight *= gaussian_eval(GaussianDensity(prior.mean(d_idx), p_dd), x_d);
    if (nr > 0) {
      const Eigen::LDLT<Mat> ldlt(p_dd);
      const Mat p_rd = prior.cov(r_idx, d_idx);
      m_r += p_rd * ldlt.solve(x_d - prior.mean(d_idx));
      p_r = symmetrize(p_r - p_rd * ldlt.solve(p_rd.transpose()));
    }
  }

  Eigen::Index rows = 0;
  for (const auto& f : factors) {
    if (f.A.cols() != n || f.A.rows() != f.b.size() || f.C.rows() != f.b.size())
      throw std::invalid_argument("linear-Gaussian factor dimension mismatch");
    rows += f.b.size();
  }
  if (rows == 0) {
    out.weight = weight;
    out.mean = m_r;
    out.cov = p_r;
    return out;
  }

  Vec b(rows);
  Mat a_r(rows, nr);
  Mat c = Mat::Zero(rows, rows);
  Eigen::Index row = 0;
  for (const auto& f : factors) {
    const Eigen::Index q = f.b.size();
    b.segment(row, q) = f.b - f.A(Eigen::all, d_idx) * x_d;
    a_r.middleRows(row, q) = f.A(Eigen::all, r_idx);
    c.block(row, row, q, q) = f.C;
    row += q;
  }

  if (nr == 0) {
    // Fully pinned: the factors are independent, so evaluate them one by one
    // rather than through a possibly ill-conditioned block covariance.
    row = 0;
    for (const auto& f : factors) {
      const Eigen::Index q = f.b.size();
      weight *= gaussian_eval(GaussianDensity(Vec::Zero(q), f.C), b.segment(row, q));
      row += q;
    }
    out.weight = weight;
    out.mean = m_r;
    out.cov = p_r;
    return out;
  }

  const Mat s = symmetrize(a_r * p_r * a_r.transpose() + c);
  const Vec innov = b - a_r * m_r;
  weight *= gaussian_eval(GaussianDensity(Vec::Zero(rows), s), innov);
  const Eigen::LDLT<Mat> s_ldlt(s);
  const Mat pa = p_r * a_r.transpose();
  out.mean = m_r + pa * s_ldlt.solve(innov);
  out.cov = symmetrize(p_r - pa * s_ldlt.solve(pa.transpose()));
  out.weight = weight;
  return out;
}

}  // namespace pointillist
