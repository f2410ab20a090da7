//! Clamped B-spline bases on `[0, 1]` and their derivative penalties.
//!
//! A basis of order `p` (degree `p - 1`) with `K` interior knots spans the
//! `K + p` dimensional spline space. The full knot vector replicates each
//! boundary knot `p` times, so the first basis function equals 1 at `t = 0`
//! and the last equals 1 at `t = 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// How interior knots are placed.
#[derive(Debug, Clone, PartialEq)]
pub enum KnotRule {
    /// `K` equispaced interior knots `i / (K + 1)`, `i = 1..=K`.
    Equispaced(usize),
    /// Explicit interior knots, strictly increasing inside `(0, 1)`.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BSplineBasis {
    order: usize,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

/// Serialized form: order and interior knots are enough to rebuild the basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BasisSpec {
    order: usize,
    interior_knots: Vec<f64>,
}

impl TryFrom<BasisSpec> for BSplineBasis {
    type Error = Error;

    fn try_from(spec: BasisSpec) -> Result<Self> {
        BSplineBasis::new(spec.order, KnotRule::Explicit(spec.interior_knots))
    }
}

impl From<BSplineBasis> for BasisSpec {
    fn from(basis: BSplineBasis) -> Self {
        BasisSpec {
            order: basis.order,
            interior_knots: basis.interior,
        }
    }
}

impl BSplineBasis {
    pub fn new(order: usize, rule: KnotRule) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidOrder(order));
        }
        let interior = match rule {
            KnotRule::Equispaced(k) => (1..=k).map(|i| i as f64 / (k + 1) as f64).collect(),
            KnotRule::Explicit(knots) => {
                for (i, &t) in knots.iter().enumerate() {
                    if !(t > 0.0 && t < 1.0) {
                        return Err(Error::InvalidKnots(format!(
                            "interior knot {i} = {t} is not inside (0, 1)"
                        )));
                    }
                }
                if let Some(i) = knots.windows(2).position(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidKnots(format!(
                        "interior knots not strictly increasing at position {}",
                        i + 1
                    )));
                }
                knots
            }
        };
        let mut knots = Vec::with_capacity(interior.len() + 2 * order);
        knots.extend(std::iter::repeat_n(0.0, order));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(Self {
            order,
            interior,
            knots,
        })
    }

    pub fn equispaced(order: usize, num_interior: usize) -> Result<Self> {
        Self::new(order, KnotRule::Equispaced(num_interior))
    }

    /// Equispaced basis with the requested total dimension `K + p`.
    pub fn with_dimension(order: usize, dimension: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidOrder(order));
        }
        if dimension < order {
            return Err(Error::Config(format!(
                "basis dimension {dimension} is smaller than the spline order {order}"
            )));
        }
        Self::equispaced(order, dimension - order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Extended knot vector with `p`-fold boundary knots.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dimension(&self) -> usize {
        self.interior.len() + self.order
    }

    /// Closed support `[t_j, t_{j+p}]` of basis function `j`.
    pub fn support(&self, j: usize) -> (f64, f64) {
        (self.knots[j], self.knots[j + self.order])
    }

    /// Distinct breakpoints `0 = t_0 < ... < t_{K+1} = 1`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior.len() + 2);
        b.push(0.0);
        b.extend_from_slice(&self.interior);
        b.push(1.0);
        b
    }

    /// Index `mu` with `knots[mu] <= t < knots[mu + 1]`; `t = 1` belongs to
    /// the last non-degenerate interval.
    fn span(&self, t: f64) -> usize {
        let p = self.order;
        let last = self.dimension() - 1;
        if t >= 1.0 {
            return last;
        }
        // interior knots are strictly increasing, so the span is
        // p - 1 + (number of interior knots <= t)
        let count = self.interior.partition_point(|&k| k <= t);
        p - 1 + count
    }

    fn check_domain(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(t))
        }
    }

    /// Cox–de Boor values of every order `1..=p` on span `mu`.
    ///
    /// `table[k - 1][r]` is `B_{mu - k + 1 + r, k}(t)` for `r < k`.
    fn lower_order_table(&self, mu: usize, t: f64) -> Vec<Vec<f64>> {
        let p = self.order;
        let u = &self.knots;
        let mut table = Vec::with_capacity(p);
        table.push(vec![1.0]);
        let mut left = vec![0.0; p];
        let mut right = vec![0.0; p];
        for j in 1..p {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let prev = &table[j - 1];
            let mut next = vec![0.0; j + 1];
            let mut saved = 0.0;
            for r in 0..j {
                let temp = prev[r] / (right[r + 1] + left[j - r]);
                next[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            next[j] = saved;
            table.push(next);
        }
        table
    }

    /// Derivatives of order `d` of the `p` functions that can be nonzero on
    /// span `mu`, i.e. `B_{mu-p+1}, ..., B_mu`.
    ///
    /// Each derivative is expanded over the order `p - d` B-splines with the
    /// rescaled-difference recurrence
    /// `B'_{i,k} = (k-1) [B_{i,k-1} / (t_{i+k-1} - t_i) - B_{i+1,k-1} / (t_{i+k} - t_{i+1})]`,
    /// dropping terms whose knot span is empty.
    fn local_derivatives(&self, mu: usize, t: f64, d: usize) -> Vec<f64> {
        let p = self.order;
        let table = self.lower_order_table(mu, t);
        if d == 0 {
            return table[p - 1].clone();
        }
        let u = &self.knots;
        let low = p - d;
        // values of order `low` splines, indexed globally from mu - low + 1
        let low_vals = &table[low - 1];
        let low_first = mu + 1 - low;
        let mut out = vec![0.0; p];
        for (r, slot) in out.iter_mut().enumerate() {
            let j = mu + 1 - p + r;
            // coefficients over order-k functions starting at global index j
            let mut coef = vec![1.0];
            for k in ((low + 1)..=p).rev() {
                let mut next = vec![0.0; coef.len() + 1];
                let scale = (k - 1) as f64;
                for (s, &c) in coef.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let i = j + s;
                    let h_left = u[i + k - 1] - u[i];
                    if h_left > 0.0 {
                        next[s] += scale * c / h_left;
                    }
                    let h_right = u[i + k] - u[i + 1];
                    if h_right > 0.0 {
                        next[s + 1] -= scale * c / h_right;
                    }
                }
                coef = next;
            }
            *slot = coef
                .iter()
                .enumerate()
                .filter_map(|(s, &c)| {
                    let i = j + s;
                    (i >= low_first && i < low_first + low).then(|| c * low_vals[i - low_first])
                })
                .sum();
        }
        out
    }

    /// All `K + p` basis functions at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        self.eval_deriv(t, 0)
    }

    /// `d`-th derivatives of all basis functions at `t`.
    ///
    /// At interior knots with reduced continuity the value is the limit from
    /// the right (from the left at `t = 1`).
    pub fn eval_deriv(&self, t: f64, d: usize) -> Result<Vec<f64>> {
        Self::check_domain(t)?;
        if d >= self.order {
            return Err(Error::DerivativeOrder {
                deriv: d,
                order: self.order,
            });
        }
        let mu = self.span(t);
        let local = self.local_derivatives(mu, t, d);
        let mut out = vec![0.0; self.dimension()];
        let first = mu + 1 - self.order;
        out[first..first + self.order].copy_from_slice(&local);
        Ok(out)
    }

    /// Basis values at each point, one row per point.
    pub fn eval_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let dim = self.dimension();
        let p = self.order;
        let mut m = DMatrix::zeros(points.len(), dim);
        for (row, &t) in points.iter().enumerate() {
            Self::check_domain(t)?;
            let mu = self.span(t);
            let local = self.local_derivatives(mu, t, 0);
            let first = mu + 1 - p;
            for (r, v) in local.into_iter().enumerate() {
                m[(row, first + r)] = v;
            }
        }
        Ok(m)
    }

    /// Value of the spline `sum_j coefs[j] B_j(t)`.
    pub fn eval_spline(&self, coefs: &[f64], t: f64) -> Result<f64> {
        if coefs.len() != self.dimension() {
            return Err(Error::Config(format!(
                "expected {} spline coefficients, got {}",
                self.dimension(),
                coefs.len()
            )));
        }
        Self::check_domain(t)?;
        let mu = self.span(t);
        let first = mu + 1 - self.order;
        Ok(self
            .local_derivatives(mu, t, 0)
            .iter()
            .zip(&coefs[first..])
            .map(|(b, c)| b * c)
            .sum())
    }

    /// Gram matrix of `q`-th derivatives, `D_q[i][j] = ∫ B_i^(q) B_j^(q)`.
    ///
    /// The integrand is a polynomial of degree `2(p - 1 - q)` on each knot
    /// interval, so a `p - q` node Gauss–Legendre rule per interval is exact.
    pub fn penalty_matrix(&self, q: usize) -> Result<PenaltyMatrix> {
        let p = self.order;
        if q < 1 || q >= p {
            return Err(Error::InvalidPenaltyOrder { q, order: p });
        }
        let dim = self.dimension();
        let (nodes, weights) = gauss_legendre(p - q);
        let mut m = DMatrix::zeros(dim, dim);
        for mu in (p - 1)..dim {
            let (a, b) = (self.knots[mu], self.knots[mu + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let first = mu + 1 - p;
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let d = self.local_derivatives(mu, t, q);
                for r in 0..p {
                    for s in r..p {
                        m[(first + r, first + s)] += half * w * d[r] * d[s];
                    }
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        Ok(PenaltyMatrix {
            order_of_derivative: q,
            half_bandwidth: p - 1,
            matrix: m,
        })
    }
}

/// Roughness penalty Gram matrix, banded with half-bandwidth `p - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub order_of_derivative: usize,
    pub half_bandwidth: usize,
    pub matrix: DMatrix<f64>,
}

impl PenaltyMatrix {
    /// `c' D c`.
    pub fn quadratic_form(&self, c: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(c);
        (v.transpose() * &self.matrix * &v)[(0, 0)]
    }
}
