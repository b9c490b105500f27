//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! The input is orthogonalized column pair by column pair until every pair is
//! orthogonal to within [`CONVERGENCE_TOL`] relative to the column norms. The
//! column norms are then the singular values. Ties between equal singular
//! values keep the column order of the input (stable sort), so results are
//! reproducible for a given build.
//!
//! Every singular pair is phase-normalized: the first entry of `u_i` with
//! modulus above [`PHASE_THRESHOLD`] is made real-positive and `v_i` is rotated
//! by the same phase, leaving `u_i v_i^H` unchanged.

use super::matrix::{inner, norm, ComplexMatrix, C64};
use crate::error::{Error, Result};

/// Sweep terminates once the largest relative off-diagonal inner product seen
/// during a sweep falls below this value.
pub const CONVERGENCE_TOL: f64 = 1e-12;

pub const PHASE_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `m x k` with orthonormal columns, `k = min(m, n)`.
    pub u: ComplexMatrix,
    /// `n x k` with orthonormal columns.
    pub v: ComplexMatrix,
}

impl SvdResult {
    pub fn left(&self, i: usize) -> Vec<C64> {
        self.u.column(i)
    }

    pub fn right(&self, i: usize) -> Vec<C64> {
        self.v.column(i)
    }

    /// Number of singular values above `rel_tol * sigma_1`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * top && s > 0.0)
            .count()
    }

    /// `sum_i sigma_i u_i v_i^H`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = ComplexMatrix::zeros(m, n);
        for (k, &s) in self.singular_values.iter().enumerate() {
            for i in 0..m {
                let ui = self.u[(i, k)] * s;
                for j in 0..n {
                    out[(i, j)] += ui * self.v[(j, k)].conj();
                }
            }
        }
        out
    }
}

/// Top singular triple of a matrix.
#[derive(Clone, Debug)]
pub struct SingularPair {
    pub sigma: f64,
    pub u: Vec<C64>,
    pub v: Vec<C64>,
}

pub fn svd(a: &ComplexMatrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    let (values, mut us, mut vs) = if m >= n {
        let (s, scaled, v) = jacobi_tall(a)?;
        sort_and_complete(s, scaled, v, m)
    } else {
        // A^H = U' S V'^H  =>  A = V' S U'^H
        let (s, scaled, v) = jacobi_tall(&a.adjoint())?;
        let (values, u, v) = sort_and_complete(s, scaled, v, n);
        (values, v, u)
    };
    for (u, v) in us.iter_mut().zip(vs.iter_mut()) {
        fix_phase(u, v);
    }
    Ok(SvdResult {
        singular_values: values,
        u: ComplexMatrix::from_columns(&us).expect("uniform columns"),
        v: ComplexMatrix::from_columns(&vs).expect("uniform columns"),
    })
}

pub fn top_singular_pair(a: &ComplexMatrix) -> Result<SingularPair> {
    let d = svd(a)?;
    Ok(SingularPair {
        sigma: d.singular_values[0],
        u: d.left(0),
        v: d.right(0),
    })
}

/// Jacobi on a matrix with at least as many rows as columns. Returns
/// unsorted singular values, the scaled columns (`sigma_i u_i`) and `V`.
#[allow(clippy::type_complexity)]
fn jacobi_tall(a: &ComplexMatrix) -> Result<(Vec<f64>, Vec<Vec<C64>>, Vec<Vec<C64>>)> {
    let n = a.cols();
    let mut cols: Vec<Vec<C64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[j] = C64::new(1.0, 0.0);
            e
        })
        .collect();

    // columns below this are rounding noise and are treated as zero
    let frob2: f64 = cols.iter().flatten().map(|z| z.norm_sqr()).sum();
    let tiny = f64::EPSILON * f64::EPSILON * frob2;
    let max_sweeps = (10 * n * n).max(10);
    let mut residual = 0.0;
    for _ in 0..max_sweeps {
        residual = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = cols[p].iter().map(|z| z.norm_sqr()).sum::<f64>();
                let beta = cols[q].iter().map(|z| z.norm_sqr()).sum::<f64>();
                if alpha <= tiny || beta <= tiny {
                    continue;
                }
                let gamma = inner(&cols[p], &cols[q]);
                let g = gamma.norm();
                let rel = g / alpha.sqrt() / beta.sqrt();
                residual = residual.max(rel);
                if rel <= f64::EPSILON {
                    continue;
                }
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s, phase);
                rotate(&mut v, p, q, c, s, phase);
            }
        }
        if residual < CONVERGENCE_TOL {
            let sig = cols.iter().map(|c| norm(c)).collect();
            return Ok((sig, cols, v));
        }
    }
    Err(Error::NoConvergence {
        sweeps: max_sweeps,
        residual,
    })
}

/// `x_p <- c x_p - s conj(phase) x_q`, `x_q <- s phase x_p + c x_q`.
fn rotate(x: &mut [Vec<C64>], p: usize, q: usize, c: f64, s: f64, phase: C64) {
    let (lo, hi) = x.split_at_mut(q);
    let (xp, xq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, bq) = (*a, *b);
        *a = ap * c - bq * (phase.conj() * s);
        *b = ap * (phase * s) + bq * c;
    }
}

/// Sorts descending and turns the scaled columns into unit left vectors,
/// completing an orthonormal set where a singular value vanishes.
#[allow(clippy::type_complexity)]
fn sort_and_complete(
    sig: Vec<f64>,
    scaled: Vec<Vec<C64>>,
    v: Vec<Vec<C64>>,
    m: usize,
) -> (Vec<f64>, Vec<Vec<C64>>, Vec<Vec<C64>>) {
    let k = sig.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]));

    let top = sig[order[0]];
    let tiny = f64::EPSILON * top * (m.max(k) as f64);
    let mut us: Vec<Vec<C64>> = Vec::with_capacity(k);
    let mut vs: Vec<Vec<C64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for &idx in &order {
        let s = sig[idx];
        let u = if s > tiny && s > 0.0 {
            scaled[idx].iter().map(|z| z / s).collect()
        } else {
            complete_basis(&us, m)
        };
        values.push(s);
        us.push(u);
        vs.push(v[idx].clone());
    }
    (values, us, vs)
}

/// Unit vector orthogonal to every vector in `basis` (Gram-Schmidt over the
/// standard basis, taking the first candidate with a substantial remainder).
fn complete_basis(basis: &[Vec<C64>], m: usize) -> Vec<C64> {
    let mut best: Option<(f64, Vec<C64>)> = None;
    for e in 0..m {
        let mut x = vec![C64::new(0.0, 0.0); m];
        x[e] = C64::new(1.0, 0.0);
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in basis {
                let proj = inner(b, &x);
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= proj * bi;
                }
            }
        }
        let r = norm(&x);
        if r > 0.5 {
            return x.iter().map(|z| z / r).collect();
        }
        if best.as_ref().map_or(true, |(br, _)| r > *br) {
            best = Some((r, x));
        }
    }
    let (r, x) = best.expect("m > 0");
    x.iter().map(|z| z / r).collect()
}

fn fix_phase(u: &mut [C64], v: &mut [C64]) {
    if let Some(lead) = u.iter().find(|z| z.norm() > PHASE_THRESHOLD) {
        let rot = (lead / lead.norm()).conj();
        u.iter_mut().for_each(|z| *z *= rot);
        v.iter_mut().for_each(|z| *z *= rot);
    }
}

/// Minimum-norm least-squares solution of `A x = b` via the pseudo-inverse.
pub fn least_squares(a: &ComplexMatrix, b: &[C64]) -> Result<Vec<C64>> {
    if a.rows() != b.len() {
        return Err(Error::Dimension {
            op: "least_squares",
            lhs: a.shape(),
            rhs: (b.len(), 1),
        });
    }
    let d = svd(a)?;
    let top = d.singular_values[0];
    let cutoff = f64::EPSILON * top * (a.rows().max(a.cols()) as f64);
    let mut x = vec![C64::new(0.0, 0.0); a.cols()];
    for (k, &s) in d.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let uk = d.left(k);
        let coef = inner(&uk, b) / s;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += d.v[(j, k)] * coef;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random(m: usize, n: usize, seed: u64) -> ComplexMatrix {
        let mut rng = Rng::new(seed);
        ComplexMatrix::from_fn(m, n, |_, _| rng.complex_normal(1.0))
    }

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn rank_one_steering_outer_product() {
        let u: Vec<C64> = (0..8).map(|k| C64::from_polar(1.0, 0.7 * k as f64)).collect();
        let v: Vec<C64> = (0..4).map(|k| C64::from_polar(1.0, -1.9 * k as f64)).collect();
        let a = ComplexMatrix::outer(&u, &v).scale(0.3);
        let d = svd(&a).unwrap();
        assert!((d.singular_values[0] - 0.3 * 32f64.sqrt()).abs() < 1e-12);
        assert!(d.singular_values[1..].iter().all(|s| *s < 1e-12));
    }

    #[test]
    fn diagonal_three_one() {
        let a = ComplexMatrix::from_real_diag(2, 2, &[3.0, 1.0]);
        let d = svd(&a).unwrap();
        assert!((d.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((d.singular_values[1] - 1.0).abs() < 1e-14);
        assert!(close(d.u[(0, 0)], C64::new(1.0, 0.0), 1e-14));
        assert!(close(d.v[(0, 0)], C64::new(1.0, 0.0), 1e-14));
    }

    #[test]
    fn rank_one_has_second_value_zero() {
        let mut rng = Rng::new(5);
        let u = rng.unit_vector(3);
        let v = rng.unit_vector(3);
        let a = ComplexMatrix::outer(&u, &v).scale(2.0);
        let d = svd(&a).unwrap();
        assert!((d.singular_values[0] - 2.0).abs() < 1e-13);
        assert!(d.singular_values[1].abs() < 1e-13);
        // completed basis vectors must still be unit norm and orthogonal
        for i in 0..3 {
            assert!((norm(&d.left(i)) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(inner(&d.left(j), &d.left(i)).norm() < 1e-12);
            }
        }
    }

    /// Eigenvalues of a 3x3 Hermitian matrix from its characteristic cubic,
    /// solved in closed (trigonometric) form.
    fn hermitian3_eigenvalues(h: &ComplexMatrix) -> [f64; 3] {
        let a = |i, j| h[(i, j)];
        let tr = (a(0, 0) + a(1, 1) + a(2, 2)).re;
        let minors = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0))
            + (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0))
            + (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1));
        let det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
            - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
            + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
        // lambda^3 - tr lambda^2 + c1 lambda - det = 0
        let (b, c, d) = (-tr, minors.re, -det.re);
        let p = c - b * b / 3.0;
        let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
        let r = (-p / 3.0).sqrt();
        let phi = (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0).acos() / 3.0;
        let mut roots = [0.0; 3];
        for (k, root) in roots.iter_mut().enumerate() {
            *root = 2.0 * r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - b / 3.0;
        }
        roots.sort_by(|x, y| y.total_cmp(x));
        roots
    }

    #[test]
    fn squared_values_match_cubic_roots() {
        for seed in 0..20 {
            let a = random(4, 3, 100 + seed);
            let gram = a.adjoint().matmul(&a).unwrap();
            let eig = hermitian3_eigenvalues(&gram);
            let d = svd(&a).unwrap();
            for (s, e) in d.singular_values.iter().zip(eig) {
                assert!((s * s - e).abs() < 1e-10 * eig[0], "{s} {e}");
            }
        }
    }

    #[test]
    fn wide_matrices_reconstruct() {
        let a = random(3, 7, 9);
        let d = svd(&a).unwrap();
        assert_eq!(d.u.shape(), (3, 3));
        assert_eq!(d.v.shape(), (7, 3));
        let err = d.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(err < 1e-12);
    }

    #[test]
    fn top_pair_is_scale_homogeneous() {
        let a = random(5, 4, 21);
        let p = top_singular_pair(&a).unwrap();
        let q = top_singular_pair(&a.scale(3.5)).unwrap();
        assert!((q.sigma - 3.5 * p.sigma).abs() < 1e-12 * q.sigma);
        for (x, y) in p.u.iter().zip(&q.u) {
            assert!(close(*x, *y, 1e-10));
        }
        for (x, y) in p.v.iter().zip(&q.v) {
            assert!(close(*x, *y, 1e-10));
        }
    }

    #[test]
    fn top_pair_dominates_random_pairs() {
        let a = random(8, 4, 77);
        let p = top_singular_pair(&a).unwrap();
        let best = inner(&p.u, &a.matvec(&p.v).unwrap()).norm_sqr();
        assert!((best - p.sigma * p.sigma).abs() < 1e-9 * best);
        let mut rng = Rng::new(78);
        for _ in 0..1000 {
            let wt = rng.unit_vector(8);
            let wr = rng.unit_vector(4);
            // |w_r^H A^H w_t| = |w_t^H A w_r|
            let g = inner(&wt, &a.matvec(&wr).unwrap()).norm_sqr();
            assert!(g <= best + 1e-9);
        }
    }

    #[test]
    fn phase_convention_first_entry_real_positive() {
        let d = svd(&random(6, 4, 3)).unwrap();
        for k in 0..4 {
            let u0 = d.u[(0, k)];
            assert!(u0.im.abs() < 1e-14 && u0.re > 0.0);
        }
    }

    #[test]
    fn least_squares_recovers_exact_solution() {
        let a = random(6, 3, 12);
        let x: Vec<C64> = Rng::new(13).unit_vector(3);
        let b = a.matvec(&x).unwrap();
        let xh = least_squares(&a, &b).unwrap();
        for (p, q) in x.iter().zip(&xh) {
            assert!(close(*p, *q, 1e-12));
        }
    }

    #[test]
    fn rejects_empty() {
        assert!(svd(&ComplexMatrix::zeros(0, 3)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn reconstruction_and_orthonormality(m in 1usize..9, n in 1usize..9, seed in 0u64..10_000) {
                let a = random(m, n, seed);
                let d = svd(&a).unwrap();
                let err = d.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
                prop_assert!(err < 1e-9);
                for w in d.singular_values.windows(2) {
                    prop_assert!(w[0] >= w[1]);
                }
                for i in 0..m.min(n) {
                    prop_assert!((norm(&d.left(i)) - 1.0).abs() < 1e-12);
                    prop_assert!((norm(&d.right(i)) - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
