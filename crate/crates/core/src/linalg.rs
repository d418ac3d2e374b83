//! Small dense symmetric linear algebra.
//!
//! Weight matrices are tiny (d ≤ 8), so square roots, inverses and norms all
//! go through a cyclic Jacobi eigendecomposition. Large operator matrices
//! (dimension d·2^N) only ever need their top eigenvalue, which comes from
//! [`top_eigen_psd`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Jacobi stops once the off-diagonal Frobenius mass drops below this
/// fraction of the full Frobenius norm.
pub const JACOBI_TOL: f64 = 1e-13;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Rebuilds `V f(Λ) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut out = DMatrix::zeros(n, n);
        for (k, &lambda) in self.values.iter().enumerate() {
            let fk = f(lambda);
            if fk == 0.0 {
                continue;
            }
            let v = self.vectors.column(k);
            for j in 0..n {
                let vj = fk * v[j];
                for i in 0..n {
                    out[(i, j)] += v[i] * vj;
                }
            }
        }
        symmetrize(&out)
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute deviation from symmetry.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn off_diagonal_mass(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted descending (stable, so an already diagonal input
/// keeps its coordinate order) and each eigenvector is signed so that its
/// first component above 1e-12 in magnitude is positive.
pub fn sym_eigen(a: &DMatrix<f64>) -> SymEigen {
    assert!(a.is_square(), "sym_eigen needs a square matrix");
    let n = a.nrows();
    let mut m = symmetrize(a);
    let mut v = DMatrix::<f64>::identity(n, n);
    let total = m.norm();

    if total > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            if off_diagonal_mass(&m) <= JACOBI_TOL * total {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq.abs() <= f64::MIN_POSITIVE {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[(y, y)].total_cmp(&m[(x, x)]));
    let values = order.iter().map(|&k| m[(k, k)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }
    SymEigen { values, vectors }
}

pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_eigen(a).map(|x| x.max(0.0).sqrt())
}

/// `A^{-1/2}`; the caller guarantees positive definiteness.
pub fn sym_inv_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_eigen(a).map(|x| 1.0 / x.sqrt())
}

pub fn sym_inv(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_eigen(a).map(|x| 1.0 / x)
}

/// Largest eigenvalue of a small symmetric matrix.
pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    sym_eigen(a).max()
}

/// Spectral norm of an arbitrary (small) matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    lambda_max(&gram).max(0.0).sqrt()
}

/// Matrices up to this size go through a dense symmetric eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 2048;

const SQUARINGS: usize = 6;
const POWER_MIN_ITERS: usize = 60;
const POWER_MAX_ITERS: usize = 2000;
const POWER_STABLE_ITERS: usize = 8;

/// Top eigenpair of a symmetric positive semi-definite matrix, with the
/// eigenvector's first nonzero entry positive.
pub fn top_eigen_psd(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = a.nrows();
    assert!(a.is_square(), "top_eigen_psd needs a square matrix");
    if n == 0 {
        return (0.0, DVector::zeros(0));
    }
    let a = symmetrize(a);
    if a.amax() == 0.0 {
        let mut e = DVector::zeros(n);
        e[0] = 1.0;
        return (0.0, e);
    }
    if n > DENSE_EIGEN_LIMIT {
        return power_top_eigen(&a);
    }
    dense_top_eigen(&a).unwrap_or_else(|| {
        let eig = sym_eigen(&a);
        (eig.max().max(0.0), eig.vectors.column(0).into_owned())
    })
}

/// Top eigenpair from nalgebra's QR solver, or `None` when the result fails
/// a residual check (the solver occasionally returns non-finite values on
/// matrices with a very wide spectrum).
fn dense_top_eigen(a: &DMatrix<f64>) -> Option<(f64, DVector<f64>)> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let k = (0..n).fold(0, |best, k| {
        if eig.eigenvalues[k] > eig.eigenvalues[best] {
            k
        } else {
            best
        }
    });
    let lambda = eig.eigenvalues[k];
    let mut v = eig.eigenvectors.column(k).into_owned();
    let scale = a.amax();
    let diag = (0..n).map(|i| a[(i, i)]).fold(f64::MIN, f64::max);
    let residual = (a * &v - &v * lambda).amax();
    let sane = lambda.is_finite()
        && v.iter().all(|x| x.is_finite())
        && (v.norm() - 1.0).abs() < 1e-10
        && residual <= 1e-10 * scale * (n as f64).sqrt()
        && lambda >= diag - 1e-12 * scale;
    if !sane {
        return None;
    }
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v = -v;
        }
    }
    Some((lambda.max(0.0), v))
}

/// Power iteration on `a^{2^6}` from its largest column; the eigenvalue is
/// the Rayleigh quotient of `a`. Runs at least [`POWER_MIN_ITERS`] steps and
/// stops once the quotient has been stable for several steps in a row.
pub(crate) fn power_top_eigen(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = a.nrows();
    let scale = a.amax();
    let mut p = a / scale;
    for _ in 0..SQUARINGS {
        let sq = &p * &p;
        let m = sq.amax();
        if m == 0.0 || !m.is_finite() {
            break;
        }
        p = symmetrize(&(sq / m));
    }

    let start = (0..n)
        .max_by(|&x, &y| p.column(x).norm().total_cmp(&p.column(y).norm()))
        .unwrap_or(0);
    let mut x = p.column(start).into_owned();
    let norm = x.norm();
    if norm == 0.0 {
        x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    } else {
        x /= norm;
    }

    let mut rq = x.dot(&(a * &x));
    let mut stable = 0;
    for iter in 0..POWER_MAX_ITERS {
        let y = &p * &x;
        let ny = y.norm();
        if ny == 0.0 {
            break;
        }
        x = y / ny;
        let next = x.dot(&(a * &x));
        if (next - rq).abs() <= 1e-15 * next.abs().max(f64::MIN_POSITIVE) {
            stable += 1;
        } else {
            stable = 0;
        }
        rq = next;
        if iter + 1 >= POWER_MIN_ITERS && stable >= POWER_STABLE_ITERS {
            break;
        }
    }
    (rq.max(0.0), x)
}
