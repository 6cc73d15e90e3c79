//! Small dense symmetric positive-definite solves for Newton steps.

use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub(crate) struct SquareMatrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
    }

    /// `self += s · g gᵀ`, touching only the non-zero entries of `g`.
    pub fn add_outer(&mut self, g: &[T], s: T) {
        let nz: Vec<usize> = (0..g.len()).filter(|&i| g[i] != T::zero()).collect();
        for &i in &nz {
            let gi = s * g[i];
            for &j in &nz {
                self.add_at(i, j, gi * g[j]);
            }
        }
    }
}

const REFINE_STEPS: usize = 2;

/// Solves `H x = b` for symmetric positive (semi)definite `H`.
///
/// The matrix is equilibrated to unit diagonal first; if the factorization
/// breaks down a growing ridge is added to the scaled matrix.
pub(crate) fn solve_spd<T: Scalar>(h: &SquareMatrix<T>, b: &[T]) -> Option<Vec<T>> {
    let n = h.n;
    let scale: Vec<T> = (0..n)
        .map(|i| {
            let d = h.at(i, i);
            if d > T::zero() && d.is_finite() {
                T::one() / d.sqrt()
            } else {
                T::one()
            }
        })
        .collect();
    let mut base = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            base[i * n + j] = h.at(i, j) * scale[i] * scale[j];
        }
    }
    if base.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let rhs: Vec<T> = (0..n).map(|i| b[i] * scale[i]).collect();
    let mut ridge = T::zero();
    for _ in 0..12 {
        let mut l = base.clone();
        for i in 0..n {
            l[i * n + i] += ridge;
        }
        if cholesky_in_place(&mut l, n) {
            let mut y = cholesky_solve(&l, n, &rhs);
            // Refinement against the unridged matrix recovers accuracy lost
            // to the ridge and to cancellation in nearly singular systems.
            for _ in 0..REFINE_STEPS {
                let r: Vec<T> = (0..n)
                    .map(|i| rhs[i] - (0..n).fold(T::zero(), |s, j| s + base[i * n + j] * y[j]))
                    .collect();
                let dy = cholesky_solve(&l, n, &r);
                let next: Vec<T> = y.iter().zip(&dy).map(|(&a, &d)| a + d).collect();
                if next.iter().any(|v| !v.is_finite()) {
                    break;
                }
                y = next;
            }
            return Some((0..n).map(|i| y[i] * scale[i]).collect());
        }
        ridge = if ridge == T::zero() {
            T::epsilon().sqrt() * T::lit(1e-4)
        } else {
            ridge * T::lit(100.0)
        };
    }
    None
}

fn cholesky_in_place<T: Scalar>(a: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    true
}

fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let v = l[i * n + k] * y[k];
            y[i] -= v;
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = l[k * n + i] * y[k];
            y[i] -= v;
        }
        y[i] /= l[i * n + i];
    }
    y
}
