//! Canonical convex program: maximize an affine function plus weighted base-2
//! logs of affine forms, subject to variable bounds, affine rows, log rows and
//! convex quadratic rows.

use std::fmt::Write as _;

use crate::scalar::Scalar;

/// Sparse affine form `Σ coeffs[i].1 · x[coeffs[i].0] + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub coeffs: Vec<(usize, T)>,
    pub constant: T,
}

impl<T: Scalar> Default for Affine<T> {
    fn default() -> Self {
        Self::constant(T::zero())
    }
}

impl<T: Scalar> Affine<T> {
    pub fn constant(c: T) -> Self {
        Self {
            coeffs: Vec::new(),
            constant: c,
        }
    }

    pub fn var(i: usize) -> Self {
        Self::constant(T::zero()).plus(i, T::one())
    }

    /// Adds `coef · x[i]`, merging with an existing term on the same variable.
    pub fn plus(mut self, i: usize, coef: T) -> Self {
        self.add_term(i, coef);
        self
    }

    pub fn plus_const(mut self, c: T) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, i: usize, coef: T) {
        if coef == T::zero() {
            return;
        }
        match self.coeffs.iter_mut().find(|(j, _)| *j == i) {
            Some((_, c)) => *c += coef,
            None => self.coeffs.push((i, coef)),
        }
    }

    /// `Σ_{i∈vars} x[i]` scaled by `coef`.
    pub fn sum_of(vars: impl IntoIterator<Item = usize>, coef: T) -> Self {
        let mut a = Self::default();
        for i in vars {
            a.add_term(i, coef);
        }
        a
    }

    pub fn add(mut self, other: &Affine<T>) -> Self {
        for &(i, c) in &other.coeffs {
            self.add_term(i, c);
        }
        self.constant += other.constant;
        self
    }

    pub fn scale(mut self, s: T) -> Self {
        for (_, c) in &mut self.coeffs {
            *c *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.coeffs
            .iter()
            .fold(self.constant, |acc, &(i, c)| acc + c * x[i])
    }

    pub(crate) fn max_abs_coeff(&self) -> T {
        self.coeffs
            .iter()
            .fold(T::zero(), |m, &(_, c)| m.max(c.abs()))
    }
}

/// `weight · log2(arg(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTerm<T> {
    pub weight: T,
    pub arg: Affine<T>,
}

impl<T: Scalar> LogTerm<T> {
    pub fn new(weight: T, arg: Affine<T>) -> Self {
        Self { weight, arg }
    }

    /// `None` outside the log domain.
    pub fn eval(&self, x: &[T]) -> Option<T> {
        let z = self.arg.eval(x);
        (z > T::zero()).then(|| self.weight * z.log2())
    }
}

fn eval_logs<T: Scalar>(logs: &[LogTerm<T>], x: &[T]) -> Option<T> {
    logs.iter()
        .try_fold(T::zero(), |acc, l| l.eval(x).map(|v| acc + v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective<T> {
    pub linear: Affine<T>,
    pub logs: Vec<LogTerm<T>>,
}

impl<T: Scalar> Default for Objective<T> {
    fn default() -> Self {
        Self {
            linear: Affine::default(),
            logs: Vec::new(),
        }
    }
}

impl<T: Scalar> Objective<T> {
    pub fn eval(&self, x: &[T]) -> Option<T> {
        eval_logs(&self.logs, x).map(|l| l + self.linear.eval(x))
    }
}

/// `lhs(x) ≤ Σ logs(x) + rhs(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow<T> {
    pub lhs: Affine<T>,
    pub logs: Vec<LogTerm<T>>,
    pub rhs: Affine<T>,
}

impl<T: Scalar> LogRow<T> {
    /// Constraint function `lhs − rhs − Σ logs`, feasible when `≤ 0`.
    pub fn value(&self, x: &[T]) -> Option<T> {
        eval_logs(&self.logs, x).map(|l| self.lhs.eval(x) - self.rhs.eval(x) - l)
    }
}

/// `¼ · u(x)² + v(x) ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRow<T> {
    pub u: Affine<T>,
    pub v: Affine<T>,
}

impl<T: Scalar> QuadRow<T> {
    pub fn value(&self, x: &[T]) -> T {
        let u = self.u.eval(x);
        T::lit(0.25) * u * u + self.v.eval(x)
    }
}

/// A concave maximization problem in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProgram<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub names: Vec<String>,
    pub objective: Objective<T>,
    /// Rows `a(x) ≤ 0`.
    pub linear_rows: Vec<Affine<T>>,
    pub log_rows: Vec<LogRow<T>>,
    pub quad_rows: Vec<QuadRow<T>>,
}

impl<T: Scalar> ConvexProgram<T> {
    /// `n` variables bounded below by zero and unbounded above.
    pub fn new(n: usize) -> Self {
        Self {
            lower: vec![T::zero(); n],
            upper: vec![T::infinity(); n],
            names: (0..n).map(|i| format!("x{i}")).collect(),
            objective: Objective::default(),
            linear_rows: Vec::new(),
            log_rows: Vec::new(),
            quad_rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.linear_rows.len() + self.log_rows.len() + self.quad_rows.len()
    }

    /// Checks structural invariants: indices in range, bounds ordered,
    /// non-negative log weights.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.num_vars();
        if self.upper.len() != n || self.names.len() != n {
            return Err("bound/name vectors differ in length".into());
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] >= self.upper[i] {
                return Err(format!("variable {i} has an empty or invalid box"));
            }
        }
        let check = |a: &Affine<T>| -> Result<(), String> {
            if a.coeffs.iter().any(|&(i, c)| i >= n || !c.is_finite()) || !a.constant.is_finite() {
                return Err("affine form references a missing variable or is non-finite".into());
            }
            Ok(())
        };
        let check_logs = |logs: &[LogTerm<T>]| -> Result<(), String> {
            for l in logs {
                if !(l.weight >= T::zero()) || !l.weight.is_finite() {
                    return Err("log weights must be finite and non-negative".into());
                }
                check(&l.arg)?;
            }
            Ok(())
        };
        check(&self.objective.linear)?;
        check_logs(&self.objective.logs)?;
        for r in &self.linear_rows {
            check(r)?;
        }
        for r in &self.log_rows {
            check(&r.lhs)?;
            check(&r.rhs)?;
            check_logs(&r.logs)?;
        }
        for r in &self.quad_rows {
            check(&r.u)?;
            check(&r.v)?;
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[T]) -> Option<T> {
        self.objective.eval(x)
    }

    /// Largest constraint violation at `x` (bounds and all rows), clipped at
    /// zero; infinite outside a log domain.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for i in 0..self.num_vars() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        for r in &self.linear_rows {
            worst = worst.max(r.eval(x));
        }
        for r in &self.log_rows {
            worst = worst.max(r.value(x).unwrap_or(T::infinity()));
        }
        for r in &self.quad_rows {
            worst = worst.max(r.value(x));
        }
        if self.objective.eval(x).is_none() {
            worst = T::infinity();
        }
        worst
    }

    /// Plain-text dump for cross-checking with external modelling tools.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let affine = |a: &Affine<T>| {
            let mut out = String::new();
            let mut terms: Vec<_> = a.coeffs.clone();
            terms.sort_by_key(|&(i, _)| i);
            for (i, c) in terms {
                let _ = write!(out, "{:+e}*{} ", c.as_f64(), self.names[i]);
            }
            let _ = write!(out, "{:+e}", a.constant.as_f64());
            out
        };
        let logs = |ls: &[LogTerm<T>]| {
            ls.iter()
                .map(|l| format!("{:e}*log2({})", l.weight.as_f64(), affine(&l.arg)))
                .collect::<Vec<_>>()
                .join(" + ")
        };
        let _ = writeln!(s, "variables {}", self.num_vars());
        for i in 0..self.num_vars() {
            let _ = writeln!(
                s,
                "  {} in [{:e}, {:e}]",
                self.names[i],
                self.lower[i].as_f64(),
                self.upper[i].as_f64()
            );
        }
        let _ = writeln!(s, "maximize");
        let _ = writeln!(s, "  {}", affine(&self.objective.linear));
        if !self.objective.logs.is_empty() {
            let _ = writeln!(s, "  + {}", logs(&self.objective.logs));
        }
        let _ = writeln!(s, "subject to");
        for (k, r) in self.linear_rows.iter().enumerate() {
            let _ = writeln!(s, "  lin{k}: {} <= 0", affine(r));
        }
        for (k, r) in self.log_rows.iter().enumerate() {
            let _ = writeln!(s, "  log{k}: {} <= {} + {}", affine(&r.lhs), logs(&r.logs), affine(&r.rhs));
        }
        for (k, r) in self.quad_rows.iter().enumerate() {
            let _ = writeln!(s, "  quad{k}: 0.25*({})^2 + {} <= 0", affine(&r.u), affine(&r.v));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_merges_terms() {
        let a = Affine::<f64>::var(0).plus(1, 2.0).plus(0, 3.0).plus_const(1.5);
        assert_eq!(a.coeffs, vec![(0, 4.0), (1, 2.0)]);
        assert_eq!(a.eval(&[1.0, 1.0]), 7.5);
        assert_eq!(a.clone().scale(2.0).eval(&[1.0, 1.0]), 15.0);
    }

    #[test]
    fn violation_and_dump() {
        let mut p = ConvexProgram::<f64>::new(2);
        p.objective.logs.push(LogTerm::new(1.0, Affine::var(0).plus_const(1.0)));
        p.linear_rows.push(Affine::sum_of([0, 1], 1.0).plus_const(-2.0));
        p.quad_rows.push(QuadRow { u: Affine::var(0), v: Affine::constant(-1.0) });
        p.log_rows.push(LogRow {
            lhs: Affine::var(1),
            logs: vec![LogTerm::new(1.0, Affine::var(0).plus_const(1.0))],
            rhs: Affine::default(),
        });
        assert!(p.validate().is_ok());
        assert_eq!(p.max_violation(&[1.0, 0.5]), 0.0);
        assert!((p.max_violation(&[3.0, 0.0]) - 1.25).abs() < 1e-12);
        assert!((p.objective_value(&[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        let text = p.dump();
        assert!(text.contains("variables 2"));
        assert!(text.contains("quad0"));
        assert!(text.contains("log2("));

        p.objective.logs[0].weight = -1.0;
        assert!(p.validate().is_err());
    }
}
