//! Primal log-barrier interior-point method for [`ConvexProgram`].
//!
//! Log terms are handled natively: the objective logs act as their own
//! domain barrier and each log row gets `−ln(−g)` with `g` the concave-log
//! constraint function. A strictly feasible start is found with a shifted
//! phase-1 problem that maximizes the minimum (row-normalized) slack.
//!
//! On the central path the multipliers are `λ_i = 1 / (t · (−g_i))`, so a
//! returned optimum comes with a dual certificate that can be checked
//! independently.

use log::trace;

use crate::linalg::{solve_spd, SquareMatrix};
use crate::program::{Affine, ConvexProgram};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
    NumericalFailure,
}

/// Lagrange multipliers of every inequality in the program, in program
/// order. Entries for infinite bounds are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub linear: Vec<T>,
    pub log: Vec<T>,
    pub quad: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome<T> {
    pub status: SolverStatus,
    /// Present iff `status == Optimal`.
    pub x: Option<Vec<T>>,
    pub objective_value: T,
    /// `max(scaled stationarity, complementarity)` at the returned point.
    pub kkt_residual: T,
    /// Newton steps over both phases.
    pub iterations: usize,
    pub multipliers: Option<Multipliers<T>>,
    pub max_violation: T,
}

impl<T: Scalar> SolverOutcome<T> {
    fn failed(status: SolverStatus, iterations: usize) -> Self {
        Self {
            status,
            x: None,
            objective_value: T::nan(),
            kkt_residual: T::infinity(),
            iterations,
            multipliers: None,
            max_violation: T::infinity(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }
}

/// Maximizes `prog` to duality-gap and KKT tolerance `tol` using at most
/// `max_iter` Newton steps, starting from the centre of the variable box.
pub fn solve<T: Scalar>(prog: &ConvexProgram<T>, tol: T, max_iter: usize) -> SolverOutcome<T> {
    Solver::new(prog, tol, max_iter).run(None)
}

/// Like [`solve`] but starting from `start` (pulled strictly inside the box).
pub fn solve_from<T: Scalar>(
    prog: &ConvexProgram<T>,
    tol: T,
    max_iter: usize,
    start: &[T],
) -> SolverOutcome<T> {
    Solver::new(prog, tol, max_iter).run(Some(start))
}

/// Threshold on the optimal phase-1 slack below which the program is
/// declared infeasible.
const INFEASIBLE_SLACK: f64 = -1e-7;
const BOX_SHRINK: f64 = 1e-6;
const BARRIER_GROWTH: f64 = 20.0;
const UNBOUNDED_LIMIT: f64 = 1e15;
const PHASE1_RADIUS: f64 = 1e8;
/// Newton decrement² below which full steps are taken without line search.
const QUADRATIC_REGION: f64 = 0.1;
/// Decrement² below which a stalled centering still counts as converged.
const STALL_REGION: f64 = 1e-6;
/// Consecutive non-improving Newton steps that end centering.
const STALL_STEPS: usize = 5;

#[derive(Debug, Clone, Copy)]
enum Row {
    Linear(usize),
    Log(usize),
    Quad(usize),
    /// Positivity of the j-th objective log argument.
    ObjDomain(usize),
    /// Positivity of log argument j of log row r.
    LogDomain(usize, usize),
}

fn add_affine_grad<T: Scalar>(grad: &mut [T], a: &Affine<T>, s: T) {
    for &(i, c) in &a.coeffs {
        grad[i] += s * c;
    }
}

fn add_affine_outer<T: Scalar>(h: &mut SquareMatrix<T>, a: &Affine<T>, s: T) {
    for &(i, ci) in &a.coeffs {
        for &(j, cj) in &a.coeffs {
            h.add_at(i, j, s * ci * cj);
        }
    }
}

/// Value of the constraint function `g` (feasible when `< 0`), accumulating
/// `∇g` into `grad` when given. `None` outside a log domain.
fn row_value<T: Scalar>(
    prog: &ConvexProgram<T>,
    row: Row,
    x: &[T],
    mut grad: Option<&mut [T]>,
) -> Option<T> {
    let one = T::one();
    match row {
        Row::Linear(i) => {
            let a = &prog.linear_rows[i];
            if let Some(g) = grad {
                add_affine_grad(g, a, one);
            }
            Some(a.eval(x))
        }
        Row::Log(i) => {
            let r = &prog.log_rows[i];
            let mut val = r.lhs.eval(x) - r.rhs.eval(x);
            for l in &r.logs {
                let z = l.arg.eval(x);
                if !(z > T::zero()) {
                    return None;
                }
                val -= l.weight * z.log2();
                if let Some(g) = grad.as_deref_mut() {
                    add_affine_grad(g, &l.arg, -l.weight / (z * T::ln2()));
                }
            }
            if let Some(g) = grad {
                add_affine_grad(g, &r.lhs, one);
                add_affine_grad(g, &r.rhs, -one);
            }
            Some(val)
        }
        Row::Quad(i) => {
            let r = &prog.quad_rows[i];
            let u = r.u.eval(x);
            if let Some(g) = grad {
                add_affine_grad(g, &r.u, T::lit(0.5) * u);
                add_affine_grad(g, &r.v, one);
            }
            Some(T::lit(0.25) * u * u + r.v.eval(x))
        }
        Row::ObjDomain(j) => {
            let a = &prog.objective.logs[j].arg;
            if let Some(g) = grad {
                add_affine_grad(g, a, -one);
            }
            Some(-a.eval(x))
        }
        Row::LogDomain(r, j) => {
            let a = &prog.log_rows[r].logs[j].arg;
            if let Some(g) = grad {
                add_affine_grad(g, a, -one);
            }
            Some(-a.eval(x))
        }
    }
}

/// Adds `s · ∇²g` for the row.
fn row_add_hessian<T: Scalar>(prog: &ConvexProgram<T>, row: Row, x: &[T], h: &mut SquareMatrix<T>, s: T) {
    match row {
        Row::Log(i) => {
            for l in &prog.log_rows[i].logs {
                let z = l.arg.eval(x);
                add_affine_outer(h, &l.arg, s * l.weight / (z * z * T::ln2()));
            }
        }
        Row::Quad(i) => add_affine_outer(h, &prog.quad_rows[i].u, s * T::lit(0.5)),
        _ => {}
    }
}

fn row_scale<T: Scalar>(prog: &ConvexProgram<T>, row: Row) -> T {
    let a = match row {
        Row::Linear(i) => &prog.linear_rows[i],
        Row::ObjDomain(j) => &prog.objective.logs[j].arg,
        Row::LogDomain(r, j) => &prog.log_rows[r].logs[j].arg,
        Row::Log(_) | Row::Quad(_) => return T::one(),
    };
    let m = a.max_abs_coeff();
    if m > T::zero() {
        T::one() / m
    } else {
        T::one()
    }
}

/// Barrier function over `y = x` (phase 2) or `y = (x, s)` (phase 1).
struct Barrier<'a, T> {
    prog: &'a ConvexProgram<T>,
    n: usize,
    with_objective: bool,
    hard: Vec<Row>,
    /// Rows relaxed to `g · scale + s ≤ 0` in phase 1.
    shifted: Vec<(Row, T)>,
    s_cap: T,
    /// Phase 1 only: artificial `|x_i| ≤ radius` for infinite bounds, so
    /// rows whose slack grows without limit cannot make the barrier
    /// unbounded below.
    radius: T,
}

struct Derivs<'b, T> {
    grad: &'b mut [T],
    hess: &'b mut SquareMatrix<T>,
    scratch: &'b mut [T],
}

impl<'a, T: Scalar> Barrier<'a, T> {
    fn phase1(&self) -> bool {
        !self.shifted.is_empty()
    }

    fn dim(&self) -> usize {
        self.n + usize::from(self.phase1())
    }

    fn num_terms(&self) -> usize {
        let bounds = if self.phase1() {
            2 * self.n
        } else {
            (0..self.n)
                .map(|i| usize::from(self.prog.lower[i].is_finite()) + usize::from(self.prog.upper[i].is_finite()))
                .sum::<usize>()
        };
        bounds + self.hard.len() + self.shifted.len() + usize::from(self.phase1())
    }

    fn eval(&self, y: &[T], t: T, mut d: Option<Derivs<'_, T>>) -> Option<T> {
        let prog = self.prog;
        let n = self.n;
        let x = &y[..n];
        let one = T::one();
        if let Some(d) = d.as_mut() {
            d.grad.iter_mut().for_each(|v| *v = T::zero());
            d.hess.fill_zero();
        }
        let mut val = T::zero();

        for i in 0..n {
            for (gap, sign) in [(x[i] - prog.lower[i], -one), (prog.upper[i] - x[i], one)] {
                let gap = if gap.is_infinite() && self.phase1() {
                    self.radius - sign * x[i]
                } else {
                    gap
                };
                if gap.is_infinite() {
                    continue;
                }
                if !(gap > T::zero()) {
                    return None;
                }
                val -= gap.ln();
                if let Some(d) = d.as_mut() {
                    d.grad[i] += sign / gap;
                    d.hess.add_at(i, i, one / (gap * gap));
                }
            }
        }

        if self.with_objective {
            let obj = &prog.objective;
            val -= t * obj.linear.eval(x);
            if let Some(d) = d.as_mut() {
                add_affine_grad(d.grad, &obj.linear, -t);
            }
            for l in &obj.logs {
                let z = l.arg.eval(x);
                if !(z > T::zero()) {
                    return None;
                }
                val -= t * l.weight * z.log2();
                if let Some(d) = d.as_mut() {
                    let w = t * l.weight / T::ln2();
                    add_affine_grad(d.grad, &l.arg, -w / z);
                    add_affine_outer(d.hess, &l.arg, w / (z * z));
                }
            }
        }

        for &row in &self.hard {
            let g = match d.as_mut() {
                Some(d) => {
                    d.scratch.iter_mut().for_each(|v| *v = T::zero());
                    row_value(prog, row, x, Some(&mut d.scratch[..n]))?
                }
                None => row_value(prog, row, x, None)?,
            };
            if !(g < T::zero()) {
                return None;
            }
            val -= (-g).ln();
            if let Some(d) = d.as_mut() {
                let inv = one / (-g);
                for i in 0..n {
                    d.grad[i] += d.scratch[i] * inv;
                }
                d.hess.add_outer(&d.scratch[..n], inv * inv);
                row_add_hessian(prog, row, x, d.hess, inv);
            }
        }

        if self.phase1() {
            let s = y[n];
            for &(row, scale) in &self.shifted {
                let g = match d.as_mut() {
                    Some(d) => {
                        d.scratch.iter_mut().for_each(|v| *v = T::zero());
                        row_value(prog, row, x, Some(&mut d.scratch[..n]))?
                    }
                    None => row_value(prog, row, x, None)?,
                };
                let g = g * scale + s;
                if !(g < T::zero()) {
                    return None;
                }
                val -= (-g).ln();
                if let Some(d) = d.as_mut() {
                    let inv = one / (-g);
                    for i in 0..n {
                        d.scratch[i] *= scale;
                    }
                    d.scratch[n] = one;
                    for i in 0..=n {
                        d.grad[i] += d.scratch[i] * inv;
                    }
                    d.hess.add_outer(d.scratch, inv * inv);
                    row_add_hessian(prog, row, x, d.hess, inv * scale);
                }
            }
            let cap = self.s_cap - s;
            if !(cap > T::zero()) {
                return None;
            }
            val += -t * s - cap.ln();
            if let Some(d) = d.as_mut() {
                d.grad[n] += -t + one / cap;
                d.hess.add_at(n, n, one / (cap * cap));
            }
        }
        Some(val)
    }

    fn value(&self, y: &[T], t: T) -> Option<T> {
        self.eval(y, t, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Centering {
    Converged,
    Stalled,
    IterLimit,
    Diverged,
}

struct Solver<'a, T> {
    prog: &'a ConvexProgram<T>,
    tol: T,
    budget: usize,
    used: usize,
}

impl<'a, T: Scalar> Solver<'a, T> {
    fn new(prog: &'a ConvexProgram<T>, tol: T, max_iter: usize) -> Self {
        Self {
            prog,
            tol,
            budget: max_iter,
            used: 0,
        }
    }

    fn start_point(&self, hint: Option<&[T]>) -> Vec<T> {
        let p = self.prog;
        (0..p.num_vars())
            .map(|i| {
                let (l, u) = (p.lower[i], p.upper[i]);
                let shrink = |b: T| T::lit(BOX_SHRINK) * T::one().max(b.abs());
                let (lo, hi) = match (l.is_finite(), u.is_finite()) {
                    (true, true) => {
                        let w = (u - l) * T::lit(0.25);
                        (l + shrink(l).min(w), u - shrink(u).min(w))
                    }
                    (true, false) => (l + shrink(l), T::infinity()),
                    (false, true) => (T::neg_infinity(), u - shrink(u)),
                    (false, false) => (T::neg_infinity(), T::infinity()),
                };
                match hint.map(|h| h[i]).filter(|v| v.is_finite()) {
                    Some(v) => v.max(lo).min(hi),
                    None => match (l.is_finite(), u.is_finite()) {
                        (true, true) => (l + u) * T::lit(0.5),
                        (true, false) => l + T::one(),
                        (false, true) => u - T::one(),
                        (false, false) => T::zero(),
                    },
                }
            })
            .collect()
    }

    fn center(&mut self, b: &Barrier<'_, T>, y: &mut Vec<T>, t: T, dec_tol: T) -> Centering {
        let dim = b.dim();
        let mut grad = vec![T::zero(); dim];
        let mut hess = SquareMatrix::zeros(dim);
        let mut scratch = vec![T::zero(); dim];
        let noise = T::epsilon() * T::lit(64.0);
        let mut best_dec2 = T::infinity();
        let mut stalls = 0;
        loop {
            let Some(val) = b.eval(
                y,
                t,
                Some(Derivs {
                    grad: &mut grad,
                    hess: &mut hess,
                    scratch: &mut scratch,
                }),
            ) else {
                return Centering::Stalled;
            };
            let rhs: Vec<T> = grad.iter().map(|&g| -g).collect();
            let Some(step) = solve_spd(&hess, &rhs) else {
                return Centering::Stalled;
            };
            let dec2 = -grad.iter().zip(&step).fold(T::zero(), |a, (&g, &s)| a + g * s);
            if !dec2.is_finite() {
                return Centering::Stalled;
            }
            if dec2 * T::lit(0.5) <= dec_tol {
                return Centering::Converged;
            }
            if self.used >= self.budget {
                return Centering::IterLimit;
            }
            self.used += 1;

            // Inside the quadratic region the full Newton step is trusted;
            // the barrier value there can be too large for its decrease to
            // be resolved in floating point.
            let mut trial: Vec<T> = y.iter().zip(&step).map(|(&v, &s)| v + s).collect();
            let mut accepted = dec2 < T::lit(QUADRATIC_REGION) && b.value(&trial, t).is_some();
            let mut alpha = T::one();
            while !accepted && alpha > T::lit(1e-20) {
                for i in 0..dim {
                    trial[i] = y[i] + alpha * step[i];
                }
                if let Some(v) = b.value(&trial, t) {
                    let slack = noise * (val.abs() + T::one());
                    if v <= val - T::lit(0.25) * alpha * dec2 + slack {
                        accepted = true;
                        break;
                    }
                }
                alpha *= T::lit(0.5);
            }
            if accepted && trial == *y {
                accepted = false;
            }
            if accepted && dec2 < T::lit(QUADRATIC_REGION) {
                // Near the centre the decrement eventually sits on a floor
                // set by rounding in the gradient, where steps only wander.
                stalls = if dec2 > T::lit(0.9) * best_dec2 { stalls + 1 } else { 0 };
                best_dec2 = best_dec2.min(dec2);
                if stalls >= STALL_STEPS {
                    accepted = false;
                }
            }
            if !accepted {
                return if dec2 < T::lit(STALL_REGION) {
                    Centering::Converged
                } else {
                    Centering::Stalled
                };
            }
            std::mem::swap(y, &mut trial);
            if y.iter().any(|v| v.abs() > T::lit(UNBOUNDED_LIMIT)) {
                return Centering::Diverged;
            }
            if b.phase1() && y[b.n] > T::zero() {
                return Centering::Converged;
            }
        }
    }

    /// Finds a point strictly satisfying every `shifted` row (with `hard`
    /// rows and bounds kept strictly feasible throughout).
    fn phase1(&mut self, hard: Vec<Row>, shifted: Vec<Row>, x0: &[T]) -> Result<Vec<T>, SolverStatus> {
        let prog = self.prog;
        let n = prog.num_vars();
        let shifted: Vec<(Row, T)> = shifted.into_iter().map(|r| (r, row_scale(prog, r))).collect();
        let mut worst = T::neg_infinity();
        for &(row, scale) in &shifted {
            match row_value(prog, row, x0, None) {
                Some(g) => worst = worst.max(g * scale),
                None => return Err(SolverStatus::NumericalFailure),
            }
        }
        if worst < T::zero() {
            return Ok(x0.to_vec());
        }
        let radius = T::lit(PHASE1_RADIUS) * x0.iter().fold(T::one(), |m, v| m.max(v.abs()));
        let barrier = Barrier {
            prog,
            n,
            with_objective: false,
            hard,
            shifted,
            s_cap: T::one(),
            radius,
        };
        let mut y = x0.to_vec();
        y.push(-worst - T::one());
        if barrier.value(&y, T::one()).is_none() {
            return Err(SolverStatus::NumericalFailure);
        }
        let m = T::lit(barrier.num_terms() as f64);
        let mut t = T::one();
        loop {
            let c = self.center(&barrier, &mut y, t, T::epsilon().sqrt() * T::lit(0.1));
            let s = y[n];
            if s > T::zero() {
                return Ok(y[..n].to_vec());
            }
            match c {
                Centering::IterLimit => return Err(SolverStatus::MaxIterations),
                Centering::Diverged => return Err(SolverStatus::NumericalFailure),
                Centering::Converged | Centering::Stalled => {}
            }
            let gap = m / t;
            trace!("phase1 t={:e} s={:e} gap={:e}", t.as_f64(), s.as_f64(), gap.as_f64());
            // s + gap bounds the best achievable minimum slack.
            if gap < T::lit(1e-10) {
                return Err(SolverStatus::Infeasible);
            }
            if c == Centering::Stalled {
                return Err(if s + gap < T::lit(INFEASIBLE_SLACK) {
                    SolverStatus::Infeasible
                } else {
                    SolverStatus::NumericalFailure
                });
            }
            t *= T::lit(BARRIER_GROWTH);
        }
    }

    fn run(mut self, hint: Option<&[T]>) -> SolverOutcome<T> {
        let prog = self.prog;
        if prog.validate().is_err() {
            return SolverOutcome::failed(SolverStatus::NumericalFailure, 0);
        }
        
        let mut x = self.start_point(hint);

        let mut domains: Vec<Row> = (0..prog.objective.logs.len()).map(Row::ObjDomain).collect();
        for (r, row) in prog.log_rows.iter().enumerate() {
            domains.extend((0..row.logs.len()).map(|j| Row::LogDomain(r, j)));
        }
        let rows: Vec<Row> = (0..prog.linear_rows.len())
            .map(Row::Linear)
            .chain((0..prog.log_rows.len()).map(Row::Log))
            .chain((0..prog.quad_rows.len()).map(Row::Quad))
            .collect();

        let outside = |x: &[T], rows: &[Row]| {
            rows.iter()
                .any(|&r| !matches!(row_value(prog, r, x, None), Some(g) if g < T::zero()))
        };
        if outside(&x, &domains) {
            let shifted = (0..prog.linear_rows.len())
                .map(Row::Linear)
                .chain(domains.iter().copied())
                .collect();
            match self.phase1(Vec::new(), shifted, &x) {
                Ok(x1) => x = x1,
                Err(s) => return SolverOutcome::failed(s, self.used),
            }
        }
        if outside(&x, &rows) {
            let hard = (0..prog.objective.logs.len()).map(Row::ObjDomain).collect();
            match self.phase1(hard, rows.clone(), &x) {
                Ok(x1) => x = x1,
                Err(s) => return SolverOutcome::failed(s, self.used),
            }
        }
        self.phase2(rows, x)
    }

    fn phase2(&mut self, rows: Vec<Row>, mut x: Vec<T>) -> SolverOutcome<T> {
        let prog = self.prog;
        let n = prog.num_vars();
        let barrier = Barrier {
            prog,
            n,
            with_objective: true,
            hard: rows,
            shifted: Vec::new(),
            s_cap: T::one(),
            radius: T::infinity(),
        };
        if barrier.value(&x, T::one()).is_none() {
            return SolverOutcome::failed(SolverStatus::NumericalFailure, self.used);
        }
        let m = T::lit(barrier.num_terms().max(1) as f64);
        let mut t = T::one();
        loop {
            let final_stage = m / t <= self.tol;
            let dec_tol = if final_stage {
                T::epsilon() * T::lit(100.0)
            } else {
                T::epsilon().sqrt() * T::lit(0.1)
            };
            let c = self.center(&barrier, &mut x, t, dec_tol);
            trace!("phase2 t={:e} obj={:?} centering={c:?}", t.as_f64(), prog.objective_value(&x));
            match c {
                Centering::Diverged => return SolverOutcome::failed(SolverStatus::Unbounded, self.used),
                Centering::IterLimit => return SolverOutcome::failed(SolverStatus::MaxIterations, self.used),
                Centering::Converged | Centering::Stalled => {}
            }
            if let Some(f) = prog.objective_value(&x) {
                if f > T::lit(UNBOUNDED_LIMIT) {
                    return SolverOutcome::failed(SolverStatus::Unbounded, self.used);
                }
            }
            if final_stage {
                let out = self.certificate(&barrier, &x, t);
                return if out.kkt_residual <= self.tol {
                    out
                } else {
                    SolverOutcome {
                        status: SolverStatus::NumericalFailure,
                        x: None,
                        multipliers: None,
                        ..out
                    }
                };
            }
            if c == Centering::Stalled && m / t > self.tol * T::lit(1e3) {
                return SolverOutcome::failed(SolverStatus::NumericalFailure, self.used);
            }
            t = (t * T::lit(BARRIER_GROWTH)).min(m / self.tol);
        }
    }

    /// Newton step of the barrier problem at `x`.
    fn newton_step(b: &Barrier<'_, T>, x: &[T], t: T) -> Option<Vec<T>> {
        let dim = b.dim();
        let mut grad = vec![T::zero(); dim];
        let mut hess = SquareMatrix::zeros(dim);
        let mut scratch = vec![T::zero(); dim];
        b.eval(
            x,
            t,
            Some(Derivs {
                grad: &mut grad,
                hess: &mut hess,
                scratch: &mut scratch,
            }),
        )?;
        let rhs: Vec<T> = grad.iter().map(|&g| -g).collect();
        solve_spd(&hess, &rhs)
    }

    fn certificate(&self, b: &Barrier<'_, T>, x: &[T], t: T) -> SolverOutcome<T> {
        let prog = self.prog;
        let n = prog.num_vars();
        let mut g0 = vec![T::zero(); n];
        add_affine_grad(&mut g0, &prog.objective.linear, T::one());
        for l in &prog.objective.logs {
            let z = l.arg.eval(x);
            add_affine_grad(&mut g0, &l.arg, l.weight / (z * T::ln2()));
        }
        let rows = inequalities(prog, x);
        let central: Vec<T> = rows.iter().map(|r| T::one() / (t * r.slack)).collect();

        // Near the optimum x is only known to rounding, which the central
        // path multipliers amplify by 1/slack². Rows whose slack is at that
        // noise level get their multipliers from a least-squares fit of the
        // remaining stationarity residual instead. The noise level is not
        // known exactly, so a few cutoffs are tried.
        let mut lambda = central.clone();
        let mut kkt = kkt_of(&g0, &rows, &central);
        // Central multipliers evaluated one Newton step ahead, which
        // cancels the first-order part of the centering error.
        if let Some(dx) = Self::newton_step(b, x, t) {
            let ahead: Vec<T> = rows
                .iter()
                .zip(&central)
                .map(|(r, &l)| (l * (T::one() + dot(&r.grad, &dx) / r.slack)).max(T::zero()))
                .collect();
            let r = kkt_of(&g0, &rows, &ahead);
            if r < kkt {
                kkt = r;
                lambda = ahead;
            }
        }
        let mut threshold = T::epsilon().sqrt();
        for _ in 0..4 {
            if let Some(fitted) = fit_active(&g0, &rows, &central, threshold) {
                let r = kkt_of(&g0, &rows, &fitted);
                if r < kkt {
                    kkt = r;
                    lambda = fitted;
                }
            }
            threshold *= T::lit(100.0);
        }

        let mut multipliers = Multipliers {
            lower: vec![T::zero(); n],
            upper: vec![T::zero(); n],
            linear: vec![T::zero(); prog.linear_rows.len()],
            log: vec![T::zero(); prog.log_rows.len()],
            quad: vec![T::zero(); prog.quad_rows.len()],
        };
        for (r, l) in rows.iter().zip(lambda) {
            let slot = match r.kind {
                RowKind::Lower => &mut multipliers.lower,
                RowKind::Upper => &mut multipliers.upper,
                RowKind::Linear => &mut multipliers.linear,
                RowKind::Log => &mut multipliers.log,
                RowKind::Quad => &mut multipliers.quad,
            };
            slot[r.index] = l;
        }
        SolverOutcome {
            status: SolverStatus::Optimal,
            objective_value: prog.objective_value(x).unwrap_or(T::nan()),
            kkt_residual: kkt,
            iterations: self.used,
            multipliers: Some(multipliers),
            max_violation: prog.max_violation(x),
            x: Some(x.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum RowKind {
    Lower,
    Upper,
    Linear,
    Log,
    Quad,
}

/// One inequality `g ≤ 0` at a point: `slack = −g` and dense `∇g`.
struct Inequality<T> {
    kind: RowKind,
    index: usize,
    slack: T,
    grad: Vec<T>,
}

fn inequalities<T: Scalar>(prog: &ConvexProgram<T>, x: &[T]) -> Vec<Inequality<T>> {
    let n = prog.num_vars();
    let mut out = Vec::new();
    for i in 0..n {
        let unit = |sign: T| {
            let mut g = vec![T::zero(); n];
            g[i] = sign;
            g
        };
        if prog.lower[i].is_finite() {
            out.push(Inequality { kind: RowKind::Lower, index: i, slack: x[i] - prog.lower[i], grad: unit(-T::one()) });
        }
        if prog.upper[i].is_finite() {
            out.push(Inequality { kind: RowKind::Upper, index: i, slack: prog.upper[i] - x[i], grad: unit(T::one()) });
        }
    }
    let mut push = |kind, index, row| {
        let mut grad = vec![T::zero(); n];
        let g = row_value(prog, row, x, Some(&mut grad)).unwrap_or(T::nan());
        out.push(Inequality { kind, index, slack: -g, grad });
    };
    for i in 0..prog.linear_rows.len() {
        push(RowKind::Linear, i, Row::Linear(i));
    }
    for i in 0..prog.log_rows.len() {
        push(RowKind::Log, i, Row::Log(i));
    }
    for i in 0..prog.quad_rows.len() {
        push(RowKind::Quad, i, Row::Quad(i));
    }
    out
}

/// Central multipliers with those of rows at slack `≤ threshold` replaced
/// by a non-negative least-squares fit of the stationarity residual.
fn fit_active<T: Scalar>(g0: &[T], rows: &[Inequality<T>], central: &[T], threshold: T) -> Option<Vec<T>> {
    let mut active: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].slack <= threshold).collect();
    if active.is_empty() {
        return None;
    }
    let mut rest = g0.to_vec();
    for (i, row) in rows.iter().enumerate() {
        if row.slack > threshold {
            for (r, &g) in rest.iter_mut().zip(&row.grad) {
                *r -= central[i] * g;
            }
        }
    }
    let mut fitted = central.to_vec();
    // Rows whose fitted multiplier comes out negative are dropped and the
    // fit repeated, which keeps the sign constraint without a full NNLS.
    while !active.is_empty() {
        let k = active.len();
        let mut gram = SquareMatrix::zeros(k);
        let mut rhs = vec![T::zero(); k];
        for (a, &i) in active.iter().enumerate() {
            rhs[a] = dot(&rows[i].grad, &rest);
            for (b, &j) in active.iter().enumerate() {
                gram.add_at(a, b, dot(&rows[i].grad, &rows[j].grad));
            }
        }
        let lam = solve_spd(&gram, &rhs)?;
        let negative: Vec<usize> = (0..k).filter(|&a| lam[a] < T::zero()).collect();
        if negative.is_empty() {
            for (a, &i) in active.iter().enumerate() {
                fitted[i] = lam[a];
            }
            return Some(fitted);
        }
        for &a in negative.iter().rev() {
            fitted[active[a]] = T::zero();
            active.remove(a);
        }
    }
    Some(fitted)
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `max(‖∇f0 − Σ λ_i ∇g_i‖∞ / (1 + ‖∇f0‖∞), max_i λ_i · slack_i)`.
/// Scaled KKT residual. Stationarity is measured relative to the largest
/// term of the gradient balance, so cancellation between steep rows does
/// not count as a violation.
fn kkt_of<T: Scalar>(g0: &[T], rows: &[Inequality<T>], lambda: &[T]) -> T {
    let inf_norm = |v: &[T]| v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let mut r = g0.to_vec();
    let mut compl = T::zero();
    let mut scale = inf_norm(g0);
    for (row, &l) in rows.iter().zip(lambda) {
        if l == T::zero() {
            continue;
        }
        for (ri, &gi) in r.iter_mut().zip(&row.grad) {
            *ri -= l * gi;
        }
        scale = scale.max(l * inf_norm(&row.grad));
        compl = compl.max(l * row.slack);
    }
    let stat = inf_norm(&r) / (T::one() + scale);
    let res = stat.max(compl);
    if res.is_nan() {
        T::infinity()
    } else {
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{LogRow, LogTerm, QuadRow};

    fn log_obj(p: &mut ConvexProgram<f64>, i: usize, shift: f64) {
        p.objective
            .logs
            .push(LogTerm::new(1.0, Affine::var(i).plus_const(shift)));
    }

    #[test]
    fn monotone_log_hits_bound() {
        let mut p = ConvexProgram::<f64>::new(1);
        log_obj(&mut p, 0, 0.0);
        p.linear_rows.push(Affine::var(0).plus_const(-2.0));
        let out = solve(&p, 1e-8, 500);
        assert_eq!(out.status, SolverStatus::Optimal, "{out:?}");
        let x = out.x.unwrap();
        assert!((x[0] - 2.0).abs() < 1e-6);
        assert!((out.objective_value - 1.0).abs() < 1e-7);
        assert!(out.kkt_residual <= 1e-8);
    }

    #[test]
    fn symmetric_logs_split_evenly() {
        let mut p = ConvexProgram::<f64>::new(2);
        log_obj(&mut p, 0, 1.0);
        log_obj(&mut p, 1, 1.0);
        p.linear_rows.push(Affine::sum_of([0, 1], 1.0).plus_const(-2.0));
        let out = solve(&p, 1e-9, 500);
        let x = out.x.unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
        assert!((out.objective_value - 2.0).abs() < 1e-7);
    }

    #[test]
    fn quadratic_boundary() {
        let mut p = ConvexProgram::<f64>::new(1);
        p.objective.linear = Affine::var(0);
        p.quad_rows.push(QuadRow {
            u: Affine::var(0),
            v: Affine::constant(-1.0),
        });
        let out = solve(&p, 1e-9, 500);
        assert!((out.x.unwrap()[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn log_row_constraint() {
        // maximize y s.t. y ≤ log2(1 + x), x ≤ 3.
        let mut p = ConvexProgram::<f64>::new(2);
        p.objective.linear = Affine::var(1);
        p.linear_rows.push(Affine::var(0).plus_const(-3.0));
        p.log_rows.push(LogRow {
            lhs: Affine::var(1),
            logs: vec![LogTerm::new(1.0, Affine::var(0).plus_const(1.0))],
            rhs: Affine::default(),
        });
        let out = solve(&p, 1e-9, 500);
        let x = out.x.unwrap();
        assert!((x[1] - 2.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn detects_infeasibility() {
        let mut p = ConvexProgram::<f64>::new(1);
        p.objective.linear = Affine::var(0);
        p.linear_rows.push(Affine::var(0).plus_const(-1.0));
        p.linear_rows.push(Affine::var(0).scale(-1.0).plus_const(2.0));
        assert_eq!(solve(&p, 1e-8, 500).status, SolverStatus::Infeasible);
    }

    #[test]
    fn detects_unboundedness() {
        let mut p = ConvexProgram::<f64>::new(1);
        p.objective.linear = Affine::var(0);
        let out = solve(&p, 1e-8, 5000);
        assert_eq!(out.status, SolverStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_domain_phase() {
        // maximize log2(x − 5) − x with x free: optimum x = 5 + 1/ln 2.
        let mut p = ConvexProgram::<f64>::new(1);
        p.lower[0] = f64::NEG_INFINITY;
        p.objective.linear = Affine::var(0).scale(-1.0);
        p.objective.logs.push(LogTerm::new(1.0, Affine::var(0).plus_const(-5.0)));
        let out = solve(&p, 1e-9, 500);
        let x = out.x.unwrap();
        assert!((x[0] - (5.0 + 1.0 / std::f64::consts::LN_2)).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn f32_instantiation() {
        let mut p = ConvexProgram::<f32>::new(2);
        p.objective.logs.push(LogTerm::new(1.0, Affine::var(0).plus_const(1.0)));
        p.objective.logs.push(LogTerm::new(1.0, Affine::var(1).plus_const(1.0)));
        p.linear_rows.push(Affine::sum_of([0, 1], 1.0).plus_const(-2.0));
        let out = solve(&p, 1e-4, 500);
        assert_eq!(out.status, SolverStatus::Optimal, "{out:?}");
        let x = out.x.unwrap();
        assert!((x[0] - 1.0).abs() < 1e-2 && (x[1] - 1.0).abs() < 1e-2);
    }
}
