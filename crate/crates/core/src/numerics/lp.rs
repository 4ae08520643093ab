//! Dense two-phase primal simplex: largest-coefficient pricing, switching to
//! Bland's rule once a run of degenerate pivots suggests stalling.
//!
//! Sized for the small programs this crate builds: access-rule programs with
//! `L·2^L` variables, and alpha-vector pruning programs with one row per
//! state and one column per competing vector.
//!
//! Infeasible and unbounded programs are reported through [`LpStatus`]; `Err`
//! is reserved for malformed input and solver failures.

use super::Scalar;
use crate::error::{OsaError, Result};

const MAX_PIVOTS: usize = 100_000;
/// Consecutive degenerate pivots before pricing switches to Bland's rule.
const DEGENERATE_LIMIT: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint<S> {
    pub coefficients: Vec<S>,
    pub relation: Relation,
    pub bound: S,
}

/// `maximize objective·x` subject to linear constraints and per-variable bounds.
///
/// Bounds default to `[0, +inf)`; either side may be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem<S> {
    pub objective: Vec<S>,
    pub constraints: Vec<Constraint<S>>,
    pub bounds: Vec<(S, S)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution<S> {
    pub status: LpStatus,
    /// Primal solution; empty unless `status == Optimal`.
    pub x: Vec<S>,
    pub objective: S,
}

impl<S: Scalar> LpProblem<S> {
    pub fn maximize(objective: Vec<S>) -> Self {
        let n = objective.len();
        LpProblem { objective, constraints: Vec::new(), bounds: vec![(S::zero(), S::infinity()); n] }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_constraint(&mut self, coefficients: Vec<S>, relation: Relation, bound: S) {
        self.constraints.push(Constraint { coefficients, relation, bound });
    }

    pub fn subject_to(mut self, coefficients: Vec<S>, relation: Relation, bound: S) -> Self {
        self.add_constraint(coefficients, relation, bound);
        self
    }

    pub fn set_bounds(&mut self, var: usize, lo: S, hi: S) {
        self.bounds[var] = (lo, hi);
    }

    pub fn with_bounds(mut self, var: usize, lo: S, hi: S) -> Self {
        self.set_bounds(var, lo, hi);
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(OsaError::Dimension { expected: n, got: self.bounds.len() });
        }
        for c in &self.constraints {
            if c.coefficients.len() != n {
                return Err(OsaError::Dimension { expected: n, got: c.coefficients.len() });
            }
            if c.coefficients.iter().any(|v| !v.is_finite()) || !c.bound.is_finite() {
                return Err(OsaError::Invalid("non-finite constraint data".into()));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(OsaError::Invalid("non-finite objective coefficient".into()));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == S::infinity() || hi == S::neg_infinity() {
                return Err(OsaError::Invalid(format!("variable {i} has bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// x_i = offset + Σ sign·y_col
struct VarMap<S> {
    offset: S,
    cols: Vec<(usize, S)>,
}

struct Tableau<S> {
    rows: Vec<Vec<S>>,
    basis: Vec<usize>,
    ncols: usize,
    eps: S,
}

impl<S: Scalar> Tableau<S> {
    fn rhs(&self, i: usize) -> S {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v = *v / p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != S::zero() {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v = *v - f * pv;
                }
                row[c] = S::zero();
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `cost·y` over the current basis. Returns `Ok(false)` when unbounded.
    ///
    /// Prices by largest reduced cost and falls back to Bland's rule once a run of
    /// degenerate pivots suggests stalling, which rules out cycling.
    fn optimize(&mut self, cost: &[S], allowed: &[bool]) -> Result<bool> {
        let eps = self.eps;
        let mut in_basis = vec![false; self.ncols];
        for &b in &self.basis {
            in_basis[b] = true;
        }
        let mut degenerate_run = 0usize;
        for _ in 0..MAX_PIVOTS {
            let bland = degenerate_run >= DEGENERATE_LIMIT;
            let mut entering: Option<(usize, S)> = None;
            for j in 0..self.ncols {
                if !allowed[j] || in_basis[j] {
                    continue;
                }
                let mut d = cost[j];
                for (i, row) in self.rows.iter().enumerate() {
                    d = d - cost[self.basis[i]] * row[j];
                }
                if d > eps && entering.is_none_or(|(_, best)| d > best) {
                    entering = Some((j, d));
                    if bland {
                        break;
                    }
                }
            }
            let Some((c, _)) = entering else { return Ok(true) };

            let mut leave: Option<(usize, S)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > eps {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            let slack = eps * (S::one() + lr.abs());
                            if ratio < lr - slack
                                || (ratio <= lr + slack && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else { return Ok(false) };
            if ratio <= eps {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            in_basis[self.basis[r]] = false;
            in_basis[c] = true;
            self.pivot(r, c);
        }
        Err(OsaError::Solver(format!("simplex exceeded {MAX_PIVOTS} pivots")))
    }
}

/// Solves a linear program. See the module docs for the method.
pub fn lp_solve<S: Scalar>(problem: &LpProblem<S>) -> Result<LpSolution<S>> {
    problem.validate()?;
    let n = problem.num_vars();
    let eps = S::tol();

    // Shift/split variables so every structural column is >= 0.
    let mut maps = Vec::with_capacity(n);
    let mut ncols_struct = 0usize;
    let mut bound_rows: Vec<(usize, S)> = Vec::new();
    for &(lo, hi) in &problem.bounds {
        if lo.is_finite() {
            let c = ncols_struct;
            ncols_struct += 1;
            if hi.is_finite() {
                bound_rows.push((c, hi - lo));
            }
            maps.push(VarMap { offset: lo, cols: vec![(c, S::one())] });
        } else if hi.is_finite() {
            let c = ncols_struct;
            ncols_struct += 1;
            maps.push(VarMap { offset: hi, cols: vec![(c, -S::one())] });
        } else {
            let c = ncols_struct;
            ncols_struct += 2;
            maps.push(VarMap { offset: S::zero(), cols: vec![(c, S::one()), (c + 1, -S::one())] });
        }
    }

    let mut rows: Vec<(Vec<S>, Relation, S)> = Vec::new();
    for con in &problem.constraints {
        let mut coeffs = vec![S::zero(); ncols_struct];
        let mut b = con.bound;
        for (i, &a) in con.coefficients.iter().enumerate() {
            if a == S::zero() {
                continue;
            }
            b = b - a * maps[i].offset;
            for &(c, sign) in &maps[i].cols {
                coeffs[c] = coeffs[c] + a * sign;
            }
        }
        rows.push((coeffs, con.relation, b));
    }
    for &(c, ub) in &bound_rows {
        let mut coeffs = vec![S::zero(); ncols_struct];
        coeffs[c] = S::one();
        rows.push((coeffs, Relation::Le, ub));
    }
    for row in rows.iter_mut() {
        if row.2 < S::zero() {
            for v in row.0.iter_mut() {
                *v = -*v;
            }
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let ncols = ncols_struct + n_slack + n_art;
    let art_start = ncols_struct + n_slack;

    let mut tab = Tableau { rows: Vec::with_capacity(m), basis: Vec::with_capacity(m), ncols, eps };
    let (mut next_slack, mut next_art) = (ncols_struct, art_start);
    let mut b_scale = S::one();
    for (coeffs, rel, b) in rows {
        b_scale = b_scale.max(b.abs());
        let mut row = coeffs;
        row.resize(ncols + 1, S::zero());
        row[ncols] = b;
        match rel {
            Relation::Le => {
                row[next_slack] = S::one();
                tab.basis.push(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                row[next_slack] = -S::one();
                next_slack += 1;
                row[next_art] = S::one();
                tab.basis.push(next_art);
                next_art += 1;
            }
            Relation::Eq => {
                row[next_art] = S::one();
                tab.basis.push(next_art);
                next_art += 1;
            }
        }
        tab.rows.push(row);
    }

    // Phase 1: drive artificial variables to zero.
    if n_art > 0 {
        let mut cost = vec![S::zero(); ncols];
        for c in cost.iter_mut().skip(art_start) {
            *c = -S::one();
        }
        let allowed = vec![true; ncols];
        tab.optimize(&cost, &allowed)?;
        let infeasibility: S = (0..tab.rows.len())
            .filter(|&i| tab.basis[i] >= art_start)
            .map(|i| tab.rhs(i))
            .fold(S::zero(), |a, b| a + b);
        if infeasibility > eps * b_scale {
            return Ok(LpSolution { status: LpStatus::Infeasible, x: Vec::new(), objective: S::nan() });
        }
        // Pivot remaining (zero-level) artificials out or drop redundant rows.
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| tab.rows[i][j].abs() > eps);
                match col {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    // Phase 2.
    let mut cost = vec![S::zero(); ncols];
    for (i, map) in maps.iter().enumerate() {
        for &(c, sign) in &map.cols {
            cost[c] = cost[c] + problem.objective[i] * sign;
        }
    }
    let allowed: Vec<bool> = (0..ncols).map(|j| j < art_start).collect();
    if !tab.optimize(&cost, &allowed)? {
        return Ok(LpSolution { status: LpStatus::Unbounded, x: Vec::new(), objective: S::infinity() });
    }

    let mut y = vec![S::zero(); ncols];
    for (i, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(i).max(S::zero());
    }
    let x: Vec<S> = maps
        .iter()
        .map(|m| m.cols.iter().fold(m.offset, |acc, &(c, sign)| acc + sign * y[c]))
        .collect();
    let objective = x.iter().zip(&problem.objective).fold(S::zero(), |acc, (&xi, &ci)| acc + xi * ci);
    Ok(LpSolution { status: LpStatus::Optimal, x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_box() {
        let p = LpProblem::maximize(vec![1.0f64, 1.0])
            .subject_to(vec![1.0, 0.0], Relation::Le, 1.0)
            .subject_to(vec![0.0, 1.0], Relation::Le, 1.0);
        let s = lp_solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!((s.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_ray() {
        let p = LpProblem::maximize(vec![1.0]).subject_to(vec![1.0], Relation::Ge, 0.0);
        assert_eq!(lp_solve(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn infeasible_bounds() {
        let p = LpProblem::maximize(vec![0.0]).subject_to(vec![1.0], Relation::Le, -1.0);
        assert_eq!(lp_solve(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn free_variable_and_equality() {
        // max d s.t. d <= 1 - b, d <= b, b in [0,1], d free  -> b = 0.5, d = 0.5
        let p = LpProblem::maximize(vec![0.0, 1.0])
            .subject_to(vec![1.0, 1.0], Relation::Le, 1.0)
            .subject_to(vec![-1.0, 1.0], Relation::Le, 0.0)
            .with_bounds(0, 0.0, 1.0)
            .with_bounds(1, f64::NEG_INFINITY, f64::INFINITY);
        let s = lp_solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 0.5).abs() < 1e-12);

        let p = LpProblem::maximize(vec![1.0, 2.0])
            .subject_to(vec![1.0, 1.0], Relation::Eq, 3.0)
            .with_bounds(1, f64::NEG_INFINITY, 2.0);
        let s = lp_solve(&p).unwrap();
        assert!((s.objective - 5.0).abs() < 1e-12, "{s:?}");
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's classic cycling instance; Bland's rule must terminate.
        let p = LpProblem::maximize(vec![0.75f64, -150.0, 0.02, -6.0])
            .subject_to(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0)
            .subject_to(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0)
            .subject_to(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let s = lp_solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 0.05).abs() < 1e-9);
    }

    #[test]
    fn malformed_input() {
        let p = LpProblem::maximize(vec![1.0, 1.0]).subject_to(vec![1.0], Relation::Le, 1.0);
        assert!(lp_solve(&p).is_err());
        let p = LpProblem::maximize(vec![1.0]).with_bounds(0, 2.0, 1.0);
        assert!(lp_solve(&p).is_err());
    }

    #[test]
    fn single_precision() {
        let p = LpProblem::maximize(vec![1.0f32, 1.0])
            .subject_to(vec![1.0, 2.0], Relation::Le, 4.0)
            .subject_to(vec![3.0, 1.0], Relation::Le, 6.0);
        let s = lp_solve(&p).unwrap();
        assert!((s.objective - 2.8).abs() < 1e-5);
    }

    // ---- vertex enumeration oracle ----

    fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    if f != 0.0 {
                        let pivot_row = a[col].clone();
                        for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                            *x -= f * p;
                        }
                        b[r] -= f * b[col];
                    }
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    fn combinations(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
            if cur.len() == k {
                f(cur);
                return;
            }
            for i in start..n {
                if n - i < k - cur.len() {
                    break;
                }
                cur.push(i);
                rec(i + 1, n, k, cur, f);
                cur.pop();
            }
        }
        rec(0, n, k, &mut Vec::new(), f);
    }

    /// Best objective over all basic feasible points of a bounded problem.
    fn vertex_oracle(p: &LpProblem<f64>) -> f64 {
        let n = p.num_vars();
        // hyperplanes: constraints then lower/upper bounds
        let mut planes: Vec<(Vec<f64>, f64, bool)> = Vec::new();
        for c in &p.constraints {
            planes.push((c.coefficients.clone(), c.bound, c.relation == Relation::Eq));
        }
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            planes.push((e.clone(), p.bounds[i].0, false));
            planes.push((e, p.bounds[i].1, false));
        }
        let feasible = |x: &[f64]| {
            let tol = 1e-9;
            p.constraints.iter().all(|c| {
                let v: f64 = c.coefficients.iter().zip(x).map(|(a, b)| a * b).sum();
                match c.relation {
                    Relation::Le => v <= c.bound + tol,
                    Relation::Ge => v >= c.bound - tol,
                    Relation::Eq => (v - c.bound).abs() <= tol,
                }
            }) && x.iter().zip(&p.bounds).all(|(&v, &(lo, hi))| v >= lo - tol && v <= hi + tol)
        };
        let mut best = f64::NEG_INFINITY;
        combinations(planes.len(), n, &mut |idx| {
            let a: Vec<Vec<f64>> = idx.iter().map(|&i| planes[i].0.clone()).collect();
            let b: Vec<f64> = idx.iter().map(|&i| planes[i].1).collect();
            if let Some(x) = solve_square(a, b) {
                if feasible(&x) {
                    let v: f64 = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
                    best = best.max(v);
                }
            }
        });
        best
    }

    fn random_feasible_problem() -> impl Strategy<Value = LpProblem<f64>> {
        (1usize..=8, 1usize..=3).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(-2.0f64..2.0, n),
                prop::collection::vec((0.5f64..3.0, 0.0f64..1.0), n),
                prop::collection::vec((prop::collection::vec(-2.0f64..2.0, n), 0u8..3, 0.0f64..1.0), m),
            )
                .prop_map(move |(obj, boxes, cons)| {
                    let x0: Vec<f64> = boxes.iter().map(|&(u, t)| u * t).collect();
                    let mut p = LpProblem::maximize(obj);
                    for (i, &(u, _)) in boxes.iter().enumerate() {
                        p.set_bounds(i, 0.0, u);
                    }
                    for (a, kind, slack) in cons {
                        let v: f64 = a.iter().zip(&x0).map(|(a, b)| a * b).sum();
                        match kind {
                            0 => p.add_constraint(a, Relation::Le, v + slack),
                            1 => p.add_constraint(a, Relation::Ge, v - slack),
                            _ => p.add_constraint(a, Relation::Eq, v),
                        }
                    }
                    p
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_vertex_enumeration(p in random_feasible_problem()) {
            let s = lp_solve(&p).unwrap();
            prop_assert_eq!(s.status, LpStatus::Optimal);
            let oracle = vertex_oracle(&p);
            prop_assert!((s.objective - oracle).abs() <= 1e-7, "simplex {} vs oracle {}", s.objective, oracle);
            // primal feasibility
            for c in &p.constraints {
                let v: f64 = c.coefficients.iter().zip(&s.x).map(|(a, b)| a * b).sum();
                match c.relation {
                    Relation::Le => prop_assert!(v <= c.bound + 1e-9),
                    Relation::Ge => prop_assert!(v >= c.bound - 1e-9),
                    Relation::Eq => prop_assert!((v - c.bound).abs() <= 1e-9),
                }
            }
        }
    }
}
