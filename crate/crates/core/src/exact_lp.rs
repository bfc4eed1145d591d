//! Exact rational simplex with certificates.
//!
//! Solves `maximize c·x` subject to row constraints (`≤`, `=`, `≥`) and
//! per-variable bounds, entirely in arbitrary-precision rational arithmetic.
//! Every outcome carries a certificate that can be re-checked independently
//! of the solver:
//!
//! * [`LpOutcome::Optimal`] — primal solution, dual multipliers, and reduced
//!   costs satisfying complementary slackness and the strong-duality
//!   identity `c·x* = dual·rhs + reduced·x*`;
//! * [`LpOutcome::Unbounded`] — a feasible point and an improving ray;
//! * [`LpOutcome::Infeasible`] — Farkas multipliers aggregating the
//!   constraints into the contradiction `0 ≤ (negative)`.
//!
//! [`check_feasible`], [`check_optimal_certificates`], [`check_unbounded`],
//! and [`check_infeasibility_certificate`] verify these claims from scratch.
//!
//! Pivoting uses Bland's anti-cycling rule (smallest-index entering column,
//! ties in the ratio test broken by smallest basis column), so the solver
//! terminates on every input — including the classical cycling examples in
//! the test suite — and is fully deterministic: the same program yields the
//! same pivot sequence, certificates included. A pivot budget
//! ([`LpOptions::max_pivots`]) turns pathological runtimes into a clean
//! [`Error::PivotBudgetExceeded`] instead of an apparent hang.
//!
//! Internally the program is standardized (shift lower-bounded variables,
//! reflect upper-bounded ones, split free ones, add a synthetic row per
//! doubly-bounded variable), rows are sign-normalized to nonnegative
//! right-hand sides, and a two-phase dense tableau runs with one identity
//! column per row, from which exact dual values are read off at the end.

use crate::{Error, Rational, Result};
use num_traits::{One, Signed, Zero};

// ───────────────────────────── program model ─────────────────────────────

/// Direction of one row constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `coefficients · x ≤ rhs`
    Le,
    /// `coefficients · x = rhs`
    Eq,
    /// `coefficients · x ≥ rhs`
    Ge,
}

/// One row constraint `coefficients · x  (≤|=|≥)  rhs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    /// Dense coefficient vector, one entry per variable.
    pub coefficients: Vec<Rational>,
    /// Row direction.
    pub relation: Relation,
    /// Right-hand side.
    pub rhs: Rational,
}

impl Constraint {
    /// `coefficients · x ≤ rhs`.
    pub fn le(coefficients: Vec<Rational>, rhs: Rational) -> Self {
        Constraint { coefficients, relation: Relation::Le, rhs }
    }

    /// `coefficients · x = rhs`.
    pub fn eq(coefficients: Vec<Rational>, rhs: Rational) -> Self {
        Constraint { coefficients, relation: Relation::Eq, rhs }
    }

    /// `coefficients · x ≥ rhs`.
    pub fn ge(coefficients: Vec<Rational>, rhs: Rational) -> Self {
        Constraint { coefficients, relation: Relation::Ge, rhs }
    }
}

/// Bounds on one variable; `None` means unbounded on that side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarBound {
    /// Lower bound, if any.
    pub lower: Option<Rational>,
    /// Upper bound, if any.
    pub upper: Option<Rational>,
}

impl VarBound {
    /// `x ≥ 0`.
    pub fn nonneg() -> Self {
        VarBound { lower: Some(Rational::zero()), upper: None }
    }

    /// Unrestricted variable.
    pub fn free() -> Self {
        VarBound { lower: None, upper: None }
    }

    /// `lo ≤ x ≤ hi`.
    pub fn boxed(lo: Rational, hi: Rational) -> Self {
        VarBound { lower: Some(lo), upper: Some(hi) }
    }
}

/// A maximization program: `max objective · x` subject to `constraints`
/// and `bounds` (one [`VarBound`] per variable).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearProgram {
    /// Objective coefficients (maximized).
    pub objective: Vec<Rational>,
    /// Row constraints.
    pub constraints: Vec<Constraint>,
    /// Per-variable bounds; must have the same length as `objective`.
    pub bounds: Vec<VarBound>,
}

/// Solver knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpOptions {
    /// Hard cap on simplex pivots across both phases.
    pub max_pivots: u64,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions { max_pivots: 1_000_000 }
    }
}

/// Optimal solution with verifiable dual information.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptimalSolution {
    /// Optimal variable values.
    pub primal: Vec<Rational>,
    /// `objective · primal`, exactly.
    pub objective_value: Rational,
    /// Row multipliers: `≥ 0` on `≤` rows, `≤ 0` on `≥` rows, free on `=`.
    pub dual: Vec<Rational>,
    /// Per-variable `c_j − Σ_r dual_r · a_rj`; zero off the active bounds.
    pub reduced_costs: Vec<Rational>,
}

/// A feasible point plus a direction of unbounded improvement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnboundedRay {
    /// Feasible starting point.
    pub point: Vec<Rational>,
    /// Recession direction: `point + t·ray` stays feasible for all `t ≥ 0`
    /// and `objective · ray > 0`.
    pub ray: Vec<Rational>,
}

/// Farkas-style infeasibility certificate.
///
/// With `λ = row_multipliers` (`≥ 0` on `≤` rows, `≤ 0` on `≥` rows, free on
/// `=`), `μl = lower_multipliers ≥ 0`, `μu = upper_multipliers ≥ 0`, the
/// aggregation `Σ_r λ_r·row_r − Σ_j μl_j·(x_j ≥ l_j) + Σ_j μu_j·(x_j ≤ u_j)`
/// has all variable coefficients zero and a strictly negative right-hand
/// side — the contradiction `0 ≤ negative`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FarkasCertificate {
    /// One multiplier per row constraint.
    pub row_multipliers: Vec<Rational>,
    /// One multiplier per variable lower bound (zero where unbounded).
    pub lower_multipliers: Vec<Rational>,
    /// One multiplier per variable upper bound (zero where unbounded).
    pub upper_multipliers: Vec<Rational>,
}

/// Solver outcome; each variant carries its certificate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpOutcome {
    /// Finite optimum found.
    Optimal(OptimalSolution),
    /// Feasible but the objective increases without bound.
    Unbounded(UnboundedRay),
    /// No feasible point exists.
    Infeasible(FarkasCertificate),
}

// ───────────────────────────── standardization ─────────────────────────────

#[derive(Debug, Clone)]
enum VarMap {
    /// `x_j = lo + x'_col`, `x'_col ≥ 0`.
    ShiftLo { col: usize, lo: Rational },
    /// `x_j = hi − x'_col`, `x'_col ≥ 0`.
    NegShift { col: usize, hi: Rational },
    /// `x_j = x'_pos − x'_neg`, both `≥ 0`.
    Split { pos: usize, neg: usize },
}

struct Tableau {
    /// `m × n_total` coefficients.
    tab: Vec<Vec<Rational>>,
    /// Right-hand sides, all nonnegative.
    rhs: Vec<Rational>,
    /// Basic column per row.
    basis: Vec<usize>,
    /// Identity column of each row (slack or artificial).
    idcol: Vec<usize>,
    /// Per-column artificial flag.
    artificial: Vec<bool>,
    /// `+1` / `−1` applied to each row during rhs normalization.
    sigma: Vec<i32>,
    /// Variable transforms, one per user variable.
    var_maps: Vec<VarMap>,
    /// Synthetic `x' ≤ hi − lo` row per doubly-bounded variable.
    synth_row_of: Vec<Option<usize>>,
    /// Number of user rows (synthetic rows follow them).
    n_user_rows: usize,
    pivots: u64,
}

fn validate_program(lp: &LinearProgram) -> Result<()> {
    let n = lp.objective.len();
    if n == 0 {
        return Err(Error::MalformedProgram("program has no variables".into()));
    }
    if lp.bounds.len() != n {
        return Err(Error::MalformedProgram(format!(
            "{} bounds for {} variables",
            lp.bounds.len(),
            n
        )));
    }
    for (r, c) in lp.constraints.iter().enumerate() {
        if c.coefficients.len() != n {
            return Err(Error::MalformedProgram(format!(
                "row {r} has {} coefficients for {} variables",
                c.coefficients.len(),
                n
            )));
        }
    }
    Ok(())
}

/// Detects `lo > hi` and returns the trivial Farkas certificate for it.
fn contradictory_bounds(lp: &LinearProgram) -> Option<FarkasCertificate> {
    let n = lp.objective.len();
    for (j, b) in lp.bounds.iter().enumerate() {
        if let (Some(lo), Some(hi)) = (&b.lower, &b.upper) {
            if lo > hi {
                let mut lower = vec![Rational::zero(); n];
                let mut upper = vec![Rational::zero(); n];
                lower[j] = Rational::one();
                upper[j] = Rational::one();
                return Some(FarkasCertificate {
                    row_multipliers: vec![Rational::zero(); lp.constraints.len()],
                    lower_multipliers: lower,
                    upper_multipliers: upper,
                });
            }
        }
    }
    None
}

fn standardize(lp: &LinearProgram) -> Tableau {
    let n = lp.objective.len();

    let mut var_maps = Vec::with_capacity(n);
    let mut synth_row_of = vec![None; n];
    let mut n_struct = 0usize;
    for b in &lp.bounds {
        match (&b.lower, &b.upper) {
            (Some(lo), None) | (Some(lo), Some(_)) => {
                var_maps.push(VarMap::ShiftLo { col: n_struct, lo: lo.clone() });
                n_struct += 1;
            }
            (None, Some(hi)) => {
                var_maps.push(VarMap::NegShift { col: n_struct, hi: hi.clone() });
                n_struct += 1;
            }
            (None, None) => {
                var_maps.push(VarMap::Split { pos: n_struct, neg: n_struct + 1 });
                n_struct += 2;
            }
        }
    }

    // Assemble rows in standardized variables: user rows, then one synthetic
    // `x'_col ≤ hi − lo` row per doubly-bounded variable.
    let mut rows: Vec<(Vec<Rational>, Relation, Rational)> = Vec::new();
    for c in &lp.constraints {
        let mut coeffs = vec![Rational::zero(); n_struct];
        let mut rhs = c.rhs.clone();
        for (j, a) in c.coefficients.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            match &var_maps[j] {
                VarMap::ShiftLo { col, lo } => {
                    coeffs[*col] += a;
                    rhs -= a * lo;
                }
                VarMap::NegShift { col, hi } => {
                    coeffs[*col] -= a;
                    rhs -= a * hi;
                }
                VarMap::Split { pos, neg } => {
                    coeffs[*pos] += a;
                    coeffs[*neg] -= a;
                }
            }
        }
        rows.push((coeffs, c.relation, rhs));
    }
    let n_user_rows = rows.len();
    for (j, b) in lp.bounds.iter().enumerate() {
        if let (Some(lo), Some(hi)) = (&b.lower, &b.upper) {
            let col = match &var_maps[j] {
                VarMap::ShiftLo { col, .. } => *col,
                _ => unreachable!("doubly-bounded variables shift from below"),
            };
            let mut coeffs = vec![Rational::zero(); n_struct];
            coeffs[col] = Rational::one();
            synth_row_of[j] = Some(rows.len());
            rows.push((coeffs, Relation::Le, hi - lo));
        }
    }

    // Normalize rhs signs, then attach slack/surplus/artificial columns.
    let m = rows.len();
    let mut sigma = vec![1i32; m];
    for (r, (coeffs, relation, rhs)) in rows.iter_mut().enumerate() {
        if rhs.is_negative() {
            sigma[r] = -1;
            for c in coeffs.iter_mut() {
                *c = -c.clone();
            }
            *rhs = -rhs.clone();
            *relation = match relation {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let mut extra_cols = 0usize;
    for (_, relation, _) in &rows {
        extra_cols += match relation {
            Relation::Le => 1,
            Relation::Eq => 1,
            Relation::Ge => 2,
        };
    }
    let n_total = n_struct + extra_cols;

    let mut tab = Vec::with_capacity(m);
    let mut rhs_col = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut idcol = Vec::with_capacity(m);
    let mut artificial = vec![false; n_total];
    let mut next = n_struct;
    for (coeffs, relation, rhs) in rows {
        let mut row = coeffs;
        row.resize(n_total, Rational::zero());
        match relation {
            Relation::Le => {
                row[next] = Rational::one();
                basis.push(next);
                idcol.push(next);
                next += 1;
            }
            Relation::Ge => {
                row[next] = -Rational::one();
                row[next + 1] = Rational::one();
                artificial[next + 1] = true;
                basis.push(next + 1);
                idcol.push(next + 1);
                next += 2;
            }
            Relation::Eq => {
                row[next] = Rational::one();
                artificial[next] = true;
                basis.push(next);
                idcol.push(next);
                next += 1;
            }
        }
        tab.push(row);
        rhs_col.push(rhs);
    }

    Tableau {
        tab,
        rhs: rhs_col,
        basis,
        idcol,
        artificial,
        sigma,
        var_maps,
        synth_row_of,
        n_user_rows,
        pivots: 0,
    }
}

// ───────────────────────────── simplex core ─────────────────────────────

impl Tableau {
    fn n_cols(&self) -> usize {
        self.artificial.len()
    }

    fn pivot(
        &mut self,
        zrow: &mut [Rational],
        zval: &mut Rational,
        r: usize,
        e: usize,
        max_pivots: u64,
    ) -> Result<()> {
        self.pivots += 1;
        if self.pivots > max_pivots {
            return Err(Error::PivotBudgetExceeded { budget: max_pivots });
        }
        let piv = self.tab[r][e].clone();
        debug_assert!(!piv.is_zero(), "pivot on zero entry");
        if piv != Rational::one() {
            for v in self.tab[r].iter_mut() {
                if !v.is_zero() {
                    *v /= &piv;
                }
            }
            self.rhs[r] /= &piv;
        }
        let pivot_row = self.tab[r].clone();
        let pivot_rhs = self.rhs[r].clone();
        for i in 0..self.tab.len() {
            if i == r || self.tab[i][e].is_zero() {
                continue;
            }
            let factor = self.tab[i][e].clone();
            for (v, p) in self.tab[i].iter_mut().zip(&pivot_row) {
                if !p.is_zero() {
                    *v -= &factor * p;
                }
            }
            self.rhs[i] -= &factor * &pivot_rhs;
        }
        if !zrow[e].is_zero() {
            let factor = zrow[e].clone();
            for (v, p) in zrow.iter_mut().zip(&pivot_row) {
                if !p.is_zero() {
                    *v -= &factor * p;
                }
            }
            *zval -= &factor * &pivot_rhs;
        }
        self.basis[r] = e;
        Ok(())
    }

    /// Bland: smallest admissible entering column with negative reduced cost.
    fn entering(&self, zrow: &[Rational], allow_artificial: bool) -> Option<usize> {
        (0..self.n_cols()).find(|&j| {
            (allow_artificial || !self.artificial[j]) && zrow[j].is_negative()
        })
    }

    /// Min-ratio leaving row; ties broken by smallest basis column (Bland).
    fn leaving(&self, e: usize) -> Option<usize> {
        let mut best: Option<(Rational, usize)> = None;
        for r in 0..self.tab.len() {
            if self.tab[r][e].is_positive() {
                let ratio = &self.rhs[r] / &self.tab[r][e];
                let better = match &best {
                    None => true,
                    Some((b, row)) => {
                        ratio < *b || (ratio == *b && self.basis[r] < self.basis[*row])
                    }
                };
                if better {
                    best = Some((ratio, r));
                }
            }
        }
        best.map(|(_, r)| r)
    }

    /// Runs simplex iterations to optimality or unboundedness.
    fn run(
        &mut self,
        zrow: &mut [Rational],
        zval: &mut Rational,
        allow_artificial: bool,
        max_pivots: u64,
    ) -> Result<Option<usize>> {
        loop {
            let e = match self.entering(zrow, allow_artificial) {
                None => return Ok(None),
                Some(e) => e,
            };
            match self.leaving(e) {
                Some(r) => self.pivot(zrow, zval, r, e, max_pivots)?,
                None => return Ok(Some(e)),
            }
        }
    }

    /// Reduced-cost row for the given standardized objective.
    fn make_zrow(&self, cost: &[Rational]) -> (Vec<Rational>, Rational) {
        let mut zrow: Vec<Rational> = cost.iter().map(|c| -c.clone()).collect();
        let mut zval = Rational::zero();
        for r in 0..self.tab.len() {
            let cb = &cost[self.basis[r]];
            if cb.is_zero() {
                continue;
            }
            for j in 0..self.n_cols() {
                if !self.tab[r][j].is_zero() {
                    let add = cb * &self.tab[r][j];
                    zrow[j] += add;
                }
            }
            zval += cb * &self.rhs[r];
        }
        (zrow, zval)
    }

    /// Current standardized solution.
    fn std_solution(&self) -> Vec<Rational> {
        let mut x = vec![Rational::zero(); self.n_cols()];
        for r in 0..self.tab.len() {
            x[self.basis[r]] = self.rhs[r].clone();
        }
        x
    }

    /// Maps a standardized point back to user variables.
    fn to_user_point(&self, std: &[Rational]) -> Vec<Rational> {
        self.var_maps
            .iter()
            .map(|vm| match vm {
                VarMap::ShiftLo { col, lo } => lo + &std[*col],
                VarMap::NegShift { col, hi } => hi - &std[*col],
                VarMap::Split { pos, neg } => &std[*pos] - &std[*neg],
            })
            .collect()
    }

    /// Maps a standardized direction back to user variables (no shifts).
    fn to_user_direction(&self, std: &[Rational]) -> Vec<Rational> {
        self.var_maps
            .iter()
            .map(|vm| match vm {
                VarMap::ShiftLo { col, .. } => std[*col].clone(),
                VarMap::NegShift { col, .. } => -std[*col].clone(),
                VarMap::Split { pos, neg } => &std[*pos] - &std[*neg],
            })
            .collect()
    }

    /// Row duals `y_r = zrow[idcol_r] + cost[idcol_r]` for the running phase.
    fn row_duals(&self, zrow: &[Rational], cost: &[Rational]) -> Vec<Rational> {
        (0..self.tab.len())
            .map(|r| &zrow[self.idcol[r]] + &cost[self.idcol[r]])
            .collect()
    }
}

// ───────────────────────────── driver ─────────────────────────────

/// Solves with default [`LpOptions`].
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome> {
    solve_with(lp, &LpOptions::default())
}

/// Solves `lp`, returning an outcome whose certificate always re-verifies.
///
/// # Examples
///
/// ```
/// # use spreadbench_core::exact_lp::*;
/// # use spreadbench_core::rational::{rat, ratio};
/// // max x + y  s.t.  x + 2y ≤ 4,  3x + y ≤ 6,  x,y ≥ 0.
/// let lp = LinearProgram {
///     objective: vec![rat(1), rat(1)],
///     constraints: vec![
///         Constraint::le(vec![rat(1), rat(2)], rat(4)),
///         Constraint::le(vec![rat(3), rat(1)], rat(6)),
///     ],
///     bounds: vec![VarBound::nonneg(), VarBound::nonneg()],
/// };
/// match solve(&lp).unwrap() {
///     LpOutcome::Optimal(sol) => {
///         assert_eq!(sol.primal, vec![ratio(8, 5), ratio(6, 5)]);
///         assert_eq!(sol.objective_value, ratio(14, 5));
///         assert!(check_optimal_certificates(&lp, &sol));
///     }
///     other => panic!("expected optimum, got {other:?}"),
/// }
/// ```
pub fn solve_with(lp: &LinearProgram, options: &LpOptions) -> Result<LpOutcome> {
    validate_program(lp)?;
    if let Some(cert) = contradictory_bounds(lp) {
        return Ok(LpOutcome::Infeasible(cert));
    }

    let mut t = standardize(lp);
    let max_pivots = options.max_pivots;

    // Phase I: drive artificials to zero (skipped when none exist).
    if t.artificial.iter().any(|&a| a) {
        let cost1: Vec<Rational> = t
            .artificial
            .iter()
            .map(|&a| if a { -Rational::one() } else { Rational::zero() })
            .collect();
        let (mut zrow, mut zval) = t.make_zrow(&cost1);
        let unbounded = t.run(&mut zrow, &mut zval, true, max_pivots)?;
        debug_assert!(unbounded.is_none(), "phase I objective is bounded above by 0");
        if zval.is_negative() {
            return Ok(LpOutcome::Infeasible(extract_farkas(lp, &t, &zrow, &cost1)));
        }
        // Drive artificials out of the basis (zero-step pivots). A row whose
        // non-artificial entries all vanish is redundant; its artificial can
        // stay basic at zero because every entering column keeps it at zero.
        for r in 0..t.tab.len() {
            if t.artificial[t.basis[r]] {
                let e = (0..t.n_cols()).find(|&j| !t.artificial[j] && !t.tab[r][j].is_zero());
                if let Some(e) = e {
                    t.pivot(&mut zrow, &mut zval, r, e, max_pivots)?;
                }
            }
        }
    }

    // Phase II on the real objective, artificial columns barred.
    let mut cost2 = vec![Rational::zero(); t.n_cols()];
    for (j, c) in lp.objective.iter().enumerate() {
        match &t.var_maps[j] {
            VarMap::ShiftLo { col, .. } => cost2[*col] += c,
            VarMap::NegShift { col, .. } => cost2[*col] -= c,
            VarMap::Split { pos, neg } => {
                cost2[*pos] += c;
                cost2[*neg] -= c;
            }
        }
    }
    let (mut zrow, mut zval) = t.make_zrow(&cost2);
    match t.run(&mut zrow, &mut zval, false, max_pivots)? {
        Some(e) => {
            // Entering column e improves forever: build the recession ray.
            let mut dir = vec![Rational::zero(); t.n_cols()];
            dir[e] = Rational::one();
            for r in 0..t.tab.len() {
                if !t.tab[r][e].is_zero() {
                    dir[t.basis[r]] = -t.tab[r][e].clone();
                }
            }
            let point = t.to_user_point(&t.std_solution());
            let ray = t.to_user_direction(&dir);
            debug_assert!(dot(&lp.objective, &ray).is_positive());
            Ok(LpOutcome::Unbounded(UnboundedRay { point, ray }))
        }
        None => {
            let primal = t.to_user_point(&t.std_solution());
            let objective_value = dot(&lp.objective, &primal);
            let y = t.row_duals(&zrow, &cost2);
            let dual: Vec<Rational> = (0..t.n_user_rows)
                .map(|r| if t.sigma[r] < 0 { -y[r].clone() } else { y[r].clone() })
                .collect();
            let reduced_costs: Vec<Rational> = (0..lp.objective.len())
                .map(|j| {
                    let mut rc = lp.objective[j].clone();
                    for (r, c) in lp.constraints.iter().enumerate() {
                        if !c.coefficients[j].is_zero() && !dual[r].is_zero() {
                            rc -= &dual[r] * &c.coefficients[j];
                        }
                    }
                    rc
                })
                .collect();
            Ok(LpOutcome::Optimal(OptimalSolution {
                primal,
                objective_value,
                dual,
                reduced_costs,
            }))
        }
    }
}

/// Builds the user-space Farkas certificate from Phase I duals.
fn extract_farkas(
    lp: &LinearProgram,
    t: &Tableau,
    zrow: &[Rational],
    cost1: &[Rational],
) -> FarkasCertificate {
    let y = t.row_duals(zrow, cost1);
    let lambda: Vec<Rational> = (0..t.n_user_rows)
        .map(|r| if t.sigma[r] < 0 { -y[r].clone() } else { y[r].clone() })
        .collect();
    let n = lp.objective.len();
    let mut lower = vec![Rational::zero(); n];
    let mut upper = vec![Rational::zero(); n];
    for j in 0..n {
        // Aggregate of user rows on variable j.
        let mut u = Rational::zero();
        for (r, c) in lp.constraints.iter().enumerate() {
            if !c.coefficients[j].is_zero() && !lambda[r].is_zero() {
                u += &lambda[r] * &c.coefficients[j];
            }
        }
        match &t.var_maps[j] {
            VarMap::Split { .. } => {}
            VarMap::ShiftLo { .. } => match t.synth_row_of[j] {
                None => lower[j] = u,
                Some(s) => {
                    // Synthetic rows are Le with nonnegative rhs: σ = +1.
                    upper[j] = y[s].clone();
                    lower[j] = u + &y[s];
                }
            },
            VarMap::NegShift { .. } => upper[j] = -u,
        }
    }
    FarkasCertificate {
        row_multipliers: lambda,
        lower_multipliers: lower,
        upper_multipliers: upper,
    }
}

fn dot(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter().zip(b).fold(Rational::zero(), |acc, (x, y)| {
        if x.is_zero() || y.is_zero() {
            acc
        } else {
            acc + x * y
        }
    })
}

// ───────────────────────────── dual program ─────────────────────────────

/// The explicit dual of a program whose variables are all nonnegative or
/// free (other bounds: [`Error::MalformedProgram`]). The dual is returned in
/// the same maximize-only form, with `value(dual) = −value(primal)` at
/// optimality; the sign flip is the price of staying in one orientation.
pub fn dual_of(lp: &LinearProgram) -> Result<LinearProgram> {
    validate_program(lp)?;
    for (j, b) in lp.bounds.iter().enumerate() {
        let ok = b.upper.is_none()
            && (b.lower.is_none() || b.lower == Some(Rational::zero()));
        if !ok {
            return Err(Error::MalformedProgram(format!(
                "dual_of handles only nonnegative or free variables (variable {j})"
            )));
        }
    }
    let m = lp.constraints.len();
    let n = lp.objective.len();
    // Dual: min rhs·y ⇔ max (−rhs)·y, with y_r ≥ 0 (Le), ≤ 0 (Ge), free (Eq),
    // and Σ_r a_rj y_r ≥ c_j (x_j ≥ 0) or = c_j (x_j free).
    let objective: Vec<Rational> = lp.constraints.iter().map(|c| -c.rhs.clone()).collect();
    let bounds: Vec<VarBound> = lp
        .constraints
        .iter()
        .map(|c| match c.relation {
            Relation::Le => VarBound::nonneg(),
            Relation::Ge => VarBound { lower: None, upper: Some(Rational::zero()) },
            Relation::Eq => VarBound::free(),
        })
        .collect();
    let constraints: Vec<Constraint> = (0..n)
        .map(|j| {
            let coefficients: Vec<Rational> = (0..m)
                .map(|r| lp.constraints[r].coefficients[j].clone())
                .collect();
            let relation = if lp.bounds[j].lower.is_some() {
                Relation::Ge
            } else {
                Relation::Eq
            };
            Constraint { coefficients, relation, rhs: lp.objective[j].clone() }
        })
        .collect();
    Ok(LinearProgram { objective, constraints, bounds })
}

// ───────────────────────────── certificate checks ─────────────────────────────

/// Exact feasibility of a point.
pub fn check_feasible(lp: &LinearProgram, x: &[Rational]) -> bool {
    if x.len() != lp.objective.len() {
        return false;
    }
    for c in &lp.constraints {
        let lhs = dot(&c.coefficients, x);
        let ok = match c.relation {
            Relation::Le => lhs <= c.rhs,
            Relation::Eq => lhs == c.rhs,
            Relation::Ge => lhs >= c.rhs,
        };
        if !ok {
            return false;
        }
    }
    for (xj, b) in x.iter().zip(&lp.bounds) {
        if let Some(lo) = &b.lower {
            if xj < lo {
                return false;
            }
        }
        if let Some(hi) = &b.upper {
            if xj > hi {
                return false;
            }
        }
    }
    true
}

/// Verifies an optimality claim from scratch: primal feasibility, dual sign
/// conditions, complementary slackness on rows and bounds, and the
/// strong-duality identity `c·x = dual·rhs + reduced·x`. Together these
/// prove `x` optimal without trusting the solver.
pub fn check_optimal_certificates(lp: &LinearProgram, sol: &OptimalSolution) -> bool {
    let x = &sol.primal;
    if !check_feasible(lp, x) {
        return false;
    }
    if sol.objective_value != dot(&lp.objective, x) {
        return false;
    }
    if sol.dual.len() != lp.constraints.len() || sol.reduced_costs.len() != x.len() {
        return false;
    }
    for (r, c) in lp.constraints.iter().enumerate() {
        let d = &sol.dual[r];
        let sign_ok = match c.relation {
            Relation::Le => !d.is_negative(),
            Relation::Ge => !d.is_positive(),
            Relation::Eq => true,
        };
        if !sign_ok {
            return false;
        }
        // Row complementary slackness.
        if !d.is_zero() && dot(&c.coefficients, x) != c.rhs {
            return false;
        }
    }
    for (j, b) in lp.bounds.iter().enumerate() {
        // Reported reduced cost must be the actual residual…
        let mut rc = lp.objective[j].clone();
        for (r, c) in lp.constraints.iter().enumerate() {
            rc -= &sol.dual[r] * &c.coefficients[j];
        }
        if rc != sol.reduced_costs[j] {
            return false;
        }
        // …and complementary with the bounds: ≤ 0 off the upper bound,
        // ≥ 0 off the lower bound, hence 0 for interior or free variables.
        let at_lower = b.lower.as_ref() == Some(&x[j]);
        let at_upper = b.upper.as_ref() == Some(&x[j]);
        if !at_upper && rc.is_positive() {
            return false;
        }
        if !at_lower && rc.is_negative() {
            return false;
        }
    }
    true
}

/// Verifies an unboundedness claim: the point is feasible, the ray keeps
/// every constraint and bound satisfied for all `t ≥ 0`, and the objective
/// strictly improves along it.
pub fn check_unbounded(lp: &LinearProgram, cert: &UnboundedRay) -> bool {
    if !check_feasible(lp, &cert.point) || cert.ray.len() != lp.objective.len() {
        return false;
    }
    for c in &lp.constraints {
        let along = dot(&c.coefficients, &cert.ray);
        let ok = match c.relation {
            Relation::Le => !along.is_positive(),
            Relation::Eq => along.is_zero(),
            Relation::Ge => !along.is_negative(),
        };
        if !ok {
            return false;
        }
    }
    for (rj, b) in cert.ray.iter().zip(&lp.bounds) {
        if b.lower.is_some() && rj.is_negative() {
            return false;
        }
        if b.upper.is_some() && rj.is_positive() {
            return false;
        }
    }
    dot(&lp.objective, &cert.ray).is_positive()
}

/// Verifies a Farkas certificate: multiplier signs, exact cancellation of
/// every variable, and a strictly negative aggregated right-hand side.
pub fn check_infeasibility_certificate(lp: &LinearProgram, cert: &FarkasCertificate) -> bool {
    let n = lp.objective.len();
    if cert.row_multipliers.len() != lp.constraints.len()
        || cert.lower_multipliers.len() != n
        || cert.upper_multipliers.len() != n
    {
        return false;
    }
    for (r, c) in lp.constraints.iter().enumerate() {
        let l = &cert.row_multipliers[r];
        let sign_ok = match c.relation {
            Relation::Le => !l.is_negative(),
            Relation::Ge => !l.is_positive(),
            Relation::Eq => true,
        };
        if !sign_ok {
            return false;
        }
    }
    let mut value = Rational::zero();
    for j in 0..n {
        let ml = &cert.lower_multipliers[j];
        let mu = &cert.upper_multipliers[j];
        if ml.is_negative() || mu.is_negative() {
            return false;
        }
        // A bound multiplier may only touch a bound that exists.
        match (&lp.bounds[j].lower, ml.is_zero()) {
            (None, false) => return false,
            (Some(lo), _) => value -= ml * lo,
            _ => {}
        }
        match (&lp.bounds[j].upper, mu.is_zero()) {
            (None, false) => return false,
            (Some(hi), _) => value += mu * hi,
            _ => {}
        }
        let mut agg = -ml.clone() + mu;
        for (r, c) in lp.constraints.iter().enumerate() {
            agg += &cert.row_multipliers[r] * &c.coefficients[j];
        }
        if !agg.is_zero() {
            return false;
        }
    }
    for (r, c) in lp.constraints.iter().enumerate() {
        value += &cert.row_multipliers[r] * &c.rhs;
    }
    value.is_negative()
}
