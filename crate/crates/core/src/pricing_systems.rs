//! Dual certificates of no-arbitrage: equivalent measures, Snell envelopes,
//! and pinched super/sub-martingale price systems.
//!
//! The positive certificate for an arbitrage-free market is a strictly
//! positive leaf measure `Q` together with price processes squeezed into the
//! spread. Three layers build on each other:
//!
//! * [`find_ebamm`] solves one LP for a strictly positive `Q` admitting an
//!   adapted *pinned* terminal value `v_T ∈ [S̲_T, S̄_T]` whose conditional
//!   expectations stay inside `[S̲_t, S̄_t]` at every node. The LP works
//!   with measure-weighted aggregates: leaf weights `μ_ℓ`, one free
//!   aggregate `λ(p, i) = Σ_{ℓ ≤ p} μ_ℓ·v_T(ℓ, i)` per time-`T−1` atom and
//!   asset, and a margin `s` forced under every `μ_ℓ` and maximized. A
//!   strictly positive optimum yields the measure; margin 0 or infeasibility
//!   means no strictly positive measure works. This feasible set is exactly
//!   the dual cone of the arbitrage detector, so a measure exists **iff**
//!   the market is arbitrage-free — the two LPs certify each other.
//!
//! * [`verify_ebamm`] audits any candidate measure with Snell envelopes:
//!   the *upper* envelope of the bid must stay at or below the ask (else a
//!   buy-and-stop plan beats the quote — flagged on the [`Side::Ask`] side),
//!   and the *lower* envelope of the ask must stay at or above the bid
//!   ([`Side::Bid`]). One-step comparisons are not enough: a measure can
//!   pass every single-period check and still fail against a *stopped*
//!   liquidation several periods ahead, which is precisely what the
//!   envelopes see (see the `stopping_beats_consecutive_checks` test).
//!
//! * [`build_systems`] turns a verified measure into explicit processes:
//!   the hat system `Ŝ` (Snell envelope of the bid — the smallest
//!   supermartingale dominating it, pinned to `S̲_T` at the horizon) and the
//!   mirrored check system `Š` (largest submartingale below the ask, pinned
//!   to `S̄_T`), both confined to the spread. [`cps_from_ebamm_one_step`]
//!   lays the terminal slice, [`extend_cps_backward`] walks one step toward
//!   the root. Measures found by [`find_ebamm`] always extend directly:
//!   the LP guarantees some pinched supermartingale, and the Snell envelope
//!   is the smallest one, so it fits under the ask a fortiori. For foreign
//!   measures a per-atom kernel repair is attempted first
//!   ([`compose_measures`] pastes the repaired transition into the measure)
//!   before giving up with [`Error::ExtensionInfeasible`].
//!
//! Everything round-trips: [`cps_implies_ebamm`] recovers a valid measure
//! from a verified pair of systems, and [`verify_priced_system`] re-checks
//! any claimed system from scratch.

use crate::exact_lp::{solve_with, Constraint, LinearProgram, LpOptions, LpOutcome, VarBound};
use crate::rational::{format_rational, rational_to_json};
use crate::scenario_tree::{BidAskProcess, Measure, ScenarioTree};
use crate::{Error, NodeMap, Rational, Result};
use num_traits::{One, Signed, Zero};

// ───────────────────────────── types ─────────────────────────────

/// A strictly positive measure certified to support pinned pricing, with
/// the margin by which its smallest leaf weight clears zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ebamm {
    /// Strictly positive, normalized leaf measure.
    pub measure: Measure,
    /// The optimized minimum leaf weight (`> 0`).
    pub margin: Rational,
}

impl Ebamm {
    /// Serializes as `{"measure": {leaf: "p/q"}, "margin": "p/q"}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "measure": serde_json::Value::Object(
                self.measure
                    .weights
                    .iter()
                    .map(|(k, v)| (k.clone(), rational_to_json(v)))
                    .collect(),
            ),
            "margin": rational_to_json(&self.margin),
        })
    }
}

/// Which quote a violation runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    /// The lower envelope of the ask dips below the bid.
    Bid,
    /// The upper envelope of the bid climbs above the ask.
    Ask,
}

/// One place where a candidate measure fails the envelope audit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ViolationSite {
    /// Time of the offending atom.
    pub time: usize,
    /// Node id of the offending atom.
    pub atom: String,
    /// Asset index.
    pub asset: usize,
    /// Offending side.
    pub side: Side,
}

/// Martingale discipline of a priced system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// `E_Q[S_{t+1} | F_t] ≤ S_t`; pinned to the bid at the horizon.
    Supermartingale,
    /// `E_Q[S_{t+1} | F_t] ≥ S_t`; pinned to the ask at the horizon.
    Submartingale,
    /// Exact martingale inside the spread (horizon value anywhere in it).
    Martingale,
}

/// A price process confined to the spread, covering all atoms from some
/// time `a` through the horizon, with its measure and discipline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PricedSystem {
    /// Price vectors per covered node.
    pub process: NodeMap<Vec<Rational>>,
    /// The measure the martingale property is stated under.
    pub measure: Measure,
    /// Discipline of the process.
    pub kind: SystemKind,
}

/// A stopping time as its first-contact set: each root-to-leaf path crosses
/// exactly one marked node, and the path stops there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTime {
    /// `true` exactly at the nodes where paths stop.
    pub stop_at: NodeMap<bool>,
}

impl StoppingTime {
    /// The constant stopping time `τ ≡ T`.
    pub fn horizon(tree: &ScenarioTree) -> Self {
        let mut stop_at = NodeMap::new();
        for leaf in tree.leaves() {
            stop_at.insert(leaf.to_string(), true);
        }
        StoppingTime { stop_at }
    }

    /// The marked node on the path to `leaf`.
    pub fn node_on_path(&self, tree: &ScenarioTree, leaf: &str) -> Result<String> {
        let mut hit = None;
        for node in tree.path_to(leaf)? {
            if self.stop_at.get(node).copied().unwrap_or(false) {
                if hit.is_some() {
                    return Err(Error::InternalInconsistency(format!(
                        "stopping time marks two nodes on the path to {leaf}"
                    )));
                }
                hit = Some(node.to_string());
            }
        }
        hit.ok_or_else(|| {
            Error::InternalInconsistency(format!(
                "stopping time marks no node on the path to {leaf}"
            ))
        })
    }

    /// The stopping value on the path to `leaf`.
    pub fn time_on_path(&self, tree: &ScenarioTree, leaf: &str) -> Result<usize> {
        let node = self.node_on_path(tree, leaf)?;
        tree.time_of(&node)
    }

    /// True when every root-to-leaf path crosses exactly one marked node.
    pub fn is_valid(&self, tree: &ScenarioTree) -> bool {
        tree.leaves()
            .into_iter()
            .all(|leaf| self.node_on_path(tree, leaf).is_ok())
    }
}

// ───────────────────────────── find_ebamm ─────────────────────────────

/// Column layout of the measure-search LP: leaf weights, then one free
/// aggregate per (time-`T−1` atom, asset), then the margin.
struct EbammLayout {
    leaves: Vec<String>,
    pins: Vec<String>,
    dim: usize,
}

impl EbammLayout {
    fn new(tree: &ScenarioTree, dim: usize) -> Self {
        let leaves = tree.leaves().into_iter().map(str::to_string).collect();
        let pins = tree
            .atoms_at(tree.horizon() - 1)
            .expect("horizon ≥ 1")
            .into_iter()
            .map(str::to_string)
            .collect();
        EbammLayout { leaves, pins, dim }
    }

    fn mu(&self, leaf_pos: usize) -> usize {
        leaf_pos
    }

    fn lambda(&self, pin_pos: usize, asset: usize) -> usize {
        self.leaves.len() + pin_pos * self.dim + asset
    }

    fn margin(&self) -> usize {
        self.leaves.len() + self.pins.len() * self.dim
    }

    fn n_cols(&self) -> usize {
        self.margin() + 1
    }
}

fn build_ebamm_lp(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
) -> Result<(LinearProgram, EbammLayout)> {
    let layout = EbammLayout::new(tree, prices.dim);
    let n = layout.n_cols();
    let leaf_pos: NodeMap<usize> = layout
        .leaves
        .iter()
        .enumerate()
        .map(|(j, id)| (id.clone(), j))
        .collect();
    let pin_pos: NodeMap<usize> = layout
        .pins
        .iter()
        .enumerate()
        .map(|(k, id)| (id.clone(), k))
        .collect();

    let mut constraints = Vec::new();

    // (1) Σ μ = 1.
    let mut norm = vec![Rational::zero(); n];
    for j in 0..layout.leaves.len() {
        norm[layout.mu(j)] = Rational::one();
    }
    constraints.push(Constraint::eq(norm, Rational::one()));

    // (2) μ_ℓ ≥ s per leaf.
    for j in 0..layout.leaves.len() {
        let mut row = vec![Rational::zero(); n];
        row[layout.mu(j)] = Rational::one();
        row[layout.margin()] = -Rational::one();
        constraints.push(Constraint::ge(row, Rational::zero()));
    }

    // (3) At every node n before the horizon and every asset i, the
    // aggregated pinned value must stay inside the quoted band scaled by
    // the subtree mass: S̲_i(n)·mass(n) ≤ Σ_{p ≤ n} λ(p,i) ≤ S̄_i(n)·mass(n).
    for t in 0..tree.horizon() {
        for id in tree.atoms_at(t)? {
            let node = tree.idx(id)?;
            let bid = prices.bid_at(id)?;
            let ask = prices.ask_at(id)?;
            let sub_leaves = tree.subtree_leaf_idxs(node);
            let mut pins_under: Vec<usize> = Vec::new();
            {
                // Collect the time-(T−1) descendants by walking up from the
                // subtree's leaves (each leaf's parent is one of them).
                let mut seen = std::collections::BTreeSet::new();
                for &l in &sub_leaves {
                    let p = tree.parent_idx(l).expect("leaves have parents at T ≥ 1");
                    if seen.insert(p) {
                        pins_under.push(p);
                    }
                }
            }
            for i in 0..layout.dim {
                let mut upper = vec![Rational::zero(); n];
                let mut lower = vec![Rational::zero(); n];
                for &p in &pins_under {
                    let k = pin_pos[tree.id_of(p)];
                    upper[layout.lambda(k, i)] = Rational::one();
                    lower[layout.lambda(k, i)] = Rational::one();
                }
                for &l in &sub_leaves {
                    let j = leaf_pos[tree.id_of(l)];
                    upper[layout.mu(j)] = -ask[i].clone();
                    lower[layout.mu(j)] = -bid[i].clone();
                }
                constraints.push(Constraint::le(upper, Rational::zero()));
                constraints.push(Constraint::ge(lower, Rational::zero()));
            }
        }
    }

    // (4) Each aggregate must be realizable by leaf values inside the
    // terminal band: Σ_{ℓ ≤ p} μ_ℓ·S̲_i(ℓ) ≤ λ(p,i) ≤ Σ_{ℓ ≤ p} μ_ℓ·S̄_i(ℓ).
    for (k, pin) in layout.pins.iter().enumerate() {
        let node = tree.idx(pin)?;
        for i in 0..layout.dim {
            let mut upper = vec![Rational::zero(); n];
            let mut lower = vec![Rational::zero(); n];
            upper[layout.lambda(k, i)] = Rational::one();
            lower[layout.lambda(k, i)] = Rational::one();
            for &l in &tree.subtree_leaf_idxs(node) {
                let leaf = tree.id_of(l);
                let j = leaf_pos[leaf];
                upper[layout.mu(j)] -= &prices.ask_at(leaf)?[i];
                lower[layout.mu(j)] -= &prices.bid_at(leaf)?[i];
            }
            constraints.push(Constraint::le(upper, Rational::zero()));
            constraints.push(Constraint::ge(lower, Rational::zero()));
        }
    }

    let mut objective = vec![Rational::zero(); n];
    objective[layout.margin()] = Rational::one();
    let mut bounds = Vec::with_capacity(n);
    for _ in 0..layout.leaves.len() {
        bounds.push(VarBound::nonneg());
    }
    for _ in 0..layout.pins.len() * layout.dim {
        bounds.push(VarBound::free());
    }
    bounds.push(VarBound::nonneg());
    Ok((LinearProgram { objective, constraints, bounds }, layout))
}

/// Searches for a strictly positive measure supporting pinned pricing,
/// maximizing the minimum leaf weight. `None` when no such measure exists —
/// which, on a finite tree, happens exactly when the market has arbitrage.
pub fn find_ebamm(tree: &ScenarioTree, prices: &BidAskProcess) -> Result<Option<Ebamm>> {
    find_ebamm_with(tree, prices, &LpOptions::default())
}

/// [`find_ebamm`] with explicit solver options.
pub fn find_ebamm_with(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    options: &LpOptions,
) -> Result<Option<Ebamm>> {
    Ok(find_ebamm_solution(tree, prices, options)?.map(|(ebamm, _, _)| ebamm))
}

/// Full LP solution: the measure plus the pinned aggregates `λ(p, i)`,
/// used by [`find_cps`] to reconstruct explicit terminal values.
fn find_ebamm_solution(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    options: &LpOptions,
) -> Result<Option<(Ebamm, EbammLayout, Vec<Rational>)>> {
    let (lp, layout) = build_ebamm_lp(tree, prices)?;
    match solve_with(&lp, options)? {
        LpOutcome::Infeasible(_) => Ok(None),
        LpOutcome::Unbounded(_) => Err(Error::InternalInconsistency(
            "measure LP unbounded though the margin is capped by 1/|leaves|".into(),
        )),
        LpOutcome::Optimal(sol) => {
            if !sol.objective_value.is_positive() {
                return Ok(None);
            }
            let weights: NodeMap<Rational> = layout
                .leaves
                .iter()
                .enumerate()
                .map(|(j, id)| (id.clone(), sol.primal[layout.mu(j)].clone()))
                .collect();
            let ebamm = Ebamm {
                measure: Measure::new(weights),
                margin: sol.objective_value.clone(),
            };
            Ok(Some((ebamm, layout, sol.primal)))
        }
    }
}

// ───────────────────────────── Snell envelopes ─────────────────────────────

/// Masses of a measure under every node, or the precise zero-mass culprit.
fn strict_masses(tree: &ScenarioTree, measure: &Measure) -> Result<Vec<Rational>> {
    let mass = tree.mass_vec(&measure.weights)?;
    for t in 0..=tree.horizon() {
        for &n in tree.level_idxs(t) {
            if mass[n].is_zero() {
                return Err(Error::ZeroMassNode { node: tree.id_of(n).to_string() });
            }
        }
    }
    Ok(mass)
}

/// Upper Snell envelope of a scalar adapted process, with its optimal
/// (first-contact) stopping time.
///
/// `values` assigns one rational per node. The envelope is the smallest
/// `Q`-supermartingale dominating the process: `U(leaf) = g(leaf)` and
/// `U(n) = max(g(n), E_Q[U | n])` backward. The stopping time marks, along
/// each path, the first node where `U = g`; stopping there achieves
/// `E_Q[g_τ | n] = U(n)` exactly (the stopped envelope is a martingale).
pub fn snell_envelope(
    tree: &ScenarioTree,
    measure: &Measure,
    values: &NodeMap<Rational>,
) -> Result<(NodeMap<Rational>, StoppingTime)> {
    let mass = strict_masses(tree, measure)?;
    let mut env: Vec<Option<Rational>> = vec![None; tree.len()];
    let get = |id: &str| -> Result<&Rational> {
        values
            .get(id)
            .ok_or_else(|| Error::ParamOutOfRange(format!("values define nothing at node {id}")))
    };
    for t in (0..=tree.horizon()).rev() {
        for &n in tree.level_idxs(t) {
            let id = tree.id_of(n);
            let g = get(id)?;
            let u = if t == tree.horizon() {
                g.clone()
            } else {
                let mut e = Rational::zero();
                for &c in tree.children_idx(n) {
                    e += env[c].as_ref().expect("children computed first") * &mass[c];
                }
                e /= &mass[n];
                if &e > g {
                    e
                } else {
                    g.clone()
                }
            };
            env[n] = Some(u);
        }
    }

    // First contact: walk down, stop at the first node with U = g.
    let mut stop_at = NodeMap::new();
    let mut stack = vec![tree.root_idx()];
    while let Some(n) = stack.pop() {
        let id = tree.id_of(n);
        let u = env[n].as_ref().expect("all nodes computed");
        if u == get(id)? {
            stop_at.insert(id.to_string(), true);
        } else {
            stack.extend_from_slice(tree.children_idx(n));
        }
    }

    let envelope: NodeMap<Rational> = (0..tree.len())
        .map(|n| (tree.id_of(n).to_string(), env[n].clone().expect("computed")))
        .collect();
    Ok((envelope, StoppingTime { stop_at }))
}

/// Lower Snell envelope (largest submartingale below the process), by
/// reflection: `lower(g) = −upper(−g)`.
pub fn lower_snell_envelope(
    tree: &ScenarioTree,
    measure: &Measure,
    values: &NodeMap<Rational>,
) -> Result<(NodeMap<Rational>, StoppingTime)> {
    let negated: NodeMap<Rational> = values.iter().map(|(k, v)| (k.clone(), -v.clone())).collect();
    let (env, tau) = snell_envelope(tree, measure, &negated)?;
    Ok((env.into_iter().map(|(k, v)| (k, -v)).collect(), tau))
}

/// Per-asset upper Snell envelopes of a vector process.
pub fn snell_envelope_vector(
    tree: &ScenarioTree,
    measure: &Measure,
    values: &NodeMap<Vec<Rational>>,
    dim: usize,
) -> Result<Vec<(NodeMap<Rational>, StoppingTime)>> {
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim {
        let scalar: NodeMap<Rational> = values
            .iter()
            .map(|(k, v)| {
                v.get(i)
                    .cloned()
                    .map(|x| (k.clone(), x))
                    .ok_or_else(|| Error::DimensionMismatch {
                        context: format!("process at node {k}"),
                        expected: dim,
                        found: v.len(),
                    })
            })
            .collect::<Result<_>>()?;
        out.push(snell_envelope(tree, measure, &scalar)?);
    }
    Ok(out)
}

// ───────────────────────────── verify_ebamm ─────────────────────────────

/// Audits a candidate measure with stopped-liquidation envelopes.
///
/// For each asset, the upper Snell envelope of the bid must not exceed the
/// ask (a violation means: buy at `S̄(n)`, sell at the envelope's stopping
/// time, and collect `E_Q`-positive profit — flagged [`Side::Ask`]), and
/// the lower envelope of the ask must not undercut the bid ([`Side::Bid`]).
/// An empty report certifies that pinched super/sub-martingale systems
/// exist under this exact measure, and [`build_systems`] will produce them.
pub fn verify_ebamm(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    ebamm: &Ebamm,
) -> Result<Vec<ViolationSite>> {
    let mut sites = Vec::new();
    for i in 0..prices.dim {
        let mut bid_i = NodeMap::new();
        let mut ask_i = NodeMap::new();
        for t in 0..=tree.horizon() {
            for id in tree.atoms_at(t)? {
                bid_i.insert(id.to_string(), prices.bid_at(id)?[i].clone());
                ask_i.insert(id.to_string(), prices.ask_at(id)?[i].clone());
            }
        }
        let (upper, _) = snell_envelope(tree, &ebamm.measure, &bid_i)?;
        let (lower, _) = lower_snell_envelope(tree, &ebamm.measure, &ask_i)?;
        for t in 0..=tree.horizon() {
            for id in tree.atoms_at(t)? {
                if upper[id] > ask_i[id] {
                    sites.push(ViolationSite {
                        time: t,
                        atom: id.to_string(),
                        asset: i,
                        side: Side::Ask,
                    });
                }
                if lower[id] < bid_i[id] {
                    sites.push(ViolationSite {
                        time: t,
                        atom: id.to_string(),
                        asset: i,
                        side: Side::Bid,
                    });
                }
            }
        }
    }
    sites.sort();
    Ok(sites)
}

// ───────────────────────────── measure surgery ─────────────────────────────

/// Total mass per atom of `F_t` under a leaf measure.
pub fn marginal_on(
    tree: &ScenarioTree,
    t: usize,
    measure: &Measure,
) -> Result<NodeMap<Rational>> {
    if t > tree.horizon() {
        return Err(Error::TimeOutOfRange { time: t, horizon: tree.horizon() });
    }
    let mass = tree.mass_vec(&measure.weights)?;
    Ok(tree
        .level_idxs(t)
        .iter()
        .map(|&n| (tree.id_of(n).to_string(), mass[n].clone()))
        .collect())
}

/// Pastes an outer distribution over the atoms of `F_t` onto the inner
/// measure's conditional laws below `t`:
/// `out(ℓ) = inner(ℓ) · outer(a) / inner_mass(a)` for `ℓ` under atom `a`.
///
/// `outer` may be keyed by the atoms at `t`, or by leaves (in which case
/// its marginal on `F_t` is used). The composition changes probabilities
/// *of* the atoms but none of the conditional structure given `F_j`,
/// `j ≥ t`. Errors with [`Error::ZeroMassNode`] when `outer` puts mass on
/// an atom the inner measure cannot condition on.
pub fn compose_measures(
    tree: &ScenarioTree,
    t: usize,
    outer: &Measure,
    inner: &Measure,
) -> Result<Measure> {
    if t > tree.horizon() {
        return Err(Error::TimeOutOfRange { time: t, horizon: tree.horizon() });
    }
    let atoms: Vec<&str> = tree.atoms_at(t)?;
    let atom_set: std::collections::BTreeSet<&str> = atoms.iter().copied().collect();
    let keys_are_atoms = outer.weights.keys().all(|k| atom_set.contains(k.as_str()));
    let outer_at_t: NodeMap<Rational> = if keys_are_atoms {
        for a in &atoms {
            if !outer.weights.contains_key(*a) {
                return Err(Error::ParamOutOfRange(format!(
                    "outer measure defines no weight for atom {a}"
                )));
            }
        }
        outer
            .weights
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    } else {
        marginal_on(tree, t, outer)?
    };
    for w in outer_at_t.values() {
        if w.is_negative() {
            return Err(Error::ParamOutOfRange(
                "outer measure has a negative weight".into(),
            ));
        }
    }

    let inner_mass = tree.mass_vec(&inner.weights)?;
    let mut weights = NodeMap::new();
    for a in atoms {
        let ai = tree.idx(a)?;
        let wa = &outer_at_t[a];
        if inner_mass[ai].is_zero() && wa.is_positive() {
            return Err(Error::ZeroMassNode { node: a.to_string() });
        }
        for l in tree.subtree_leaves(a)? {
            let li = tree.idx(l)?;
            let w = if wa.is_zero() {
                Rational::zero()
            } else {
                &inner_mass[li] * wa / &inner_mass[ai]
            };
            weights.insert(l.to_string(), w);
        }
    }
    Ok(Measure::new(weights))
}

// ───────────────────────────── system construction ─────────────────────────────

fn cond_exp_at(
    tree: &ScenarioTree,
    mass: &[Rational],
    process: &NodeMap<Vec<Rational>>,
    node: usize,
    dim: usize,
) -> Result<Vec<Rational>> {
    let mut acc = vec![Rational::zero(); dim];
    for &c in tree.children_idx(node) {
        let v = process.get(tree.id_of(c)).ok_or_else(|| {
            Error::ParamOutOfRange(format!("process undefined at node {}", tree.id_of(c)))
        })?;
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("process at node {}", tree.id_of(c)),
                expected: dim,
                found: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x * &mass[c];
        }
    }
    Ok(acc.into_iter().map(|x| x / &mass[node]).collect())
}

/// Builds the terminal slice `[T−1, T]` of both systems under the measure:
/// hat pinned to `S̲_T` with `Ŝ_{T−1} = max(S̲, E_Q[S̲_T | ·])`, check
/// pinned to `S̄_T` with `Š_{T−1} = min(S̄, E_Q[S̄_T | ·])`.
///
/// Errors with [`Error::EbammViolation`] when a one-step inequality fails
/// at a time-`T−1` atom (`E_Q[S̲_T] > S̄` or `E_Q[S̄_T] < S̲`) — the
/// measure is not even one-step consistent there.
pub fn cps_from_ebamm_one_step(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    ebamm: &Ebamm,
) -> Result<(PricedSystem, PricedSystem)> {
    let mass = strict_masses(tree, &ebamm.measure)?;
    let dim = prices.dim;
    let t_last = tree.horizon() - 1;

    let mut hat = NodeMap::new();
    let mut check = NodeMap::new();
    for id in tree.atoms_at(tree.horizon())? {
        hat.insert(id.to_string(), prices.bid_at(id)?.to_vec());
        check.insert(id.to_string(), prices.ask_at(id)?.to_vec());
    }
    for id in tree.atoms_at(t_last)? {
        let n = tree.idx(id)?;
        let bid = prices.bid_at(id)?;
        let ask = prices.ask_at(id)?;
        let e_hat = cond_exp_at(tree, &mass, &hat, n, dim)?;
        let e_check = cond_exp_at(tree, &mass, &check, n, dim)?;
        let mut hat_v = Vec::with_capacity(dim);
        let mut check_v = Vec::with_capacity(dim);
        for i in 0..dim {
            if e_hat[i] > ask[i] {
                return Err(Error::EbammViolation(format!(
                    "E[S̲_T | {id}] = {} exceeds the ask {} (asset {i})",
                    format_rational(&e_hat[i]),
                    format_rational(&ask[i])
                )));
            }
            if e_check[i] < bid[i] {
                return Err(Error::EbammViolation(format!(
                    "E[S̄_T | {id}] = {} undercuts the bid {} (asset {i})",
                    format_rational(&e_check[i]),
                    format_rational(&bid[i])
                )));
            }
            hat_v.push(if e_hat[i] > bid[i] { e_hat[i].clone() } else { bid[i].clone() });
            check_v.push(if e_check[i] < ask[i] { e_check[i].clone() } else { ask[i].clone() });
        }
        hat.insert(id.to_string(), hat_v);
        check.insert(id.to_string(), check_v);
    }
    Ok((
        PricedSystem {
            process: hat,
            measure: ebamm.measure.clone(),
            kind: SystemKind::Supermartingale,
        },
        PricedSystem {
            process: check,
            measure: ebamm.measure.clone(),
            kind: SystemKind::Submartingale,
        },
    ))
}

/// Earliest time covered by a system's process keys.
fn covered_from(tree: &ScenarioTree, system: &PricedSystem) -> Result<usize> {
    let mut low = tree.horizon();
    for id in system.process.keys() {
        low = low.min(tree.time_of(id)?);
    }
    Ok(low)
}

/// Extends a system one step toward the root.
///
/// At each atom of the new earliest time the Snell step is tried first:
/// `max(S̲, E_Q[next | ·])` for supermartingales (must fit under the ask),
/// `min(S̄, E_Q[next | ·])` for submartingales (must clear the bid).
/// Measures from [`find_ebamm`] always pass. If the step fails, a per-atom
/// transition kernel is sought by LP (nonnegative child weights, summing to
/// one, all at least some maximized `w > 0`, expectation back in the band)
/// and pasted into the measure with [`compose_measures`]; only when that LP
/// also fails does the call error with [`Error::ExtensionInfeasible`].
pub fn extend_cps_backward(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    system: &PricedSystem,
) -> Result<PricedSystem> {
    extend_cps_backward_with(tree, prices, system, &LpOptions::default())
}

/// [`extend_cps_backward`] with explicit solver options.
pub fn extend_cps_backward_with(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    system: &PricedSystem,
    options: &LpOptions,
) -> Result<PricedSystem> {
    let a = covered_from(tree, system)?;
    if a == 0 {
        return Ok(system.clone());
    }
    let super_side = match system.kind {
        SystemKind::Supermartingale => true,
        SystemKind::Submartingale => false,
        SystemKind::Martingale => {
            return Err(Error::InvalidCps(
                "martingale systems are built whole, not extended stepwise".into(),
            ))
        }
    };
    let dim = prices.dim;
    let mut process = system.process.clone();
    let mut measure = system.measure.clone();
    let mut mass = strict_masses(tree, &measure)?;

    for id in tree.atoms_at(a - 1)? {
        let n = tree.idx(id)?;
        let bid = prices.bid_at(id)?;
        let ask = prices.ask_at(id)?;
        let e = cond_exp_at(tree, &mass, &process, n, dim)?;
        let fits = (0..dim).all(|i| if super_side { e[i] <= ask[i] } else { e[i] >= bid[i] });
        let e = if fits {
            e
        } else {
            // Kernel repair: reweight this atom's children so the
            // expectation returns to the band, keeping every child weight
            // strictly positive (maximize the smallest).
            let children: Vec<&str> = tree.children_of(id)?;
            let nc = children.len();
            let n_vars = nc + 1; // q_c …, w
            let mut constraints = Vec::new();
            let mut norm = vec![Rational::zero(); n_vars];
            for q in norm.iter_mut().take(nc) {
                *q = Rational::one();
            }
            constraints.push(Constraint::eq(norm, Rational::one()));
            for c in 0..nc {
                let mut row = vec![Rational::zero(); n_vars];
                row[c] = Rational::one();
                row[nc] = -Rational::one();
                constraints.push(Constraint::ge(row, Rational::zero()));
            }
            for i in 0..dim {
                let mut row = vec![Rational::zero(); n_vars];
                for (c, cid) in children.iter().enumerate() {
                    row[c] = process
                        .get(*cid)
                        .ok_or_else(|| {
                            Error::ParamOutOfRange(format!("process undefined at node {cid}"))
                        })?[i]
                        .clone();
                }
                if super_side {
                    constraints.push(Constraint::le(row, ask[i].clone()));
                } else {
                    constraints.push(Constraint::ge(row, bid[i].clone()));
                }
            }
            let mut objective = vec![Rational::zero(); n_vars];
            objective[nc] = Rational::one();
            let lp = LinearProgram {
                objective,
                constraints,
                bounds: vec![VarBound::nonneg(); n_vars],
            };
            let kernel = match solve_with(&lp, options)? {
                LpOutcome::Optimal(sol) if sol.objective_value.is_positive() => sol.primal,
                _ => return Err(Error::ExtensionInfeasible { node: id.to_string() }),
            };
            // Paste: children of this atom get mass q_c·mass(n); every
            // other atom at time a keeps its mass.
            let mut outer = marginal_on(tree, a, &measure)?;
            for (c, cid) in children.iter().enumerate() {
                outer.insert(cid.to_string(), &kernel[c] * &mass[n]);
            }
            measure = compose_measures(tree, a, &Measure::new(outer), &measure)?;
            mass = strict_masses(tree, &measure)?;
            cond_exp_at(tree, &mass, &process, n, dim)?
        };
        let mut v = Vec::with_capacity(dim);
        for i in 0..dim {
            if super_side {
                v.push(if e[i] > bid[i] { e[i].clone() } else { bid[i].clone() });
            } else {
                v.push(if e[i] < ask[i] { e[i].clone() } else { ask[i].clone() });
            }
        }
        process.insert(id.to_string(), v);
    }
    Ok(PricedSystem { process, measure, kind: system.kind })
}

/// Builds the full hat and check systems from a measure: terminal slice via
/// [`cps_from_ebamm_one_step`], then backward extension to time 0.
pub fn build_systems(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    ebamm: &Ebamm,
) -> Result<(PricedSystem, PricedSystem)> {
    build_systems_with(tree, prices, ebamm, &LpOptions::default())
}

/// [`build_systems`] with explicit solver options.
pub fn build_systems_with(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    ebamm: &Ebamm,
    options: &LpOptions,
) -> Result<(PricedSystem, PricedSystem)> {
    let (mut hat, mut check) = cps_from_ebamm_one_step(tree, prices, ebamm)?;
    while covered_from(tree, &hat)? > 0 {
        hat = extend_cps_backward_with(tree, prices, &hat, options)?;
    }
    while covered_from(tree, &check)? > 0 {
        check = extend_cps_backward_with(tree, prices, &check, options)?;
    }
    Ok((hat, check))
}

// ───────────────────────────── verification ─────────────────────────────

/// Re-checks a priced system from scratch: strictly positive measure,
/// contiguous coverage down from the horizon, confinement to the spread,
/// terminal pinning matching the kind, and the martingale inequality at
/// every covered internal node. Returns human-readable violations; empty
/// means valid.
pub fn verify_priced_system(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    system: &PricedSystem,
) -> Result<Vec<String>> {
    let mut violations = Vec::new();
    if !system.measure.is_strictly_positive() {
        violations.push("measure is not strictly positive".into());
        return Ok(violations);
    }
    let mass = strict_masses(tree, &system.measure)?;
    let a = covered_from(tree, system)?;
    let dim = prices.dim;

    for t in a..=tree.horizon() {
        for id in tree.atoms_at(t)? {
            let v = match system.process.get(id) {
                Some(v) if v.len() == dim => v,
                Some(v) => {
                    violations.push(format!(
                        "process at node {id} has dimension {} ≠ {dim}",
                        v.len()
                    ));
                    continue;
                }
                None => {
                    violations.push(format!("coverage gap: no value at node {id} (time {t})"));
                    continue;
                }
            };
            let bid = prices.bid_at(id)?;
            let ask = prices.ask_at(id)?;
            for i in 0..dim {
                if v[i] < bid[i] || v[i] > ask[i] {
                    violations.push(format!(
                        "value {} escapes the band [{}, {}] at node {id}, asset {i}",
                        format_rational(&v[i]),
                        format_rational(&bid[i]),
                        format_rational(&ask[i])
                    ));
                }
                if t == tree.horizon() {
                    let pin_ok = match system.kind {
                        SystemKind::Supermartingale => v[i] == bid[i],
                        SystemKind::Submartingale => v[i] == ask[i],
                        SystemKind::Martingale => true,
                    };
                    if !pin_ok {
                        violations.push(format!(
                            "terminal value at node {id}, asset {i} is not pinned to the {}",
                            if system.kind == SystemKind::Supermartingale { "bid" } else { "ask" }
                        ));
                    }
                }
            }
            if t < tree.horizon() {
                let n = tree.idx(id)?;
                match cond_exp_at(tree, &mass, &system.process, n, dim) {
                    Err(_) => violations.push(format!(
                        "conditional expectation undefined below node {id}"
                    )),
                    Ok(e) => {
                        for i in 0..dim {
                            let ok = match system.kind {
                                SystemKind::Supermartingale => e[i] <= v[i],
                                SystemKind::Submartingale => e[i] >= v[i],
                                SystemKind::Martingale => e[i] == v[i],
                            };
                            if !ok {
                                violations.push(format!(
                                    "martingale discipline fails at node {id}, asset {i}: \
                                     E = {} vs value {}",
                                    format_rational(&e[i]),
                                    format_rational(&v[i])
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(violations)
}

/// Recovers a measure certificate from a verified pair of systems covering
/// the whole tree under one measure. Errors with [`Error::InvalidCps`] when
/// the pair does not verify, covers only part of the tree, or the two
/// systems disagree on the measure.
pub fn cps_implies_ebamm(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    hat: &PricedSystem,
    check: &PricedSystem,
) -> Result<Ebamm> {
    if hat.kind != SystemKind::Supermartingale || check.kind != SystemKind::Submartingale {
        return Err(Error::InvalidCps(
            "expected a (supermartingale, submartingale) pair".into(),
        ));
    }
    if hat.measure != check.measure {
        return Err(Error::InvalidCps("the two systems carry different measures".into()));
    }
    for (name, system) in [("hat", hat), ("check", check)] {
        if covered_from(tree, system)? != 0 {
            return Err(Error::InvalidCps(format!(
                "{name} system does not reach time 0"
            )));
        }
        let violations = verify_priced_system(tree, prices, system)?;
        if !violations.is_empty() {
            return Err(Error::InvalidCps(format!(
                "{name} system fails verification: {}",
                violations.join("; ")
            )));
        }
    }
    let measure = hat.measure.normalize()?;
    let margin = measure
        .weights
        .values()
        .min()
        .cloned()
        .ok_or_else(|| Error::InvalidCps("measure has no weights".into()))?;
    Ok(Ebamm { measure, margin })
}

/// The two systems' measures, side by side. The pair is *not* guaranteed to
/// coincide for arbitrary systems — only pairs produced by
/// [`build_systems`] from one measure are; callers comparing foreign
/// systems must check equality themselves.
pub fn pair_measures(hat: &PricedSystem, check: &PricedSystem) -> (Measure, Measure) {
    (hat.measure.clone(), check.measure.clone())
}

// ───────────────────────────── find_cps ─────────────────────────────

/// Searches for an exact *martingale* system inside the spread, pinned
/// within the terminal band (not to one side of it).
///
/// Reconstruction from the measure LP's aggregates: under each time-`T−1`
/// atom the terminal values start at the bid and are raised leaf by leaf
/// (id order) toward the ask until the aggregate `λ(p, i)` is met; interior
/// values are conditional expectations. `None` exactly when [`find_ebamm`]
/// finds no measure.
pub fn find_cps(tree: &ScenarioTree, prices: &BidAskProcess) -> Result<Option<PricedSystem>> {
    find_cps_with(tree, prices, &LpOptions::default())
}

/// [`find_cps`] with explicit solver options.
pub fn find_cps_with(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    options: &LpOptions,
) -> Result<Option<PricedSystem>> {
    let (ebamm, layout, primal) = match find_ebamm_solution(tree, prices, options)? {
        None => return Ok(None),
        Some(x) => x,
    };
    let dim = prices.dim;
    let mass = strict_masses(tree, &ebamm.measure)?;

    // Waterfill the terminal values under each pin.
    let mut process: NodeMap<Vec<Rational>> = NodeMap::new();
    for id in tree.atoms_at(tree.horizon())? {
        process.insert(id.to_string(), prices.bid_at(id)?.to_vec());
    }
    for (k, pin) in layout.pins.iter().enumerate() {
        let p = tree.idx(pin)?;
        let mut leaves: Vec<&str> = tree
            .subtree_leaf_idxs(p)
            .into_iter()
            .map(|l| tree.id_of(l))
            .collect();
        leaves.sort();
        for i in 0..dim {
            let lambda = &primal[layout.lambda(k, i)];
            let mut deficit = lambda.clone();
            for leaf in &leaves {
                deficit -= &mass[tree.idx(leaf)?] * &prices.bid_at(leaf)?[i];
            }
            debug_assert!(!deficit.is_negative(), "λ below the aggregated bid");
            for leaf in &leaves {
                if !deficit.is_positive() {
                    break;
                }
                let m = &mass[tree.idx(leaf)?];
                let head = &prices.ask_at(leaf)?[i] - &prices.bid_at(leaf)?[i];
                let raise = {
                    let r = &deficit / m;
                    if r < head {
                        r
                    } else {
                        head
                    }
                };
                if raise.is_positive() {
                    deficit -= m * &raise;
                    process.get_mut(*leaf).expect("terminal filled")[i] += raise;
                }
            }
            if !deficit.is_zero() {
                return Err(Error::InternalInconsistency(format!(
                    "waterfill under {pin} (asset {i}) leaves deficit {}",
                    format_rational(&deficit)
                )));
            }
        }
    }
    // Interior values: conditional expectations, computed backward.
    for t in (0..tree.horizon()).rev() {
        for id in tree.atoms_at(t)? {
            let n = tree.idx(id)?;
            let e = cond_exp_at(tree, &mass, &process, n, dim)?;
            process.insert(id.to_string(), e);
        }
    }
    let system = PricedSystem {
        process,
        measure: ebamm.measure,
        kind: SystemKind::Martingale,
    };
    let violations = verify_priced_system(tree, prices, &system)?;
    if !violations.is_empty() {
        return Err(Error::InternalInconsistency(format!(
            "reconstructed martingale system fails verification: {}",
            violations.join("; ")
        )));
    }
    Ok(Some(system))
}

// ───────────────────────────── equivalence ─────────────────────────────

/// Joint run of the three characterizations on one market.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceReport {
    /// Verdict of the arbitrage detector (true = arbitrage-free).
    pub no_arbitrage: bool,
    /// Whether a strictly positive measure was found.
    pub ebamm_found: bool,
    /// Whether both systems were built to time 0 and re-verified.
    pub systems_built: bool,
    /// True when all three answers coincide.
    pub agree: bool,
    /// The measure, when found.
    pub ebamm: Option<Ebamm>,
}

/// Runs detector, measure search, and system construction on one market
/// and reports whether the three characterizations agree (they must, on
/// every finite market — disagreement indicates a defect and is surfaced,
/// never patched over).
pub fn theorem_equivalence(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
) -> Result<EquivalenceReport> {
    theorem_equivalence_with(tree, prices, &LpOptions::default())
}

/// [`theorem_equivalence`] with explicit solver options.
pub fn theorem_equivalence_with(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    options: &LpOptions,
) -> Result<EquivalenceReport> {
    let verdict = crate::arbitrage::detect_arbitrage_with(tree, prices, options)?;
    let no_arbitrage = !verdict.has_arbitrage;
    let ebamm = find_ebamm_with(tree, prices, options)?;
    let ebamm_found = ebamm.is_some();
    let systems_built = match &ebamm {
        None => false,
        Some(e) => {
            if !verify_ebamm(tree, prices, e)?.is_empty() {
                false
            } else {
                match build_systems_with(tree, prices, e, options) {
                    Err(Error::EbammViolation(_)) | Err(Error::ExtensionInfeasible { .. }) => false,
                    Err(other) => return Err(other),
                    Ok((hat, check)) => {
                        verify_priced_system(tree, prices, &hat)?.is_empty()
                            && verify_priced_system(tree, prices, &check)?.is_empty()
                            && covered_from(tree, &hat)? == 0
                            && covered_from(tree, &check)? == 0
                    }
                }
            }
        }
    };
    let agree = no_arbitrage == ebamm_found && ebamm_found == systems_built;
    Ok(EquivalenceReport { no_arbitrage, ebamm_found, systems_built, agree, ebamm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, ratio};
    use crate::scenario_tree::Node;
    use std::collections::BTreeMap;

    /// One-step spread market: S̲_0 = S̄_0 = 4, up leaf (6, 16), down (1, 3).
    fn embedded_binary() -> (ScenarioTree, BidAskProcess) {
        let nodes = vec![
            Node::root("r"),
            Node::child("d", "r", 1),
            Node::child("u", "r", 1),
        ];
        let mut probs = BTreeMap::new();
        probs.insert("u".into(), ratio(1, 2));
        probs.insert("d".into(), ratio(1, 2));
        let tree = ScenarioTree::new(1, nodes, probs).unwrap();
        let mut bid = NodeMap::new();
        let mut ask = NodeMap::new();
        bid.insert("r".into(), vec![rat(4)]);
        ask.insert("r".into(), vec![rat(4)]);
        bid.insert("u".into(), vec![rat(6)]);
        ask.insert("u".into(), vec![rat(16)]);
        bid.insert("d".into(), vec![rat(1)]);
        ask.insert("d".into(), vec![rat(3)]);
        (tree, BidAskProcess::new(1, bid, ask))
    }

    fn measure(pairs: &[(&str, Rational)]) -> Measure {
        Measure::new(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
    }

    fn frictionless_binomial() -> (ScenarioTree, BidAskProcess) {
        let nodes = vec![
            Node::root("r"),
            Node::child("d", "r", 1),
            Node::child("u", "r", 1),
        ];
        let mut probs = BTreeMap::new();
        probs.insert("u".into(), ratio(1, 2));
        probs.insert("d".into(), ratio(1, 2));
        let tree = ScenarioTree::new(1, nodes, probs).unwrap();
        let mut bid = NodeMap::new();
        for (id, p) in [("r", 10), ("u", 12), ("d", 8)] {
            bid.insert(id.to_string(), vec![rat(p)]);
        }
        (tree, BidAskProcess::new(1, bid.clone(), bid))
    }

    fn drifting_path() -> (ScenarioTree, BidAskProcess) {
        let nodes = vec![
            Node::root("r"),
            Node::child("m", "r", 1),
            Node::child("w", "m", 2),
        ];
        let mut probs = BTreeMap::new();
        probs.insert("w".into(), rat(1));
        let tree = ScenarioTree::new(2, nodes, probs).unwrap();
        let mut bid = NodeMap::new();
        let mut ask = NodeMap::new();
        for (id, b, a) in [("r", 1, 2), ("m", 2, 3), ("w", 3, 4)] {
            bid.insert(id.to_string(), vec![rat(b)]);
            ask.insert(id.to_string(), vec![rat(a)]);
        }
        (tree, BidAskProcess::new(1, bid, ask))
    }

    fn pairwise_safe_market() -> (ScenarioTree, BidAskProcess) {
        let nodes = vec![
            Node::root("r"),
            Node::child("u", "r", 1),
            Node::child("d", "r", 1),
            Node::child("uu", "u", 2),
            Node::child("ud", "u", 2),
            Node::child("du", "d", 2),
            Node::child("dd", "d", 2),
        ];
        let mut probs = BTreeMap::new();
        for id in ["uu", "ud", "du", "dd"] {
            probs.insert(id.to_string(), ratio(1, 4));
        }
        let tree = ScenarioTree::new(2, nodes, probs).unwrap();
        let mut bid = NodeMap::new();
        let mut ask = NodeMap::new();
        let quotes: &[(&str, Rational, Rational)] = &[
            ("r", rat(1), rat(10)),
            ("u", rat(10), rat(12)),
            ("d", rat(1), rat(20)),
            ("uu", rat(1), rat(30)),
            ("ud", rat(1), rat(30)),
            ("du", rat(11), rat(30)),
            ("dd", ratio(21, 2), rat(30)),
        ];
        for (id, b, a) in quotes {
            bid.insert(id.to_string(), vec![b.clone()]);
            ask.insert(id.to_string(), vec![a.clone()]);
        }
        (tree, BidAskProcess::new(1, bid, ask))
    }

    // ───────────────────── find_ebamm ─────────────────────

    #[test]
    fn frictionless_binomial_has_the_unique_risk_neutral_measure() {
        let (tree, prices) = frictionless_binomial();
        let ebamm = find_ebamm(&tree, &prices).unwrap().expect("arbitrage-free");
        assert_eq!(ebamm.measure.weights["u"], ratio(1, 2), "12q + 8(1−q) = 10 forces q = 1/2");
        assert_eq!(ebamm.measure.weights["d"], ratio(1, 2));
        assert_eq!(ebamm.margin, ratio(1, 2));
    }

    #[test]
    fn spread_market_maximizes_the_minimum_leaf_weight() {
        // Admissible up-weights form [1/13, 3/5] ∋ 1/2, so the margin
        // maximization lands exactly on the uniform measure.
        let (tree, prices) = embedded_binary();
        let ebamm = find_ebamm(&tree, &prices).unwrap().expect("arbitrage-free");
        assert_eq!(ebamm.margin, ratio(1, 2));
        assert_eq!(ebamm.measure.weights["u"], ratio(1, 2));
    }

    #[test]
    fn arbitrageable_markets_have_no_measure() {
        let (tree, prices) = drifting_path();
        assert!(find_ebamm(&tree, &prices).unwrap().is_none());
        let (tree, prices) = pairwise_safe_market();
        assert!(
            find_ebamm(&tree, &prices).unwrap().is_none(),
            "stepwise-safe but globally arbitrageable: the stopped test must refuse every measure"
        );
    }

    // ───────────────────── verify_ebamm ─────────────────────

    #[test]
    fn one_step_expectation_violations_are_flagged_on_the_ask_side() {
        let (tree, prices) = embedded_binary();
        // q = 2/3: E[S̲_1] = (2/3)·6 + (1/3)·1 = 13/3 > 4 = S̄_0.
        let bad = Ebamm {
            measure: measure(&[("u", ratio(2, 3)), ("d", ratio(1, 3))]),
            margin: ratio(1, 3),
        };
        let sites = verify_ebamm(&tree, &prices, &bad).unwrap();
        assert_eq!(
            sites,
            vec![ViolationSite { time: 0, atom: "r".into(), asset: 0, side: Side::Ask }]
        );
    }

    #[test]
    fn boundary_measures_verify_exactly() {
        let (tree, prices) = embedded_binary();
        // q = 1/13: E[S̲_1] = 18/13 ≤ 4 and E[S̄_1] = 4 ≥ 4, both exact.
        let boundary = Ebamm {
            measure: measure(&[("u", ratio(1, 13)), ("d", ratio(12, 13))]),
            margin: ratio(1, 13),
        };
        assert!(verify_ebamm(&tree, &prices, &boundary).unwrap().is_empty());
    }

    #[test]
    fn stopping_beats_consecutive_checks() {
        // In the pairwise-safe market, no measure survives the stopped
        // audit even though one-step comparisons all pass; the uniform
        // measure must be flagged somewhere.
        let (tree, prices) = pairwise_safe_market();
        let uniform = Ebamm { measure: Measure::uniform(&tree), margin: ratio(1, 4) };
        let sites = verify_ebamm(&tree, &prices, &uniform).unwrap();
        assert!(
            !sites.is_empty(),
            "the upper envelope of the bid must break through the ask somewhere"
        );
    }

    // ───────────────────── Snell envelopes ─────────────────────

    fn dip_fixture() -> (ScenarioTree, Measure, NodeMap<Rational>) {
        let nodes = vec![
            Node::root("r"),
            Node::child("L", "r", 1),
            Node::child("R", "r", 1),
            Node::child("La", "L", 2),
            Node::child("Lb", "L", 2),
            Node::child("Ra", "R", 2),
            Node::child("Rb", "R", 2),
        ];
        let mut probs = BTreeMap::new();
        for id in ["La", "Lb", "Ra", "Rb"] {
            probs.insert(id.to_string(), ratio(1, 4));
        }
        let tree = ScenarioTree::new(2, nodes, probs).unwrap();
        let m = Measure::uniform(&tree);
        let mut g = NodeMap::new();
        for (id, v) in [("r", 2), ("L", 3), ("R", 6), ("La", 4), ("Lb", 4), ("Ra", 6), ("Rb", 6)] {
            g.insert(id.to_string(), rat(v));
        }
        (tree, m, g)
    }

    #[test]
    fn snell_envelope_rides_over_the_dip() {
        let (tree, m, g) = dip_fixture();
        let (u, tau) = snell_envelope(&tree, &m, &g).unwrap();
        assert_eq!(u["L"], rat(4), "continuation 4 beats the dip to 3");
        assert_eq!(u["R"], rat(6));
        assert_eq!(u["r"], rat(5), "max(2, (4+6)/2) = 5");
        // First contact: R stops at time 1; the L branch runs to its leaves.
        assert!(tau.stop_at.get("R").copied().unwrap_or(false));
        assert!(!tau.stop_at.contains_key("L"));
        assert!(tau.stop_at.get("La").copied().unwrap_or(false));
        assert!(tau.is_valid(&tree));
        assert_eq!(tau.time_on_path(&tree, "Ra").unwrap(), 1);
        assert_eq!(tau.time_on_path(&tree, "Lb").unwrap(), 2);
    }

    #[test]
    fn stopping_at_first_contact_attains_the_envelope() {
        // E_Q[g_τ] over the leaves must equal U(root) exactly.
        let (tree, m, g) = dip_fixture();
        let (u, tau) = snell_envelope(&tree, &m, &g).unwrap();
        let mass = tree.mass_vec(&m.weights).unwrap();
        let mut expectation = Rational::zero();
        for leaf in tree.leaves() {
            let stop_node = tau.node_on_path(&tree, leaf).unwrap();
            expectation += &g[&stop_node] * &mass[tree.idx(leaf).unwrap()];
        }
        assert_eq!(expectation, u["r"]);
    }

    #[test]
    fn lower_envelope_mirrors_the_upper() {
        let (tree, m, g) = dip_fixture();
        let (l, _) = lower_snell_envelope(&tree, &m, &g).unwrap();
        assert_eq!(l["r"], rat(2), "the low early value drags the lower envelope down");
        assert_eq!(l["L"], rat(3));
    }

    // ───────────────────── systems ─────────────────────

    #[test]
    fn built_systems_verify_and_round_trip_to_a_measure() {
        let (tree, prices) = embedded_binary();
        let ebamm = find_ebamm(&tree, &prices).unwrap().unwrap();
        let (hat, check) = build_systems(&tree, &prices, &ebamm).unwrap();
        assert_eq!(hat.kind, SystemKind::Supermartingale);
        assert_eq!(check.kind, SystemKind::Submartingale);
        assert!(verify_priced_system(&tree, &prices, &hat).unwrap().is_empty());
        assert!(verify_priced_system(&tree, &prices, &check).unwrap().is_empty());
        // Terminal pinning and the hat value at the root: q = 1/2 gives
        // E[S̲_1] = 7/2 < 4, so Ŝ_0 = max(4, 7/2) = 4.
        assert_eq!(hat.process["u"], vec![rat(6)]);
        assert_eq!(hat.process["r"], vec![rat(4)]);
        assert_eq!(check.process["u"], vec![rat(16)]);
        // E[S̄_1] = 19/2 > 4 caps at the ask: Š_0 = min(4, 19/2) = 4.
        assert_eq!(check.process["r"], vec![rat(4)]);

        let recovered = cps_implies_ebamm(&tree, &prices, &hat, &check).unwrap();
        assert!(verify_ebamm(&tree, &prices, &recovered).unwrap().is_empty());
        assert_eq!(recovered.measure, ebamm.measure);
    }

    #[test]
    fn three_step_systems_extend_to_the_root() {
        // Frictionless three-step recombining-ish tree, fair at q = 1/2.
        let nodes = vec![
            Node::root("r"),
            Node::child("u", "r", 1),
            Node::child("d", "r", 1),
            Node::child("uu", "u", 2),
            Node::child("ud", "u", 2),
            Node::child("du", "d", 2),
            Node::child("dd", "d", 2),
        ];
        let mut probs = BTreeMap::new();
        for id in ["uu", "ud", "du", "dd"] {
            probs.insert(id.to_string(), ratio(1, 4));
        }
        let tree = ScenarioTree::new(2, nodes, probs).unwrap();
        let mut bid = NodeMap::new();
        let mut ask = NodeMap::new();
        for (id, b, a) in [
            ("r", 40, 41),
            ("u", 48, 50),
            ("d", 31, 33),
            ("uu", 60, 60),
            ("ud", 40, 40),
            ("du", 40, 40),
            ("dd", 24, 24),
        ] {
            bid.insert(id.to_string(), vec![rat(b)]);
            ask.insert(id.to_string(), vec![rat(a)]);
        }
        let prices = BidAskProcess::new(1, bid, ask);
        let report = theorem_equivalence(&tree, &prices).unwrap();
        assert!(report.agree, "all three characterizations must coincide");
        assert!(report.no_arbitrage);
        let ebamm = report.ebamm.unwrap();
        let (hat, check) = build_systems(&tree, &prices, &ebamm).unwrap();
        assert!(verify_priced_system(&tree, &prices, &hat).unwrap().is_empty());
        assert!(verify_priced_system(&tree, &prices, &check).unwrap().is_empty());
    }

    #[test]
    fn one_step_construction_rejects_inconsistent_measures() {
        let (tree, prices) = embedded_binary();
        // q = 9/10: E[S̲_1] = 0.9·6 + 0.1·1 = 11/2 > 4.
        let bad = Ebamm {
            measure: measure(&[("u", ratio(9, 10)), ("d", ratio(1, 10))]),
            margin: ratio(1, 10),
        };
        let err = cps_from_ebamm_one_step(&tree, &prices, &bad).unwrap_err();
        assert!(matches!(err, Error::EbammViolation(_)));
    }

    /// Two-step tree with a hand-built hat system on the final slice,
    /// whose extension to the root fails under the carried measure.
    fn repair_fixture(root_bid: i64, root_ask: i64) -> (ScenarioTree, BidAskProcess, PricedSystem) {
        let nodes = vec![
            Node::root("r"),
            Node::child("u", "r", 1),
            Node::child("d", "r", 1),
            Node::child("uu", "u", 2),
            Node::child("ud", "u", 2),
            Node::child("du", "d", 2),
            Node::child("dd", "d", 2),
        ];
        let mut probs = BTreeMap::new();
        for id in ["uu", "ud", "du", "dd"] {
            probs.insert(id.to_string(), ratio(1, 4));
        }
        let tree = ScenarioTree::new(2, nodes, probs).unwrap();
        let mut bid = NodeMap::new();
        let mut ask = NodeMap::new();
        for (id, b, a) in [
            ("r", root_bid, root_ask),
            ("u", 12, 12),
            ("d", 6, 6),
            ("uu", 14, 14),
            ("ud", 10, 10),
            ("du", 7, 7),
            ("dd", 5, 5),
        ] {
            bid.insert(id.to_string(), vec![rat(b)]);
            ask.insert(id.to_string(), vec![rat(a)]);
        }
        let prices = BidAskProcess::new(1, bid, ask);
        // Valid supermartingale slice on [1, 2] under the uniform measure:
        // E[v_2 | u] = 12 and E[v_2 | d] = 6 match the frictionless quotes.
        let mut process = NodeMap::new();
        for (id, v) in [("u", 12), ("d", 6), ("uu", 14), ("ud", 10), ("du", 7), ("dd", 5)] {
            process.insert(id.to_string(), vec![rat(v)]);
        }
        let system = PricedSystem {
            process,
            measure: Measure::uniform(&tree),
            kind: SystemKind::Supermartingale,
        };
        (tree, prices, system)
    }

    #[test]
    fn foreign_measures_get_kernel_repairs_when_extending() {
        // Root band [7, 8]: the carried measure gives E[v_1 | r] = 9 > 8,
        // so the direct step fails, but the kernel (1/3, 2/3) brings the
        // expectation back to 8 — strictly positive, so it is pasted in.
        let (tree, prices, system) = repair_fixture(7, 8);
        let extended = extend_cps_backward(&tree, &prices, &system).unwrap();
        assert_eq!(extended.process["r"], vec![rat(8)]);
        let marginal = marginal_on(&tree, 1, &extended.measure).unwrap();
        assert_eq!(marginal["u"], ratio(1, 3), "max-min kernel sits at the constraint");
        assert_eq!(extended.measure.weights["du"], ratio(1, 3), "conditional under d kept uniform");
        assert!(verify_priced_system(&tree, &prices, &extended).unwrap().is_empty());
    }

    #[test]
    fn extension_fails_when_no_kernel_reaches_the_band() {
        // Root band [4, 5]: every child value is at least 6, so no kernel
        // expectation can come down to 5.
        let (tree, prices, system) = repair_fixture(4, 5);
        let err = extend_cps_backward(&tree, &prices, &system).unwrap_err();
        assert_eq!(err, Error::ExtensionInfeasible { node: "r".into() });
    }

    #[test]
    fn martingale_search_reconstructs_exact_terminal_values() {
        let (tree, prices) = embedded_binary();
        let system = find_cps(&tree, &prices).unwrap().expect("arbitrage-free");
        assert_eq!(system.kind, SystemKind::Martingale);
        assert!(verify_priced_system(&tree, &prices, &system).unwrap().is_empty());
        // The root value of a martingale system must be the expectation of
        // its terminal values, all inside the band.
        assert_eq!(system.process["r"], vec![rat(4)]);

        let (tree, prices) = drifting_path();
        assert!(find_cps(&tree, &prices).unwrap().is_none());
    }

    #[test]
    fn equivalence_report_agrees_on_clean_and_dirty_markets() {
        for (market, expect_na) in [
            (embedded_binary(), true),
            (frictionless_binomial(), true),
            (drifting_path(), false),
            (pairwise_safe_market(), false),
        ] {
            let (tree, prices) = market;
            let report = theorem_equivalence(&tree, &prices).unwrap();
            assert!(report.agree);
            assert_eq!(report.no_arbitrage, expect_na);
        }
    }

    // ───────────────────── compose_measures ─────────────────────

    #[test]
    fn composition_replaces_the_marginal_and_keeps_conditionals() {
        let (tree, _, _) = dip_fixture();
        let inner = measure(&[
            ("La", ratio(1, 8)),
            ("Lb", ratio(3, 8)),
            ("Ra", ratio(1, 4)),
            ("Rb", ratio(1, 4)),
        ]);
        let outer = measure(&[("L", ratio(1, 5)), ("R", ratio(4, 5))]);
        let composed = compose_measures(&tree, 1, &outer, &inner).unwrap();
        // Marginal at time 1 becomes the outer weights…
        let marginal = marginal_on(&tree, 1, &composed).unwrap();
        assert_eq!(marginal["L"], ratio(1, 5));
        assert_eq!(marginal["R"], ratio(4, 5));
        // …while conditionals under L stay (1/4, 3/4).
        assert_eq!(composed.weights["La"], ratio(1, 20));
        assert_eq!(composed.weights["Lb"], ratio(3, 20));
    }

    #[test]
    fn composition_accepts_leaf_keyed_outer_measures() {
        let (tree, _, _) = dip_fixture();
        let inner = Measure::uniform(&tree);
        // Leaf-keyed outer with marginal (1/3, 2/3) at time 1.
        let outer = measure(&[
            ("La", ratio(1, 3)),
            ("Lb", rat(0)),
            ("Ra", ratio(1, 3)),
            ("Rb", ratio(1, 3)),
        ]);
        let composed = compose_measures(&tree, 1, &outer, &inner).unwrap();
        let marginal = marginal_on(&tree, 1, &composed).unwrap();
        assert_eq!(marginal["L"], ratio(1, 3));
        assert_eq!(composed.weights["La"], ratio(1, 6), "uniform conditional under L");
    }

    #[test]
    fn composing_onto_a_dead_atom_is_an_error() {
        let (tree, _, _) = dip_fixture();
        let inner = measure(&[
            ("La", rat(0)),
            ("Lb", rat(0)),
            ("Ra", ratio(1, 2)),
            ("Rb", ratio(1, 2)),
        ]);
        let outer = measure(&[("L", ratio(1, 2)), ("R", ratio(1, 2))]);
        let err = compose_measures(&tree, 1, &outer, &inner).unwrap_err();
        assert_eq!(err, Error::ZeroMassNode { node: "L".into() });
    }

    // ───────────────────── misc ─────────────────────

    #[test]
    fn horizon_stopping_time_is_valid() {
        let (tree, _, _) = dip_fixture();
        let tau = StoppingTime::horizon(&tree);
        assert!(tau.is_valid(&tree));
        assert_eq!(tau.time_on_path(&tree, "La").unwrap(), 2);
    }

    #[test]
    fn pair_measures_returns_both_sides() {
        let (tree, prices) = embedded_binary();
        let ebamm = find_ebamm(&tree, &prices).unwrap().unwrap();
        let (hat, check) = build_systems(&tree, &prices, &ebamm).unwrap();
        let (mh, mc) = pair_measures(&hat, &check);
        assert_eq!(mh, mc, "systems built from one measure share it");
    }

    #[test]
    fn ebamm_serialization_shape_is_stable() {
        let (tree, prices) = frictionless_binomial();
        let ebamm = find_ebamm(&tree, &prices).unwrap().unwrap();
        let json = ebamm.to_json();
        assert_eq!(json["margin"], serde_json::json!("1/2"));
        assert_eq!(json["measure"]["u"], serde_json::json!("1/2"));
    }
}
