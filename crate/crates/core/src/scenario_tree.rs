//! Finite filtered probability spaces as rooted trees, with adapted bid/ask
//! processes, measures, and exact conditional expectations.
//!
//! A [`ScenarioTree`] represents `(Ω, (F_t)_{t=0..T}, P)`: the leaves are the
//! elementary outcomes, the nodes at time `t` are the atoms of `F_t`, and the
//! leaf probabilities define the reference measure `P`. A [`BidAskProcess`]
//! attaches a strictly positive bid vector `S̲_t` and ask vector `S̄_t`
//! (componentwise `S̲ ≤ S̄`) to every node; the money account is the
//! numeraire, so all prices are quoted in units of it (`B ≡ 1`). Market files
//! that quote a separate numeraire are re-expressed in those units at
//! ingestion by [`market_from_json`].
//!
//! Everything is exact: probabilities, prices, and conditional expectations
//! are arbitrary-precision rationals, never floats, because downstream
//! verdicts are exact inequalities whose truth a tolerance would blur.
//!
//! Construction rejects only *structurally incoherent* input (a node whose
//! parent does not exist, duplicate ids, a child whose time is not its
//! parent's plus one). Semantic violations — probabilities that do not sum
//! to one, a bid above an ask, a childless node before the horizon — are
//! diagnosed by [`validate`], which returns a report naming each violated
//! invariant.

use crate::rational::{format_rational, rational_from_json, rational_to_json};
use crate::{Error, NodeMap, Rational, Result};
use num_traits::Zero;
use std::collections::BTreeMap;

// ───────────────────────────── node & tree ─────────────────────────────

/// Construction-time description of one tree node (an atom of `F_time`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    /// Unique node id. Ids order sibling atoms deterministically.
    pub id: String,
    /// Parent id; `None` exactly for the root.
    pub parent: Option<String>,
    /// Time index in `[0, T]`; must equal the parent's time plus one.
    pub time: usize,
}

impl Node {
    /// The root atom (time 0, no parent).
    pub fn root(id: &str) -> Self {
        Node {
            id: id.to_string(),
            parent: None,
            time: 0,
        }
    }

    /// A non-root atom under `parent` at the given time.
    pub fn child(id: &str, parent: &str, time: usize) -> Self {
        Node {
            id: id.to_string(),
            parent: Some(parent.to_string()),
            time,
        }
    }
}

#[derive(Debug, Clone)]
struct NodeData {
    id: String,
    parent: Option<usize>,
    time: usize,
    children: Vec<usize>,
}

/// A finite filtered probability space: rooted tree plus leaf probabilities.
///
/// Immutable after construction; all accessors are cheap lookups. Nodes
/// within a time level are kept in id-sorted order, which makes every
/// iteration in the crate deterministic.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    nodes: Vec<NodeData>,
    index: BTreeMap<String, usize>,
    levels: Vec<Vec<usize>>,
    root: usize,
    horizon: usize,
    leaf_probs: BTreeMap<String, Rational>,
}

impl ScenarioTree {
    /// Builds a tree over the given nodes with horizon `T ≥ 1`.
    ///
    /// Errors with [`Error::InvalidMarket`] on structural incoherence:
    /// duplicate ids, zero or several roots, a missing parent, a child whose
    /// time is not `parent.time + 1`, or a node beyond the horizon.
    /// Semantic problems (probability sums, dangling internal nodes) are
    /// left to [`validate`] so that they can be *reported* rather than
    /// swallowed.
    pub fn new(
        horizon: usize,
        nodes: Vec<Node>,
        leaf_probs: BTreeMap<String, Rational>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidMarket("horizon must be at least 1".into()));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidMarket("tree has no nodes".into()));
        }

        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::InvalidMarket(format!("duplicate node id {}", n.id)));
            }
        }

        let mut data: Vec<NodeData> = Vec::with_capacity(nodes.len());
        let mut root = None;
        for n in &nodes {
            let parent = match &n.parent {
                None => {
                    if n.time != 0 {
                        return Err(Error::InvalidMarket(format!(
                            "parentless node {} sits at time {} ≠ 0",
                            n.id, n.time
                        )));
                    }
                    if root.is_some() {
                        return Err(Error::InvalidMarket(format!(
                            "second root {} (a tree has exactly one)",
                            n.id
                        )));
                    }
                    root = Some(data.len());
                    None
                }
                Some(pid) => {
                    let pi = *index.get(pid).ok_or_else(|| {
                        Error::InvalidMarket(format!("node {} names missing parent {}", n.id, pid))
                    })?;
                    if nodes[pi].time + 1 != n.time {
                        return Err(Error::InvalidMarket(format!(
                            "node {} at time {} under parent {} at time {}",
                            n.id, n.time, pid, nodes[pi].time
                        )));
                    }
                    Some(pi)
                }
            };
            if n.time > horizon {
                return Err(Error::InvalidMarket(format!(
                    "node {} at time {} beyond horizon {}",
                    n.id, n.time, horizon
                )));
            }
            data.push(NodeData {
                id: n.id.clone(),
                parent,
                time: n.time,
                children: Vec::new(),
            });
        }
        let root = root.ok_or_else(|| Error::InvalidMarket("tree has no root".into()))?;

        for i in 0..data.len() {
            if let Some(p) = data[i].parent {
                data[p].children.push(i);
            }
        }
        // Deterministic sibling order: sort children (and levels) by id.
        let ids: Vec<String> = data.iter().map(|nd| nd.id.clone()).collect();
        for nd in &mut data {
            nd.children.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        }
        let mut levels = vec![Vec::new(); horizon + 1];
        for (i, nd) in data.iter().enumerate() {
            levels[nd.time].push(i);
        }
        for level in &mut levels {
            level.sort_by(|&a, &b| data[a].id.cmp(&data[b].id));
        }

        Ok(ScenarioTree {
            nodes: data,
            index,
            levels,
            root,
            horizon,
            leaf_probs,
        })
    }

    /// The horizon `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Id of the root atom.
    pub fn root_id(&self) -> &str {
        &self.nodes[self.root].id
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the tree has no nodes (never, post-construction).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The atoms of `F_t` in id-sorted order.
    ///
    /// # Examples
    ///
    /// ```
    /// # use spreadbench_core::scenario_tree::{Node, ScenarioTree};
    /// # use spreadbench_core::rational::ratio;
    /// # use std::collections::BTreeMap;
    /// let nodes = vec![
    ///     Node::root("r"),
    ///     Node::child("a", "r", 1),
    ///     Node::child("b", "r", 1),
    /// ];
    /// let mut probs = BTreeMap::new();
    /// probs.insert("a".into(), ratio(1, 2));
    /// probs.insert("b".into(), ratio(1, 2));
    /// let tree = ScenarioTree::new(1, nodes, probs).unwrap();
    /// assert_eq!(tree.atoms_at(0).unwrap(), vec!["r"]);
    /// assert_eq!(tree.atoms_at(1).unwrap(), vec!["a", "b"]);
    /// assert!(tree.atoms_at(2).is_err());
    /// ```
    pub fn atoms_at(&self, t: usize) -> Result<Vec<&str>> {
        if t > self.horizon {
            return Err(Error::TimeOutOfRange {
                time: t,
                horizon: self.horizon,
            });
        }
        Ok(self.levels[t].iter().map(|&i| self.nodes[i].id.as_str()).collect())
    }

    /// Leaf ids (the atoms of `F_T`) in id-sorted order.
    pub fn leaves(&self) -> Vec<&str> {
        self.levels[self.horizon]
            .iter()
            .map(|&i| self.nodes[i].id.as_str())
            .collect()
    }

    /// The reference leaf probabilities exactly as supplied.
    pub fn leaf_probs(&self) -> &BTreeMap<String, Rational> {
        &self.leaf_probs
    }

    /// Time of a node.
    pub fn time_of(&self, id: &str) -> Result<usize> {
        Ok(self.nodes[self.idx(id)?].time)
    }

    /// Parent id, or `None` for the root.
    pub fn parent_of(&self, id: &str) -> Result<Option<&str>> {
        let i = self.idx(id)?;
        Ok(self.nodes[i].parent.map(|p| self.nodes[p].id.as_str()))
    }

    /// Child ids in id-sorted order.
    pub fn children_of(&self, id: &str) -> Result<Vec<&str>> {
        let i = self.idx(id)?;
        Ok(self.nodes[i]
            .children
            .iter()
            .map(|&c| self.nodes[c].id.as_str())
            .collect())
    }

    /// Node ids on the root-to-node path, inclusive on both ends.
    pub fn path_to(&self, id: &str) -> Result<Vec<&str>> {
        let mut i = self.idx(id)?;
        let mut path = vec![self.nodes[i].id.as_str()];
        while let Some(p) = self.nodes[i].parent {
            path.push(self.nodes[p].id.as_str());
            i = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Leaf ids lying under (or equal to) the given node, id-sorted.
    pub fn subtree_leaves(&self, id: &str) -> Result<Vec<&str>> {
        let i = self.idx(id)?;
        let mut out: Vec<&str> = self
            .subtree_leaf_idxs(i)
            .into_iter()
            .map(|l| self.nodes[l].id.as_str())
            .collect();
        out.sort();
        Ok(out)
    }

    // ── crate-internal index-based plumbing ──

    pub(crate) fn idx(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub(crate) fn id_of(&self, i: usize) -> &str {
        &self.nodes[i].id
    }

    pub(crate) fn parent_idx(&self, i: usize) -> Option<usize> {
        self.nodes[i].parent
    }

    pub(crate) fn children_idx(&self, i: usize) -> &[usize] {
        &self.nodes[i].children
    }

    pub(crate) fn level_idxs(&self, t: usize) -> &[usize] {
        &self.levels[t]
    }

    pub(crate) fn root_idx(&self) -> usize {
        self.root
    }

    pub(crate) fn subtree_leaf_idxs(&self, i: usize) -> Vec<usize> {
        let mut stack = vec![i];
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            if self.nodes[n].time == self.horizon {
                out.push(n);
            } else {
                stack.extend_from_slice(&self.nodes[n].children);
            }
        }
        out
    }

    /// Total weight under every node, indexed like `nodes`. Missing leaf
    /// entries, entries for non-leaves, and negative weights are rejected.
    pub(crate) fn mass_vec(&self, weights: &BTreeMap<String, Rational>) -> Result<Vec<Rational>> {
        for id in weights.keys() {
            let i = self.idx(id)?;
            if self.nodes[i].time != self.horizon {
                return Err(Error::ParamOutOfRange(format!(
                    "measure assigns weight to non-leaf node {id}"
                )));
            }
        }
        let mut mass = vec![Rational::zero(); self.nodes.len()];
        for &l in &self.levels[self.horizon] {
            let id = &self.nodes[l].id;
            let w = weights.get(id).ok_or_else(|| {
                Error::ParamOutOfRange(format!("measure defines no weight for leaf {id}"))
            })?;
            if w < &Rational::zero() {
                return Err(Error::ParamOutOfRange(format!(
                    "measure weight at leaf {id} is negative ({})",
                    format_rational(w)
                )));
            }
            mass[l] = w.clone();
        }
        for t in (0..self.horizon).rev() {
            for &n in &self.levels[t] {
                let mut s = Rational::zero();
                for &c in &self.nodes[n].children {
                    s += &mass[c];
                }
                mass[n] = s;
            }
        }
        Ok(mass)
    }
}

// ───────────────────────────── processes ─────────────────────────────

/// Adapted `d`-dimensional bid and ask price assignments on tree nodes.
///
/// Invariants (checked by [`validate`], assumed by the analysis operations):
/// `0 < bid[n][i] ≤ ask[n][i]` for every node `n` and asset `i`, and every
/// vector has length `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BidAskProcess {
    /// Number of risky assets, `d ≥ 1`.
    pub dim: usize,
    /// Bid vectors `S̲` by node id.
    pub bid: NodeMap<Vec<Rational>>,
    /// Ask vectors `S̄` by node id.
    pub ask: NodeMap<Vec<Rational>>,
}

impl BidAskProcess {
    /// Wraps price maps without semantic checks (use [`validate`] to audit).
    pub fn new(dim: usize, bid: NodeMap<Vec<Rational>>, ask: NodeMap<Vec<Rational>>) -> Self {
        BidAskProcess { dim, bid, ask }
    }

    /// Bid vector at a node.
    pub fn bid_at(&self, id: &str) -> Result<&[Rational]> {
        self.bid
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidMarket(format!("no bid assigned at node {id}")))
    }

    /// Ask vector at a node.
    pub fn ask_at(&self, id: &str) -> Result<&[Rational]> {
        self.ask
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidMarket(format!("no ask assigned at node {id}")))
    }
}

/// A nonnegative (usually probability) weighting of the leaves.
///
/// The density with respect to the reference measure is
/// `weights[leaf] / leaf_probs[leaf]`; on a finite tree it is automatically
/// bounded, so "equivalent" reduces to "strictly positive everywhere".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Measure {
    /// Weight per leaf id.
    pub weights: NodeMap<Rational>,
}

impl Measure {
    /// Wraps a weight map.
    pub fn new(weights: NodeMap<Rational>) -> Self {
        Measure { weights }
    }

    /// The uniform probability measure on the leaves of `tree`.
    pub fn uniform(tree: &ScenarioTree) -> Self {
        let leaves = tree.leaves();
        let n = leaves.len();
        let w = Rational::new(1.into(), (n as i64).into());
        Measure {
            weights: leaves.into_iter().map(|l| (l.to_string(), w.clone())).collect(),
        }
    }

    /// Sum of all weights.
    pub fn total(&self) -> Rational {
        self.weights.values().fold(Rational::zero(), |a, w| a + w)
    }

    /// True when the weights sum to exactly 1.
    pub fn is_normalized(&self) -> bool {
        self.total() == Rational::new(1.into(), 1.into())
    }

    /// True when every weight is strictly positive.
    pub fn is_strictly_positive(&self) -> bool {
        self.weights.values().all(|w| w > &Rational::zero())
    }

    /// The same measure scaled to total mass 1.
    ///
    /// Errors with [`Error::ZeroMassNode`] when the total mass is zero.
    pub fn normalize(&self) -> Result<Measure> {
        let total = self.total();
        if total.is_zero() {
            return Err(Error::ZeroMassNode {
                node: "(whole tree)".into(),
            });
        }
        Ok(Measure {
            weights: self
                .weights
                .iter()
                .map(|(k, w)| (k.clone(), w / &total))
                .collect(),
        })
    }
}

// ───────────────────────────── validation ─────────────────────────────

/// Outcome of [`validate`]: empty means every market invariant holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    /// Human-readable description of each violated invariant.
    pub violations: Vec<String>,
}

impl ValidationReport {
    /// True when no invariant is violated.
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits every market invariant and reports all violations.
///
/// Checked: strictly positive leaf probabilities summing to exactly 1 and
/// assigned exactly to the leaves; every non-terminal node has a child
/// (no dangling atoms); `dim ≥ 1`; every node carries bid and ask vectors of
/// length `dim`; prices strictly positive; `bid ≤ ask` componentwise.
///
/// # Examples
///
/// ```
/// # use spreadbench_core::scenario_tree::{validate, BidAskProcess, Node, ScenarioTree};
/// # use spreadbench_core::rational::{rat, ratio};
/// # use std::collections::BTreeMap;
/// let nodes = vec![Node::root("root"), Node::child("w", "root", 1)];
/// let mut probs = BTreeMap::new();
/// probs.insert("w".into(), rat(1));
/// let tree = ScenarioTree::new(1, nodes, probs).unwrap();
/// let mut bid = BTreeMap::new();
/// let mut ask = BTreeMap::new();
/// bid.insert("root".into(), vec![rat(12)]);
/// ask.insert("root".into(), vec![rat(10)]);
/// bid.insert("w".into(), vec![rat(10)]);
/// ask.insert("w".into(), vec![rat(10)]);
/// let report = validate(&tree, &BidAskProcess::new(1, bid, ask));
/// assert!(!report.pass());
/// assert!(report.violations[0].contains("bid exceeds ask at node root, asset 0"));
/// ```
pub fn validate(tree: &ScenarioTree, prices: &BidAskProcess) -> ValidationReport {
    let mut violations = Vec::new();
    let horizon = tree.horizon();

    // Probabilities: assigned exactly to leaves, strictly positive, sum 1.
    let leaf_set: std::collections::BTreeSet<&str> = tree.leaves().into_iter().collect();
    for id in tree.leaf_probs().keys() {
        if !leaf_set.contains(id.as_str()) {
            violations.push(format!("probability assigned to non-leaf node {id}"));
        }
    }
    let mut total = Rational::zero();
    for leaf in &leaf_set {
        match tree.leaf_probs().get(*leaf) {
            None => violations.push(format!("leaf {leaf} has no probability assigned")),
            Some(p) => {
                if p <= &Rational::zero() {
                    violations.push(format!(
                        "leaf probability at {leaf} is not strictly positive ({})",
                        format_rational(p)
                    ));
                }
                total += p;
            }
        }
    }
    if total != Rational::new(1.into(), 1.into()) {
        violations.push(format!("probabilities sum to {} ≠ 1", format_rational(&total)));
    }

    // Structure: every pre-horizon node has a child.
    for t in 0..horizon {
        for &n in tree.level_idxs(t) {
            if tree.children_idx(n).is_empty() {
                violations.push(format!(
                    "dangling node {}: no children at time {t} < horizon {horizon}",
                    tree.id_of(n)
                ));
            }
        }
    }

    // Prices: present, correct dimension, positive, bid ≤ ask.
    if prices.dim == 0 {
        violations.push("asset dimension must be ≥ 1".into());
    }
    for t in 0..=horizon {
        for &n in tree.level_idxs(t) {
            let id = tree.id_of(n);
            let (bid, ask) = match (prices.bid.get(id), prices.ask.get(id)) {
                (Some(b), Some(a)) => (b, a),
                _ => {
                    violations.push(format!("no bid/ask assigned at node {id}"));
                    continue;
                }
            };
            if bid.len() != prices.dim {
                violations.push(format!(
                    "bid vector at node {id} has length {}, expected {}",
                    bid.len(),
                    prices.dim
                ));
                continue;
            }
            if ask.len() != prices.dim {
                violations.push(format!(
                    "ask vector at node {id} has length {}, expected {}",
                    ask.len(),
                    prices.dim
                ));
                continue;
            }
            for i in 0..prices.dim {
                if bid[i] <= Rational::zero() {
                    violations.push(format!(
                        "bid is not strictly positive at node {id}, asset {i} ({})",
                        format_rational(&bid[i])
                    ));
                }
                if ask[i] <= Rational::zero() {
                    violations.push(format!(
                        "ask is not strictly positive at node {id}, asset {i} ({})",
                        format_rational(&ask[i])
                    ));
                }
                if bid[i] > ask[i] {
                    violations.push(format!("bid exceeds ask at node {id}, asset {i}"));
                }
            }
        }
    }

    ValidationReport { violations }
}

// ──────────────────────── conditional expectation ────────────────────────

/// Exact conditional expectation one step back.
///
/// `values` assigns a `d`-vector to every atom at time `at_time + 1`; the
/// result assigns to each atom `n` at `at_time` the measure-weighted average
/// `Σ_c mass(c)·values[c] / Σ_c mass(c)` over the children `c` of `n`, where
/// `mass(c)` is the total `measure` weight of the leaves under `c`.
///
/// Errors with [`Error::ZeroMassNode`] when a conditioning atom carries zero
/// mass (the conditional expectation given that atom is undefined — the
/// measure is not equivalent to the reference measure).
///
/// # Examples
///
/// ```
/// # use spreadbench_core::scenario_tree::{conditional_expectation, Measure, Node, ScenarioTree};
/// # use spreadbench_core::rational::{rat, ratio};
/// # use std::collections::BTreeMap;
/// let nodes = vec![
///     Node::root("r"),
///     Node::child("a", "r", 1),
///     Node::child("b", "r", 1),
/// ];
/// let mut probs = BTreeMap::new();
/// probs.insert("a".into(), ratio(1, 2));
/// probs.insert("b".into(), ratio(1, 2));
/// let tree = ScenarioTree::new(1, nodes, probs).unwrap();
///
/// let mut values = BTreeMap::new();
/// values.insert("a".into(), vec![rat(8)]);
/// values.insert("b".into(), vec![rat(12)]);
///
/// // Uniform weights average symmetrically: (8 + 12)/2 = 10.
/// let uniform = Measure::uniform(&tree);
/// let ce = conditional_expectation(&tree, &uniform, &values, 0).unwrap();
/// assert_eq!(ce["r"], vec![rat(10)]);
///
/// // Weights (1/4, 3/4) tilt the average: 8/4 + 36/4 = 11.
/// let mut w = BTreeMap::new();
/// w.insert("a".into(), ratio(1, 4));
/// w.insert("b".into(), ratio(3, 4));
/// let tilted = conditional_expectation(&tree, &Measure::new(w), &values, 0).unwrap();
/// assert_eq!(tilted["r"], vec![rat(11)]);
/// ```
pub fn conditional_expectation(
    tree: &ScenarioTree,
    measure: &Measure,
    values: &NodeMap<Vec<Rational>>,
    at_time: usize,
) -> Result<NodeMap<Vec<Rational>>> {
    if at_time + 1 > tree.horizon() {
        return Err(Error::TimeOutOfRange {
            time: at_time,
            horizon: tree.horizon(),
        });
    }
    let mass = tree.mass_vec(&measure.weights)?;
    let mut out = NodeMap::new();
    for &n in tree.level_idxs(at_time) {
        let id = tree.id_of(n);
        if mass[n].is_zero() {
            return Err(Error::ZeroMassNode { node: id.to_string() });
        }
        let mut acc: Option<Vec<Rational>> = None;
        for &c in tree.children_idx(n) {
            let cid = tree.id_of(c);
            let v = values.get(cid).ok_or_else(|| {
                Error::ParamOutOfRange(format!("values define nothing at node {cid}"))
            })?;
            match &mut acc {
                None => acc = Some(v.iter().map(|x| x * &mass[c]).collect()),
                Some(a) => {
                    if a.len() != v.len() {
                        return Err(Error::DimensionMismatch {
                            context: format!("conditional expectation at {cid}"),
                            expected: a.len(),
                            found: v.len(),
                        });
                    }
                    for (ai, vi) in a.iter_mut().zip(v) {
                        *ai += vi * &mass[c];
                    }
                }
            }
        }
        let acc = acc.ok_or_else(|| Error::InvalidMarket(format!("dangling node {id}")))?;
        out.insert(id.to_string(), acc.into_iter().map(|x| x / &mass[n]).collect());
    }
    Ok(out)
}

// ───────────────────────────── market JSON ─────────────────────────────

/// Parses the market wire format and applies the numeraire pre-pass.
///
/// Expected shape:
///
/// ```json
/// {
///   "horizon": 2,
///   "dim": 1,
///   "nodes": [{"id": "r", "parent": null, "time": 0}, ...],
///   "leaf_probs": {"ruu": "1/4", ...},
///   "bid": {"r": ["95/7"], ...},
///   "ask": {"r": ["14"], ...},
///   "numeraire": {"r": "1", ...}        // optional
/// }
/// ```
///
/// Rationals are `"p/q"` strings or integers. When a `numeraire` map is
/// present it must assign a strictly positive value to every node and be
/// predictable (siblings share one value, since the time-`t` money account
/// is known at `t−1`); all bid and ask quotes are divided by it, so the
/// returned market is always expressed in money-account units.
pub fn market_from_json(v: &serde_json::Value) -> Result<(ScenarioTree, BidAskProcess)> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::InvalidMarket("market JSON is not an object".into()))?;
    let horizon = obj
        .get("horizon")
        .and_then(|h| h.as_u64())
        .ok_or_else(|| Error::InvalidMarket("missing or non-integer \"horizon\"".into()))?
        as usize;
    let dim = obj
        .get("dim")
        .and_then(|d| d.as_u64())
        .ok_or_else(|| Error::InvalidMarket("missing or non-integer \"dim\"".into()))?
        as usize;

    let nodes_json = obj
        .get("nodes")
        .and_then(|n| n.as_array())
        .ok_or_else(|| Error::InvalidMarket("missing \"nodes\" array".into()))?;
    let mut nodes = Vec::with_capacity(nodes_json.len());
    for nj in nodes_json {
        let id = nj
            .get("id")
            .and_then(|x| x.as_str())
            .ok_or_else(|| Error::InvalidMarket("node without string \"id\"".into()))?;
        let time = nj
            .get("time")
            .and_then(|x| x.as_u64())
            .ok_or_else(|| Error::InvalidMarket(format!("node {id} without integer \"time\"")))?
            as usize;
        let parent = match nj.get("parent") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(p)) => Some(p.clone()),
            Some(other) => {
                return Err(Error::InvalidMarket(format!(
                    "node {id} has non-string parent {other}"
                )))
            }
        };
        nodes.push(Node {
            id: id.to_string(),
            parent,
            time,
        });
    }

    let leaf_probs = rational_map(obj.get("leaf_probs"), "leaf_probs")?;
    let tree = ScenarioTree::new(horizon, nodes, leaf_probs)?;

    let mut bid = vector_map(obj.get("bid"), "bid")?;
    let mut ask = vector_map(obj.get("ask"), "ask")?;

    if let Some(nv) = obj.get("numeraire") {
        let numeraire = rational_map(Some(nv), "numeraire")?;
        apply_numeraire(&tree, &numeraire, &mut bid, &mut ask)?;
    }

    Ok((tree, BidAskProcess::new(dim, bid, ask)))
}

/// Parses a market from JSON text (see [`market_from_json`]).
pub fn market_from_json_str(s: &str) -> Result<(ScenarioTree, BidAskProcess)> {
    let v: serde_json::Value = serde_json::from_str(s)
        .map_err(|e| Error::InvalidMarket(format!("market JSON does not parse: {e}")))?;
    market_from_json(&v)
}

/// Serializes a market to the canonical wire format (sorted keys,
/// lowest-terms rationals, nodes ordered by time then id, no numeraire —
/// markets are stored in money-account units).
pub fn market_to_json(tree: &ScenarioTree, prices: &BidAskProcess) -> serde_json::Value {
    let mut nodes = Vec::new();
    for t in 0..=tree.horizon() {
        for &n in tree.level_idxs(t) {
            let id = tree.id_of(n);
            nodes.push(serde_json::json!({
                "id": id,
                "parent": tree.parent_idx(n).map(|p| tree.id_of(p)),
                "time": t,
            }));
        }
    }
    let probs: serde_json::Map<String, serde_json::Value> = tree
        .leaf_probs()
        .iter()
        .map(|(k, v)| (k.clone(), rational_to_json(v)))
        .collect();
    let vecs = |m: &NodeMap<Vec<Rational>>| -> serde_json::Map<String, serde_json::Value> {
        m.iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    serde_json::Value::Array(v.iter().map(rational_to_json).collect()),
                )
            })
            .collect()
    };
    serde_json::json!({
        "horizon": tree.horizon(),
        "dim": prices.dim,
        "nodes": nodes,
        "leaf_probs": probs,
        "bid": vecs(&prices.bid),
        "ask": vecs(&prices.ask),
    })
}

fn rational_map(
    v: Option<&serde_json::Value>,
    what: &str,
) -> Result<BTreeMap<String, Rational>> {
    let obj = v
        .and_then(|x| x.as_object())
        .ok_or_else(|| Error::InvalidMarket(format!("missing \"{what}\" object")))?;
    let mut out = BTreeMap::new();
    for (k, val) in obj {
        out.insert(k.clone(), rational_from_json(val)?);
    }
    Ok(out)
}

fn vector_map(
    v: Option<&serde_json::Value>,
    what: &str,
) -> Result<NodeMap<Vec<Rational>>> {
    let obj = v
        .and_then(|x| x.as_object())
        .ok_or_else(|| Error::InvalidMarket(format!("missing \"{what}\" object")))?;
    let mut out = NodeMap::new();
    for (k, val) in obj {
        let arr = val
            .as_array()
            .ok_or_else(|| Error::InvalidMarket(format!("\"{what}\" at {k} is not an array")))?;
        let mut vec = Vec::with_capacity(arr.len());
        for x in arr {
            vec.push(rational_from_json(x)?);
        }
        out.insert(k.clone(), vec);
    }
    Ok(out)
}

/// Divides all quotes by a strictly positive, predictable numeraire.
fn apply_numeraire(
    tree: &ScenarioTree,
    numeraire: &BTreeMap<String, Rational>,
    bid: &mut NodeMap<Vec<Rational>>,
    ask: &mut NodeMap<Vec<Rational>>,
) -> Result<()> {
    for t in 0..=tree.horizon() {
        for &n in tree.level_idxs(t) {
            let id = tree.id_of(n);
            let b = numeraire.get(id).ok_or_else(|| {
                Error::InvalidMarket(format!("numeraire defines no value at node {id}"))
            })?;
            if b <= &Rational::zero() {
                return Err(Error::InvalidMarket(format!(
                    "numeraire is not strictly positive at node {id} ({})",
                    format_rational(b)
                )));
            }
            // Predictability: the time-t money account is known at t−1, so
            // all children of one node must quote the same value.
            for &c in tree.children_idx(n) {
                let sibling = tree.children_idx(n)[0];
                let vc = numeraire.get(tree.id_of(c));
                let vs = numeraire.get(tree.id_of(sibling));
                if vc != vs {
                    return Err(Error::InvalidMarket(format!(
                        "numeraire is not predictable: siblings {} and {} under {} differ",
                        tree.id_of(sibling),
                        tree.id_of(c),
                        id
                    )));
                }
            }
            for m in [&mut *bid, &mut *ask] {
                if let Some(v) = m.get_mut(id) {
                    for x in v.iter_mut() {
                        *x /= b;
                    }
                }
            }
        }
    }
    Ok(())
}
