//! Self-financing trading under bid-ask spreads: strategies, value
//! processes, long/short decomposition, and order netting.
//!
//! A [`Strategy`] stores, at each node `n` at time `t ≤ T−1`, the position
//! vector held over the interval `(t, t+1]` after trading at `n`'s quotes.
//! Starting from the zero position, the order executed at `n` is
//! `ΔH = holdings[n] − holdings[parent(n)]`; purchases fill at the ask,
//! sales at the bid, and the portfolio is marked by liquidation — longs at
//! the bid, shorts covered at the ask:
//!
//! ```text
//! x_t(H) = − Σ_{j≤t} [ (ΔH_j)⁺·S̄_{j−1} − (ΔH_j)⁻·S̲_{j−1} ]
//!          + (H_t)⁺·S̲_t − (H_t)⁻·S̄_t
//! ```
//!
//! There is no cash variable: the money account is the numeraire and `x_t`
//! *is* the cash position after liquidation, so self-financing is built into
//! the formula rather than imposed as a side condition.
//!
//! Two reformulations used throughout the crate live here. First,
//! [`decompose_strategy`] splits `H` componentwise into a long book `H⁺` and
//! a short book `−H⁻`; because both books move monotonically with `H`, the
//! books' trades never oppose each other and [`pair_value`] reproduces
//! `x_t(H)` exactly. Second, a gross [`TradePlan`] (separate buy and sell
//! orders per node) can be netted by [`net_trade_plan`]; netting improves
//! the value by exactly `Σ min(buys, sells)·(S̄ − S̲)` over the executed
//! nodes — cancelling a unit that would have crossed a strict spread is a
//! strict gain, and cancelling at a touching market (`S̲ = S̄`) is neutral.

use crate::rational::{rational_from_json, rational_to_json};
use crate::scenario_tree::{BidAskProcess, ScenarioTree};
use crate::{Error, NodeMap, Rational, Result};
use num_traits::Zero;

// ───────────────────────────── strategies ─────────────────────────────

/// A trading strategy: the position vector held after trading at each
/// non-terminal node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strategy {
    /// `holdings[n]` = position held over `(t, t+1]`, for `n` at time `t`.
    pub holdings: NodeMap<Vec<Rational>>,
}

impl Strategy {
    /// Wraps a holdings map.
    pub fn new(holdings: NodeMap<Vec<Rational>>) -> Self {
        Strategy { holdings }
    }

    /// The strategy that never trades.
    pub fn zero(tree: &ScenarioTree, dim: usize) -> Self {
        let mut holdings = NodeMap::new();
        for t in 0..tree.horizon() {
            for id in tree.atoms_at(t).expect("time within horizon") {
                holdings.insert(id.to_string(), vec![Rational::zero(); dim]);
            }
        }
        Strategy { holdings }
    }

    /// Position held over `(t, t+1]` at a node at time `t`.
    pub fn holdings_at(&self, id: &str) -> Result<&[Rational]> {
        self.holdings
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UndefinedHolding { node: id.to_string() })
    }

    /// Parses `{"holdings": {node: ["p/q", ...], ...}}`.
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let obj = v
            .as_object()
            .and_then(|o| o.get("holdings"))
            .and_then(|h| h.as_object())
            .ok_or_else(|| {
                Error::InvalidMarket("strategy JSON must be {\"holdings\": {...}}".into())
            })?;
        let mut holdings = NodeMap::new();
        for (k, val) in obj {
            let arr = val.as_array().ok_or_else(|| {
                Error::InvalidMarket(format!("holdings at {k} are not an array"))
            })?;
            let mut vec = Vec::with_capacity(arr.len());
            for x in arr {
                vec.push(rational_from_json(x)?);
            }
            holdings.insert(k.clone(), vec);
        }
        Ok(Strategy { holdings })
    }

    /// Serializes to the wire format accepted by [`Strategy::from_json`].
    pub fn to_json(&self) -> serde_json::Value {
        let obj: serde_json::Map<String, serde_json::Value> = self
            .holdings
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    serde_json::Value::Array(v.iter().map(rational_to_json).collect()),
                )
            })
            .collect();
        serde_json::json!({ "holdings": obj })
    }
}

/// Componentwise positive/negative part helpers.
fn pos(x: &Rational) -> Rational {
    if x > &Rational::zero() { x.clone() } else { Rational::zero() }
}

fn neg(x: &Rational) -> Rational {
    if x < &Rational::zero() { -x.clone() } else { Rational::zero() }
}

// ───────────────────────────── value process ─────────────────────────────

/// Trading cost of the order `delta` at a node's quotes: buys fill at the
/// ask, sells return the bid.
fn order_cost(delta: &[Rational], bid: &[Rational], ask: &[Rational]) -> Rational {
    let mut cost = Rational::zero();
    for (d, (b, a)) in delta.iter().zip(bid.iter().zip(ask)) {
        if d.is_zero() {
            continue;
        }
        cost += pos(d) * a - neg(d) * b;
    }
    cost
}

/// Liquidation value of position `h` at a node's quotes: longs sell at the
/// bid, shorts cover at the ask.
fn liquidation(h: &[Rational], bid: &[Rational], ask: &[Rational]) -> Rational {
    let mut v = Rational::zero();
    for (x, (b, a)) in h.iter().zip(bid.iter().zip(ask)) {
        if x.is_zero() {
            continue;
        }
        v += pos(x) * b - neg(x) * a;
    }
    v
}

/// The liquidation value `x_t(H)` at every atom of `F_t`, for `t ∈ [1, T]`.
///
/// # Examples
///
/// ```
/// # use spreadbench_core::portfolio::{value_process, Strategy};
/// # use spreadbench_core::scenario_tree::{BidAskProcess, Node, ScenarioTree};
/// # use spreadbench_core::rational::rat;
/// # use std::collections::BTreeMap;
/// let nodes = vec![Node::root("r"), Node::child("w", "r", 1)];
/// let mut probs = BTreeMap::new();
/// probs.insert("w".into(), rat(1));
/// let tree = ScenarioTree::new(1, nodes, probs).unwrap();
/// let mut bid = BTreeMap::new();
/// let mut ask = BTreeMap::new();
/// bid.insert("r".into(), vec![rat(9)]);
/// ask.insert("r".into(), vec![rat(10)]);
/// bid.insert("w".into(), vec![rat(15)]);
/// ask.insert("w".into(), vec![rat(16)]);
/// let prices = BidAskProcess::new(1, bid, ask);
///
/// // Buy one share at the ask (10), liquidate at the bid (15): x_1 = 5.
/// let mut h = BTreeMap::new();
/// h.insert("r".into(), vec![rat(1)]);
/// let x = value_process(&tree, &prices, &Strategy::new(h), 1).unwrap();
/// assert_eq!(x["w"], rat(5));
/// ```
pub fn value_process(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    strategy: &Strategy,
    t: usize,
) -> Result<NodeMap<Rational>> {
    if t == 0 || t > tree.horizon() {
        return Err(Error::TimeOutOfRange { time: t, horizon: tree.horizon() });
    }
    let dim = prices.dim;
    let mut out = NodeMap::new();
    for id in tree.atoms_at(t)? {
        let path = tree.path_to(id)?;
        let mut cost = Rational::zero();
        let mut prev: Vec<Rational> = vec![Rational::zero(); dim];
        for &node in &path[..t] {
            let h = strategy.holdings_at(node)?;
            if h.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("holdings at node {node}"),
                    expected: dim,
                    found: h.len(),
                });
            }
            let delta: Vec<Rational> = h.iter().zip(&prev).map(|(a, b)| a - b).collect();
            cost += order_cost(&delta, prices.bid_at(node)?, prices.ask_at(node)?);
            prev = h.to_vec();
        }
        let value = liquidation(&prev, prices.bid_at(id)?, prices.ask_at(id)?) - cost;
        out.insert(id.to_string(), value);
    }
    Ok(out)
}

/// The full liquidation-value trace of a strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueTrace {
    /// Terminal values `x_T` per leaf.
    pub terminal: NodeMap<Rational>,
    /// `per_time[t]` holds `x_t` per atom of `F_t`, for `t = 1..=T`
    /// (`per_time[0]` is the empty map: no trade has settled at time 0).
    pub per_time: Vec<NodeMap<Rational>>,
}

impl ValueTrace {
    /// Serializes as `{"terminal": {...}, "per_time": [{...}, ...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let map = |m: &NodeMap<Rational>| -> serde_json::Value {
            serde_json::Value::Object(
                m.iter().map(|(k, v)| (k.clone(), rational_to_json(v))).collect(),
            )
        };
        serde_json::json!({
            "terminal": map(&self.terminal),
            "per_time": self.per_time.iter().map(map).collect::<Vec<_>>(),
        })
    }
}

/// Evaluates `x_t` for every `t ∈ [1, T]`.
pub fn value_trace(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    strategy: &Strategy,
) -> Result<ValueTrace> {
    let mut per_time = vec![NodeMap::new()];
    for t in 1..=tree.horizon() {
        per_time.push(value_process(tree, prices, strategy, t)?);
    }
    let terminal = per_time[tree.horizon()].clone();
    Ok(ValueTrace { terminal, per_time })
}

/// The order `ΔH` executed at each non-terminal node (the root order is
/// `holdings[root]` itself, from the zero position).
pub fn strategy_deltas(
    tree: &ScenarioTree,
    dim: usize,
    strategy: &Strategy,
) -> Result<NodeMap<Vec<Rational>>> {
    let mut out = NodeMap::new();
    for t in 0..tree.horizon() {
        for id in tree.atoms_at(t)? {
            let h = strategy.holdings_at(id)?;
            let delta: Vec<Rational> = match tree.parent_of(id)? {
                None => h.to_vec(),
                Some(p) => {
                    let hp = strategy.holdings_at(p)?;
                    h.iter().zip(hp).map(|(a, b)| a - b).collect()
                }
            };
            if delta.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("holdings at node {id}"),
                    expected: dim,
                    found: delta.len(),
                });
            }
            out.insert(id.to_string(), delta);
        }
    }
    Ok(out)
}

// ───────────────────────── long/short decomposition ─────────────────────────

/// A strategy split into a nonnegative long book and a nonpositive short
/// book whose sum is the original position everywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyPair {
    /// `H⁺` componentwise; never negative.
    pub long_book: Strategy,
    /// `−H⁻` componentwise; never positive.
    pub short_book: Strategy,
}

/// Splits `H` into `(H⁺, −H⁻)` componentwise at every node.
///
/// Both books move monotonically with `H` (raising a position can only grow
/// the long book and shrink the short exposure, never both directions at
/// once), so their orders never oppose each other and the books can be
/// valued independently without double-charging the spread: see
/// [`pair_value`].
pub fn decompose_strategy(strategy: &Strategy) -> StrategyPair {
    let mut long = NodeMap::new();
    let mut short = NodeMap::new();
    for (id, h) in &strategy.holdings {
        long.insert(id.clone(), h.iter().map(pos).collect());
        short.insert(id.clone(), h.iter().map(|x| -neg(x)).collect());
    }
    StrategyPair { long_book: Strategy::new(long), short_book: Strategy::new(short) }
}

/// Value of a decomposed pair: the books are valued separately and summed.
/// For the canonical decomposition this equals `x_t(H)` exactly.
pub fn pair_value(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    pair: &StrategyPair,
    t: usize,
) -> Result<NodeMap<Rational>> {
    let long = value_process(tree, prices, &pair.long_book, t)?;
    let short = value_process(tree, prices, &pair.short_book, t)?;
    Ok(long
        .into_iter()
        .map(|(id, v)| {
            let s = &short[&id];
            let sum = v + s;
            (id, sum)
        })
        .collect())
}

// ───────────────────────────── order netting ─────────────────────────────

/// Gross orders per non-terminal node: nonnegative buy and sell sizes that
/// both execute at that node's quotes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradePlan {
    /// Buy order sizes per node (fill at the ask).
    pub buys: NodeMap<Vec<Rational>>,
    /// Sell order sizes per node (fill at the bid).
    pub sells: NodeMap<Vec<Rational>>,
}

impl TradePlan {
    /// The (buys, sells) pair at a node, padded with zeros where the plan
    /// is silent; errors on wrong dimensions or negative sizes.
    pub fn orders_at(&self, id: &str, dim: usize) -> Result<(Vec<Rational>, Vec<Rational>)> {
        let zero = vec![Rational::zero(); dim];
        let get = |m: &NodeMap<Vec<Rational>>| -> Result<Vec<Rational>> {
            match m.get(id) {
                None => Ok(zero.clone()),
                Some(v) if v.len() == dim => Ok(v.clone()),
                Some(v) => Err(Error::DimensionMismatch {
                    context: format!("orders at node {id}"),
                    expected: dim,
                    found: v.len(),
                }),
            }
        };
        let b = get(&self.buys)?;
        let s = get(&self.sells)?;
        if b.iter().chain(&s).any(|x| x < &Rational::zero()) {
            return Err(Error::ParamOutOfRange(format!(
                "negative order size at node {id}"
            )));
        }
        Ok((b, s))
    }
}

/// Cancels matched buy/sell volume nodewise: `buys′ = (buys − sells)⁺`,
/// `sells′ = (buys − sells)⁻`. The netted plan holds the same positions.
pub fn net_trade_plan(plan: &TradePlan) -> TradePlan {
    let mut buys = NodeMap::new();
    let mut sells = NodeMap::new();
    let keys: std::collections::BTreeSet<&String> =
        plan.buys.keys().chain(plan.sells.keys()).collect();
    for id in keys {
        let empty: Vec<Rational> = Vec::new();
        let b = plan.buys.get(id).unwrap_or(&empty);
        let s = plan.sells.get(id).unwrap_or(&empty);
        let dim = b.len().max(s.len());
        let zero = Rational::zero();
        let mut nb = Vec::with_capacity(dim);
        let mut ns = Vec::with_capacity(dim);
        for i in 0..dim {
            let d = b.get(i).unwrap_or(&zero) - s.get(i).unwrap_or(&zero);
            nb.push(pos(&d));
            ns.push(neg(&d));
        }
        buys.insert(id.clone(), nb);
        sells.insert(id.clone(), ns);
    }
    TradePlan { buys, sells }
}

/// Accumulates a plan's net orders into the positions it holds.
pub fn trades_to_strategy(tree: &ScenarioTree, dim: usize, plan: &TradePlan) -> Result<Strategy> {
    let mut holdings: NodeMap<Vec<Rational>> = NodeMap::new();
    for t in 0..tree.horizon() {
        for id in tree.atoms_at(t)? {
            let (b, s) = plan.orders_at(id, dim)?;
            let mut h: Vec<Rational> = match tree.parent_of(id)? {
                None => vec![Rational::zero(); dim],
                Some(p) => holdings[p].clone(),
            };
            for i in 0..dim {
                h[i] += &b[i] - &s[i];
            }
            holdings.insert(id.to_string(), h);
        }
    }
    Ok(Strategy::new(holdings))
}

/// Gross liquidation value of a plan at time `t`: every buy pays the ask and
/// every sell receives the bid — matched volume crosses the spread instead
/// of cancelling.
pub fn trade_plan_value(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    plan: &TradePlan,
    t: usize,
) -> Result<NodeMap<Rational>> {
    if t == 0 || t > tree.horizon() {
        return Err(Error::TimeOutOfRange { time: t, horizon: tree.horizon() });
    }
    let dim = prices.dim;
    let mut out = NodeMap::new();
    for id in tree.atoms_at(t)? {
        let path = tree.path_to(id)?;
        let mut cost = Rational::zero();
        let mut position = vec![Rational::zero(); dim];
        for &node in &path[..t] {
            let (b, s) = plan.orders_at(node, dim)?;
            let bid = prices.bid_at(node)?;
            let ask = prices.ask_at(node)?;
            for i in 0..dim {
                cost += &b[i] * &ask[i] - &s[i] * &bid[i];
                position[i] += &b[i] - &s[i];
            }
        }
        let value = liquidation(&position, prices.bid_at(id)?, prices.ask_at(id)?) - cost;
        out.insert(id.to_string(), value);
    }
    Ok(out)
}

// ─────────────────────────── proportional costs ───────────────────────────

/// Builds a bid-ask process from mid prices and proportional cost rates:
/// `ask = (1+λ_i)·mid`, `bid = (1−μ_i)·mid` per asset.
///
/// Requires `λ_i ≥ 0` and `0 ≤ μ_i < 1` (so bids stay strictly positive).
///
/// # Examples
///
/// ```
/// # use spreadbench_core::portfolio::from_proportional_costs;
/// # use spreadbench_core::scenario_tree::{Node, ScenarioTree};
/// # use spreadbench_core::rational::{rat, ratio};
/// # use std::collections::BTreeMap;
/// let nodes = vec![Node::root("r"), Node::child("w", "r", 1)];
/// let mut probs = BTreeMap::new();
/// probs.insert("w".into(), rat(1));
/// let tree = ScenarioTree::new(1, nodes, probs).unwrap();
/// let mut mid = BTreeMap::new();
/// mid.insert("r".into(), vec![rat(100)]);
/// mid.insert("w".into(), vec![rat(100)]);
/// let prices =
///     from_proportional_costs(&tree, &mid, &[ratio(1, 10)], &[ratio(1, 20)]).unwrap();
/// assert_eq!(prices.ask_at("r").unwrap()[0], rat(110));
/// assert_eq!(prices.bid_at("r").unwrap()[0], rat(95));
/// ```
pub fn from_proportional_costs(
    tree: &ScenarioTree,
    mid: &NodeMap<Vec<Rational>>,
    lambda: &[Rational],
    mu: &[Rational],
) -> Result<BidAskProcess> {
    let dim = lambda.len();
    if mu.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "proportional cost rates".into(),
            expected: dim,
            found: mu.len(),
        });
    }
    let one = Rational::new(1.into(), 1.into());
    for (i, l) in lambda.iter().enumerate() {
        if l < &Rational::zero() {
            return Err(Error::ParamOutOfRange(format!(
                "ask markup λ for asset {i} is negative"
            )));
        }
    }
    for (i, m) in mu.iter().enumerate() {
        if m < &Rational::zero() || m >= &one {
            return Err(Error::ParamOutOfRange(format!(
                "bid markdown μ for asset {i} must lie in [0, 1)"
            )));
        }
    }
    let mut bid = NodeMap::new();
    let mut ask = NodeMap::new();
    for t in 0..=tree.horizon() {
        for id in tree.atoms_at(t)? {
            let m = mid.get(id).ok_or_else(|| {
                Error::InvalidMarket(format!("no mid price assigned at node {id}"))
            })?;
            if m.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("mid price at node {id}"),
                    expected: dim,
                    found: m.len(),
                });
            }
            bid.insert(
                id.to_string(),
                m.iter().zip(mu).map(|(x, mu_i)| x * (&one - mu_i)).collect(),
            );
            ask.insert(
                id.to_string(),
                m.iter()
                    .zip(lambda)
                    .map(|(x, l_i)| x * (&one + l_i))
                    .collect(),
            );
        }
    }
    Ok(BidAskProcess::new(dim, bid, ask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, ratio};
    use crate::scenario_tree::Node;
    use std::collections::BTreeMap;

    /// Single path r → m → w with per-node (bid, ask) pairs, d = 1.
    fn path_market(quotes: [(i64, i64); 3]) -> (ScenarioTree, BidAskProcess) {
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
        for (id, (b, a)) in ["r", "m", "w"].iter().zip(quotes) {
            bid.insert(id.to_string(), vec![rat(b)]);
            ask.insert(id.to_string(), vec![rat(a)]);
        }
        (tree, BidAskProcess::new(1, bid, ask))
    }

    fn one_step_two_assets() -> (ScenarioTree, BidAskProcess) {
        let nodes = vec![Node::root("r"), Node::child("w", "r", 1)];
        let mut probs = BTreeMap::new();
        probs.insert("w".into(), rat(1));
        let tree = ScenarioTree::new(1, nodes, probs).unwrap();
        let mut bid = NodeMap::new();
        let mut ask = NodeMap::new();
        bid.insert("r".into(), vec![rat(9), rat(9)]);
        ask.insert("r".into(), vec![rat(10), rat(10)]);
        bid.insert("w".into(), vec![rat(11), rat(7)]);
        ask.insert("w".into(), vec![rat(12), rat(8)]);
        (tree, BidAskProcess::new(2, bid, ask))
    }

    #[test]
    fn long_short_position_pays_spread_on_both_legs() {
        let (tree, prices) = one_step_two_assets();
        // H = (2, −2): buy 2 at ask 10 (−20), short 2 at bid 9 (+18);
        // liquidate longs at bid 11 (+22), cover shorts at ask 8 (−16).
        let mut h = NodeMap::new();
        h.insert("r".into(), vec![rat(2), rat(-2)]);
        let x = value_process(&tree, &prices, &Strategy::new(h), 1).unwrap();
        assert_eq!(x["w"], rat(4), "−20 + 18 + 22 − 16 = 4");
    }

    #[test]
    fn reversal_crosses_the_spread_twice() {
        // Hold 1, flip to −2 at time 1: the sale of 3 units fills at bids.
        let (tree, prices) = path_market([(9, 10), (11, 12), (13, 14)]);
        let mut h = NodeMap::new();
        h.insert("r".into(), vec![rat(1)]);
        h.insert("m".into(), vec![rat(-2)]);
        let strategy = Strategy::new(h);
        let x = value_process(&tree, &prices, &strategy, 2).unwrap();
        // Cost: buy 1 @10 = 10; sell 3 @11 = −33; cover 2 @14 = 28 at exit.
        // x_2 = −10 + 33 − 28 = −5.
        assert_eq!(x["w"], rat(-5));

        // The canonical split books the same trades: long book 1 → 0
        // (sell 1 @11), short book 0 → −2 (sell 2 @11), covering at 14.
        let pair = decompose_strategy(&strategy);
        assert_eq!(pair.long_book.holdings_at("m").unwrap(), &[rat(0)]);
        assert_eq!(pair.short_book.holdings_at("m").unwrap(), &[rat(-2)]);
        let pv = pair_value(&tree, &prices, &pair, 2).unwrap();
        assert_eq!(pv["w"], x["w"], "pair valuation must reproduce x_t exactly");
    }

    #[test]
    fn pair_value_matches_value_process_with_sign_flips_in_both_assets() {
        let (tree, prices) = one_step_two_assets();
        for h0 in [vec![rat(3), rat(-1)], vec![rat(-2), rat(5)], vec![rat(0), rat(-4)]] {
            let mut h = NodeMap::new();
            h.insert("r".into(), h0);
            let strategy = Strategy::new(h);
            let direct = value_process(&tree, &prices, &strategy, 1).unwrap();
            let paired = pair_value(&tree, &prices, &decompose_strategy(&strategy), 1).unwrap();
            assert_eq!(direct, paired);
        }
    }

    #[test]
    fn frictionless_value_telescopes_to_gains_from_trade() {
        // bid = ask = S: x_t(H) must equal Σ_j H_j·(S_j − S_{j−1}).
        let (tree, prices) = path_market([(10, 10), (13, 13), (11, 11)]);
        let mut h = NodeMap::new();
        h.insert("r".into(), vec![rat(2)]);
        h.insert("m".into(), vec![rat(5)]);
        let x = value_process(&tree, &prices, &Strategy::new(h), 2).unwrap();
        // 2·(13−10) + 5·(11−13) = 6 − 10 = −4.
        assert_eq!(x["w"], rat(-4));
    }

    #[test]
    fn value_trace_collects_every_interim_mark() {
        let (tree, prices) = path_market([(9, 10), (11, 12), (13, 14)]);
        let mut h = NodeMap::new();
        h.insert("r".into(), vec![rat(1)]);
        h.insert("m".into(), vec![rat(1)]);
        let strategy = Strategy::new(h);
        let trace = value_trace(&tree, &prices, &strategy).unwrap();
        assert_eq!(trace.per_time[1]["m"], rat(1), "mark at bid 11 after paying 10");
        assert_eq!(trace.per_time[2]["w"], rat(3), "mark at bid 13 after paying 10");
        assert_eq!(trace.terminal, trace.per_time[2]);
        let json = trace.to_json();
        assert_eq!(json["terminal"]["w"], serde_json::json!("3"));
    }

    #[test]
    fn missing_holdings_are_an_error_not_a_default() {
        let (tree, prices) = path_market([(9, 10), (11, 12), (13, 14)]);
        let mut h = NodeMap::new();
        h.insert("r".into(), vec![rat(1)]);
        let err = value_process(&tree, &prices, &Strategy::new(h), 2).unwrap_err();
        assert_eq!(err, Error::UndefinedHolding { node: "m".into() });
    }

    #[test]
    fn netting_gains_exactly_the_cancelled_spread() {
        let (tree, prices) = path_market([(9, 10), (11, 12), (13, 14)]);
        // Gross plan at the root: buy 3 and sell 2 of the same asset.
        let mut buys = NodeMap::new();
        let mut sells = NodeMap::new();
        buys.insert("r".into(), vec![rat(3)]);
        sells.insert("r".into(), vec![rat(2)]);
        let plan = TradePlan { buys, sells };

        let netted = net_trade_plan(&plan);
        assert_eq!(netted.buys["r"], vec![rat(1)]);
        assert_eq!(netted.sells["r"], vec![rat(0)]);

        let gross = trade_plan_value(&tree, &prices, &plan, 1).unwrap();
        let net = trade_plan_value(&tree, &prices, &netted, 1).unwrap();
        // Two cancelled units each save ask − bid = 1 at the root.
        assert_eq!(&net["m"] - &gross["m"], rat(2));

        // Positions agree, so the netted plan's strategy value matches.
        let s_gross = trades_to_strategy(&tree, 1, &plan).unwrap();
        let s_net = trades_to_strategy(&tree, 1, &netted).unwrap();
        assert_eq!(s_gross, s_net);
    }

    #[test]
    fn netting_is_neutral_when_the_market_touches() {
        // bid = ask at the root: cancelling volume changes nothing.
        let (tree, prices) = path_market([(10, 10), (11, 12), (13, 14)]);
        let mut buys = NodeMap::new();
        let mut sells = NodeMap::new();
        buys.insert("r".into(), vec![rat(5)]);
        sells.insert("r".into(), vec![rat(5)]);
        let plan = TradePlan { buys, sells };
        let gross = trade_plan_value(&tree, &prices, &plan, 1).unwrap();
        let net = trade_plan_value(&tree, &prices, &net_trade_plan(&plan), 1).unwrap();
        assert_eq!(gross, net);
    }

    #[test]
    fn deltas_and_cumulation_are_inverse() {
        let (tree, _) = path_market([(9, 10), (11, 12), (13, 14)]);
        let mut h = NodeMap::new();
        h.insert("r".into(), vec![rat(2)]);
        h.insert("m".into(), vec![rat(-1)]);
        let strategy = Strategy::new(h);
        let deltas = strategy_deltas(&tree, 1, &strategy).unwrap();
        assert_eq!(deltas["r"], vec![rat(2)]);
        assert_eq!(deltas["m"], vec![rat(-3)]);

        let plan = TradePlan {
            buys: deltas.iter().map(|(k, v)| (k.clone(), v.iter().map(pos).collect())).collect(),
            sells: deltas.iter().map(|(k, v)| (k.clone(), v.iter().map(neg).collect())).collect(),
        };
        let rebuilt = trades_to_strategy(&tree, 1, &plan).unwrap();
        assert_eq!(rebuilt, strategy);
    }

    #[test]
    fn proportional_costs_mark_up_and_down_from_mid() {
        let nodes = vec![Node::root("r"), Node::child("w", "r", 1)];
        let mut probs = BTreeMap::new();
        probs.insert("w".into(), rat(1));
        let tree = ScenarioTree::new(1, nodes, probs).unwrap();
        let mut mid = NodeMap::new();
        mid.insert("r".into(), vec![rat(100)]);
        mid.insert("w".into(), vec![rat(80)]);
        let prices =
            from_proportional_costs(&tree, &mid, &[ratio(1, 10)], &[ratio(1, 20)]).unwrap();
        assert_eq!(prices.ask_at("r").unwrap()[0], rat(110));
        assert_eq!(prices.bid_at("r").unwrap()[0], rat(95));
        assert_eq!(prices.ask_at("w").unwrap()[0], rat(88));
        assert_eq!(prices.bid_at("w").unwrap()[0], rat(76));

        let err = from_proportional_costs(&tree, &mid, &[rat(0)], &[rat(1)]).unwrap_err();
        assert!(matches!(err, Error::ParamOutOfRange(_)));
    }

    #[test]
    fn strategy_json_round_trips() {
        let mut h = NodeMap::new();
        h.insert("r".into(), vec![ratio(-3, 2), rat(4)]);
        let strategy = Strategy::new(h);
        let json = strategy.to_json();
        assert_eq!(json["holdings"]["r"], serde_json::json!(["-3/2", "4"]));
        assert_eq!(Strategy::from_json(&json).unwrap(), strategy);
    }
}
