//! Seeded generators for trees, markets, strategies, and measures.
//!
//! Everything here is deterministic in the seed (ChaCha8 keyed via
//! [`seeded_rng`]), exact-rational, and sized by [`GeneratorConfig`] — the
//! defaults stay small enough that LP-based checks run in bulk.
//!
//! Two market flavors matter for testing:
//!
//! * [`random_na_market`] is *arbitrage-free by construction*: it first
//!   draws a strictly positive transition kernel and an exact martingale
//!   under it, then opens a random (possibly zero) spread around the
//!   martingale. The martingale stays inside every band, so a pinched
//!   price system exists and no strategy can win — a generator-side
//!   guarantee the detector must reproduce.
//! * [`random_wild_market`] draws quotes with no structure beyond
//!   positivity and `bid ≤ ask`; deep drifts and cross-period mispricings
//!   arise naturally and frequently.
//!
//! [`random_market`] mixes the two, biased toward the structured kind so
//! test batches see both verdicts in quantity.

use crate::portfolio::Strategy;
use crate::rational::ratio;
use crate::scenario_tree::{BidAskProcess, Measure, Node, ScenarioTree};
use crate::{NodeMap, Rational};
use num_traits::{One, Zero};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use std::collections::BTreeMap;

/// Sizing knobs for the generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Largest horizon drawn (inclusive).
    pub max_horizon: usize,
    /// Largest number of children per node (inclusive).
    pub max_branching: usize,
    /// Largest number of risky assets (inclusive).
    pub max_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { max_horizon: 3, max_branching: 3, max_dim: 2 }
    }
}

/// The deterministic RNG all seeded suites use.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_ratio<R: Rng>(rng: &mut R, lo: i64, hi: i64, max_den: i64) -> Rational {
    let den = rng.gen_range(1..=max_den);
    let num = rng.gen_range(lo * den..=hi * den);
    ratio(num, den)
}

/// A random tree: horizon in `[1, max_horizon]`, per-node branching in
/// `[1, max_branching]` (single-child nodes are legal — information need
/// not split), ids grown from `"r"` by appending the child index, and
/// strictly positive leaf probabilities summing to one exactly.
pub fn random_tree<R: Rng>(rng: &mut R, config: &GeneratorConfig) -> ScenarioTree {
    let horizon = rng.gen_range(1..=config.max_horizon.max(1));
    let mut nodes = vec![Node::root("r")];
    let mut level: Vec<String> = vec!["r".into()];
    for t in 1..=horizon {
        let mut next = Vec::new();
        for parent in &level {
            let k = rng.gen_range(1..=config.max_branching.max(1));
            for c in 0..k {
                let id = format!("{parent}{c}");
                nodes.push(Node::child(&id, parent, t));
                next.push(id);
            }
        }
        level = next;
    }
    let mut leaf_probs = BTreeMap::new();
    let mut total = Rational::zero();
    let mut raw = Vec::with_capacity(level.len());
    for leaf in &level {
        let w = Rational::from_integer(rng.gen_range(1i64..=8).into());
        total += &w;
        raw.push((leaf.clone(), w));
    }
    for (leaf, w) in raw {
        leaf_probs.insert(leaf, w / &total);
    }
    ScenarioTree::new(horizon, nodes, leaf_probs).expect("construction is structurally sound")
}

/// A strictly positive transition kernel drawn node by node, returned as
/// normalized leaf weights.
pub fn random_measure<R: Rng>(rng: &mut R, tree: &ScenarioTree) -> Measure {
    let mut mass: NodeMap<Rational> = NodeMap::new();
    mass.insert(tree.root_id().to_string(), Rational::one());
    for t in 0..tree.horizon() {
        for id in tree.atoms_at(t).expect("within horizon") {
            let children = tree.children_of(id).expect("known node");
            let parts: Vec<Rational> = children
                .iter()
                .map(|_| Rational::from_integer(rng.gen_range(1i64..=6).into()))
                .collect();
            let total: Rational = parts.iter().fold(Rational::zero(), |a, b| a + b);
            let parent_mass = mass[id].clone();
            for (child, part) in children.into_iter().zip(parts) {
                mass.insert(child.to_string(), &parent_mass * part / &total);
            }
        }
    }
    Measure::new(
        tree.leaves()
            .into_iter()
            .map(|l| (l.to_string(), mass[l].clone()))
            .collect(),
    )
}

/// The spread menu: zero is drawn often on purpose, so bands touch their
/// martingale at realistic rates (exactness at the boundary is where naive
/// arithmetic breaks, and these generators feed the tests that prove ours
/// does not).
fn spread_factor<R: Rng>(rng: &mut R) -> Rational {
    const MENU: [(i64, i64); 5] = [(0, 1), (1, 8), (1, 4), (3, 8), (1, 2)];
    let (n, d) = MENU[rng.gen_range(0..MENU.len())];
    ratio(n, d)
}

/// Exact martingale values per asset under a shared random kernel, used as
/// the spine of arbitrage-free quotes.
fn martingale_spine<R: Rng>(
    rng: &mut R,
    tree: &ScenarioTree,
    dim: usize,
) -> NodeMap<Vec<Rational>> {
    // Kernel weights per internal node (shared across assets — systems
    // must live under one measure).
    let mut values: NodeMap<Vec<Rational>> = NodeMap::new();
    let root_val: Vec<Rational> =
        (0..dim).map(|_| small_ratio(rng, 2, 20, 2)).collect();
    values.insert(tree.root_id().to_string(), root_val);
    for t in 0..tree.horizon() {
        for id in tree.atoms_at(t).expect("within horizon") {
            let children = tree.children_of(id).expect("known node");
            let k = children.len();
            let weights: Vec<Rational> = (0..k)
                .map(|_| Rational::from_integer(rng.gen_range(1i64..=6).into()))
                .collect();
            let wsum: Rational = weights.iter().fold(Rational::zero(), |a, b| a + b);
            let parent = values[id].clone();
            // Draw positive targets, then scale them so the kernel-weighted
            // average returns exactly to the parent value.
            let mut child_vals: Vec<Vec<Rational>> = vec![Vec::with_capacity(dim); k];
            for parent_v in &parent {
                let targets: Vec<Rational> =
                    (0..k).map(|_| small_ratio(rng, 1, 8, 2)).collect();
                let avg: Rational = targets
                    .iter()
                    .zip(&weights)
                    .fold(Rational::zero(), |a, (t, w)| a + t * w)
                    / &wsum;
                for (c, target) in targets.into_iter().enumerate() {
                    child_vals[c].push(target * parent_v / &avg);
                }
            }
            for (child, v) in children.into_iter().zip(child_vals) {
                values.insert(child.to_string(), v);
            }
        }
    }
    values
}

fn quotes_around_spine<R: Rng>(
    rng: &mut R,
    spine: &NodeMap<Vec<Rational>>,
    dim: usize,
) -> BidAskProcess {
    let one = Rational::one();
    let mut bid = NodeMap::new();
    let mut ask = NodeMap::new();
    for (id, vals) in spine {
        let mut b = Vec::with_capacity(dim);
        let mut a = Vec::with_capacity(dim);
        for v in vals {
            let down = spread_factor(rng);
            let up = spread_factor(rng);
            b.push(v * (&one - down));
            a.push(v * (&one + up));
        }
        bid.insert(id.clone(), b);
        ask.insert(id.clone(), a);
    }
    BidAskProcess::new(dim, bid, ask)
}

/// An arbitrage-free market: spreads opened around an exact martingale.
/// The spine lies inside every band, so a pinched price system exists by
/// construction and every detector answer other than "no arbitrage" is a
/// bug.
pub fn random_na_market<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
) -> (ScenarioTree, BidAskProcess) {
    let tree = random_tree(rng, config);
    let dim = rng.gen_range(1..=config.max_dim.max(1));
    let spine = martingale_spine(rng, &tree, dim);
    let prices = quotes_around_spine(rng, &spine, dim);
    (tree, prices)
}

/// Quotes with no structure beyond positivity and `bid ≤ ask`: positive
/// bids, nonnegative (often zero) increments to the ask, drawn per node
/// and asset. Arbitrage is frequent but not guaranteed.
pub fn random_wild_market<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
) -> (ScenarioTree, BidAskProcess) {
    let tree = random_tree(rng, config);
    let dim = rng.gen_range(1..=config.max_dim.max(1));
    let mut bid = NodeMap::new();
    let mut ask = NodeMap::new();
    for t in 0..=tree.horizon() {
        for id in tree.atoms_at(t).expect("within horizon") {
            let mut b = Vec::with_capacity(dim);
            let mut a = Vec::with_capacity(dim);
            for _ in 0..dim {
                let lo = small_ratio(rng, 1, 12, 2);
                let width = if rng.gen_bool(0.4) {
                    Rational::zero()
                } else {
                    small_ratio(rng, 0, 3, 2)
                };
                a.push(&lo + width);
                b.push(lo);
            }
            bid.insert(id.to_string(), b);
            ask.insert(id.to_string(), a);
        }
    }
    (tree, BidAskProcess::new(dim, bid, ask))
}

/// The default generator: structured (arbitrage-free) markets three times
/// out of five, wild ones otherwise.
pub fn random_market<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
) -> (ScenarioTree, BidAskProcess) {
    if rng.gen_range(0..5) < 3 {
        random_na_market(rng, config)
    } else {
        random_wild_market(rng, config)
    }
}

/// A frictionless market (`bid = ask` everywhere): half the time an exact
/// martingale (arbitrage-free), half the time an arbitrary positive
/// process (usually not).
pub fn random_frictionless_market<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
) -> (ScenarioTree, BidAskProcess) {
    let tree = random_tree(rng, config);
    let dim = rng.gen_range(1..=config.max_dim.max(1));
    let values: NodeMap<Vec<Rational>> = if rng.gen_bool(0.5) {
        martingale_spine(rng, &tree, dim)
    } else {
        let mut v = NodeMap::new();
        for t in 0..=tree.horizon() {
            for id in tree.atoms_at(t).expect("within horizon") {
                v.insert(
                    id.to_string(),
                    (0..dim).map(|_| small_ratio(rng, 1, 12, 2)).collect(),
                );
            }
        }
        v
    };
    let prices = BidAskProcess::new(dim, values.clone(), values);
    (tree, prices)
}

/// A one-period market with at least two branches, same quote mix as
/// [`random_market`].
pub fn random_one_step_market<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
) -> (ScenarioTree, BidAskProcess) {
    let one_step = GeneratorConfig {
        max_horizon: 1,
        max_branching: config.max_branching.max(2),
        max_dim: config.max_dim,
    };
    // Redraw until the root actually branches: a single-path one-period
    // market tests nothing.
    loop {
        let (tree, prices) = random_market(rng, &one_step);
        if tree.leaves().len() >= 2 {
            return (tree, prices);
        }
    }
}

/// Holdings drawn from a small grid (multiples of 1/2 in [−3, 3]) at every
/// decision node.
pub fn random_strategy<R: Rng>(rng: &mut R, tree: &ScenarioTree, dim: usize) -> Strategy {
    let mut strategy = Strategy::zero(tree, dim);
    for t in 0..tree.horizon() {
        for id in tree.atoms_at(t).expect("within horizon") {
            let h: Vec<Rational> = (0..dim).map(|_| ratio(rng.gen_range(-6i64..=6), 2)).collect();
            strategy.holdings.insert(id.to_string(), h);
        }
    }
    strategy
}
