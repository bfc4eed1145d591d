//! Property suite for the arbitrage detector and its oracles.
//!
//! The detector is cross-examined four ways: a second, normalized LP
//! encoding; an LP-free grid enumerator; witness replay through the exact
//! value process; and hand-built fixtures where one-step safety and global
//! safety disagree. Scaling invariance and the throwaway-cone law complete
//! the picture.

use num_traits::{Signed, Zero};
use proptest::prelude::*;
use rand::Rng;
use spreadbench_core::arbitrage::{
    brute_force_arbitrage, detect_arbitrage, detect_arbitrage_normalized, one_step_scan,
};
use spreadbench_core::portfolio::{
    net_trade_plan, strategy_deltas, trade_plan_value, trades_to_strategy, value_process,
    TradePlan,
};
use spreadbench_core::random::{
    random_market, random_na_market, random_strategy, random_wild_market, seeded_rng,
    GeneratorConfig,
};
use spreadbench_core::rational::{rat, ratio};
use spreadbench_core::scenario_tree::{BidAskProcess, Node, ScenarioTree};
use spreadbench_core::{NodeMap, Rational};
use std::collections::BTreeMap;
use std::collections::BTreeSet;

// ───────────────────────── helpers ─────────────────────────

/// Asserts the verdict's witness genuinely arbitrages the market: exact
/// terminal values from the value process, all nonnegative, some positive,
/// and matching the values the verdict reports.
fn assert_witness_verifies(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    verdict: &spreadbench_core::arbitrage::ArbitrageVerdict,
) {
    let witness = verdict.witness.as_ref().expect("witness accompanies arbitrage");
    let values = value_process(tree, prices, witness, tree.horizon()).unwrap();
    assert!(
        values.values().all(|v| !v.is_negative()),
        "witness goes negative somewhere"
    );
    assert!(
        values.values().any(|v| v.is_positive()),
        "witness never strictly profits"
    );
    assert_eq!(
        Some(&values),
        verdict.witness_values.as_ref(),
        "reported witness values are not the recomputed ones"
    );
}

/// Rescales every quote by one positive rational.
fn scale_prices(
    tree: &ScenarioTree,
    prices: &BidAskProcess,
    c: &Rational,
) -> BidAskProcess {
    let mut bid = NodeMap::new();
    let mut ask = NodeMap::new();
    for t in 0..=tree.horizon() {
        for id in tree.atoms_at(t).unwrap() {
            bid.insert(id.to_string(), prices.bid_at(id).unwrap().iter().map(|x| x * c).collect());
            ask.insert(id.to_string(), prices.ask_at(id).unwrap().iter().map(|x| x * c).collect());
        }
    }
    BidAskProcess::new(prices.dim, bid, ask)
}

/// The two-period market whose one-step slices are all arbitrage-free while
/// a buy-then-liquidate-on-the-dip strategy still wins globally.
fn stepwise_safe_globally_arbitrageable() -> (ScenarioTree, BidAskProcess) {
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

// ───────────────────────── detector cross-checks ─────────────────────────

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn both_lp_encodings_return_the_same_verdict(seed in 0u64..1_000_000) {
        let mut rng = seeded_rng(seed);
        let (tree, prices) = random_market(&mut rng, &GeneratorConfig::default());
        let unbounded = detect_arbitrage(&tree, &prices).unwrap();
        let normalized = detect_arbitrage_normalized(&tree, &prices).unwrap();
        prop_assert_eq!(unbounded.has_arbitrage, normalized.has_arbitrage);
        if unbounded.has_arbitrage {
            assert_witness_verifies(&tree, &prices, &unbounded);
            assert_witness_verifies(&tree, &prices, &normalized);
        }
    }

    #[test]
    fn martingale_built_markets_are_always_clean(seed in 0u64..1_000_000) {
        let mut rng = seeded_rng(seed);
        let (tree, prices) = random_na_market(&mut rng, &GeneratorConfig::default());
        let verdict = detect_arbitrage(&tree, &prices).unwrap();
        prop_assert!(!verdict.has_arbitrage, "spine-built market flagged as arbitrageable");
        prop_assert!(verdict.witness.is_none());
    }

    #[test]
    fn verdicts_are_invariant_under_positive_rescaling(seed in 0u64..1_000_000, cn in 1i64..=12) {
        let mut rng = seeded_rng(seed);
        let (tree, prices) = random_market(&mut rng, &GeneratorConfig::default());
        let c = ratio(cn, 5);
        let scaled = scale_prices(&tree, &prices, &c);
        let before = detect_arbitrage(&tree, &prices).unwrap();
        let after = detect_arbitrage(&tree, &scaled).unwrap();
        prop_assert_eq!(before.has_arbitrage, after.has_arbitrage);
    }

    #[test]
    fn one_step_arbitrage_always_lifts_to_a_global_one(seed in 0u64..1_000_000) {
        let mut rng = seeded_rng(seed);
        let (tree, prices) = random_wild_market(&mut rng, &GeneratorConfig::default());
        let scan = one_step_scan(&tree, &prices).unwrap();
        let any_step = scan.iter().any(|(_, v)| v.has_arbitrage);
        if any_step {
            let global = detect_arbitrage(&tree, &prices).unwrap();
            prop_assert!(global.has_arbitrage, "a one-step arbitrage vanished globally");
            for (_, verdict) in scan.iter().filter(|(_, v)| v.has_arbitrage) {
                // The scan's lifted witness must survive replay on the full
                // market, not merely on its submarket.
                assert_witness_verifies(&tree, &prices, verdict);
            }
        }
    }
}

// ───────────────────────── grid oracle ─────────────────────────

#[test]
fn grid_oracle_confirms_lp_witnesses_and_clears_na_markets() {
    let config = GeneratorConfig { max_horizon: 2, max_branching: 2, max_dim: 1 };
    let mut confirmed = 0;
    let mut seed = 0u64;
    while confirmed < 25 {
        seed += 1;
        assert!(seed < 2_000, "not enough arbitrageable draws");
        let mut rng = seeded_rng(700_000 + seed);
        let (tree, prices) = random_wild_market(&mut rng, &config);
        let verdict = detect_arbitrage(&tree, &prices).unwrap();
        if !verdict.has_arbitrage {
            continue;
        }
        // Grid = the witness's own order sizes plus zero, so the oracle's
        // search space surely contains the witness.
        let witness = verdict.witness.as_ref().unwrap();
        let deltas = strategy_deltas(&tree, prices.dim, witness).unwrap();
        let mut grid: BTreeSet<Rational> = deltas.values().flatten().cloned().collect();
        grid.insert(Rational::zero());
        let grid: Vec<Rational> = grid.into_iter().collect();
        let oracle = brute_force_arbitrage(&tree, &prices, &grid).unwrap();
        assert!(oracle.has_arbitrage, "grid oracle missed a witness it was given");
        assert_witness_verifies(&tree, &prices, &oracle);
        confirmed += 1;
    }

    // And NA markets stay clean on a fixed sign-spanning grid.
    let grid = vec![rat(-1), ratio(-1, 2), rat(0), ratio(1, 2), rat(1)];
    for seed in 0..25u64 {
        let mut rng = seeded_rng(710_000 + seed);
        let (tree, prices) = random_na_market(&mut rng, &config);
        let oracle = brute_force_arbitrage(&tree, &prices, &grid).unwrap();
        assert!(!oracle.has_arbitrage, "grid oracle hallucinated arbitrage (seed {seed})");
    }
}

// ───────────────────────── netting preserves witnesses ─────────────────────────

#[test]
fn netting_away_injected_churn_recovers_a_valid_witness() {
    let config = GeneratorConfig::default();
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 20 {
        seed += 1;
        assert!(seed < 2_000, "not enough arbitrageable draws");
        let mut rng = seeded_rng(720_000 + seed);
        let (tree, prices) = random_wild_market(&mut rng, &config);
        let verdict = detect_arbitrage(&tree, &prices).unwrap();
        if !verdict.has_arbitrage {
            continue;
        }
        let witness = verdict.witness.as_ref().unwrap();
        let witness_values = verdict.witness_values.as_ref().unwrap();

        // Express the witness as gross orders, then pollute it with balanced
        // buy+sell churn at every node — same holdings, strictly more
        // spread paid wherever the market has one.
        let deltas = strategy_deltas(&tree, prices.dim, witness).unwrap();
        let mut buys = NodeMap::new();
        let mut sells = NodeMap::new();
        for (id, dv) in &deltas {
            let churn: Vec<Rational> =
                (0..prices.dim).map(|_| ratio(rng.gen_range(0..=2), 2)).collect();
            buys.insert(
                id.clone(),
                dv.iter().zip(&churn).map(|(d, c)| if d.is_positive() { d + c } else { c.clone() }).collect(),
            );
            sells.insert(
                id.clone(),
                dv.iter().zip(&churn).map(|(d, c)| if d.is_negative() { -d + c } else { c.clone() }).collect(),
            );
        }
        let polluted = TradePlan { buys, sells };
        let polluted_value = trade_plan_value(&tree, &prices, &polluted, tree.horizon()).unwrap();

        // Netting strips the churn and restores the witness's exact values.
        let netted = net_trade_plan(&polluted);
        let netted_value = trade_plan_value(&tree, &prices, &netted, tree.horizon()).unwrap();
        for (leaf, v) in &netted_value {
            assert!(*v >= polluted_value[leaf], "netting lost value at {leaf}");
            assert_eq!(v, &witness_values[leaf], "netted plan diverges from the witness at {leaf}");
        }

        // Folding the netted plan back into holdings reproduces the witness.
        let recovered = trades_to_strategy(&tree, prices.dim, &netted).unwrap();
        let recovered_values =
            value_process(&tree, &prices, &recovered, tree.horizon()).unwrap();
        assert!(recovered_values.values().all(|v| !v.is_negative()));
        assert!(recovered_values.values().any(|v| v.is_positive()));
        checked += 1;
    }
}

// ───────────────────────── throwaway cone ─────────────────────────

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn discarding_wealth_never_manufactures_arbitrage(seed in 0u64..1_000_000) {
        // If x_T(H) − r dominates zero for some throwaway r ≥ 0, then x_T(H)
        // already did: the (strategy, throwaway) search space flags exactly
        // the markets the strategy-only search flags.
        let mut rng = seeded_rng(seed);
        let (tree, prices) = random_market(&mut rng, &GeneratorConfig::default());
        let strategy = random_strategy(&mut rng, &tree, prices.dim);
        let values = value_process(&tree, &prices, &strategy, tree.horizon()).unwrap();
        let throwaway: NodeMap<Rational> = tree
            .leaves()
            .into_iter()
            .map(|leaf| (leaf.to_string(), ratio(rng.gen_range(0..=4), 2)))
            .collect();
        let reduced: NodeMap<Rational> =
            values.iter().map(|(k, v)| (k.clone(), v - &throwaway[k])).collect();
        let reduced_qualifies = reduced.values().all(|v| !v.is_negative())
            && reduced.values().any(|v| v.is_positive());
        if reduced_qualifies {
            prop_assert!(values.values().all(|v| !v.is_negative()));
            prop_assert!(values.values().any(|v| v.is_positive()));
        }
    }
}

// ───────────────────────── stepwise-vs-global fixture ─────────────────────────

#[test]
fn clean_one_step_scans_do_not_certify_global_safety() {
    let (tree, prices) = stepwise_safe_globally_arbitrageable();
    let scan = one_step_scan(&tree, &prices).unwrap();
    assert!(
        scan.iter().all(|(_, v)| !v.has_arbitrage),
        "every single period of this fixture is safe on its own"
    );
    let global = detect_arbitrage(&tree, &prices).unwrap();
    assert!(
        global.has_arbitrage,
        "buying at 10 and liquidating at 10½+ on every branch is free money"
    );
    assert_witness_verifies(&tree, &prices, &global);
}
