//! Binomial bid-ask dynamics: parameters, admissibility, tree generation.
//!
//! A market is seeded with a root band `[S̲_0, S̄_0]` and four per-step
//! return factors — `u̲, ū` for the up move and `d̲, d̄` for the down move.
//! The quotes evolve *crosswise*: a child's bid grows out of the parent's
//! ask and its ask out of the parent's bid,
//!
//! ```text
//! S̲(up) = (1 + u̲)·S̄(parent)      S̄(up) = (1 + ū)·S̲(parent)
//! S̲(dn) = (1 + d̲)·S̄(parent)      S̄(dn) = (1 + d̄)·S̲(parent)
//! ```
//!
//! so a buyer pays through the spread on the way in and a seller gives it
//! back on the way out. The spread ratio `ρ = S̄/S̲` *inverts* every step
//! (`ρ_child = K/ρ` with `K = (1+ū)/(1+u̲)` resp. `(1+d̄)/(1+d̲)`), which is
//! why [`generate_tree`] checks `S̲ ≤ S̄` at every node it creates rather
//! than once: parameters fine for one step can pinch the band shut deeper
//! down, and the offending node is reported exactly.
//!
//! [`ebamm_interval`] computes the band of admissible one-step up-weights
//!
//! ```text
//! q_lo = −d̄ / (ū − d̄)        q_hi = −d̲ / (u̲ − d̲)
//! ```
//!
//! A strictly positive one-step measure exists iff `[q_lo, q_hi] ∩ (0,1)`
//! is nonempty, which unfolds into the three plain-sight conditions of
//! [`na_conditions`]: the down move can lose (`d̲ < 0`), the up move can
//! win (`ū > 0`), and the crossed products order correctly (`d̲·ū ≤ d̄·u̲`).
//! The interval is a *one-step* object: on multi-step trees a constant `q`
//! inside it need not survive the stopped audit (the fixed-point equation
//! for a stationary weight can have only irrational roots), while
//! time-varying weights still certify no-arbitrage — so multi-step markets
//! should be judged with the generic machinery on the generated tree. An
//! *empty* interval, by contrast, dooms every horizon: the one-step
//! submarket at the root is itself an arbitrage, and closing the position
//! at time 1 carries its value to the end.

use crate::rational::format_rational;
use crate::scenario_tree::{BidAskProcess, Node, ScenarioTree};
use crate::{Error, NodeMap, Rational, Result};
use num_traits::{One, Signed};
use std::collections::BTreeMap;

/// Parameters of a binomial bid-ask market.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrrParams {
    /// Root bid `S̲_0 > 0`.
    pub s_bid0: Rational,
    /// Root ask `S̄_0 ≥ S̲_0`.
    pub s_ask0: Rational,
    /// Up return on the bid side, `u̲`.
    pub u_bid: Rational,
    /// Up return on the ask side, `ū ≥ u̲`.
    pub u_ask: Rational,
    /// Down return on the bid side, `d̲ < u̲`.
    pub d_bid: Rational,
    /// Down return on the ask side, `d̄ ≥ d̲`, `d̄ < ū`.
    pub d_ask: Rational,
    /// Physical up probability, `0 < p < 1` (prices never depend on it).
    pub p: Rational,
    /// Number of periods, at least 1.
    pub steps: usize,
}

impl CrrParams {
    /// Checks the parameters describe a meaningful market.
    ///
    /// Price positivity needs every factor `1 + x` positive and a positive
    /// root bid; the band needs `S̲_0 ≤ S̄_0`, `u̲ ≤ ū`, `d̲ ≤ d̄`; and the
    /// up move must dominate the down move strictly on both sides
    /// (`u̲ > d̲`, `ū > d̄`), else the dynamics are degenerate and the
    /// admissibility formulas divide by zero.
    pub fn validate(&self) -> Result<()> {
        if !self.s_bid0.is_positive() {
            return Err(Error::ParamOutOfRange(format!(
                "root bid must be positive, got {}",
                format_rational(&self.s_bid0)
            )));
        }
        if self.s_ask0 < self.s_bid0 {
            return Err(Error::ParamOutOfRange(format!(
                "root ask {} is below the root bid {}",
                format_rational(&self.s_ask0),
                format_rational(&self.s_bid0)
            )));
        }
        for (name, x) in [
            ("u_bid", &self.u_bid),
            ("u_ask", &self.u_ask),
            ("d_bid", &self.d_bid),
            ("d_ask", &self.d_ask),
        ] {
            if *x <= -Rational::one() {
                return Err(Error::ParamOutOfRange(format!(
                    "factor 1 + {name} must stay positive, got {name} = {}",
                    format_rational(x)
                )));
            }
        }
        if self.u_bid > self.u_ask {
            return Err(Error::ParamOutOfRange(
                "up returns must satisfy u_bid ≤ u_ask".into(),
            ));
        }
        if self.d_bid > self.d_ask {
            return Err(Error::ParamOutOfRange(
                "down returns must satisfy d_bid ≤ d_ask".into(),
            ));
        }
        if self.u_bid <= self.d_bid || self.u_ask <= self.d_ask {
            return Err(Error::DegenerateDynamics(
                "the up move must strictly dominate the down move on both sides \
                 (u_bid > d_bid and u_ask > d_ask)"
                    .into(),
            ));
        }
        if !self.p.is_positive() || self.p >= Rational::one() {
            return Err(Error::ParamOutOfRange(format!(
                "up probability must lie strictly between 0 and 1, got {}",
                format_rational(&self.p)
            )));
        }
        if self.steps == 0 {
            return Err(Error::ParamOutOfRange("need at least one period".into()));
        }
        Ok(())
    }
}

/// The band of one-step up-weights compatible with the quotes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EbammInterval {
    /// Lower endpoint `−d̄ / (ū − d̄)` (may be negative).
    pub q_lo: Rational,
    /// Upper endpoint `−d̲ / (u̲ − d̲)` (may exceed 1).
    pub q_hi: Rational,
    /// Whether `[q_lo, q_hi] ∩ (0, 1)` is nonempty — equivalently, whether
    /// a strictly positive one-step measure exists.
    pub admissible: bool,
}

/// Computes the admissible one-step up-weight interval.
///
/// A weight `q` supports the one-step market iff
/// `E_q[S̲_1] ≤ S̄_0` and `E_q[S̄_1] ≥ S̲_0`; with the crosswise dynamics
/// the root prices cancel out and the two inequalities read
/// `q ≤ q_hi` and `q ≥ q_lo` regardless of the quotes.
pub fn ebamm_interval(params: &CrrParams) -> Result<EbammInterval> {
    params.validate()?;
    let q_lo = -&params.d_ask / (&params.u_ask - &params.d_ask);
    let q_hi = -&params.d_bid / (&params.u_bid - &params.d_bid);
    let admissible = q_lo <= q_hi && q_hi.is_positive() && q_lo < Rational::one();
    Ok(EbammInterval { q_lo, q_hi, admissible })
}

/// The three basic no-arbitrage conditions on the return factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaConditions {
    /// The down move can lose money: `d̲ < 0`.
    pub downside: bool,
    /// The up move can make money: `ū > 0`.
    pub upside: bool,
    /// The crossed products order correctly: `d̲·ū ≤ d̄·u̲`.
    pub cross: bool,
    /// All three at once — equivalent to [`EbammInterval::admissible`].
    pub holds: bool,
    /// The left crossed product `d̲·ū`.
    pub cross_lhs: Rational,
    /// The right crossed product `d̄·u̲`.
    pub cross_rhs: Rational,
}

/// Evaluates the factor-level no-arbitrage conditions.
///
/// These are the interval conditions unfolded: `q_hi > 0` is `d̲ < 0`,
/// `q_lo < 1` is `ū > 0`, and `q_lo ≤ q_hi` clears denominators into
/// `d̲·ū ≤ d̄·u̲` (both denominators are positive for valid parameters).
pub fn na_conditions(params: &CrrParams) -> Result<NaConditions> {
    params.validate()?;
    let downside = params.d_bid.is_negative();
    let upside = params.u_ask.is_positive();
    let cross_lhs = &params.d_bid * &params.u_ask;
    let cross_rhs = &params.d_ask * &params.u_bid;
    let cross = cross_lhs <= cross_rhs;
    Ok(NaConditions {
        downside,
        upside,
        cross,
        holds: downside && upside && cross,
        cross_lhs,
        cross_rhs,
    })
}

/// Generates the binomial market: ids grow from the root `"r"` by appending
/// `u`/`d`, quotes follow the crosswise dynamics, and each leaf carries the
/// physical probability `p^{#u}·(1−p)^{#d}`.
///
/// Errors with [`Error::SpreadConstraintViolated`] naming the first node
/// (in id order per level) whose band would close — bids passing asks deep
/// in the tree is the characteristic failure of crosswise dynamics.
pub fn generate_tree(params: &CrrParams) -> Result<(ScenarioTree, BidAskProcess)> {
    params.validate()?;
    let mut nodes = vec![Node::root("r")];
    let mut bid: NodeMap<Vec<Rational>> = NodeMap::new();
    let mut ask: NodeMap<Vec<Rational>> = NodeMap::new();
    bid.insert("r".into(), vec![params.s_bid0.clone()]);
    ask.insert("r".into(), vec![params.s_ask0.clone()]);

    let one = Rational::one();
    let fu = (&one + &params.u_bid, &one + &params.u_ask);
    let fd = (&one + &params.d_bid, &one + &params.d_ask);

    let mut level: Vec<String> = vec!["r".into()];
    for t in 1..=params.steps {
        let mut next = Vec::with_capacity(level.len() * 2);
        for parent in &level {
            let pb = bid[parent][0].clone();
            let pa = ask[parent][0].clone();
            for (tag, (f_bid, f_ask)) in [("u", &fu), ("d", &fd)] {
                let id = format!("{parent}{tag}");
                let cb = f_bid * &pa;
                let ca = f_ask * &pb;
                if cb > ca {
                    return Err(Error::SpreadConstraintViolated {
                        node: id,
                        detail: format!(
                            "bid {} exceeds ask {} after {} move{}",
                            format_rational(&cb),
                            format_rational(&ca),
                            if tag == "u" { "an up" } else { "a down" },
                            if t > 1 { " (the spread ratio inverts each step)" } else { "" }
                        ),
                    });
                }
                nodes.push(Node::child(&id, parent, t));
                bid.insert(id.clone(), vec![cb]);
                ask.insert(id.clone(), vec![ca]);
                next.push(id);
            }
        }
        level = next;
    }

    let q = &one - &params.p;
    let mut leaf_probs = BTreeMap::new();
    for leaf in &level {
        let ups = leaf.chars().filter(|&c| c == 'u').count();
        let downs = params.steps - ups;
        let mut w = Rational::one();
        for _ in 0..ups {
            w *= &params.p;
        }
        for _ in 0..downs {
            w *= &q;
        }
        leaf_probs.insert(leaf.clone(), w);
    }

    let tree = ScenarioTree::new(params.steps, nodes, leaf_probs)?;
    Ok((tree, BidAskProcess::new(1, bid, ask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing_systems::theorem_equivalence;
    use crate::rational::{rat, ratio};

    fn params(
        u_bid: Rational,
        u_ask: Rational,
        d_bid: Rational,
        d_ask: Rational,
        steps: usize,
    ) -> CrrParams {
        CrrParams {
            s_bid0: rat(4),
            s_ask0: rat(4),
            u_bid,
            u_ask,
            d_bid,
            d_ask,
            p: ratio(1, 2),
            steps,
        }
    }

    fn spread_example() -> CrrParams {
        // u̲ = 1/2, ū = 3, d̲ = −3/4, d̄ = −1/4.
        params(ratio(1, 2), rat(3), ratio(-3, 4), ratio(-1, 4), 1)
    }

    fn touching_example() -> CrrParams {
        // u̲ = 0, ū = 3, d̲ = −3/4, d̄ = 0.
        params(rat(0), rat(3), ratio(-3, 4), rat(0), 1)
    }

    #[test]
    fn spread_example_interval_is_one_thirteenth_to_three_fifths() {
        let interval = ebamm_interval(&spread_example()).unwrap();
        assert_eq!(interval.q_lo, ratio(1, 13));
        assert_eq!(interval.q_hi, ratio(3, 5));
        assert!(interval.admissible);
    }

    #[test]
    fn touching_example_satisfies_all_three_conditions() {
        let report = na_conditions(&touching_example()).unwrap();
        assert!(report.downside, "d̲ = −3/4 < 0");
        assert!(report.upside, "ū = 3 > 0");
        assert_eq!(report.cross_lhs, ratio(-9, 4));
        assert_eq!(report.cross_rhs, rat(0));
        assert!(report.cross, "−9/4 ≤ 0");
        assert!(report.holds);
        let interval = ebamm_interval(&touching_example()).unwrap();
        assert_eq!((interval.q_lo, interval.q_hi), (rat(0), rat(1)));
        assert!(interval.admissible);
    }

    #[test]
    fn generated_single_step_matches_the_crosswise_quotes() {
        let (tree, prices) = generate_tree(&spread_example()).unwrap();
        assert_eq!(tree.horizon(), 1);
        assert_eq!(prices.bid_at("r").unwrap(), &[rat(4)]);
        assert_eq!(prices.bid_at("ru").unwrap(), &[rat(6)], "(1 + 1/2)·4");
        assert_eq!(prices.ask_at("ru").unwrap(), &[rat(16)], "(1 + 3)·4");
        assert_eq!(prices.bid_at("rd").unwrap(), &[rat(1)]);
        assert_eq!(prices.ask_at("rd").unwrap(), &[rat(3)]);
        assert_eq!(tree.leaf_probs()["ru"], ratio(1, 2));
    }

    #[test]
    fn deep_spread_inversion_is_reported_on_the_exact_node() {
        // The same parameters cannot run two steps: under the down node
        // (1, 3) the up child would quote bid (3/2)·3 = 9/2 above ask 4·1.
        let mut p = spread_example();
        p.steps = 2;
        let err = generate_tree(&p).unwrap_err();
        match err {
            Error::SpreadConstraintViolated { node, detail } => {
                assert_eq!(node, "rdu");
                assert!(detail.contains("9/2"), "detail names the quotes: {detail}");
            }
            other => panic!("expected a spread violation, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_and_out_of_range_parameters_are_rejected() {
        let mut p = spread_example();
        p.d_bid = p.u_bid.clone();
        p.d_ask = p.u_ask.clone();
        assert!(matches!(p.validate(), Err(Error::DegenerateDynamics(_))));

        let mut p = spread_example();
        p.p = rat(1);
        assert!(matches!(p.validate(), Err(Error::ParamOutOfRange(_))));

        let mut p = spread_example();
        p.d_bid = rat(-2);
        assert!(matches!(p.validate(), Err(Error::ParamOutOfRange(_))));

        let mut p = spread_example();
        p.s_ask0 = rat(3);
        assert!(matches!(p.validate(), Err(Error::ParamOutOfRange(_))));
    }

    #[test]
    fn conditions_and_interval_agree_across_a_parameter_sweep() {
        let candidates = [
            ratio(-3, 4),
            ratio(-1, 4),
            ratio(-1, 10),
            rat(0),
            ratio(1, 10),
            ratio(1, 2),
            rat(3),
        ];
        let mut checked = 0;
        for u_bid in &candidates {
            for u_ask in &candidates {
                for d_bid in &candidates {
                    for d_ask in &candidates {
                        let p = params(u_bid.clone(), u_ask.clone(), d_bid.clone(), d_ask.clone(), 1);
                        if p.validate().is_err() {
                            continue;
                        }
                        let interval = ebamm_interval(&p).unwrap();
                        let conditions = na_conditions(&p).unwrap();
                        assert_eq!(
                            interval.admissible, conditions.holds,
                            "interval and factor conditions disagree at \
                             u̲={u_bid} ū={u_ask} d̲={d_bid} d̄={d_ask}"
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked >= 50, "sweep too thin: {checked} valid combinations");
    }

    #[test]
    fn single_step_admissibility_matches_the_generic_detector() {
        let cases = [
            spread_example(),
            touching_example(),
            // Pure drift upward: both moves gain on the bid side.
            params(ratio(1, 4), ratio(1, 2), ratio(1, 10), ratio(1, 5), 1),
            // Drift downward: both moves lose on the ask side.
            params(ratio(-1, 10), ratio(-1, 20), ratio(-1, 2), ratio(-1, 4), 1),
        ];
        let mut saw_arbitrage = false;
        for p in &cases {
            let interval = ebamm_interval(p).unwrap();
            let (tree, prices) = generate_tree(p).unwrap();
            let report = theorem_equivalence(&tree, &prices).unwrap();
            assert!(report.agree);
            assert_eq!(
                report.no_arbitrage, interval.admissible,
                "one-step admissibility must coincide with the detector"
            );
            saw_arbitrage |= !report.no_arbitrage;
        }
        assert!(saw_arbitrage, "the drift cases must actually produce arbitrage");
    }

    #[test]
    fn multi_step_generation_keeps_the_equivalence() {
        // K_u = K_d = 2 keeps the spread ratio alternating 1 ↔ 2 forever.
        let p = CrrParams {
            s_bid0: rat(4),
            s_ask0: rat(4),
            u_bid: rat(0),
            u_ask: rat(1),
            d_bid: ratio(-1, 2),
            d_ask: rat(0),
            p: ratio(1, 3),
            steps: 3,
        };
        let (tree, prices) = generate_tree(&p).unwrap();
        assert_eq!(tree.leaves().len(), 8);
        assert_eq!(tree.leaf_probs()["ruud"], ratio(2, 27), "(1/3)²·(2/3)");
        let report = theorem_equivalence(&tree, &prices).unwrap();
        assert!(report.agree);
        assert!(
            report.no_arbitrage,
            "time-varying weights certify the tree even though no constant \
             rational weight survives the stopped audit"
        );
    }

    #[test]
    fn physical_probability_never_moves_the_quotes() {
        let mut a = spread_example();
        let mut b = spread_example();
        a.p = ratio(1, 2);
        b.p = ratio(9, 10);
        assert_eq!(ebamm_interval(&a).unwrap(), ebamm_interval(&b).unwrap());
        let (_, prices_a) = generate_tree(&a).unwrap();
        let (tree_b, prices_b) = generate_tree(&b).unwrap();
        assert_eq!(prices_a.bid_at("ru").unwrap(), prices_b.bid_at("ru").unwrap());
        assert_eq!(prices_a.ask_at("rd").unwrap(), prices_b.ask_at("rd").unwrap());
        assert_eq!(tree_b.leaf_probs()["ru"], ratio(9, 10));
    }
}
