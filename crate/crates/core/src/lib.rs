//! Exact no-arbitrage analysis for finite discrete-time markets with bid-ask
//! spreads.
//!
//! A market lives on a finite scenario tree: the nodes at time `t` are the
//! atoms of the information filtration, leaves carry strictly positive
//! reference probabilities, and every node quotes a bid vector `S̲_t` and an
//! ask vector `S̄_t` with `0 < S̲ ≤ S̄` (the money account is the numeraire,
//! normalized to 1). Trading strategies are predictable holdings; unwinding a
//! position pays the ask on purchases and receives the bid on sales, which
//! makes the terminal liquidation value
//!
//! ```text
//! x_T(H) = − Σ_t (ΔH_t)⁺ · S̄_{t−1} + Σ_t (ΔH_t)⁻ · S̲_{t−1}
//!          + (H_T)⁺ · S̲_T − (H_T)⁻ · S̄_T
//! ```
//!
//! superadditive rather than linear. The crate decides whether a market
//! admits arbitrage — a strategy with `x_T ≥ 0` on every path and `x_T > 0`
//! on some path — **exactly**, in big-rational arithmetic, and always
//! produces a checkable certificate:
//!
//! * an explicit witness strategy when arbitrage exists, or
//! * a strictly positive martingale-type measure (a bid-ask martingale
//!   measure) together with pinched supermartingale and submartingale price
//!   systems when it does not.
//!
//! # Modules
//!
//! * [`scenario_tree`] — trees, adapted bid/ask processes, measures, exact
//!   conditional expectations, market JSON ingestion.
//! * [`exact_lp`] — dense two-phase simplex over rationals with Bland's rule,
//!   returning exact optimality, unboundedness, and infeasibility
//!   certificates.
//! * [`portfolio`] — strategies, liquidation values, long/short
//!   decomposition, order netting, proportional-cost models.
//! * [`arbitrage`] — the arbitrage decision LP, a brute-force oracle, and
//!   one-step scans.
//! * [`pricing_systems`] — bid-ask martingale measures, consistent price
//!   systems, Snell envelopes, measure pasting, and the three-way
//!   equivalence check.
//! * [`crr`] — the binomial (Cox–Ross–Rubinstein) model with bid-ask
//!   spreads: tree generation, closed-form no-arbitrage conditions, and the
//!   exact admissible-probability interval.
//! * [`random`] — seeded market generators shared by the cross-validation
//!   suites and the CLI.
//!
//! No floating point is used anywhere: every verdict is an exact rational
//! statement, so the equivalence tests are meaningful rather than
//! tolerance-circular.
//!
//! # Example
//!
//! ```
//! use spreadbench_core::arbitrage::detect_arbitrage;
//! use spreadbench_core::rational::ratio;
//! use spreadbench_core::scenario_tree::{BidAskProcess, Node, ScenarioTree};
//! use std::collections::BTreeMap;
//!
//! // One step, one asset: buy at 10 today, both tomorrow's bids are 11.
//! let nodes = vec![
//!     Node::root("r"),
//!     Node::child("up", "r", 1),
//!     Node::child("dn", "r", 1),
//! ];
//! let mut probs = BTreeMap::new();
//! probs.insert("up".to_string(), ratio(1, 2));
//! probs.insert("dn".to_string(), ratio(1, 2));
//! let tree = ScenarioTree::new(1, nodes, probs).unwrap();
//!
//! let mut bid = BTreeMap::new();
//! let mut ask = BTreeMap::new();
//! bid.insert("r".to_string(), vec![ratio(10, 1)]);
//! ask.insert("r".to_string(), vec![ratio(10, 1)]);
//! for leaf in ["up", "dn"] {
//!     bid.insert(leaf.to_string(), vec![ratio(11, 1)]);
//!     ask.insert(leaf.to_string(), vec![ratio(12, 1)]);
//! }
//! let prices = BidAskProcess::new(1, bid, ask);
//!
//! let verdict = detect_arbitrage(&tree, &prices).unwrap();
//! assert!(verdict.has_arbitrage);
//! ```

pub mod arbitrage;
pub mod crr;
pub mod exact_lp;
pub mod portfolio;
pub mod pricing_systems;
pub mod random;
pub mod rational;
pub mod scenario_tree;

/// Exact arbitrary-precision rational number used for every quantity in the
/// crate: prices, probabilities, holdings, LP entries.
pub type Rational = num_rational::BigRational;

/// Map keyed by node id. All public per-node data uses ordered maps so that
/// iteration (and hence serialization and LP construction) is deterministic.
pub type NodeMap<T> = std::collections::BTreeMap<String, T>;

/// Crate-wide error type.
///
/// Report-style operations (`validate`, `verify_ebamm`,
/// `verify_priced_system`) return their findings as values; `Error` is
/// reserved for violated preconditions, malformed inputs, resource budgets,
/// and internal invariant breaches.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// A string could not be parsed as an exact rational.
    #[error("malformed rational: {0}")]
    MalformedRational(String),

    /// Market data is structurally incoherent (bad parent links, duplicate
    /// ids, malformed JSON shape, invalid numeraire, ...).
    #[error("invalid market: {0}")]
    InvalidMarket(String),

    /// A time index lies outside `[0, horizon]`.
    #[error("time {time} out of range (horizon {horizon})")]
    TimeOutOfRange { time: usize, horizon: usize },

    /// A node id is not present in the tree.
    #[error("unknown node: {0}")]
    UnknownNode(String),

    /// A conditioning node carries zero measure mass, so a conditional
    /// expectation given its atom is undefined (the measure is not
    /// equivalent to the reference measure).
    #[error("zero measure mass on the subtree of node {node}")]
    ZeroMassNode { node: String },

    /// A strategy does not define holdings at a node where they are needed.
    #[error("strategy defines no holdings at node {node}")]
    UndefinedHolding { node: String },

    /// Vector lengths disagree with the declared asset dimension.
    #[error("dimension mismatch at {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    /// A linear program is self-inconsistent (row lengths, bound counts).
    #[error("malformed linear program: {0}")]
    MalformedProgram(String),

    /// The simplex pivot budget was exhausted before termination.
    #[error("LP pivot budget of {budget} pivots exceeded")]
    PivotBudgetExceeded { budget: u64 },

    /// A brute-force enumeration would exceed its configured budget.
    #[error("instance too large: {required} candidate strategies exceed the budget of {budget}")]
    InstanceTooLarge { required: u128, budget: u128 },

    /// Binomial-model jump parameters make a denominator vanish.
    #[error("degenerate dynamics: {0}")]
    DegenerateDynamics(String),

    /// Binomial-model generation hit a node where the spread-consistency
    /// bound fails, so a child would quote bid > ask.
    #[error("spread constraint violated at node {node}: {detail}")]
    SpreadConstraintViolated { node: String, detail: String },

    /// A parameter lies outside its mathematical domain.
    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),

    /// A measure fails the bid-ask martingale inequalities where they are
    /// required to hold.
    #[error("measure violates the bid-ask martingale inequalities: {0}")]
    EbammViolation(String),

    /// A priced system fails verification where a valid one is required.
    #[error("invalid consistent price system: {0}")]
    InvalidCps(String),

    /// No strictly positive one-step kernel can extend the given systems
    /// backward past this node.
    #[error("cannot extend price systems backward past node {node}")]
    ExtensionInfeasible { node: String },

    /// Two independent computations of the same fact disagreed, or a
    /// certificate failed its own re-verification. Always a bug.
    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
