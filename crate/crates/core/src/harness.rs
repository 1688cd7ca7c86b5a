//! Executable security games and the reductions that connect forging or
//! cloning banknotes back to them.
//!
//! Three layers live here. Game instances package the public labels and a
//! referee-held witness for the discrete-log and Diffie-Hellman style games
//! over a group action, including the twisted variants and the doubling
//! distinguisher. Query-budgeted oracles meter the single coherent query
//! those games grant. On top of both sit the reduction drivers: given a
//! cloning strategy they build the wrapped action a reduction would present
//! to the adversary, run the verify-transform-swap circuit, and report exact
//! acceptance probabilities for the real and random branches side by side.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{member_basis, ActionModel, GgamAction, WrappedAction};
use crate::error::{Error, Result};
use crate::group::{GroupElement, GroupSpec};
use crate::lightning::{complementary_pair, mint, note_state, verify_prob, Banknote};
use crate::statevec::{Basis, FourierDirection, JointState, Label, StateVector};

/// Largest group order the exhaustive solvers and checkers will sweep.
pub const BRUTE_FORCE_LIMIT: u64 = 1 << 16;

/// Extra label bits beyond the packed base labels when a reduction wraps an
/// action, so fresh wrapped labels stay collision-free.
pub const WRAP_EXTRA_BITS: usize = 16;

fn wrapped_label_bits(base: &dyn ActionModel, arity: usize) -> usize {
    arity * base.label_bits() + WRAP_EXTRA_BITS
}

fn act_total(model: &dyn ActionModel, g: &GroupElement, y: &Label) -> Result<Label> {
    model
        .act(g, y)?
        .ok_or_else(|| Error::InvalidElement(format!("{y} is outside the action's domain")))
}

fn twist_total(model: &dyn ActionModel, y: &Label) -> Result<Label> {
    model
        .twist(y)?
        .ok_or_else(|| Error::InvalidElement(format!("{y} is outside the action's domain")))
}

/// Blank response label: the all-zero string, the identity of xor.
fn blank_label(width: usize) -> Label {
    Label::new(vec![0; width])
}

/// Overlap |<a|b>|^2 between states that may live on different bases; both
/// are re-expressed over the union basis first.
pub fn cross_fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    if a.basis() == b.basis() {
        return a.fidelity(b);
    }
    let union = a.basis().union(b.basis())?;
    a.align_to(&union)?.fidelity(&b.align_to(&union)?)
}

fn swap_accept(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok((1.0 + cross_fidelity(a, b)?) / 2.0)
}

/// Which security game an instance belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameKind {
    Dlog,
    Cdh,
    Ddh,
    DlogTwist,
    CdhTwist,
    DdhTwist,
    D2x,
    #[serde(rename = "dlog-1mincdh")]
    DlogOneMinCdh,
}

impl GameKind {
    /// Games whose challenge hides a mode bit rather than a search target.
    pub fn is_decisional(self) -> bool {
        matches!(self, GameKind::Ddh | GameKind::DdhTwist | GameKind::D2x)
    }

    /// Games that publish twisted companions and need a twist-capable model.
    pub fn needs_twist(self) -> bool {
        matches!(
            self,
            GameKind::DlogTwist | GameKind::CdhTwist | GameKind::DdhTwist
        )
    }
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GameKind::Dlog => "dlog",
            GameKind::Cdh => "cdh",
            GameKind::Ddh => "ddh",
            GameKind::DlogTwist => "dlog-twist",
            GameKind::CdhTwist => "cdh-twist",
            GameKind::DdhTwist => "ddh-twist",
            GameKind::D2x => "d2x",
            GameKind::DlogOneMinCdh => "dlog-1mincdh",
        };
        f.write_str(s)
    }
}

/// One sampled challenge: public labels in protocol order plus the witness
/// the referee keeps to itself. Serialization covers the public half only.
#[derive(Clone, Debug)]
pub struct GameInstance {
    pub kind: GameKind,
    /// Public labels, starting with the action's start point.
    pub publics: Vec<Label>,
    witness: Vec<GroupElement>,
    mode_real: Option<bool>,
}

impl GameInstance {
    /// Referee-side view of the hidden exponents. Winning strategies must
    /// not read this; solvers and oracles built by the referee may.
    pub fn witness(&self) -> &[GroupElement] {
        &self.witness
    }

    /// Hidden mode bit of a decisional instance.
    pub fn mode_real(&self) -> Option<bool> {
        self.mode_real
    }

    /// Public half of the instance for reports and transcripts.
    pub fn publics_hex(&self) -> Vec<String> {
        self.publics.iter().map(|l| l.to_string()).collect()
    }
}

fn sample_nonzero_avoiding<R: Rng>(
    spec: &GroupSpec,
    avoid: &GroupElement,
    rng: &mut R,
) -> Result<GroupElement> {
    if spec.order() < 2 {
        return Err(Error::ParamInvalid(
            "decisional games need a group with at least two elements".into(),
        ));
    }
    // Rejection sampling keeps the random branch exactly disjoint from the
    // real one, so exact-probability runs separate the modes cleanly.
    loop {
        let c = spec.sample_uniform(rng);
        if &c != avoid {
            return Ok(c);
        }
    }
}

fn sample_decisional_mode<R: Rng>(forced: Option<bool>, rng: &mut R) -> bool {
    forced.unwrap_or_else(|| rng.gen::<bool>())
}

fn sample_game_inner<R: Rng>(
    kind: GameKind,
    model: &dyn ActionModel,
    forced_mode: Option<bool>,
    rng: &mut R,
) -> Result<GameInstance> {
    if kind.needs_twist() && !model.supports_twist() {
        return Err(Error::Unsupported(
            "twisted game variants need a twist-capable action",
        ));
    }
    let spec = model.group();
    let x = model.start();
    let mut publics = vec![x.clone()];
    let mut witness = Vec::new();
    let mut mode_real = None;

    match kind {
        GameKind::Dlog | GameKind::DlogOneMinCdh => {
            let g = spec.sample_uniform(rng);
            publics.push(act_total(model, &g, &x)?);
            witness.push(g);
        }
        GameKind::DlogTwist => {
            let g = spec.sample_uniform(rng);
            let gx = act_total(model, &g, &x)?;
            let neg = twist_total(model, &gx)?;
            publics.push(gx);
            publics.push(neg);
            witness.push(g);
        }
        GameKind::Cdh => {
            let a = spec.sample_uniform(rng);
            let b = spec.sample_uniform(rng);
            publics.push(act_total(model, &a, &x)?);
            publics.push(act_total(model, &b, &x)?);
            witness.push(a);
            witness.push(b);
        }
        GameKind::CdhTwist => {
            let a = spec.sample_uniform(rng);
            let b = spec.sample_uniform(rng);
            let ax = act_total(model, &a, &x)?;
            let bx = act_total(model, &b, &x)?;
            publics.push(ax.clone());
            publics.push(bx.clone());
            publics.push(twist_total(model, &ax)?);
            publics.push(twist_total(model, &bx)?);
            witness.push(a);
            witness.push(b);
        }
        GameKind::Ddh | GameKind::DdhTwist => {
            let a = spec.sample_uniform(rng);
            let b = spec.sample_uniform(rng);
            let sum = a.add(&b)?;
            let real = sample_decisional_mode(forced_mode, rng);
            let c = if real {
                sum.clone()
            } else {
                sample_nonzero_avoiding(&spec, &sum, rng)?
            };
            let ax = act_total(model, &a, &x)?;
            let bx = act_total(model, &b, &x)?;
            let w = act_total(model, &c, &x)?;
            publics.push(ax.clone());
            publics.push(bx.clone());
            publics.push(w.clone());
            if kind == GameKind::DdhTwist {
                publics.push(twist_total(model, &ax)?);
                publics.push(twist_total(model, &bx)?);
                publics.push(twist_total(model, &w)?);
            }
            witness.push(a);
            witness.push(b);
            witness.push(c);
            mode_real = Some(real);
        }
        GameKind::D2x => {
            let a = spec.sample_uniform(rng);
            let double = a.scale(2);
            let real = sample_decisional_mode(forced_mode, rng);
            let c = if real {
                double.clone()
            } else {
                sample_nonzero_avoiding(&spec, &double, rng)?
            };
            publics.push(act_total(model, &a, &x)?);
            witness.push(a);
            witness.push(c);
            mode_real = Some(real);
        }
    }

    Ok(GameInstance {
        kind,
        publics,
        witness,
        mode_real,
    })
}

/// Samples a fresh challenge with uniform witnesses; decisional kinds flip a
/// fair hidden mode bit.
pub fn sample_game<R: Rng>(
    kind: GameKind,
    model: &dyn ActionModel,
    rng: &mut R,
) -> Result<GameInstance> {
    sample_game_inner(kind, model, None, rng)
}

/// Same as `sample_game` but with the decisional mode pinned, for paired
/// real-versus-random experiments.
pub fn sample_game_with_mode<R: Rng>(
    kind: GameKind,
    model: &dyn ActionModel,
    mode_real: bool,
    rng: &mut R,
) -> Result<GameInstance> {
    if !kind.is_decisional() {
        return Err(Error::ParamInvalid(format!(
            "{kind} has no mode bit to pin"
        )));
    }
    sample_game_inner(kind, model, Some(mode_real), rng)
}

/// What an exhaustive solver recovered from an instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolvedWitness {
    /// Hidden exponents of a search game, in witness order.
    Elements(Vec<GroupElement>),
    /// Decided mode bit of a decisional game: true means the real branch.
    Mode(bool),
}

fn exhaust_dlog(model: &dyn ActionModel, target: &Label) -> Result<GroupElement> {
    let x = model.start();
    let mut found = None;
    for g in model.group().elements() {
        if &act_total(model, &g, &x)? == target {
            if found.is_some() {
                return Err(Error::SpecMismatch(
                    "orbit map hit the same label twice; the action is not regular".into(),
                ));
            }
            found = Some(g);
        }
    }
    found.ok_or_else(|| Error::InvalidElement(format!("{target} is not on the start orbit")))
}

/// Solves an instance by exhausting the group, using only the public labels
/// and the action interface. Decisional games come back as a mode bit.
pub fn brute_force_solve(model: &dyn ActionModel, inst: &GameInstance) -> Result<SolvedWitness> {
    let order = model.group().order();
    if order > BRUTE_FORCE_LIMIT {
        return Err(Error::CapExceeded {
            what: "brute-force search space",
            requested: order,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    match inst.kind {
        GameKind::Dlog | GameKind::DlogTwist | GameKind::DlogOneMinCdh => {
            Ok(SolvedWitness::Elements(vec![exhaust_dlog(
                model,
                &inst.publics[1],
            )?]))
        }
        GameKind::Cdh | GameKind::CdhTwist => {
            let a = exhaust_dlog(model, &inst.publics[1])?;
            let b = exhaust_dlog(model, &inst.publics[2])?;
            Ok(SolvedWitness::Elements(vec![a, b]))
        }
        GameKind::Ddh | GameKind::DdhTwist => {
            let a = exhaust_dlog(model, &inst.publics[1])?;
            let b = exhaust_dlog(model, &inst.publics[2])?;
            let c = exhaust_dlog(model, &inst.publics[3])?;
            Ok(SolvedWitness::Mode(c == a.add(&b)?))
        }
        GameKind::D2x => {
            let a = exhaust_dlog(model, &inst.publics[1])?;
            // The hidden shift is the decisional content; one classical
            // probe of the oracle map on the start point exposes it.
            let cx = act_total(model, &inst.witness[1], &model.start())?;
            let c = exhaust_dlog(model, &cx)?;
            Ok(SolvedWitness::Mode(c == a.scale(2)))
        }
    }
}

/// Oracle shape: the minimal form rewrites the register in place, the
/// standard form xors its answer into a response register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleFlavor {
    Minimal,
    Standard,
}

/// A group-action shift oracle that refuses to answer past its query budget.
/// Each coherent application, classical call, or handed-out map costs one
/// query; the referee hands these out so budgets are structural.
pub struct QueryBudgetedOracle {
    model: Arc<dyn ActionModel>,
    shift: GroupElement,
    flavor: OracleFlavor,
    budget: u32,
}

impl fmt::Debug for QueryBudgetedOracle {
    /// The hidden shift stays out of debug output on purpose.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QueryBudgetedOracle")
            .field("flavor", &self.flavor)
            .field("budget", &self.budget)
            .finish_non_exhaustive()
    }
}

impl QueryBudgetedOracle {
    pub fn new(
        model: Arc<dyn ActionModel>,
        shift: GroupElement,
        flavor: OracleFlavor,
        budget: u32,
    ) -> Result<Self> {
        if shift.spec() != model.group() {
            return Err(Error::SpecMismatch("shift from a different group".into()));
        }
        Ok(QueryBudgetedOracle {
            model,
            shift,
            flavor,
            budget,
        })
    }

    pub fn flavor(&self) -> OracleFlavor {
        self.flavor
    }

    pub fn remaining(&self) -> u32 {
        self.budget
    }

    fn spend(&mut self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::QueryBudgetExhausted("shift oracle"));
        }
        self.budget -= 1;
        Ok(())
    }

    fn raw_map(&self, y: &Label) -> Result<Option<Label>> {
        self.model.act(&self.shift, y)
    }

    /// One classical query: the shifted label, or None off the orbit.
    pub fn apply_classical(&mut self, y: &Label) -> Result<Option<Label>> {
        self.spend()?;
        self.raw_map(y)
    }

    /// One coherent minimal query applied to a whole state.
    pub fn apply_minimal(&mut self, state: &StateVector) -> Result<StateVector> {
        if self.flavor != OracleFlavor::Minimal {
            return Err(Error::Unsupported(
                "standard oracle needs a response register; use apply_standard",
            ));
        }
        self.spend()?;
        let model = self.model.clone();
        let shift = self.shift.clone();
        state.apply_label_map(|y| {
            model
                .act(&shift, y)?
                .ok_or_else(|| Error::InvalidElement(format!("{y} is outside the orbit")))
        })
    }

    /// One coherent standard query on (data, response) registers:
    /// |y, z> -> |y, z xor c*y> for member y, identity elsewhere.
    pub fn apply_standard(
        &mut self,
        joint: &JointState,
        data: usize,
        response: usize,
    ) -> Result<JointState> {
        if self.flavor != OracleFlavor::Standard {
            return Err(Error::Unsupported(
                "minimal oracle rewrites in place; use apply_minimal",
            ));
        }
        self.spend()?;
        let model = self.model.clone();
        let shift = self.shift.clone();
        joint.map_two_registers_labels(data, response, |y, z| match model.act(&shift, y)? {
            Some(cy) => Ok((y.clone(), z.xor(&cy)?)),
            None => Ok((y.clone(), z.clone())),
        })
    }

    /// Spends one query and hands back the bare shift map, for wiring the
    /// oracle into a wrapped action's component transform. The whole handed
    /// out map counts as the one coherent query.
    pub fn coherent_map(&mut self) -> Result<impl Fn(&Label) -> Result<Option<Label>>> {
        if self.flavor != OracleFlavor::Minimal {
            return Err(Error::Unsupported(
                "only the minimal oracle can be wired as a component map",
            ));
        }
        self.spend()?;
        let model = self.model.clone();
        let shift = self.shift.clone();
        Ok(move |y: &Label| model.act(&shift, y))
    }
}

/// Builds the referee-side oracles for a doubling-distinguisher instance:
/// one in-place oracle for the minimal flavor, or the (shift, -shift) pair
/// for the standard flavor, each with a budget of one query.
pub fn d2x_oracle(
    model: &Arc<dyn ActionModel>,
    inst: &GameInstance,
    flavor: OracleFlavor,
) -> Result<Vec<QueryBudgetedOracle>> {
    if inst.kind != GameKind::D2x {
        return Err(Error::ParamInvalid(format!(
            "doubling oracle for a {} instance",
            inst.kind
        )));
    }
    let c = inst.witness[1].clone();
    match flavor {
        OracleFlavor::Minimal => Ok(vec![QueryBudgetedOracle::new(
            model.clone(),
            c,
            OracleFlavor::Minimal,
            1,
        )?]),
        OracleFlavor::Standard => Ok(vec![
            QueryBudgetedOracle::new(model.clone(), c.clone(), OracleFlavor::Standard, 1)?,
            QueryBudgetedOracle::new(model.clone(), c.neg(), OracleFlavor::Standard, 1)?,
        ]),
    }
}

/// Simulates one minimal query from a (shift, -shift) pair of standard
/// oracles: compute the answer next to the data, swap the registers, then
/// uncompute the stale copy. Consumes both standard budgets.
pub struct StdToMinAdapter {
    forward: QueryBudgetedOracle,
    backward: QueryBudgetedOracle,
}

impl fmt::Debug for StdToMinAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StdToMinAdapter")
            .field("forward", &self.forward)
            .field("backward", &self.backward)
            .finish()
    }
}

/// Checks the pair is fresh and standard-flavored and wraps it as a minimal
/// oracle; `backward` must carry the negated shift of `forward`.
pub fn std_to_min_adapter(
    forward: QueryBudgetedOracle,
    backward: QueryBudgetedOracle,
) -> Result<StdToMinAdapter> {
    if forward.flavor != OracleFlavor::Standard || backward.flavor != OracleFlavor::Standard {
        return Err(Error::Unsupported(
            "the adapter consumes a pair of standard oracles",
        ));
    }
    if forward.remaining() == 0 || backward.remaining() == 0 {
        return Err(Error::QueryBudgetExhausted("standard oracle pair"));
    }
    if !forward.shift.add(&backward.shift)?.is_zero() {
        return Err(Error::ParamInvalid(
            "adapter needs oracles with opposite shifts".into(),
        ));
    }
    Ok(StdToMinAdapter { forward, backward })
}

impl StdToMinAdapter {
    /// The simulated minimal query: |y>|0> -> |y>|c*y> -> |c*y>|y>
    /// -> |c*y>|0>, then the clean ancilla is dropped.
    pub fn apply_minimal(&mut self, state: &StateVector) -> Result<StateVector> {
        let width = state.basis().width();
        let bot = blank_label(width);
        let ancilla = StateVector::basis_state(&Basis::new(vec![bot.clone()])?, 0)?;
        let joint = JointState::tensor(&[state, &ancilla])?;
        let joint = self.forward.apply_standard(&joint, 0, 1)?;
        let joint = joint.map_two_registers_labels(0, 1, |y, z| Ok((z.clone(), y.clone())))?;
        let joint = self.backward.apply_standard(&joint, 0, 1)?;
        let slot = joint
            .basis(1)
            .position(&bot)
            .ok_or_else(|| Error::SpecMismatch("ancilla basis lost the blank label".into()))?;
        let (mass, rest) = joint.condition_register(1, slot)?;
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::SpecMismatch(format!(
                "ancilla failed to uncompute: blank mass {mass}"
            )));
        }
        rest.into_single()
    }
}

/// Cloning strategies the reduction drivers know how to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cloner {
    /// Emits two exact copies of the note for a uniformly chosen serial.
    Ideal,
    /// Mints honestly, then measures the note and submits the collapsed
    /// label twice.
    Measured,
    /// Submits two independent Haar-ish random states and a random serial.
    RandomState,
}

impl fmt::Display for Cloner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Cloner::Ideal => "ideal",
            Cloner::Measured => "measured",
            Cloner::RandomState => "random-state",
        };
        f.write_str(s)
    }
}

/// How a pair-spending strategy answers the two-verification challenge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMaker {
    /// Honest splitting of a serial-zero note into opposite serials.
    Complementary,
    /// Submits the same note twice; the second verification then runs
    /// against the wrong serial.
    SameSerial,
}

impl fmt::Display for PairMaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairMaker::Complementary => "complementary",
            PairMaker::SameSerial => "same-serial",
        })
    }
}

/// Side-by-side outcome of a reduction run: mean exact acceptance
/// probability per branch, their gap, and the sampled accept fractions.
#[derive(Clone, Debug, Serialize)]
pub struct ReductionReport {
    pub experiment: String,
    pub group: String,
    pub strategy: String,
    pub trials: usize,
    pub seed: Option<u64>,
    pub p_real: f64,
    pub p_random: f64,
    pub advantage: f64,
    pub sampled_real: f64,
    pub sampled_random: f64,
}

fn group_name(spec: &GroupSpec) -> String {
    let parts: Vec<String> = spec.moduli().iter().map(|n| format!("Z{n}")).collect();
    parts.join("x")
}

struct BranchTally {
    exact_sum: f64,
    sampled_hits: u64,
}

impl BranchTally {
    fn new() -> Self {
        BranchTally {
            exact_sum: 0.0,
            sampled_hits: 0,
        }
    }

    fn add<R: Rng>(&mut self, p: f64, rng: &mut R) {
        self.exact_sum += p;
        if rng.gen_range(0.0..1.0) < p {
            self.sampled_hits += 1;
        }
    }
}

fn finish_report(
    experiment: &str,
    spec: &GroupSpec,
    strategy: String,
    trials: usize,
    real: BranchTally,
    random: BranchTally,
) -> ReductionReport {
    let n = trials as f64;
    let p_real = real.exact_sum / n;
    let p_random = random.exact_sum / n;
    ReductionReport {
        experiment: experiment.into(),
        group: group_name(spec),
        strategy,
        trials,
        seed: None,
        p_real,
        p_random,
        advantage: (p_real - p_random).abs(),
        sampled_real: real.sampled_hits as f64 / n,
        sampled_random: random.sampled_hits as f64 / n,
    }
}

/// What a cloning strategy hands the reduction: a claimed serial and two
/// money states.
struct ClonerOutput {
    serial: GroupElement,
    first: StateVector,
    second: StateVector,
}

fn run_cloner<R: Rng>(
    cloner: Cloner,
    model: &dyn ActionModel,
    rng: &mut R,
) -> Result<ClonerOutput> {
    match cloner {
        Cloner::Ideal => {
            let h = model.group().sample_uniform(rng);
            let note = note_state(model, &h)?;
            Ok(ClonerOutput {
                serial: h,
                first: note.clone(),
                second: note,
            })
        }
        Cloner::Measured => {
            let Banknote { serial, state } = mint(model, rng)?;
            let (_, _, collapsed) = state.measure(rng);
            Ok(ClonerOutput {
                serial,
                first: collapsed.clone(),
                second: collapsed,
            })
        }
        Cloner::RandomState => {
            let basis = member_basis(model)?;
            Ok(ClonerOutput {
                serial: model.group().sample_uniform(rng),
                first: StateVector::random_state(&basis, rng),
                second: StateVector::random_state(&basis, rng),
            })
        }
    }
}

/// Exact acceptance probability of the verify-transform-swap circuit.
///
/// Both submitted states are verified projectively (the first against
/// `serial1`, the second against `serial2`); if either rejects the referee
/// outputs a fair coin. On double acceptance the second post-state is pushed
/// through `transform` and swap-tested against the first.
fn verify_transform_swap(
    wrapped: &WrappedAction,
    serial1: &GroupElement,
    serial2: &GroupElement,
    out: &ClonerOutput,
    transform: &dyn Fn(&StateVector) -> Result<StateVector>,
) -> Result<f64> {
    let p1 = verify_prob(wrapped, serial1, &out.first)?;
    let p2 = verify_prob(wrapped, serial2, &out.second)?;
    let both = p1 * p2;
    if both == 0.0 {
        return Ok(0.5);
    }
    let post1 = note_state(wrapped, serial1)?;
    let post2 = note_state(wrapped, serial2)?;
    let transformed = transform(&post2)?;
    let p_swap = swap_accept(&post1, &transformed)?;
    Ok(both * p_swap + (1.0 - both) * 0.5)
}

/// Runs the cloner-to-doubling-distinguisher reduction.
///
/// Each trial wraps the base action around the pair (x, a*x) with unit
/// coefficients, hands the wrapped action to the cloning strategy, verifies
/// both submissions against the claimed serial, then rewrites the second
/// note with one minimal oracle query and a component swap before the swap
/// test. The real branch shifts by 2a, the random branch by an independent
/// non-double, and the report carries the exact acceptance probabilities of
/// both branches.
pub fn run_d2x_reduction<R: Rng>(
    base: &Arc<dyn ActionModel>,
    cloner: Cloner,
    trials: usize,
    rng: &mut R,
) -> Result<ReductionReport> {
    if trials == 0 {
        return Err(Error::ParamInvalid("at least one trial".into()));
    }
    let spec = base.group();
    let x = base.start();
    let bits = wrapped_label_bits(base.as_ref(), 2);
    let mut real = BranchTally::new();
    let mut random = BranchTally::new();

    for _ in 0..trials {
        let a = spec.sample_uniform(rng);
        let double = a.scale(2);
        let b = sample_nonzero_avoiding(&spec, &double, rng)?;
        let u = act_total(base.as_ref(), &a, &x)?;
        let wrapped = WrappedAction::new(
            base.clone(),
            &[1, 1],
            &[x.clone(), u],
            bits,
            rng.gen(),
            None,
        )?;
        let out = run_cloner(cloner, &wrapped, rng)?;

        for (shift, tally) in [(&double, &mut real), (&b, &mut random)] {
            let mut oracle =
                QueryBudgetedOracle::new(base.clone(), shift.clone(), OracleFlavor::Minimal, 1)?;
            let map = oracle.coherent_map()?;
            let maps: [Option<&dyn Fn(&Label) -> Result<Option<Label>>>; 2] = [Some(&map), None];
            let transform = |state: &StateVector| {
                state.apply_label_map(|l| {
                    wrapped
                        .component_transform(l, &[1, 0], &maps)?
                        .ok_or_else(|| {
                            Error::InvalidElement("label left the wrapped domain".into())
                        })
                })
            };
            let p = verify_transform_swap(&wrapped, &out.serial, &out.serial, &out, &transform)?;
            tally.add(p, rng);
        }
    }

    Ok(finish_report(
        "d2x-reduction",
        &spec,
        cloner.to_string(),
        trials,
        real,
        random,
    ))
}

/// Runs the complementary-serial-pair to Diffie-Hellman-mode reduction.
///
/// Each trial wraps the base action around (x, a*x, b*x, w) with alternating
/// coefficient signs, where w is (a+b)*x on the real branch and c*x for an
/// independent c on the random branch. The pair strategy must pass one
/// verification at its claimed serial and one at the negated serial; the
/// second post-state is then rewritten by swapping label components in
/// pairs, with no oracle help, before the swap test.
pub fn run_ddh_pair_reduction<R: Rng>(
    base: &Arc<dyn ActionModel>,
    pair_maker: PairMaker,
    trials: usize,
    rng: &mut R,
) -> Result<ReductionReport> {
    if trials == 0 {
        return Err(Error::ParamInvalid("at least one trial".into()));
    }
    let spec = base.group();
    let x = base.start();
    let bits = wrapped_label_bits(base.as_ref(), 4);
    let mut real = BranchTally::new();
    let mut random = BranchTally::new();

    for _ in 0..trials {
        let a = spec.sample_uniform(rng);
        let b = spec.sample_uniform(rng);
        let sum = a.add(&b)?;
        let c = sample_nonzero_avoiding(&spec, &sum, rng)?;
        let u = act_total(base.as_ref(), &a, &x)?;
        let v = act_total(base.as_ref(), &b, &x)?;
        let seed: u64 = rng.gen();

        for (shift, tally) in [(&sum, &mut real), (&c, &mut random)] {
            let w = act_total(base.as_ref(), shift, &x)?;
            let wrapped = WrappedAction::new(
                base.clone(),
                &[1, -1, 1, -1],
                &[x.clone(), u.clone(), v.clone(), w],
                bits,
                seed,
                None,
            )?;
            let zero_note = note_state(&wrapped, &spec.zero())?;
            let (h, note1, note2) = complementary_pair(&wrapped, &zero_note, rng)?;
            let out = match pair_maker {
                PairMaker::Complementary => ClonerOutput {
                    serial: h.clone(),
                    first: note1.state,
                    second: note2.state,
                },
                PairMaker::SameSerial => ClonerOutput {
                    serial: h.clone(),
                    first: note1.state.clone(),
                    second: note1.state,
                },
            };
            let maps: [Option<&dyn Fn(&Label) -> Result<Option<Label>>>; 4] = [None; 4];
            let transform = |state: &StateVector| {
                state.apply_label_map(|l| {
                    wrapped
                        .component_transform(l, &[1, 0, 3, 2], &maps)?
                        .ok_or_else(|| {
                            Error::InvalidElement("label left the wrapped domain".into())
                        })
                })
            };
            let p = verify_transform_swap(&wrapped, &h, &h.neg(), &out, &transform)?;
            tally.add(p, rng);
        }
    }

    Ok(finish_report(
        "ddh-pair-reduction",
        &spec,
        pair_maker.to_string(),
        trials,
        real,
        random,
    ))
}

/// Exhaustive agreement counts between a twist simulation and a natively
/// twisted model.
#[derive(Clone, Debug, Serialize)]
pub struct TwistBattery {
    pub group: String,
    pub orbit_size: u64,
    pub act_checks: u64,
    pub twist_checks: u64,
    pub membership_checks: u64,
}

/// Builds a twist-capable simulation from a twist-free keyed model by
/// wrapping the pair (x, x) with coefficients (1, -1) and a component swap
/// as the twist, then checks it against a natively twisted model of the
/// same group: identical act transcripts under the orbit relabeling, twist
/// equal to negation everywhere, and agreeing membership answers.
pub fn twist_simulation_battery(
    spec: &GroupSpec,
    label_bits: usize,
    seed: u64,
) -> Result<TwistBattery> {
    let order = spec.order();
    if order > BRUTE_FORCE_LIMIT {
        return Err(Error::CapExceeded {
            what: "exhaustive twist battery",
            requested: order,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let base = Arc::new(GgamAction::new(spec, label_bits, seed, false)?);
    if base.supports_twist() {
        return Err(Error::SpecMismatch(
            "the simulation must start from a twist-free base".into(),
        ));
    }
    let x = base.start();
    let sim = WrappedAction::new(
        base.clone(),
        &[1, -1],
        &[x.clone(), x],
        wrapped_label_bits(base.as_ref(), 2),
        seed.wrapping_add(1),
        Some(vec![1, 0]),
    )?;
    if !sim.supports_twist() {
        return Err(Error::SpecMismatch(
            "wrapping failed to produce a twist capability".into(),
        ));
    }
    let native = GgamAction::new(spec, label_bits, seed.wrapping_add(2), true)?;

    let sim_labels = sim.member_labels()?;
    let nat_labels = native.member_labels()?;
    let mut act_checks = 0u64;
    let mut twist_checks = 0u64;
    let mut membership_checks = 0u64;

    for (i, h) in spec.elements().enumerate() {
        for g in spec.elements() {
            let target = h.add(&g)?.index() as usize;
            let sim_out = act_total(&sim, &g, &sim_labels[i])?;
            let nat_out = act_total(&native, &g, &nat_labels[i])?;
            if sim_out != sim_labels[target] || nat_out != nat_labels[target] {
                return Err(Error::SpecMismatch(format!(
                    "act transcripts diverge at h={h:?}, g={g:?}"
                )));
            }
            act_checks += 1;
        }
        let neg = h.neg().index() as usize;
        let sim_tw = twist_total(&sim, &sim_labels[i])?;
        let nat_tw = twist_total(&native, &nat_labels[i])?;
        if sim_tw != sim_labels[neg] || nat_tw != nat_labels[neg] {
            return Err(Error::SpecMismatch(format!(
                "twist disagrees with negation at h={h:?}"
            )));
        }
        twist_checks += 1;
        if !sim.member(&sim_labels[i]) || !native.member(&nat_labels[i]) {
            return Err(Error::SpecMismatch("member label rejected".into()));
        }
        membership_checks += 1;
    }

    Ok(TwistBattery {
        group: group_name(spec),
        orbit_size: order,
        act_checks,
        twist_checks,
        membership_checks,
    })
}

/// Runs twisted-mode Diffie-Hellman games on the simulated twist-capable
/// action and decides them by exhaustive search, after the agreement battery
/// passes. The decider sees only public labels and the action interface, so
/// a full-advantage report certifies the simulation is lossless.
pub fn run_twist_reduction<R: Rng>(
    spec: &GroupSpec,
    label_bits: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ReductionReport> {
    if trials == 0 {
        return Err(Error::ParamInvalid("at least one trial".into()));
    }
    twist_simulation_battery(spec, label_bits, rng.gen())?;

    let base = Arc::new(GgamAction::new(spec, label_bits, rng.gen(), false)?);
    let x = base.start();
    let sim = WrappedAction::new(
        base.clone(),
        &[1, -1],
        &[x.clone(), x],
        wrapped_label_bits(base.as_ref(), 2),
        rng.gen(),
        Some(vec![1, 0]),
    )?;

    let mut real = BranchTally::new();
    let mut random = BranchTally::new();
    for _ in 0..trials {
        for (mode, tally) in [(true, &mut real), (false, &mut random)] {
            let inst = sample_game_with_mode(GameKind::DdhTwist, &sim, mode, rng)?;
            let decided = match brute_force_solve(&sim, &inst)? {
                SolvedWitness::Mode(bit) => bit,
                SolvedWitness::Elements(_) => {
                    return Err(Error::SpecMismatch(
                        "decisional solve returned elements".into(),
                    ))
                }
            };
            tally.add(if decided { 1.0 } else { 0.0 }, rng);
        }
    }

    Ok(finish_report(
        "twist-reduction",
        spec,
        "exhaustive-decider".into(),
        trials,
        real,
        random,
    ))
}

/// Fidelity evidence for the serial-shift property of purified double notes.
#[derive(Clone, Debug, Serialize)]
pub struct MapShiftReport {
    pub group: String,
    /// Exact marginal of the measured money register is uniform.
    pub marginal_uniform: bool,
    /// Probability mass of the sampled collapse outcome.
    pub collapse_probability: f64,
    /// Shifting the leftover register matches collapsing at the shifted
    /// label instead.
    pub shift_fidelity: f64,
    /// Two shifts in sequence match the single summed shift.
    pub composition_fidelity: f64,
    /// The zero shift leaves the state untouched.
    pub identity_fidelity: f64,
}

/// Purified double note over (serial env, money, money):
/// sum_h alpha_h |h> |note_h> |note_h>, built by the coherent double-mint
/// circuit so no raw amplitudes are injected.
fn purified_double_note(
    model: &dyn ActionModel,
    serial_amps: &[Complex64],
) -> Result<JointState> {
    let spec = model.group();
    let gb = Basis::group_basis(&spec)?;
    let env = StateVector::from_amplitudes(&gb, serial_amps.to_vec())?;
    let copied = JointState::duplicate_register(&env)?;
    let zero = StateVector::basis_state(&gb, spec.zero().index() as usize)?;
    let joint = copied.append_register(&zero)?;
    // Copy the second serial register into the blank one by group addition.
    let joint = joint.permute_two_registers(1, 2, |i, j| {
        let gi = spec.element_at(i as u64)?;
        let gj = spec.element_at(j as u64)?;
        Ok((i, gi.add(&gj)?.index() as usize))
    })?;
    let joint = joint.qft_register(1, FourierDirection::Forward)?;
    let joint = joint.qft_register(2, FourierDirection::Forward)?;
    let by_label: HashMap<Label, GroupElement> = gb
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| Ok((l.clone(), spec.element_at(i as u64)?)))
        .collect::<Result<_>>()?;
    let x = model.start();
    joint.map_two_registers_labels(1, 2, |l1, l2| {
        let g1 = by_label
            .get(l1)
            .ok_or_else(|| Error::InvalidElement(format!("{l1} is not a serial label")))?;
        let g2 = by_label
            .get(l2)
            .ok_or_else(|| Error::InvalidElement(format!("{l2} is not a serial label")))?;
        Ok((act_total(model, g1, &x)?, act_total(model, g2, &x)?))
    })
}

/// Overlap <a|b> for joint states whose registers hold the same label sets,
/// possibly in different orders.
fn joint_overlap(a: &JointState, b: &JointState) -> Result<Complex64> {
    if a.arity() != b.arity() {
        return Err(Error::BasisMismatch(format!(
            "arity {} vs {}",
            a.arity(),
            b.arity()
        )));
    }
    let arity = a.arity();
    let mut remap: Vec<Vec<usize>> = Vec::with_capacity(arity);
    for r in 0..arity {
        let ab = a.basis(r);
        let bb = b.basis(r);
        if ab.len() != bb.len() {
            return Err(Error::BasisMismatch(format!(
                "register {r} has {} vs {} labels",
                ab.len(),
                bb.len()
            )));
        }
        let map = bb
            .labels()
            .iter()
            .map(|l| {
                ab.position(l).ok_or_else(|| {
                    Error::BasisMismatch(format!("label {l} missing from the other basis"))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        remap.push(map);
    }
    let dims: Vec<usize> = (0..arity).map(|r| b.basis(r).len()).collect();
    let mut a_strides = vec![1usize; arity];
    for r in (0..arity.saturating_sub(1)).rev() {
        a_strides[r] = a_strides[r + 1] * a.basis(r + 1).len();
    }
    let mut overlap = Complex64::new(0.0, 0.0);
    for (flat, amp) in b.amps().iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let mut rest = flat;
        let mut target = 0usize;
        for r in (0..arity).rev() {
            let idx = rest % dims[r];
            rest /= dims[r];
            target += remap[r][idx] * a_strides[r];
        }
        overlap += a.amps()[target].conj() * amp;
    }
    Ok(overlap)
}

fn shift_money_register(
    model: &dyn ActionModel,
    joint: &JointState,
    g: &GroupElement,
) -> Result<JointState> {
    let neg = g.neg();
    joint.map_two_registers_labels(1, 0, |money, env| {
        Ok((act_total(model, &neg, money)?, env.clone()))
    })
}

/// Checks that shifting the surviving money register of a collapsed purified
/// double note by -g lands exactly on the state that collapsing at the
/// g-shifted label would have produced.
///
/// The leftover register never gets measured, so the check certifies the
/// shift as an in-place relabeling of which collapse happened.
pub fn map_shift_property<R: Rng>(
    model: &dyn ActionModel,
    serial_amps: &[Complex64],
    g1: &GroupElement,
    g2: &GroupElement,
    rng: &mut R,
) -> Result<MapShiftReport> {
    let spec = model.group();
    let order = spec.order() as f64;
    let psi = purified_double_note(model, serial_amps)?;

    let marginal = psi.register_distribution(2)?;
    let marginal_uniform = marginal
        .iter()
        .all(|&p| (p - 1.0 / order).abs() < 1e-9);

    let money_basis = psi.basis(2).clone();
    let (_, outcome, collapsed) = psi.measure_register(2, rng)?;
    let collapse_probability = marginal[outcome];
    let measured_label = money_basis.label(outcome).clone();

    let collapse_at = |label: &Label| -> Result<JointState> {
        let idx = money_basis
            .position(label)
            .ok_or_else(|| Error::InvalidElement(format!("{label} is not a member label")))?;
        let (_, state) = psi.condition_register(2, idx)?;
        Ok(state)
    };

    let shifted = shift_money_register(model, &collapsed, g1)?;
    let reference = collapse_at(&act_total(model, g1, &measured_label)?)?;
    let shift_fidelity = joint_overlap(&reference, &shifted)?.norm_sqr();

    let twice = shift_money_register(model, &shifted, g2)?;
    let once = shift_money_register(model, &collapsed, &g1.add(g2)?)?;
    let composition_fidelity = joint_overlap(&once, &twice)?.norm_sqr();

    let idle = shift_money_register(model, &collapsed, &spec.zero())?;
    let identity_fidelity = joint_overlap(&collapsed, &idle)?.norm_sqr();

    Ok(MapShiftReport {
        group: group_name(&spec),
        marginal_uniform,
        collapse_probability,
        shift_fidelity,
        composition_fidelity,
        identity_fidelity,
    })
}

/// Referee session for the one-query hidden-shift game. The adversary gets
/// one coherent in-place query shifted by the hidden -g, may then ask for
/// the reveal g*x, and finally submits a guess; queries after the reveal or
/// beyond the budget are protocol violations.
pub struct MinCdhSession<'a> {
    model: &'a dyn ActionModel,
    hidden: GroupElement,
    query_used: bool,
    revealed: bool,
    queries: u32,
}

impl MinCdhSession<'_> {
    /// The single coherent query on a joint state's money register.
    pub fn query_joint(&mut self, joint: &JointState, money: usize) -> Result<JointState> {
        self.check_query()?;
        let other = if money == 0 {
            if joint.arity() < 2 {
                return Err(Error::ParamInvalid(
                    "single-register states go through query".into(),
                ));
            }
            1
        } else {
            0
        };
        let neg = self.hidden.neg();
        let model = self.model;
        joint.map_two_registers_labels(money, other, |y, z| {
            Ok((act_total(model, &neg, y)?, z.clone()))
        })
    }

    /// The single coherent query on a bare money state.
    pub fn query(&mut self, state: &StateVector) -> Result<StateVector> {
        self.check_query()?;
        let neg = self.hidden.neg();
        let model = self.model;
        state.apply_label_map(|y| act_total(model, &neg, y))
    }

    fn check_query(&mut self) -> Result<()> {
        if self.revealed {
            return Err(Error::RefereeViolation(
                "the query must come before the reveal".into(),
            ));
        }
        if self.query_used {
            return Err(Error::QueryBudgetExhausted("hidden-shift query"));
        }
        self.query_used = true;
        self.queries += 1;
        Ok(())
    }

    /// Reveals g*x and closes the query window.
    pub fn reveal(&mut self) -> Result<Label> {
        self.revealed = true;
        act_total(self.model, &self.hidden, &self.model.start())
    }
}

/// Transcript of one hidden-shift game.
#[derive(Clone, Debug, Serialize)]
pub struct GameTranscript {
    pub win: bool,
    pub queries_used: u32,
    pub revealed: bool,
    pub guess: Vec<u64>,
}

/// Plays the one-query hidden-shift game against an adversary callback.
/// The referee samples g, hands out the session, and scores the guess.
pub fn dlog_1mincdh_game<R, A>(
    model: &dyn ActionModel,
    mut adversary: A,
    rng: &mut R,
) -> Result<GameTranscript>
where
    R: Rng,
    A: FnMut(&mut MinCdhSession<'_>, &mut R) -> Result<GroupElement>,
{
    let hidden = model.group().sample_uniform(rng);
    let mut session = MinCdhSession {
        model,
        hidden: hidden.clone(),
        query_used: false,
        revealed: false,
        queries: 0,
    };
    let guess = adversary(&mut session, rng)?;
    Ok(GameTranscript {
        win: guess == hidden,
        queries_used: session.queries,
        revealed: session.revealed,
        guess: guess.residues().to_vec(),
    })
}

/// Built-in strategies for the hidden-shift game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinCdhAdversary {
    /// Queries the shift-invariant uniform note, asks for the reveal, then
    /// recovers the shift by exhausting the group.
    BruteForce,
    /// Guesses uniformly without touching the oracle or the reveal.
    UniformGuess,
}

/// Runs a built-in adversary once.
pub fn run_builtin_mincdh<R: Rng>(
    model: &dyn ActionModel,
    adversary: MinCdhAdversary,
    rng: &mut R,
) -> Result<GameTranscript> {
    match adversary {
        MinCdhAdversary::BruteForce => {
            if model.group().order() > BRUTE_FORCE_LIMIT {
                return Err(Error::CapExceeded {
                    what: "brute-force search space",
                    requested: model.group().order(),
                    limit: BRUTE_FORCE_LIMIT,
                });
            }
            dlog_1mincdh_game(
                model,
                |session, _| {
                    let uniform = note_state(model, &model.group().zero())?;
                    let queried = session.query(&uniform)?;
                    if queried.fidelity(&uniform)? < 1.0 - 1e-9 {
                        return Err(Error::SpecMismatch(
                            "the uniform note must be invariant under the hidden shift".into(),
                        ));
                    }
                    let revealed = session.reveal()?;
                    exhaust_dlog(model, &revealed)
                },
                rng,
            )
        }
        MinCdhAdversary::UniformGuess => {
            dlog_1mincdh_game(model, |_, rng| Ok(model.group().sample_uniform(rng)), rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::TranslationAction;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn translation(moduli: &[u64]) -> Arc<dyn ActionModel> {
        Arc::new(TranslationAction::new(&GroupSpec::new(moduli.to_vec()).unwrap()))
    }

    fn ggam(moduli: &[u64], seed: u64, twisted: bool) -> Arc<dyn ActionModel> {
        Arc::new(
            GgamAction::new(&GroupSpec::new(moduli.to_vec()).unwrap(), 16, seed, twisted)
                .unwrap(),
        )
    }

    #[test]
    fn sampled_games_have_consistent_publics_and_witnesses() {
        let model = ggam(&[4, 3], 7, true);
        let mut r = rng(1);
        for kind in [
            GameKind::Dlog,
            GameKind::Cdh,
            GameKind::Ddh,
            GameKind::DlogTwist,
            GameKind::CdhTwist,
            GameKind::DdhTwist,
            GameKind::D2x,
            GameKind::DlogOneMinCdh,
        ] {
            let inst = sample_game(kind, model.as_ref(), &mut r).unwrap();
            assert_eq!(inst.publics[0], model.start());
            assert_eq!(inst.mode_real().is_some(), kind.is_decisional());
            for label in &inst.publics {
                assert!(model.member(label));
            }
            match brute_force_solve(model.as_ref(), &inst).unwrap() {
                SolvedWitness::Elements(found) => {
                    assert_eq!(found, inst.witness().to_vec());
                }
                SolvedWitness::Mode(bit) => {
                    assert_eq!(Some(bit), inst.mode_real());
                }
            }
        }
    }

    #[test]
    fn twisted_games_need_a_twist_capable_model() {
        let model = ggam(&[6], 3, false);
        let mut r = rng(2);
        let err = sample_game(GameKind::DdhTwist, model.as_ref(), &mut r).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn decisional_mode_bits_are_fair_and_pinnable() {
        let model = translation(&[8]);
        let mut r = rng(3);
        let trials = 1000;
        let mut reals = 0;
        for _ in 0..trials {
            let inst = sample_game(GameKind::Ddh, model.as_ref(), &mut r).unwrap();
            if inst.mode_real().unwrap() {
                reals += 1;
            }
        }
        // Three-sigma band around the fair coin.
        let sigma = (trials as f64 * 0.25).sqrt();
        assert!((reals as f64 - trials as f64 / 2.0).abs() < 3.0 * sigma);

        for mode in [true, false] {
            let inst = sample_game_with_mode(GameKind::D2x, model.as_ref(), mode, &mut r).unwrap();
            assert_eq!(inst.mode_real(), Some(mode));
            let c = &inst.witness()[1];
            let double = inst.witness()[0].scale(2);
            assert_eq!(c == &double, mode);
        }
        let err = sample_game_with_mode(GameKind::Dlog, model.as_ref(), true, &mut r).unwrap_err();
        assert!(matches!(err, Error::ParamInvalid(_)));
    }

    #[test]
    fn oracles_enforce_their_query_budgets() {
        let model = translation(&[8]);
        let spec = model.group();
        let c = spec.element(vec![3]).unwrap();
        let mut oracle =
            QueryBudgetedOracle::new(model.clone(), c.clone(), OracleFlavor::Minimal, 1).unwrap();
        let x = model.start();
        let shifted = oracle.apply_classical(&x).unwrap().unwrap();
        assert_eq!(shifted, act_total(model.as_ref(), &c, &x).unwrap());
        let err = oracle.apply_classical(&x).unwrap_err();
        assert!(matches!(err, Error::QueryBudgetExhausted(_)));

        let mut oracle =
            QueryBudgetedOracle::new(model.clone(), c.clone(), OracleFlavor::Minimal, 1).unwrap();
        let note = note_state(model.as_ref(), &spec.element(vec![1]).unwrap()).unwrap();
        let moved = oracle.apply_minimal(&note).unwrap();
        // A minimal query on a note multiplies it by a character phase.
        assert_abs_diff_eq!(moved.fidelity(&note).unwrap(), 1.0, epsilon = 1e-12);
        assert!(oracle.apply_minimal(&note).is_err());

        let mut standard =
            QueryBudgetedOracle::new(model.clone(), c, OracleFlavor::Standard, 1).unwrap();
        let err = standard.apply_minimal(&note).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn standard_oracle_xors_its_answer_into_the_response_register() {
        let model = translation(&[8]);
        let spec = model.group();
        let c = spec.element(vec![5]).unwrap();
        let mut oracle =
            QueryBudgetedOracle::new(model.clone(), c.clone(), OracleFlavor::Standard, 2).unwrap();
        let members = member_basis(model.as_ref()).unwrap();
        let y = StateVector::basis_state(&members, 2).unwrap();
        let blank = blank_label(members.width());
        let response = StateVector::basis_state(&Basis::new(vec![blank.clone()]).unwrap(), 0)
            .unwrap();
        let joint = JointState::tensor(&[&y, &response]).unwrap();
        let once = oracle.apply_standard(&joint, 0, 1).unwrap();
        let expected = act_total(model.as_ref(), &c, members.label(2)).unwrap();
        let dist = once.register_distribution(1).unwrap();
        let pos = once.basis(1).position(&expected).unwrap();
        assert_abs_diff_eq!(dist[pos], 1.0, epsilon = 1e-12);
        // A second application uncomputes the answer back to blank.
        let twice = oracle.apply_standard(&once, 0, 1).unwrap();
        let blank_pos = twice.basis(1).position(&blank).unwrap();
        let dist = twice.register_distribution(1).unwrap();
        assert_abs_diff_eq!(dist[blank_pos], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn adapter_matches_the_native_minimal_oracle_exactly() {
        let model = ggam(&[12], 11, false);
        let spec = model.group();
        let members = member_basis(model.as_ref()).unwrap();
        let mut r = rng(4);
        for _ in 0..3 {
            let c = spec.sample_uniform(&mut r);
            for idx in 0..members.len() {
                let input = StateVector::basis_state(&members, idx).unwrap();
                let mut native = QueryBudgetedOracle::new(
                    model.clone(),
                    c.clone(),
                    OracleFlavor::Minimal,
                    1,
                )
                .unwrap();
                let direct = native.apply_minimal(&input).unwrap();
                let pair = |sign: i64| {
                    QueryBudgetedOracle::new(
                        model.clone(),
                        c.scale(sign),
                        OracleFlavor::Standard,
                        1,
                    )
                    .unwrap()
                };
                let mut adapter = std_to_min_adapter(pair(1), pair(-1)).unwrap();
                let simulated = adapter.apply_minimal(&input).unwrap();
                assert_abs_diff_eq!(
                    cross_fidelity(&direct, &simulated).unwrap(),
                    1.0,
                    epsilon = 1e-12
                );
                assert!(adapter.apply_minimal(&input).is_err());
            }
            let input = StateVector::random_state(&members, &mut r);
            let mut native =
                QueryBudgetedOracle::new(model.clone(), c.clone(), OracleFlavor::Minimal, 1)
                    .unwrap();
            let direct = native.apply_minimal(&input).unwrap();
            let mut adapter = std_to_min_adapter(
                QueryBudgetedOracle::new(model.clone(), c.clone(), OracleFlavor::Standard, 1)
                    .unwrap(),
                QueryBudgetedOracle::new(model.clone(), c.neg(), OracleFlavor::Standard, 1)
                    .unwrap(),
            )
            .unwrap();
            let simulated = adapter.apply_minimal(&input).unwrap();
            let overlap = direct
                .align_to(&direct.basis().union(simulated.basis()).unwrap())
                .unwrap()
                .inner(
                    &simulated
                        .align_to(&direct.basis().union(simulated.basis()).unwrap())
                        .unwrap(),
                )
                .unwrap();
            // Phases must agree too, not just the overlap magnitude.
            assert_abs_diff_eq!(overlap.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(overlap.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn adapter_refuses_spent_or_mismatched_pairs() {
        let model = translation(&[8]);
        let spec = model.group();
        let c = spec.element(vec![3]).unwrap();
        let fresh = |shift: &GroupElement| {
            QueryBudgetedOracle::new(model.clone(), shift.clone(), OracleFlavor::Standard, 1)
                .unwrap()
        };
        let mut spent = fresh(&c);
        let members = member_basis(model.as_ref()).unwrap();
        let blank = StateVector::basis_state(
            &Basis::new(vec![blank_label(members.width())]).unwrap(),
            0,
        )
        .unwrap();
        let probe = JointState::tensor(
            &[&StateVector::basis_state(&members, 0).unwrap(), &blank],
        )
        .unwrap();
        spent.apply_standard(&probe, 0, 1).unwrap();
        let err = std_to_min_adapter(spent, fresh(&c.neg())).unwrap_err();
        assert!(matches!(err, Error::QueryBudgetExhausted(_)));

        let err = std_to_min_adapter(fresh(&c), fresh(&c)).unwrap_err();
        assert!(matches!(err, Error::ParamInvalid(_)));

        let minimal =
            QueryBudgetedOracle::new(model.clone(), c.clone(), OracleFlavor::Minimal, 1).unwrap();
        let err = std_to_min_adapter(minimal, fresh(&c.neg())).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn ideal_cloner_gives_the_doubling_distinguisher_full_advantage() {
        let base = translation(&[8]);
        let mut r = rng(5);
        let report = run_d2x_reduction(&base, Cloner::Ideal, 6, &mut r).unwrap();
        assert_abs_diff_eq!(report.p_real, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(report.p_random, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(report.advantage, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn measured_cloner_leaves_only_a_sliver_of_advantage() {
        let base = translation(&[8]);
        let mut r = rng(6);
        let report = run_d2x_reduction(&base, Cloner::Measured, 40, &mut r).unwrap();
        // Collapsed labels pass both verifications with probability 1/N^2,
        // and when they do the swap still accepts, so the advantage is
        // (1/N^2)/2 = 1/128 here.
        assert!(report.advantage < 0.01, "advantage {}", report.advantage);
        assert_abs_diff_eq!(report.p_random, 0.5, epsilon = 1e-9);
        assert!(report.p_real > 0.5);
    }

    #[test]
    fn random_state_cloner_has_negligible_advantage() {
        let base = translation(&[8]);
        let mut r = rng(7);
        let report = run_d2x_reduction(&base, Cloner::RandomState, 30, &mut r).unwrap();
        assert!(report.advantage < 0.05, "advantage {}", report.advantage);
    }

    #[test]
    fn complementary_pairs_give_the_ddh_distinguisher_full_advantage() {
        let base = translation(&[8]);
        let mut r = rng(8);
        let report = run_ddh_pair_reduction(&base, PairMaker::Complementary, 6, &mut r).unwrap();
        assert_abs_diff_eq!(report.p_real, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(report.p_random, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(report.advantage, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn same_serial_pairs_fail_the_negated_verification() {
        let base = translation(&[8]);
        let mut r = rng(9);
        let report = run_ddh_pair_reduction(&base, PairMaker::SameSerial, 12, &mut r).unwrap();
        // The second verification projects note_h onto note_-h, which only
        // matches for the self-inverse serials, so real-branch acceptance
        // sits well below 1.
        assert!(report.p_real < 0.9, "p_real {}", report.p_real);
    }

    #[test]
    fn twist_simulation_agrees_with_the_native_model_exhaustively() {
        let spec = GroupSpec::new(vec![4, 3]).unwrap();
        let battery = twist_simulation_battery(&spec, 16, 13).unwrap();
        assert_eq!(battery.orbit_size, 12);
        assert_eq!(battery.act_checks, 144);
        assert_eq!(battery.twist_checks, 12);
        assert_eq!(battery.membership_checks, 12);
    }

    #[test]
    fn twist_reduction_decides_twisted_ddh_perfectly() {
        let spec = GroupSpec::new(vec![8]).unwrap();
        let mut r = rng(10);
        let report = run_twist_reduction(&spec, 16, 10, &mut r).unwrap();
        assert_abs_diff_eq!(report.p_real, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.p_random, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.advantage, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn collapsed_double_notes_shift_like_relabeled_collapses() {
        let model = translation(&[8]);
        let spec = model.group();
        let order = spec.order() as usize;
        let mut r = rng(11);
        for _ in 0..20 {
            let env = StateVector::random_state(&Basis::group_basis(&spec).unwrap(), &mut r);
            let g1 = spec.sample_uniform(&mut r);
            let g2 = spec.sample_uniform(&mut r);
            let report =
                map_shift_property(model.as_ref(), env.amps(), &g1, &g2, &mut r).unwrap();
            assert!(report.marginal_uniform);
            assert_abs_diff_eq!(
                report.collapse_probability,
                1.0 / order as f64,
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(report.shift_fidelity, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(report.composition_fidelity, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(report.identity_fidelity, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn purified_double_note_factors_for_a_point_serial() {
        let model = translation(&[6]);
        let spec = model.group();
        let h = spec.element(vec![2]).unwrap();
        let mut amps = vec![Complex64::new(0.0, 0.0); spec.order() as usize];
        amps[h.index() as usize] = Complex64::new(1.0, 0.0);
        let psi = purified_double_note(model.as_ref(), &amps).unwrap();
        let mut r = rng(12);
        let (dist, outcome, rest) = psi.measure_register(0, &mut r).unwrap();
        assert_abs_diff_eq!(dist[h.index() as usize], 1.0, epsilon = 1e-12);
        assert_eq!(outcome, h.index() as usize);
        let (first, second) = rest.factor_product_pair().unwrap();
        let note = note_state(model.as_ref(), &h).unwrap();
        assert_abs_diff_eq!(first.fidelity(&note).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(second.fidelity(&note).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hidden_shift_referee_scores_and_enforces_the_protocol() {
        let model = ggam(&[9], 17, false);
        let mut r = rng(13);
        for _ in 0..10 {
            let t = run_builtin_mincdh(model.as_ref(), MinCdhAdversary::BruteForce, &mut r)
                .unwrap();
            assert!(t.win);
            assert_eq!(t.queries_used, 1);
            assert!(t.revealed);
        }

        let trials = 600;
        let wins: usize = (0..trials)
            .map(|_| {
                run_builtin_mincdh(model.as_ref(), MinCdhAdversary::UniformGuess, &mut r)
                    .unwrap()
                    .win as usize
            })
            .sum();
        let p = 1.0 / model.group().order() as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!((wins as f64 - trials as f64 * p).abs() < 3.0 * sigma + 1.0);

        let note = note_state(model.as_ref(), &model.group().zero()).unwrap();
        let err = dlog_1mincdh_game(
            model.as_ref(),
            |session, _| {
                session.query(&note)?;
                session.query(&note)?;
                Ok(model.group().zero())
            },
            &mut r,
        )
        .unwrap_err();
        assert!(matches!(err, Error::QueryBudgetExhausted(_)));

        let err = dlog_1mincdh_game(
            model.as_ref(),
            |session, _| {
                session.reveal()?;
                session.query(&note)?;
                Ok(model.group().zero())
            },
            &mut r,
        )
        .unwrap_err();
        assert!(matches!(err, Error::RefereeViolation(_)));
    }

    #[test]
    fn doubling_oracles_come_budgeted_per_flavor() {
        let model = translation(&[8]);
        let mut r = rng(15);
        let inst = sample_game(GameKind::D2x, model.as_ref(), &mut r).unwrap();
        let shift = inst.witness()[1].clone();
        let x = model.start();

        let mut minimal = d2x_oracle(&model, &inst, OracleFlavor::Minimal).unwrap();
        assert_eq!(minimal.len(), 1);
        assert_eq!(minimal[0].flavor(), OracleFlavor::Minimal);
        let probed = minimal[0].apply_classical(&x).unwrap().unwrap();
        assert_eq!(probed, act_total(model.as_ref(), &shift, &x).unwrap());
        assert!(minimal[0].apply_classical(&x).is_err());

        let mut pair = d2x_oracle(&model, &inst, OracleFlavor::Standard).unwrap().into_iter();
        let forward = pair.next().unwrap();
        let backward = pair.next().unwrap();
        assert!(pair.next().is_none());
        let mut adapter = std_to_min_adapter(forward, backward).unwrap();
        let note = note_state(model.as_ref(), &model.group().element(vec![1]).unwrap()).unwrap();
        let simulated = adapter.apply_minimal(&note).unwrap();
        let mut native =
            QueryBudgetedOracle::new(model.clone(), shift, OracleFlavor::Minimal, 1).unwrap();
        let direct = native.apply_minimal(&note).unwrap();
        assert_abs_diff_eq!(
            cross_fidelity(&direct, &simulated).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let err = d2x_oracle(
            &model,
            &sample_game(GameKind::Dlog, model.as_ref(), &mut r).unwrap(),
            OracleFlavor::Minimal,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ParamInvalid(_)));
    }

    #[test]
    fn reports_and_kinds_serialize_in_kebab_case() {
        let kind: GameKind = serde_json::from_str("\"dlog-1mincdh\"").unwrap();
        assert_eq!(kind, GameKind::DlogOneMinCdh);
        assert_eq!(
            serde_json::to_string(&GameKind::DdhTwist).unwrap(),
            "\"ddh-twist\""
        );
        assert_eq!(
            serde_json::to_string(&Cloner::RandomState).unwrap(),
            "\"random-state\""
        );

        let base = translation(&[4]);
        let mut r = rng(14);
        let report = run_d2x_reduction(&base, Cloner::Ideal, 2, &mut r).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in [
            "experiment",
            "group",
            "strategy",
            "trials",
            "seed",
            "p_real",
            "p_random",
            "advantage",
            "sampled_real",
            "sampled_random",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
