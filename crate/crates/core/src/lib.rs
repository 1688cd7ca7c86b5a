//! Desk-scale simulator of quantum money and quantum lightning built on
//! abelian group actions, together with runnable security games for the
//! reductions and attacks that surround the construction.

pub mod actions;
pub mod error;
pub mod group;
pub mod harness;
pub mod lattice;
pub mod lightning;
pub mod rega;
pub mod selftest;
pub mod statevec;

pub use actions::{
    ActionDescriptor, ActionModel, GgamAction, RestrictedAction, TranslationAction, WrappedAction,
};
pub use error::{Error, Result};
pub use group::{AmbientSubgroup, GroupElement, GroupSpec};
pub use harness::{
    Cloner, GameInstance, GameKind, MapShiftReport, MinCdhAdversary, OracleFlavor, PairMaker,
    QueryBudgetedOracle, ReductionReport, SolvedWitness, TwistBattery,
};
pub use lattice::{LatticeTrialRecord, LweParams, SisOutcome, SparseState};
pub use lightning::{Banknote, VerifyOutcome};
pub use selftest::{run_all, CriterionResult};
pub use rega::{
    DstarKind, GaussianSpec, ParamsReport, RegaBanknote, RegaInstance, RegaParams, RegaStructure,
    RegaVerifyReport,
};
pub use statevec::{Basis, FourierDirection, JointState, Label, StateVector};
