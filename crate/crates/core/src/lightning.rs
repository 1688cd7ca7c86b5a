//! Quantum lightning over a group action: minting, verification, serial
//! extraction, and the circuits built from them.
//!
//! A note for serial h is the member-span state
//! |note_h> = |G|^{-1/2} sum_g chi(g,h) |g * x>,
//! and the note states for distinct serials are orthonormal. Verification
//! projects onto a single note state; serial extraction measures which one.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{build_action, member_basis, ActionDescriptor, ActionModel};
use crate::error::{Error, Result};
use crate::group::GroupElement;
use crate::statevec::{Basis, FourierDirection, JointState, StateJson, StateVector};

/// Mass allowed outside the member span before serial extraction refuses.
pub const FINDH_DOMAIN_TOL: f64 = 1e-9;

/// A serial number together with its money state over the member basis.
#[derive(Clone, Debug)]
pub struct Banknote {
    pub serial: GroupElement,
    pub state: StateVector,
}

/// Serialized banknote: rebuild recipe, serial residues, money state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BanknoteJson {
    pub action: ActionDescriptor,
    pub serial: Vec<u64>,
    pub state: StateJson,
}

impl Banknote {
    pub fn to_json(&self, model: &dyn ActionModel) -> BanknoteJson {
        BanknoteJson {
            action: model.descriptor(),
            serial: self.serial.residues().to_vec(),
            state: self.state.to_json(),
        }
    }

    /// Rebuilds the action model from the embedded descriptor and checks the
    /// state against it.
    pub fn from_json(json: &BanknoteJson) -> Result<(std::sync::Arc<dyn ActionModel>, Banknote)> {
        let model = build_action(&json.action)?;
        let serial = model.group().element(json.serial.clone())?;
        let state = StateVector::from_json(&json.state)?;
        for l in state.basis().labels() {
            if !model.member(l) {
                return Err(Error::SpecMismatch(format!(
                    "banknote state carries non-member label {l}"
                )));
            }
        }
        Ok((model, Banknote { serial, state }))
    }
}

/// The note state for serial h, built directly from the character formula.
pub fn note_state(model: &dyn ActionModel, h: &GroupElement) -> Result<StateVector> {
    if h.spec() != model.group() {
        return Err(Error::SpecMismatch("serial from a different group".into()));
    }
    let basis = member_basis(model)?;
    let scale = 1.0 / (model.group().order() as f64).sqrt();
    let amps = model
        .group()
        .elements()
        .map(|g| Ok(g.chi(h)? * scale))
        .collect::<Result<Vec<Complex64>>>()?;
    StateVector::from_amplitudes(&basis, amps)
}

/// Lookup table: entry [u][y] is the member index of (s * u) * member[y],
/// with s = +1 or -1, built through the model's own action oracle.
fn act_table(model: &dyn ActionModel, members: &Basis, negate: bool) -> Result<Vec<Vec<usize>>> {
    let spec = model.group();
    let mut table = Vec::with_capacity(spec.order() as usize);
    for u in spec.elements() {
        let step = if negate { u.neg() } else { u };
        let mut row = Vec::with_capacity(members.len());
        for y in members.labels() {
            let moved = model.act(&step, y)?.ok_or_else(|| {
                Error::SpecMismatch("member label left the domain under the action".into())
            })?;
            let idx = members.position(&moved).ok_or_else(|| {
                Error::SpecMismatch("action moved a member off the member basis".into())
            })?;
            row.push(idx);
        }
        table.push(row);
    }
    Ok(table)
}

/// Runs the minting circuit up to (not including) the serial measurement:
/// registers are (serial, money).
fn premint(model: &dyn ActionModel) -> Result<JointState> {
    let spec = model.group();
    let serial_basis = Basis::group_basis(spec)?;
    let members = member_basis(model)?;
    let start_idx = members
        .position(&model.start())
        .ok_or_else(|| Error::SpecMismatch("start label missing from member basis".into()))?;
    let serial0 = StateVector::basis_state(&serial_basis, 0)?;
    let money = StateVector::basis_state(&members, start_idx)?;
    let table = act_table(model, &members, false)?;
    JointState::tensor(&[&serial0, &money])?
        .qft_register(0, FourierDirection::Forward)?
        .permute_two_registers(0, 1, |ig, iy| Ok((ig, table[ig][iy])))?
        .qft_register(0, FourierDirection::Forward)
}

/// Exact serial distribution of the minting circuit (uniform for any model).
pub fn mint_serial_distribution(model: &dyn ActionModel) -> Result<Vec<f64>> {
    premint(model)?.register_distribution(0)
}

/// Mints a fresh banknote: the serial comes out uniform and the money state
/// collapses to the note state for that serial.
pub fn mint<R: Rng>(model: &dyn ActionModel, rng: &mut R) -> Result<Banknote> {
    let joint = premint(model)?;
    let (_, outcome, rest) = joint.measure_register(0, rng)?;
    let serial = model.group().element_at(outcome as u64)?;
    Ok(Banknote {
        serial,
        state: rest.into_single()?,
    })
}

/// Splits a state into its member-span mass and the renormalized member part
/// aligned to the canonical member basis.
pub fn member_projection(
    model: &dyn ActionModel,
    state: &StateVector,
) -> Result<(f64, Option<StateVector>)> {
    let members = member_basis(model)?;
    let mut amps = vec![Complex64::new(0.0, 0.0); members.len()];
    let mut mass = 0.0;
    for (i, l) in state.basis().labels().iter().enumerate() {
        if let Some(j) = members.position(l) {
            amps[j] = state.amp(i);
            mass += state.amp(i).norm_sqr();
        } else if model.member(l) {
            return Err(Error::SpecMismatch(format!(
                "member label {l} is outside the canonical member basis"
            )));
        }
    }
    if mass <= 0.0 {
        return Ok((0.0, None));
    }
    let part = StateVector::normalized(&members, amps)?;
    Ok((mass, Some(part)))
}

/// The serial-reading circuit on a member-basis state: appends a group
/// ancilla at zero and leaves it holding the serial. Registers come back as
/// (money, serial).
fn serial_read_circuit(model: &dyn ActionModel, member_part: &StateVector) -> Result<JointState> {
    let spec = model.group();
    let ancilla = StateVector::basis_state(&Basis::group_basis(spec)?, 0)?;
    let joint = JointState::tensor(&[member_part, &ancilla])?;
    findh_coherent_forward(model, &joint, 0, 1)
}

/// Outcome of one verification: exact acceptance probability, one sampled
/// accept bit, and the exact post-acceptance state.
#[derive(Clone, Debug)]
pub struct VerifyOutcome {
    pub accept_prob: f64,
    pub accepted: bool,
    pub post_state: Option<StateVector>,
}

/// Exact probability that verification under serial h accepts the state.
pub fn verify_prob(model: &dyn ActionModel, h: &GroupElement, state: &StateVector) -> Result<f64> {
    Ok(verify_inner(model, h, state)?.0)
}

fn verify_inner(
    model: &dyn ActionModel,
    h: &GroupElement,
    state: &StateVector,
) -> Result<(f64, Option<StateVector>)> {
    if h.spec() != model.group() {
        return Err(Error::SpecMismatch("serial from a different group".into()));
    }
    let (mass, part) = member_projection(model, state)?;
    let part = match part {
        Some(p) => p,
        None => return Ok((0.0, None)),
    };
    let joint = serial_read_circuit(model, &part)?;
    let h_idx = h.index() as usize;
    let dist = joint.register_distribution(1)?;
    if dist[h_idx] <= 0.0 {
        return Ok((0.0, None));
    }
    let (p_h, rest) = joint.condition_register(1, h_idx)?;
    Ok((mass * p_h, Some(rest.into_single()?)))
}

/// Verifies a claimed (serial, state) pair: projective acceptance with
/// probability |<note_h|state>|^2, collapsing to the exact note on success.
pub fn verify<R: Rng>(
    model: &dyn ActionModel,
    h: &GroupElement,
    state: &StateVector,
    rng: &mut R,
) -> Result<VerifyOutcome> {
    let (accept_prob, post_state) = verify_inner(model, h, state)?;
    let accepted = accept_prob > 0.0 && rng.gen_range(0.0..1.0) < accept_prob;
    Ok(VerifyOutcome {
        accept_prob,
        accepted,
        post_state,
    })
}

/// Exact serial distribution that `findh` samples from.
pub fn findh_distribution(model: &dyn ActionModel, state: &StateVector) -> Result<Vec<f64>> {
    let part = findh_member_part(model, state)?;
    serial_read_circuit(model, &part)?.register_distribution(1)
}

fn findh_member_part(model: &dyn ActionModel, state: &StateVector) -> Result<StateVector> {
    let (mass, part) = member_projection(model, state)?;
    let outside = 1.0 - mass;
    if outside > FINDH_DOMAIN_TOL {
        return Err(Error::FindhDomain(outside));
    }
    part.ok_or(Error::FindhDomain(1.0))
}

/// Reads the serial of a member-span state: samples h and collapses the
/// money register to the note state for h.
pub fn findh<R: Rng>(
    model: &dyn ActionModel,
    state: &StateVector,
    rng: &mut R,
) -> Result<(GroupElement, StateVector)> {
    let part = findh_member_part(model, state)?;
    let joint = serial_read_circuit(model, &part)?;
    let (_, outcome, rest) = joint.measure_register(1, rng)?;
    let h = model.group().element_at(outcome as u64)?;
    Ok((h, rest.into_single()?))
}

fn check_member_register(model: &dyn ActionModel, joint: &JointState, money: usize) -> Result<Basis> {
    let members = member_basis(model)?;
    if joint.basis(money) != &members {
        return Err(Error::BasisMismatch(
            "money register is not over the canonical member basis".into(),
        ));
    }
    Ok(members)
}

/// Coherent serial read: with the serial register starting at |0>, writes h
/// into it on the span of note states, i.e. |note_h>|0> becomes |note_h>|h>.
pub fn findh_coherent_forward(
    model: &dyn ActionModel,
    joint: &JointState,
    money: usize,
    serial: usize,
) -> Result<JointState> {
    let members = check_member_register(model, joint, money)?;
    let table = act_table(model, &members, true)?;
    joint
        .qft_register(serial, FourierDirection::Forward)?
        .permute_two_registers(money, serial, |iy, iu| Ok((table[iu][iy], iu)))?
        .qft_register(serial, FourierDirection::Inverse)
}

/// Inverse of the coherent serial read: |note_h>|h> back to |note_h>|0>.
pub fn findh_coherent_inverse(
    model: &dyn ActionModel,
    joint: &JointState,
    money: usize,
    serial: usize,
) -> Result<JointState> {
    let members = check_member_register(model, joint, money)?;
    let table = act_table(model, &members, false)?;
    joint
        .qft_register(serial, FourierDirection::Forward)?
        .permute_two_registers(money, serial, |iy, iu| Ok((table[iu][iy], iu)))?
        .qft_register(serial, FourierDirection::Inverse)
}

/// Result of the quadratic-phase forgery pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KgeaReport {
    pub group: String,
    /// Probability of measuring g * x, indexed by g.
    pub distribution: Vec<f64>,
    pub max_deviation_from_uniform: f64,
    /// Whether the distribution is flat to within 1e-9.
    pub uniform: bool,
}

/// |sum_h exp(2 pi i (h^2 + g h) / n)| for each shift g; for odd n every
/// magnitude is exactly sqrt(n).
pub fn quadratic_gauss_magnitudes(n: u64) -> Vec<f64> {
    (0..n)
        .map(|g| {
            let mut acc = Complex64::new(0.0, 0.0);
            for h in 0..n {
                let num = (h * h + g * h) % n;
                acc += Complex64::from_polar(1.0, std::f64::consts::TAU * num as f64 / n as f64);
            }
            acc.norm()
        })
        .collect()
}

fn default_quadratic_phase(model: &dyn ActionModel) -> Result<impl Fn(&GroupElement) -> f64> {
    let spec = model.group();
    if spec.rank() != 1 {
        return Err(Error::Unsupported(
            "the built-in quadratic phase needs a cyclic group; pass a custom phase",
        ));
    }
    let n = spec.order();
    Ok(move |h: &GroupElement| {
        let r = h.residues()[0];
        let num = (r as u128 * r as u128 % n as u128) as u64;
        std::f64::consts::TAU * num as f64 / n as f64
    })
}

fn kgea_report(model: &dyn ActionModel, distribution: Vec<f64>) -> KgeaReport {
    let n = model.group().order() as f64;
    let max_deviation_from_uniform = distribution
        .iter()
        .map(|p| (p - 1.0 / n).abs())
        .fold(0.0, f64::max);
    KgeaReport {
        group: model.group().to_string(),
        uniform: max_deviation_from_uniform <= 1e-9,
        distribution,
        max_deviation_from_uniform,
    }
}

/// Forgery pipeline from the bare start label: coherently read the serial,
/// apply a phase to it, and uncompute the read. Measuring the result yields
/// g * x under the reported distribution, exactly uniform for the quadratic
/// phase on odd cyclic groups, so the sampled g cannot have been known.
///
/// Evaluates the closed-form amplitudes directly; see `kgea_attack_circuit`
/// for the same pipeline run gate by gate.
pub fn kgea_attack(
    model: &dyn ActionModel,
    custom_phase: Option<&dyn Fn(&GroupElement) -> f64>,
) -> Result<KgeaReport> {
    let spec = model.group();
    let n = spec.order();
    let default = if custom_phase.is_none() {
        Some(default_quadratic_phase(model)?)
    } else {
        None
    };
    let phase = |h: &GroupElement| -> f64 {
        match custom_phase {
            Some(f) => f(h),
            None => default.as_ref().expect("built above")(h),
        }
    };
    let phases: Vec<Complex64> = spec
        .elements()
        .map(|h| Complex64::from_polar(1.0, phase(&h)))
        .collect();
    let mut distribution = Vec::with_capacity(n as usize);
    for g in spec.elements() {
        let mut amp = Complex64::new(0.0, 0.0);
        for h in spec.elements() {
            amp += phases[h.index() as usize] * g.chi(&h)?;
        }
        distribution.push((amp / n as f64).norm_sqr());
    }
    Ok(kgea_report(model, distribution))
}

/// Gate-level cross-check of `kgea_attack`.
pub fn kgea_attack_circuit(
    model: &dyn ActionModel,
    custom_phase: Option<&dyn Fn(&GroupElement) -> f64>,
) -> Result<KgeaReport> {
    let spec = model.group();
    let default = if custom_phase.is_none() {
        Some(default_quadratic_phase(model)?)
    } else {
        None
    };
    let phase = |h: &GroupElement| -> f64 {
        match custom_phase {
            Some(f) => f(h),
            None => default.as_ref().expect("built above")(h),
        }
    };
    let members = member_basis(model)?;
    let start_idx = members
        .position(&model.start())
        .ok_or_else(|| Error::SpecMismatch("start label missing from member basis".into()))?;
    let money = StateVector::basis_state(&members, start_idx)?;
    let ancilla = StateVector::basis_state(&Basis::group_basis(spec)?, 0)?;
    let joint = JointState::tensor(&[&money, &ancilla])?;
    let joint = findh_coherent_forward(model, &joint, 0, 1)?;
    let joint = joint.phase_register(1, phase)?;
    let joint = findh_coherent_inverse(model, &joint, 0, 1)?;
    let (returned, rest) = joint.condition_register(1, 0)?;
    if (returned - 1.0).abs() > 1e-9 {
        return Err(Error::SpecMismatch(format!(
            "serial ancilla failed to uncompute: mass {returned} at zero"
        )));
    }
    let distribution = rest.into_single()?.amps().iter().map(|a| a.norm_sqr()).collect();
    Ok(kgea_report(model, distribution))
}

/// Splits a note for serial zero into a verified pair of notes with opposite
/// serials: duplicate the label register, coherently read the serial of one
/// half, and measure it. Since sum_g |g*x, g*x> equals
/// sum_h |note_h, note_-h> up to normalization, the post-measurement state is
/// the exact product |note_h> x |note_-h>.
pub fn complementary_pair<R: Rng>(
    model: &dyn ActionModel,
    zero_note: &StateVector,
    rng: &mut R,
) -> Result<(GroupElement, Banknote, Banknote)> {
    let zero = model.group().zero();
    let p = verify_prob(model, &zero, zero_note)?;
    if p < 1.0 - 1e-9 {
        return Err(Error::Precondition(format!(
            "input must verify as a serial-zero note; got acceptance {p}"
        )));
    }
    let (_, part) = member_projection(model, zero_note)?;
    let part = part.expect("verified state has member mass");
    let doubled = JointState::duplicate_register(&part)?;
    let ancilla = StateVector::basis_state(&Basis::group_basis(model.group())?, 0)?;
    let joint = doubled.append_register(&ancilla)?;
    let joint = findh_coherent_forward(model, &joint, 0, 2)?;
    let (_, outcome, rest) = joint.measure_register(2, rng)?;
    let h = model.group().element_at(outcome as u64)?;
    let (first, second) = rest.factor_product_pair()?;
    Ok((
        h.clone(),
        Banknote {
            serial: h.clone(),
            state: first,
        },
        Banknote {
            serial: h.neg(),
            state: second,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{GgamAction, TranslationAction};
    use crate::group::GroupSpec;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn translation(moduli: &[u64]) -> TranslationAction {
        TranslationAction::new(&GroupSpec::new(moduli.to_vec()).unwrap())
    }

    fn ggam(moduli: &[u64], seed: u64) -> GgamAction {
        GgamAction::new(&GroupSpec::new(moduli.to_vec()).unwrap(), 16, seed, false).unwrap()
    }

    #[test]
    fn note_state_z3_matches_hand_computation() {
        let model = translation(&[3]);
        let h = model.group().element(vec![1]).unwrap();
        let note = note_state(&model, &h).unwrap();
        let s = 1.0 / 3.0_f64.sqrt();
        let omega = std::f64::consts::TAU / 3.0;
        let expected = [
            Complex64::new(s, 0.0),
            Complex64::from_polar(s, omega),
            Complex64::from_polar(s, 2.0 * omega),
        ];
        for (a, e) in note.amps().iter().zip(&expected) {
            assert!((a - e).norm() < 1e-12);
        }
    }

    #[test]
    fn note_states_are_orthonormal() {
        let model = ggam(&[2, 5], 3);
        let spec = model.group().clone();
        let notes: Vec<StateVector> = spec
            .elements()
            .map(|h| note_state(&model, &h).unwrap())
            .collect();
        for (i, a) in notes.iter().enumerate() {
            for (j, b) in notes.iter().enumerate() {
                let ip = a.inner(b).unwrap();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((ip - Complex64::new(expected, 0.0)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn mint_serial_is_exactly_uniform() {
        for model in [ggam(&[12], 1), ggam(&[2, 3], 2)] {
            let n = model.group().order() as f64;
            for p in mint_serial_distribution(&model).unwrap() {
                assert_abs_diff_eq!(p, 1.0 / n, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn minted_note_matches_formula_exactly() {
        let model = ggam(&[10], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let note = mint(&model, &mut rng).unwrap();
            let expected = note_state(&model, &note.serial).unwrap();
            assert_abs_diff_eq!(
                note.state.fidelity(&expected).unwrap(),
                1.0,
                epsilon = 1e-10
            );
            // Equality holds amplitude by amplitude, not only up to phase.
            for (a, b) in note.state.amps().iter().zip(expected.amps()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn verify_accepts_genuine_notes_with_probability_one() {
        let model = ggam(&[7], 8);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let note = mint(&model, &mut rng).unwrap();
        let outcome = verify(&model, &note.serial, &note.state, &mut rng).unwrap();
        assert_abs_diff_eq!(outcome.accept_prob, 1.0, epsilon = 1e-10);
        assert!(outcome.accepted);
        let post = outcome.post_state.unwrap();
        assert_abs_diff_eq!(post.fidelity(&note.state).unwrap(), 1.0, epsilon = 1e-10);

        // Idempotence: accepting leaves a state that verifies again.
        let again = verify(&model, &note.serial, &post, &mut rng).unwrap();
        assert_abs_diff_eq!(again.accept_prob, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn verify_rejects_wrong_serials_exactly() {
        let model = ggam(&[7], 8);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let note = mint(&model, &mut rng).unwrap();
        let wrong = note.serial.add(&model.group().element(vec![1]).unwrap()).unwrap();
        let outcome = verify(&model, &wrong, &note.state, &mut rng).unwrap();
        assert_abs_diff_eq!(outcome.accept_prob, 0.0, epsilon = 1e-10);
        assert!(!outcome.accepted);
    }

    #[test]
    fn verify_is_the_projector_onto_the_claimed_note() {
        let model = ggam(&[5], 4);
        let spec = model.group().clone();
        let h = spec.element(vec![1]).unwrap();
        let h2 = spec.element(vec![3]).unwrap();
        let a = note_state(&model, &h).unwrap();
        let b = note_state(&model, &h2).unwrap();
        let amps: Vec<Complex64> = a
            .amps()
            .iter()
            .zip(b.amps())
            .map(|(x, y)| 0.6 * x + Complex64::new(0.0, 0.8) * y)
            .collect();
        let mixed = StateVector::from_amplitudes(a.basis(), amps).unwrap();
        assert_abs_diff_eq!(
            verify_prob(&model, &h, &mixed).unwrap(),
            0.36,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            verify_prob(&model, &h2, &mixed).unwrap(),
            0.64,
            epsilon = 1e-10
        );
    }

    #[test]
    fn verify_counts_only_member_mass() {
        let model = ggam(&[5], 4);
        let h = model.group().element(vec![2]).unwrap();
        let note = note_state(&model, &h).unwrap();
        let mut labels = note.basis().labels().to_vec();
        labels.push(crate::statevec::Label::bot(note.basis().width()));
        let padded = Basis::new(labels).unwrap();
        let mut amps: Vec<Complex64> =
            note.amps().iter().map(|a| 0.8 * a).collect();
        amps.push(Complex64::new(0.6, 0.0));
        let state = StateVector::from_amplitudes(&padded, amps).unwrap();
        let p = verify_prob(&model, &h, &state).unwrap();
        assert_abs_diff_eq!(p, 0.64, epsilon = 1e-10);

        let post = verify(&model, &h, &state, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .post_state
            .unwrap();
        assert_abs_diff_eq!(post.fidelity(&note).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn findh_reads_serials_and_collapses() {
        let model = ggam(&[9], 6);
        let spec = model.group().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for r in [0u64, 4, 8] {
            let h = spec.element(vec![r]).unwrap();
            let note = note_state(&model, &h).unwrap();
            let dist = findh_distribution(&model, &note).unwrap();
            assert_abs_diff_eq!(dist[h.index() as usize], 1.0, epsilon = 1e-10);
            let (read, post) = findh(&model, &note, &mut rng).unwrap();
            assert_eq!(read, h);
            assert_abs_diff_eq!(post.fidelity(&note).unwrap(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn findh_on_a_superposition_of_two_notes() {
        let model = ggam(&[6], 7);
        let spec = model.group().clone();
        let zero = spec.zero();
        let one = spec.element(vec![1]).unwrap();
        let a = note_state(&model, &zero).unwrap();
        let b = note_state(&model, &one).unwrap();
        let amps: Vec<Complex64> = a
            .amps()
            .iter()
            .zip(b.amps())
            .map(|(x, y)| 0.6 * x + 0.8 * y)
            .collect();
        let mixed = StateVector::from_amplitudes(a.basis(), amps).unwrap();
        let dist = findh_distribution(&model, &mixed).unwrap();
        assert_abs_diff_eq!(dist[0], 0.36, epsilon = 1e-10);
        assert_abs_diff_eq!(dist[1], 0.64, epsilon = 1e-10);
        for p in &dist[2..] {
            assert_abs_diff_eq!(*p, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn findh_refuses_states_outside_the_member_span() {
        let model = ggam(&[5], 4);
        let note = note_state(&model, &model.group().zero()).unwrap();
        let mut labels = note.basis().labels().to_vec();
        labels.push(crate::statevec::Label::bot(note.basis().width()));
        let padded = Basis::new(labels).unwrap();
        let mut amps: Vec<Complex64> = note.amps().iter().map(|a| 0.8 * a).collect();
        amps.push(Complex64::new(0.6, 0.0));
        let state = StateVector::from_amplitudes(&padded, amps).unwrap();
        match findh_distribution(&model, &state) {
            Err(Error::FindhDomain(outside)) => {
                assert_abs_diff_eq!(outside, 0.36, epsilon = 1e-10)
            }
            other => panic!("expected a domain error, got {other:?}"),
        }
    }

    #[test]
    fn coherent_serial_read_round_trips() {
        let model = ggam(&[8], 9);
        let spec = model.group().clone();
        let members = member_basis(&model).unwrap();
        let ancilla_basis = Basis::group_basis(&spec).unwrap();
        let h = spec.element(vec![5]).unwrap();
        let note = note_state(&model, &h).unwrap();
        let ancilla = StateVector::basis_state(&ancilla_basis, 0).unwrap();
        let joint = JointState::tensor(&[&note, &ancilla]).unwrap();
        let read = findh_coherent_forward(&model, &joint, 0, 1).unwrap();
        // The ancilla now holds h exactly.
        let dist = read.register_distribution(1).unwrap();
        assert_abs_diff_eq!(dist[h.index() as usize], 1.0, epsilon = 1e-10);

        let back = findh_coherent_inverse(&model, &read, 0, 1).unwrap();
        let (p0, money) = back.condition_register(1, 0).unwrap();
        assert_abs_diff_eq!(p0, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(
            money.into_single().unwrap().fidelity(&note).unwrap(),
            1.0,
            epsilon = 1e-10
        );

        // Also on a random member-span superposition.
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let s = StateVector::random_state(&members, &mut rng);
        let joint = JointState::tensor(&[&s, &ancilla]).unwrap();
        let through = findh_coherent_inverse(
            &model,
            &findh_coherent_forward(&model, &joint, 0, 1).unwrap(),
            0,
            1,
        )
        .unwrap();
        for (a, b) in through.amps().iter().zip(joint.amps()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn quadratic_gauss_magnitudes_hit_sqrt_n_for_odd_n() {
        for n in [3u64, 5, 7, 15, 21] {
            for m in quadratic_gauss_magnitudes(n) {
                assert_abs_diff_eq!(m, (n as f64).sqrt(), epsilon = 1e-9);
            }
        }
        // Even orders genuinely deviate.
        let mags = quadratic_gauss_magnitudes(4);
        assert!(mags.iter().any(|m| (m - 2.0).abs() > 1e-9));
    }

    #[test]
    fn kgea_attack_is_flat_on_odd_cyclic_groups() {
        for n in [3u64, 5, 9, 15, 27] {
            let model = ggam(&[n], n);
            let report = kgea_attack(&model, None).unwrap();
            assert!(report.uniform, "n={n}: dev {}", report.max_deviation_from_uniform);
            let total: f64 = report.distribution.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn kgea_circuit_matches_closed_form() {
        for n in [3u64, 4, 5, 8, 9] {
            let model = ggam(&[n], 2 * n + 1);
            let fast = kgea_attack(&model, None).unwrap();
            let slow = kgea_attack_circuit(&model, None).unwrap();
            for (a, b) in fast.distribution.iter().zip(&slow.distribution) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn kgea_supports_custom_phases_on_product_groups() {
        let model = ggam(&[2, 3], 13);
        assert!(kgea_attack(&model, None).is_err());
        let f = |h: &GroupElement| {
            let r = h.residues();
            std::f64::consts::TAU * (r[0] * 3 + r[1]) as f64 / 7.0
        };
        let report = kgea_attack(&model, Some(&f)).unwrap();
        let circuit = kgea_attack_circuit(&model, Some(&f)).unwrap();
        for (a, b) in report.distribution.iter().zip(&circuit.distribution) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
        let total: f64 = report.distribution.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn complementary_pair_yields_opposite_serials() {
        let model = ggam(&[9], 3);
        let spec = model.group().clone();
        let zero_note = note_state(&model, &spec.zero()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..4 {
            let (h, first, second) = complementary_pair(&model, &zero_note, &mut rng).unwrap();
            assert_eq!(first.serial, h);
            assert_eq!(second.serial, h.neg());
            assert_abs_diff_eq!(
                verify_prob(&model, &first.serial, &first.state).unwrap(),
                1.0,
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(
                verify_prob(&model, &second.serial, &second.state).unwrap(),
                1.0,
                epsilon = 1e-9
            );
        }

        let bad = note_state(&model, &spec.element(vec![2]).unwrap()).unwrap();
        assert!(matches!(
            complementary_pair(&model, &bad, &mut rng),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn banknote_json_round_trip() {
        let model = ggam(&[2, 5], 21);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let note = mint(&model, &mut rng).unwrap();
        let json = note.to_json(&model);
        let text = serde_json::to_string(&json).unwrap();
        let parsed: BanknoteJson = serde_json::from_str(&text).unwrap();
        let (rebuilt_model, rebuilt) = Banknote::from_json(&parsed).unwrap();
        assert_eq!(rebuilt.serial, note.serial);
        assert_abs_diff_eq!(
            verify_prob(rebuilt_model.as_ref(), &rebuilt.serial, &rebuilt.state).unwrap(),
            1.0,
            epsilon = 1e-10
        );
    }
}
