//! Dense complex statevector engine over label-indexed bases.
//!
//! States live over explicit ordered bases of opaque labels, so the same
//! machinery drives group registers (canonical index labels), random-injection
//! oracle labels, and tuple labels of wrapped actions. Group-indexed registers
//! additionally support the abelian QFT and group-element phase oracles.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupElement, GroupSpec};

/// Largest single-register basis size.
pub const MAX_STATE_DIM: usize = 4096;
/// Largest joint amplitude-vector length.
pub const MAX_JOINT_DIM: usize = 1 << 24;
/// Normalization tolerance enforced at construction and deserialization.
pub const NORM_TOL: f64 = 1e-9;

/// Opaque fixed-width byte label naming one basis vector.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(Box<[u8]>);

impl Label {
    pub fn new(bytes: Vec<u8>) -> Self {
        Label(bytes.into_boxed_slice())
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Canonical encoding of a register index: 8 big-endian bytes.
    pub fn from_index(idx: u64) -> Self {
        Label::new(idx.to_be_bytes().to_vec())
    }

    pub fn to_index(&self) -> Option<u64> {
        let arr: [u8; 8] = self.0.as_ref().try_into().ok()?;
        Some(u64::from_be_bytes(arr))
    }

    /// Distinguished out-of-band marker used when an oracle must act on
    /// inputs outside its valid label set inside a superposition.
    pub fn bot(width: usize) -> Self {
        Label::new(vec![0xff; width])
    }

    pub fn xor(&self, other: &Label) -> Result<Label> {
        if self.len() != other.len() {
            return Err(Error::LabelWidth {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(Label::new(
            self.0.iter().zip(other.0.iter()).map(|(a, b)| a ^ b).collect(),
        ))
    }

    pub fn concat(parts: &[&Label]) -> Label {
        let mut bytes = Vec::new();
        for p in parts {
            bytes.extend_from_slice(&p.0);
        }
        Label::new(bytes)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(&self.0))
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Label({})", hex::encode(&self.0))
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes =
            hex::decode(s).map_err(|e| Error::ParamInvalid(format!("bad hex label: {e}")))?;
        Ok(Label::new(bytes))
    }
}

#[derive(Debug)]
struct BasisInner {
    labels: Vec<Label>,
    index: HashMap<Label, usize>,
    width: usize,
    group: Option<GroupSpec>,
}

/// Ordered set of distinct fixed-width labels indexing one register.
#[derive(Clone, Debug)]
pub struct Basis {
    inner: Arc<BasisInner>,
}

impl PartialEq for Basis {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.labels == other.inner.labels
    }
}

impl Eq for Basis {}

impl Basis {
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        Basis::build(labels, None)
    }

    fn build(labels: Vec<Label>, group: Option<GroupSpec>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::ParamInvalid("basis needs at least one label".into()));
        }
        if labels.len() > MAX_STATE_DIM {
            return Err(Error::CapExceeded {
                what: "basis size",
                requested: labels.len() as u64,
                limit: MAX_STATE_DIM as u64,
            });
        }
        let width = labels[0].len();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.len() != width {
                return Err(Error::LabelWidth {
                    expected: width,
                    got: l.len(),
                });
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::ParamInvalid(format!("duplicate basis label {l}")));
            }
        }
        Ok(Basis {
            inner: Arc::new(BasisInner {
                labels,
                index,
                width,
                group,
            }),
        })
    }

    /// The canonical basis of a group register: index labels in mixed-radix order.
    pub fn group_basis(spec: &GroupSpec) -> Result<Self> {
        let labels = (0..spec.order()).map(Label::from_index).collect();
        Basis::build(labels, Some(spec.clone()))
    }

    pub fn len(&self) -> usize {
        self.inner.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.inner.width
    }

    pub fn group(&self) -> Option<&GroupSpec> {
        self.inner.group.as_ref()
    }

    pub fn label(&self, idx: usize) -> &Label {
        &self.inner.labels[idx]
    }

    pub fn labels(&self) -> &[Label] {
        &self.inner.labels
    }

    pub fn position(&self, label: &Label) -> Option<usize> {
        self.inner.index.get(label).copied()
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.inner.index.contains_key(label)
    }

    /// Stable union: self's labels in order, then other's new labels in order.
    pub fn union(&self, other: &Basis) -> Result<Basis> {
        if self.width() != other.width() {
            return Err(Error::LabelWidth {
                expected: self.width(),
                got: other.width(),
            });
        }
        let mut labels = self.inner.labels.clone();
        for l in other.labels() {
            if !self.contains(l) {
                labels.push(l.clone());
            }
        }
        Basis::new(labels)
    }
}

/// Pure state over one labeled register.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    basis: Basis,
    amps: Vec<Complex64>,
}

/// Direction of the group QFT; forward applies `chi`, inverse its conjugate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FourierDirection {
    Forward,
    Inverse,
}

impl StateVector {
    pub fn basis_state(basis: &Basis, idx: usize) -> Result<Self> {
        if idx >= basis.len() {
            return Err(Error::IndexOutOfRange {
                index: idx as u64,
                size: basis.len() as u64,
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.len()];
        amps[idx] = Complex64::new(1.0, 0.0);
        Ok(StateVector {
            basis: basis.clone(),
            amps,
        })
    }

    pub fn from_amplitudes(basis: &Basis, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != basis.len() {
            return Err(Error::BasisMismatch(format!(
                "{} amplitudes for a basis of size {}",
                amps.len(),
                basis.len()
            )));
        }
        let n2: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (n2 - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(n2));
        }
        Ok(StateVector {
            basis: basis.clone(),
            amps,
        })
    }

    /// Rescales the amplitudes to unit norm; errors on the zero vector.
    pub fn normalized(basis: &Basis, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != basis.len() {
            return Err(Error::BasisMismatch(format!(
                "{} amplitudes for a basis of size {}",
                amps.len(),
                basis.len()
            )));
        }
        let n2: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if n2 <= 0.0 {
            return Err(Error::DegenerateCollapse);
        }
        let s = n2.sqrt();
        Ok(StateVector {
            basis: basis.clone(),
            amps: amps.into_iter().map(|a| a / s).collect(),
        })
    }

    /// Uniform-random direction on the unit sphere of the register.
    pub fn random_state<R: Rng>(basis: &Basis, rng: &mut R) -> Self {
        let amps: Vec<Complex64> = (0..basis.len())
            .map(|_| {
                // Box-Muller pair; Gaussian components make the direction uniform.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (-2.0 * u1.ln()).sqrt();
                Complex64::new(r * u2.cos(), r * u2.sin())
            })
            .collect();
        StateVector::normalized(basis, amps).expect("gaussian draw is nonzero")
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amp(&self, idx: usize) -> Complex64 {
        self.amps[idx]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.basis != other.basis {
            return Err(Error::BasisMismatch("inner product".into()));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Global-phase-insensitive overlap |<self|other>|^2.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// Euclidean distance minimized over a global phase.
    pub fn distance_up_to_phase(&self, other: &StateVector) -> Result<f64> {
        let overlap = self.inner(other)?.norm();
        Ok((2.0 - 2.0 * overlap).max(0.0).sqrt())
    }

    /// Re-expresses the state over a superset basis.
    pub fn align_to(&self, target: &Basis) -> Result<StateVector> {
        let mut amps = vec![Complex64::new(0.0, 0.0); target.len()];
        for (i, l) in self.basis.labels().iter().enumerate() {
            match target.position(l) {
                Some(j) => amps[j] = self.amps[i],
                None => {
                    return Err(Error::BasisMismatch(format!(
                        "label {l} missing from alignment target"
                    )))
                }
            }
        }
        Ok(StateVector {
            basis: target.clone(),
            amps,
        })
    }

    fn require_group(&self) -> Result<&GroupSpec> {
        self.basis.group().ok_or(Error::NotGroupBasis)
    }

    /// Abelian QFT on a group register; forward maps
    /// |g> to |G|^{-1/2} sum_h chi(g,h) |h>.
    pub fn qft_group(&self, direction: FourierDirection) -> Result<StateVector> {
        let spec = self.require_group()?.clone();
        let mut amps = self.amps.clone();
        qft_axes(&mut amps, spec.moduli(), 1, direction);
        Ok(StateVector {
            basis: self.basis.clone(),
            amps,
        })
    }

    /// Multiplies amp(h) by exp(i f(h)) on a group register.
    pub fn apply_group_phase<F: Fn(&GroupElement) -> f64>(&self, f: F) -> Result<StateVector> {
        let spec = self.require_group()?.clone();
        let mut amps = self.amps.clone();
        for (i, a) in amps.iter_mut().enumerate() {
            let h = spec.element_at(i as u64)?;
            *a *= Complex64::from_polar(1.0, f(&h));
        }
        Ok(StateVector {
            basis: self.basis.clone(),
            amps,
        })
    }

    /// Relabels the register through an injective label map.
    ///
    /// When the image equals the original label set, amplitudes are permuted
    /// within the existing basis; otherwise the result lives over the image
    /// basis in source order.
    pub fn apply_label_map<F: Fn(&Label) -> Result<Label>>(&self, f: F) -> Result<StateVector> {
        let mut mapped = Vec::with_capacity(self.basis.len());
        for l in self.basis.labels() {
            mapped.push(f(l)?);
        }
        let all_inside = mapped.iter().all(|l| self.basis.contains(l));
        if all_inside {
            let mut amps = vec![Complex64::new(0.0, 0.0); self.basis.len()];
            let mut seen = vec![false; self.basis.len()];
            for (i, l) in mapped.iter().enumerate() {
                let j = self.basis.position(l).expect("checked inside");
                if seen[j] {
                    return Err(Error::PermutationInvalid(format!(
                        "two labels map to {l}"
                    )));
                }
                seen[j] = true;
                amps[j] = self.amps[i];
            }
            Ok(StateVector {
                basis: self.basis.clone(),
                amps,
            })
        } else {
            let basis = Basis::new(mapped)?;
            Ok(StateVector {
                basis,
                amps: self.amps.clone(),
            })
        }
    }

    /// Exact outcome distribution, a sampled outcome, and the collapsed state.
    pub fn measure<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, usize, StateVector) {
        let dist: Vec<f64> = self.amps.iter().map(|a| a.norm_sqr()).collect();
        let outcome = sample_from(&dist, rng);
        let collapsed =
            StateVector::basis_state(&self.basis, outcome).expect("outcome within basis");
        (dist, outcome, collapsed)
    }

    pub fn to_json(&self) -> StateJson {
        StateJson {
            basis: self.basis.labels().iter().map(|l| l.to_string()).collect(),
            amps: self.amps.iter().map(|a| (a.re, a.im)).collect(),
        }
    }

    pub fn from_json(json: &StateJson) -> Result<StateVector> {
        let labels = json
            .basis
            .iter()
            .map(|s| s.parse::<Label>())
            .collect::<Result<Vec<Label>>>()?;
        let basis = Basis::new(labels)?;
        let amps = json.amps.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        StateVector::from_amplitudes(&basis, amps)
    }
}

/// Serialized form of a state: hex labels plus (re, im) amplitude pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateJson {
    pub basis: Vec<String>,
    pub amps: Vec<(f64, f64)>,
}

/// Swap-test acceptance probability, exactly (1 + |<s1|s2>|^2) / 2.
pub fn swap_test(s1: &StateVector, s2: &StateVector) -> Result<f64> {
    Ok((1.0 + s1.fidelity(s2)?) / 2.0)
}

/// Exact swap-test probability together with one sampled accept bit.
pub fn swap_test_sampled<R: Rng>(
    s1: &StateVector,
    s2: &StateVector,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let p = swap_test(s1, s2)?;
    Ok((p, rng.gen_range(0.0..1.0) < p))
}

/// Pure state over several labeled registers, row-major with the last
/// register's index varying fastest.
#[derive(Clone, Debug)]
pub struct JointState {
    bases: Vec<Basis>,
    amps: Vec<Complex64>,
}

impl JointState {
    pub fn tensor(parts: &[&StateVector]) -> Result<JointState> {
        if parts.is_empty() {
            return Err(Error::ParamInvalid("tensor of zero registers".into()));
        }
        let mut dim: usize = 1;
        for p in parts {
            dim = dim
                .checked_mul(p.basis.len())
                .filter(|&d| d <= MAX_JOINT_DIM)
                .ok_or(Error::CapExceeded {
                    what: "joint dimension",
                    requested: u64::MAX,
                    limit: MAX_JOINT_DIM as u64,
                })?;
        }
        let mut amps = vec![Complex64::new(1.0, 0.0)];
        for p in parts {
            let mut next = Vec::with_capacity(amps.len() * p.amps.len());
            for a in &amps {
                for b in &p.amps {
                    next.push(a * b);
                }
            }
            amps = next;
        }
        Ok(JointState {
            bases: parts.iter().map(|p| p.basis.clone()).collect(),
            amps,
        })
    }

    pub fn from_single(state: &StateVector) -> JointState {
        JointState {
            bases: vec![state.basis.clone()],
            amps: state.amps.clone(),
        }
    }

    /// Embeds |y> as |y,y> over two copies of the register.
    pub fn duplicate_register(state: &StateVector) -> Result<JointState> {
        let n = state.basis.len();
        let dim = n
            .checked_mul(n)
            .filter(|&d| d <= MAX_JOINT_DIM)
            .ok_or(Error::CapExceeded {
                what: "joint dimension",
                requested: u64::MAX,
                limit: MAX_JOINT_DIM as u64,
            })?;
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        for (i, a) in state.amps.iter().enumerate() {
            amps[i * n + i] = *a;
        }
        Ok(JointState {
            bases: vec![state.basis.clone(), state.basis.clone()],
            amps,
        })
    }

    pub fn append_register(&self, state: &StateVector) -> Result<JointState> {
        let dim = self
            .amps
            .len()
            .checked_mul(state.amps.len())
            .filter(|&d| d <= MAX_JOINT_DIM)
            .ok_or(Error::CapExceeded {
                what: "joint dimension",
                requested: u64::MAX,
                limit: MAX_JOINT_DIM as u64,
            })?;
        let mut amps = Vec::with_capacity(dim);
        for a in &self.amps {
            for b in &state.amps {
                amps.push(a * b);
            }
        }
        let mut bases = self.bases.clone();
        bases.push(state.basis.clone());
        Ok(JointState { bases, amps })
    }

    pub fn arity(&self) -> usize {
        self.bases.len()
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn basis(&self, r: usize) -> &Basis {
        &self.bases[r]
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn dims(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.len()).collect()
    }

    fn stride(&self, r: usize) -> usize {
        self.bases[r + 1..].iter().map(|b| b.len()).product()
    }

    fn check_register(&self, r: usize) -> Result<()> {
        if r >= self.bases.len() {
            return Err(Error::IndexOutOfRange {
                index: r as u64,
                size: self.bases.len() as u64,
            });
        }
        Ok(())
    }

    /// QFT on one group-indexed register, batched over the others.
    pub fn qft_register(&self, r: usize, direction: FourierDirection) -> Result<JointState> {
        self.check_register(r)?;
        let spec = self.bases[r].group().ok_or(Error::NotGroupBasis)?.clone();
        let mut amps = self.amps.clone();
        let inner = self.stride(r);
        qft_axes(&mut amps, spec.moduli(), inner, direction);
        Ok(JointState {
            bases: self.bases.clone(),
            amps,
        })
    }

    /// Phase oracle on one group-indexed register.
    pub fn phase_register<F: Fn(&GroupElement) -> f64>(
        &self,
        r: usize,
        f: F,
    ) -> Result<JointState> {
        self.check_register(r)?;
        let spec = self.bases[r].group().ok_or(Error::NotGroupBasis)?.clone();
        let inner = self.stride(r);
        let n = self.bases[r].len();
        let phases: Vec<Complex64> = (0..n)
            .map(|i| {
                let h = spec.element_at(i as u64)?;
                Ok(Complex64::from_polar(1.0, f(&h)))
            })
            .collect::<Result<_>>()?;
        let mut amps = self.amps.clone();
        for (flat, a) in amps.iter_mut().enumerate() {
            let idx = (flat / inner) % n;
            *a *= phases[idx];
        }
        Ok(JointState {
            bases: self.bases.clone(),
            amps,
        })
    }

    /// Index-level permutation acting jointly on two registers; the map must
    /// be a bijection of the index-pair grid.
    pub fn permute_two_registers<F: Fn(usize, usize) -> Result<(usize, usize)>>(
        &self,
        r1: usize,
        r2: usize,
        f: F,
    ) -> Result<JointState> {
        self.check_register(r1)?;
        self.check_register(r2)?;
        if r1 == r2 {
            return Err(Error::ParamInvalid("registers must differ".into()));
        }
        let d1 = self.bases[r1].len();
        let d2 = self.bases[r2].len();
        let mut pair_map = vec![usize::MAX; d1 * d2];
        let mut seen = vec![false; d1 * d2];
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let (o1, o2) = f(i1, i2)?;
                if o1 >= d1 || o2 >= d2 {
                    return Err(Error::PermutationInvalid(format!(
                        "pair ({i1},{i2}) mapped out of range to ({o1},{o2})"
                    )));
                }
                let out = o1 * d2 + o2;
                if seen[out] {
                    return Err(Error::PermutationInvalid(format!(
                        "two pairs map to ({o1},{o2})"
                    )));
                }
                seen[out] = true;
                pair_map[i1 * d2 + i2] = out;
            }
        }
        let s1 = self.stride(r1);
        let s2 = self.stride(r2);
        let mut amps = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        for (flat, a) in self.amps.iter().enumerate() {
            let i1 = (flat / s1) % d1;
            let i2 = (flat / s2) % d2;
            let out = pair_map[i1 * d2 + i2];
            let (o1, o2) = (out / d2, out % d2);
            let target = flat - i1 * s1 - i2 * s2 + o1 * s1 + o2 * s2;
            amps[target] = *a;
        }
        Ok(JointState {
            bases: self.bases.clone(),
            amps,
        })
    }

    /// Label-level joint map on two registers that may introduce new labels;
    /// the resulting registers get image bases in first-occurrence order.
    pub fn map_two_registers_labels<F: Fn(&Label, &Label) -> Result<(Label, Label)>>(
        &self,
        r1: usize,
        r2: usize,
        f: F,
    ) -> Result<JointState> {
        self.check_register(r1)?;
        self.check_register(r2)?;
        if r1 == r2 {
            return Err(Error::ParamInvalid("registers must differ".into()));
        }
        let b1 = &self.bases[r1];
        let b2 = &self.bases[r2];
        let d1 = b1.len();
        let d2 = b2.len();

        let mut out1: Vec<Label> = Vec::new();
        let mut out2: Vec<Label> = Vec::new();
        let mut idx1: HashMap<Label, usize> = HashMap::new();
        let mut idx2: HashMap<Label, usize> = HashMap::new();
        let mut pair_out = vec![(0usize, 0usize); d1 * d2];
        let mut seen = std::collections::HashSet::new();
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let (l1, l2) = f(b1.label(i1), b2.label(i2))?;
                let o1 = *idx1.entry(l1.clone()).or_insert_with(|| {
                    out1.push(l1.clone());
                    out1.len() - 1
                });
                let o2 = *idx2.entry(l2.clone()).or_insert_with(|| {
                    out2.push(l2.clone());
                    out2.len() - 1
                });
                if !seen.insert((o1, o2)) {
                    return Err(Error::PermutationInvalid(format!(
                        "two label pairs map to ({l1},{l2})"
                    )));
                }
                pair_out[i1 * d2 + i2] = (o1, o2);
            }
        }

        let nb1 = Basis::new(out1)?;
        let nb2 = Basis::new(out2)?;
        let mut bases = self.bases.clone();
        bases[r1] = nb1;
        bases[r2] = nb2;

        let new_dims: Vec<usize> = bases.iter().map(|b| b.len()).collect();
        let new_dim: usize = new_dims.iter().product();
        if new_dim > MAX_JOINT_DIM {
            return Err(Error::CapExceeded {
                what: "joint dimension",
                requested: new_dim as u64,
                limit: MAX_JOINT_DIM as u64,
            });
        }
        let mut new_strides = vec![1usize; bases.len()];
        for r in (0..bases.len().saturating_sub(1)).rev() {
            new_strides[r] = new_strides[r + 1] * new_dims[r + 1];
        }

        let old_dims = self.dims();
        let mut amps = vec![Complex64::new(0.0, 0.0); new_dim];
        for (flat, a) in self.amps.iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            let mut rest = flat;
            let mut target = 0usize;
            let mut i1 = 0usize;
            let mut i2 = 0usize;
            let mut others = Vec::with_capacity(self.bases.len());
            for r in (0..self.bases.len()).rev() {
                let idx = rest % old_dims[r];
                rest /= old_dims[r];
                others.push((r, idx));
                if r == r1 {
                    i1 = idx;
                } else if r == r2 {
                    i2 = idx;
                }
            }
            let (o1, o2) = pair_out[i1 * d2 + i2];
            for &(r, idx) in &others {
                let out_idx = if r == r1 {
                    o1
                } else if r == r2 {
                    o2
                } else {
                    idx
                };
                target += out_idx * new_strides[r];
            }
            amps[target] = *a;
        }
        Ok(JointState { bases, amps })
    }

    /// Exact marginal distribution of one register.
    pub fn register_distribution(&self, r: usize) -> Result<Vec<f64>> {
        self.check_register(r)?;
        let n = self.bases[r].len();
        let s = self.stride(r);
        let mut dist = vec![0.0; n];
        for (flat, a) in self.amps.iter().enumerate() {
            dist[(flat / s) % n] += a.norm_sqr();
        }
        Ok(dist)
    }

    /// Conditions register `r` on `outcome`, returning the outcome's
    /// probability mass and the renormalized state with `r` removed.
    pub fn condition_register(&self, r: usize, outcome: usize) -> Result<(f64, JointState)> {
        self.check_register(r)?;
        if self.bases.len() == 1 {
            return Err(Error::ParamInvalid(
                "cannot remove the last register; use StateVector::measure".into(),
            ));
        }
        let n = self.bases[r].len();
        if outcome >= n {
            return Err(Error::IndexOutOfRange {
                index: outcome as u64,
                size: n as u64,
            });
        }
        let s = self.stride(r);
        let mut kept = Vec::with_capacity(self.amps.len() / n);
        let mut mass = 0.0;
        for (flat, a) in self.amps.iter().enumerate() {
            if (flat / s) % n == outcome {
                kept.push(*a);
                mass += a.norm_sqr();
            }
        }
        if mass <= 0.0 {
            return Err(Error::DegenerateCollapse);
        }
        let scale = mass.sqrt();
        let amps = kept.into_iter().map(|a| a / scale).collect();
        let bases = self
            .bases
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != r)
            .map(|(_, b)| b.clone())
            .collect();
        Ok((mass, JointState { bases, amps }))
    }

    /// Measures one register: exact distribution, sampled outcome, and the
    /// collapsed state with the register removed.
    pub fn measure_register<R: Rng>(
        &self,
        r: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, usize, JointState)> {
        let dist = self.register_distribution(r)?;
        let outcome = sample_from(&dist, rng);
        let (_, collapsed) = self.condition_register(r, outcome)?;
        Ok((dist, outcome, collapsed))
    }

    pub fn into_single(self) -> Result<StateVector> {
        if self.bases.len() != 1 {
            return Err(Error::ParamInvalid(format!(
                "into_single on arity {}",
                self.bases.len()
            )));
        }
        Ok(StateVector {
            basis: self.bases.into_iter().next().expect("one basis"),
            amps: self.amps,
        })
    }

    /// Splits an exact two-register product state into its factors.
    pub fn factor_product_pair(&self) -> Result<(StateVector, StateVector)> {
        if self.bases.len() != 2 {
            return Err(Error::ParamInvalid(format!(
                "factor_product_pair on arity {}",
                self.bases.len()
            )));
        }
        let d2 = self.bases[1].len();
        let (anchor, _) = self
            .amps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .expect("nonempty amplitudes");
        let (ai, aj) = (anchor / d2, anchor % d2);
        let col: Vec<Complex64> = (0..self.bases[0].len())
            .map(|i| self.amps[i * d2 + aj])
            .collect();
        let row: Vec<Complex64> = (0..d2).map(|j| self.amps[ai * d2 + j]).collect();
        let left = StateVector::normalized(&self.bases[0], col)?;
        let right = StateVector::normalized(&self.bases[1], row)?;
        for i in 0..self.bases[0].len() {
            for j in 0..d2 {
                let reconstructed = left.amps[i] * right.amps[j]
                    * self.amps[anchor]
                    / (left.amps[ai] * right.amps[aj]);
                if (reconstructed - self.amps[i * d2 + j]).norm() > 1e-9 {
                    return Err(Error::Precondition(
                        "state is not a product of its two registers".into(),
                    ));
                }
            }
        }
        // Fold the anchor's phase into the left factor so left x right
        // reproduces the joint exactly.
        let phase = self.amps[anchor] / (left.amps[ai] * right.amps[aj]);
        let left = StateVector {
            basis: left.basis.clone(),
            amps: left.amps.iter().map(|a| a * phase).collect(),
        };
        Ok((left, right))
    }
}

/// In-place per-axis DFT over a mixed-radix register embedded with the given
/// inner stride; forward uses exp(+i 2 pi / n) kernels and 1/sqrt(n) scaling.
pub(crate) fn qft_axes(
    amps: &mut [Complex64],
    moduli: &[u64],
    inner_stride: usize,
    dir: FourierDirection,
) {
    let reg_dim: usize = moduli.iter().product::<u64>() as usize;
    debug_assert_eq!(amps.len() % (reg_dim * inner_stride), 0);
    let mut axis_inner = inner_stride;
    for &n in moduli.iter().rev() {
        let n = n as usize;
        if n > 1 {
            dft_axis(amps, n, axis_inner, dir);
        }
        axis_inner *= n;
    }
}

fn dft_axis(amps: &mut [Complex64], n: usize, inner: usize, dir: FourierDirection) {
    let sign = match dir {
        FourierDirection::Forward => 1.0,
        FourierDirection::Inverse => -1.0,
    };
    let roots: Vec<Complex64> = (0..n)
        .map(|t| Complex64::from_polar(1.0, sign * std::f64::consts::TAU * t as f64 / n as f64))
        .collect();
    let scale = 1.0 / (n as f64).sqrt();
    let block = n * inner;
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for block_start in (0..amps.len()).step_by(block) {
        for off in 0..inner {
            for (k, s) in scratch.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    acc += amps[block_start + j * inner + off] * roots[(j * k) % n];
                }
                *s = acc * scale;
            }
            for (k, s) in scratch.iter().enumerate() {
                amps[block_start + k * inner + off] = *s;
            }
        }
    }
}

fn sample_from<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let total: f64 = dist.iter().sum();
    let mut target = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
    for (i, &p) in dist.iter().enumerate() {
        if target < p {
            return i;
        }
        target -= p;
    }
    dist.iter()
        .rposition(|&p| p > 0.0)
        .expect("distribution has mass")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cyclic_basis(n: u64) -> (GroupSpec, Basis) {
        let spec = GroupSpec::cyclic(n).unwrap();
        let basis = Basis::group_basis(&spec).unwrap();
        (spec, basis)
    }

    #[test]
    fn label_hex_round_trip() {
        let l = Label::new(vec![0x00, 0xab, 0x3c]);
        assert_eq!(l.to_string(), "00ab3c");
        assert_eq!("00ab3c".parse::<Label>().unwrap(), l);
        assert_eq!(Label::from_index(5).to_index(), Some(5));
        assert_ne!(Label::bot(8), Label::from_index(5));
    }

    #[test]
    fn basis_rejects_duplicates_and_mixed_widths() {
        let a = Label::from_index(1);
        assert!(Basis::new(vec![a.clone(), a.clone()]).is_err());
        assert!(Basis::new(vec![a, Label::new(vec![1, 2])]).is_err());
    }

    #[test]
    fn qft_forward_on_zero_gives_uniform() {
        let (_, basis) = cyclic_basis(6);
        let s = StateVector::basis_state(&basis, 0).unwrap();
        let t = s.qft_group(FourierDirection::Forward).unwrap();
        for a in t.amps() {
            assert_abs_diff_eq!(a.re, 1.0 / 6.0_f64.sqrt(), epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn qft_z2_on_one_gives_signed_pair() {
        let (_, basis) = cyclic_basis(2);
        let s = StateVector::basis_state(&basis, 1).unwrap();
        let t = s.qft_group(FourierDirection::Forward).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(t.amp(0).re, r, epsilon = 1e-12);
        assert_abs_diff_eq!(t.amp(1).re, -r, epsilon = 1e-12);
    }

    #[test]
    fn qft_matches_direct_character_sum() {
        for moduli in [vec![5], vec![2, 3], vec![4, 4]] {
            let spec = GroupSpec::new(moduli).unwrap();
            let basis = Basis::group_basis(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let s = StateVector::random_state(&basis, &mut rng);
            let t = s.qft_group(FourierDirection::Forward).unwrap();
            let scale = 1.0 / (spec.order() as f64).sqrt();
            for h in spec.elements() {
                let mut acc = Complex64::new(0.0, 0.0);
                for g in spec.elements() {
                    acc += g.chi(&h).unwrap() * s.amp(g.index() as usize);
                }
                let direct = acc * scale;
                assert!((direct - t.amp(h.index() as usize)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn qft_inverse_undoes_forward() {
        let (_, basis) = cyclic_basis(35);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = StateVector::random_state(&basis, &mut rng);
        let back = s
            .qft_group(FourierDirection::Forward)
            .unwrap()
            .qft_group(FourierDirection::Inverse)
            .unwrap();
        for (a, b) in s.amps().iter().zip(back.amps()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn qft_columns_orthonormal_exhaustive() {
        // Every column pair of the QFT matrix, for a spread of group shapes.
        for moduli in [vec![16], vec![2, 9], vec![3, 5], vec![2, 2, 2]] {
            let spec = GroupSpec::new(moduli).unwrap();
            let basis = Basis::group_basis(&spec).unwrap();
            let n = spec.order() as usize;
            let cols: Vec<StateVector> = (0..n)
                .map(|i| {
                    StateVector::basis_state(&basis, i)
                        .unwrap()
                        .qft_group(FourierDirection::Forward)
                        .unwrap()
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let ip = cols[i].inner(&cols[j]).unwrap();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - Complex64::new(expected, 0.0)).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn group_phase_matches_direct_evaluation() {
        let (spec, basis) = cyclic_basis(5);
        let n = spec.order() as f64;
        let uniform = StateVector::basis_state(&basis, 0)
            .unwrap()
            .qft_group(FourierDirection::Forward)
            .unwrap();
        let f = |h: &GroupElement| {
            let r = h.residues()[0] as f64;
            std::f64::consts::TAU * r * r / n
        };
        let phased = uniform.apply_group_phase(f).unwrap();
        for h in spec.elements() {
            let expected = uniform.amp(h.index() as usize)
                * Complex64::from_polar(1.0, f(&h));
            assert!((phased.amp(h.index() as usize) - expected).norm() < 1e-12);
        }

        let trivial = uniform.apply_group_phase(|_| 0.0).unwrap();
        assert_abs_diff_eq!(trivial.fidelity(&uniform).unwrap(), 1.0, epsilon = 1e-12);
        let global = uniform
            .apply_group_phase(|_| std::f64::consts::PI)
            .unwrap();
        assert_abs_diff_eq!(global.fidelity(&uniform).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn label_permutation_within_basis_translates() {
        let (spec, basis) = cyclic_basis(3);
        let s = StateVector::basis_state(&basis, 0).unwrap();
        let shifted = s
            .apply_label_map(|l| {
                let i = l.to_index().unwrap();
                Ok(Label::from_index((i + 1) % spec.order()))
            })
            .unwrap();
        assert_eq!(shifted.basis(), &basis);
        assert_abs_diff_eq!(shifted.amp(1).re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn label_permutation_rejects_collisions() {
        let (_, basis) = cyclic_basis(3);
        let s = StateVector::basis_state(&basis, 0).unwrap();
        assert!(matches!(
            s.apply_label_map(|_| Ok(Label::from_index(0))),
            Err(Error::PermutationInvalid(_))
        ));
    }

    #[test]
    fn label_permutation_inverse_composes_to_identity() {
        let (spec, basis) = cyclic_basis(7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = StateVector::random_state(&basis, &mut rng);
        let n = spec.order();
        let fwd = s
            .apply_label_map(|l| Ok(Label::from_index((l.to_index().unwrap() + 3) % n)))
            .unwrap();
        let back = fwd
            .apply_label_map(|l| Ok(Label::from_index((l.to_index().unwrap() + n - 3) % n)))
            .unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn measurement_distribution_and_determinism() {
        let (_, basis) = cyclic_basis(4);
        let uniform = StateVector::basis_state(&basis, 0)
            .unwrap()
            .qft_group(FourierDirection::Forward)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (dist, outcome, collapsed) = uniform.measure(&mut rng);
        for p in &dist {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(collapsed.amp(outcome).norm(), 1.0, epsilon = 1e-12);

        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let (_, outcome2, _) = uniform.measure(&mut rng2);
        assert_eq!(outcome, outcome2);

        let basis_state = StateVector::basis_state(&basis, 2).unwrap();
        let (dist, outcome, _) = basis_state.measure(&mut rng);
        assert_eq!(outcome, 2);
        assert_abs_diff_eq!(dist[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn swap_test_known_points() {
        let (_, basis) = cyclic_basis(2);
        let zero = StateVector::basis_state(&basis, 0).unwrap();
        let one = StateVector::basis_state(&basis, 1).unwrap();
        assert_abs_diff_eq!(swap_test(&zero, &zero).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(swap_test(&zero, &one).unwrap(), 0.5, epsilon = 1e-12);

        let s = StateVector::from_amplitudes(
            &basis,
            vec![Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0)],
        )
        .unwrap();
        assert_abs_diff_eq!(swap_test(&s, &zero).unwrap(), 0.68, epsilon = 1e-12);
    }

    #[test]
    fn swap_test_matches_sampled_frequency() {
        let (_, basis) = cyclic_basis(2);
        let zero = StateVector::basis_state(&basis, 0).unwrap();
        let s = StateVector::from_amplitudes(
            &basis,
            vec![Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 20_000usize;
        let mut hits = 0usize;
        for _ in 0..trials {
            let (_, bit) = swap_test_sampled(&s, &zero, &mut rng).unwrap();
            if bit {
                hits += 1;
            }
        }
        let p = 0.68;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let freq = hits as f64 / trials as f64;
        assert!((freq - p).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn tensor_and_inner_products() {
        let (_, basis) = cyclic_basis(3);
        let a = StateVector::basis_state(&basis, 1).unwrap();
        let b = StateVector::basis_state(&basis, 2).unwrap();
        let joint = JointState::tensor(&[&a, &b]).unwrap();
        assert_eq!(joint.dim(), 9);
        assert_abs_diff_eq!(joint.amps()[1 * 3 + 2].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.inner(&a).unwrap().re, 1.0, epsilon = 1e-12);
        assert!(a.inner(&b).unwrap().norm() < 1e-12);
    }

    #[test]
    fn joint_qft_acts_on_one_register_only() {
        let (_, basis) = cyclic_basis(3);
        let a = StateVector::basis_state(&basis, 1).unwrap();
        let b = StateVector::basis_state(&basis, 2).unwrap();
        let joint = JointState::tensor(&[&a, &b]).unwrap();
        let t = joint.qft_register(0, FourierDirection::Forward).unwrap();
        let expected_a = a.qft_group(FourierDirection::Forward).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if j == 2 {
                    expected_a.amp(i)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert!((t.amps()[i * 3 + j] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn condition_register_extracts_exact_posterior() {
        let (_, basis) = cyclic_basis(2);
        // (|00> + |01> + |10>) / sqrt(3)
        let b2 = basis.clone();
        let amps = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        let scale = 3.0_f64.sqrt();
        let joint = JointState {
            bases: vec![basis.clone(), b2],
            amps: amps.into_iter().map(|a| a / scale).collect(),
        };
        let dist = joint.register_distribution(0).unwrap();
        assert_abs_diff_eq!(dist[0], 2.0 / 3.0, epsilon = 1e-12);
        let (mass, rest) = joint.condition_register(0, 0).unwrap();
        assert_abs_diff_eq!(mass, 2.0 / 3.0, epsilon = 1e-12);
        let single = rest.into_single().unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(single.amp(0).re, r, epsilon = 1e-12);
        assert_abs_diff_eq!(single.amp(1).re, r, epsilon = 1e-12);

        assert!(matches!(
            joint.condition_register(1, 1).unwrap().1.into_single(),
            Ok(_)
        ));
        let zero_mass = JointState {
            bases: joint.bases.clone(),
            amps: vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        };
        assert!(matches!(
            zero_mass.condition_register(0, 1),
            Err(Error::DegenerateCollapse)
        ));
    }

    #[test]
    fn permute_two_registers_requires_bijection() {
        let (_, basis) = cyclic_basis(2);
        let a = StateVector::basis_state(&basis, 0).unwrap();
        let joint = JointState::tensor(&[&a, &a]).unwrap();
        assert!(joint.permute_two_registers(0, 1, |_, _| Ok((0, 0))).is_err());
        let swapped = joint
            .permute_two_registers(0, 1, |i, j| Ok((j, i)))
            .unwrap();
        assert_abs_diff_eq!(swapped.amps()[0].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn factor_product_pair_round_trip() {
        let (_, basis) = cyclic_basis(3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = StateVector::random_state(&basis, &mut rng);
        let b = StateVector::random_state(&basis, &mut rng);
        let joint = JointState::tensor(&[&a, &b]).unwrap();
        let (fa, fb) = joint.factor_product_pair().unwrap();
        assert_abs_diff_eq!(fa.fidelity(&a).unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fb.fidelity(&b).unwrap(), 1.0, epsilon = 1e-9);
        // Factor phases recombine to the exact joint amplitudes.
        for i in 0..3 {
            for j in 0..3 {
                let prod = fa.amp(i) * fb.amp(j);
                assert!((prod - joint.amps()[i * 3 + j]).norm() < 1e-9);
            }
        }

        let entangled = JointState::duplicate_register(
            &StateVector::basis_state(&basis, 0)
                .unwrap()
                .qft_group(FourierDirection::Forward)
                .unwrap(),
        )
        .unwrap();
        assert!(entangled.factor_product_pair().is_err());
    }

    #[test]
    fn state_json_round_trip() {
        let (_, basis) = cyclic_basis(5);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let s = StateVector::random_state(&basis, &mut rng);
        let json = s.to_json();
        let text = serde_json::to_string(&json).unwrap();
        let parsed: StateJson = serde_json::from_str(&text).unwrap();
        let back = StateVector::from_json(&parsed).unwrap();
        assert_eq!(back.basis().labels(), s.basis().labels());
        for (a, b) in back.amps().iter().zip(s.amps()) {
            assert!((a - b).norm() < 1e-12);
        }

        let mut bad = s.to_json();
        bad.amps[0] = (2.0, 0.0);
        assert!(StateVector::from_json(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn qft_preserves_norm(n in 1u64..40, seed in any::<u64>()) {
            let (_, basis) = cyclic_basis(n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = StateVector::random_state(&basis, &mut rng);
            let t = s.qft_group(FourierDirection::Forward).unwrap();
            prop_assert!((t.norm_sqr() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn union_alignment_preserves_inner_products(seed in any::<u64>()) {
            let (_, b1) = cyclic_basis(5);
            let shifted: Vec<Label> = (3..8).map(Label::from_index).collect();
            let b2 = Basis::new(shifted).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s1 = StateVector::random_state(&b1, &mut rng);
            let s2 = StateVector::random_state(&b2, &mut rng);
            let u = b1.union(&b2).unwrap();
            let a1 = s1.align_to(&u).unwrap();
            let a2 = s2.align_to(&u).unwrap();
            // Overlap counts only the shared labels 3 and 4.
            let mut expected = Complex64::new(0.0, 0.0);
            for (i, l) in b1.labels().iter().enumerate() {
                if let Some(j) = b2.position(l) {
                    expected += s1.amp(i).conj() * s2.amp(j);
                }
            }
            prop_assert!((a1.inner(&a2).unwrap() - expected).norm() < 1e-12);
        }
    }
}
