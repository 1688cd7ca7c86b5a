//! Group actions on opaque labels.
//!
//! Every model exposes the same interface: a distinguished start label, a
//! partial action of a fixed abelian group on labels, and a membership
//! predicate for the orbit of the start label. Invalid inputs map to `None`
//! rather than an in-band error value, so oracles stay total on superpositions
//! whose support is restricted to valid labels.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{AmbientSubgroup, GroupElement, GroupSpec};
use crate::statevec::{Basis, Label};

/// Largest full relabeling table a wrapped action may materialize.
pub const MAX_WRAPPED_TABLE: u64 = 5_000_000;

/// A group action on labels with a distinguished start point.
pub trait ActionModel: Send + Sync {
    fn group(&self) -> &GroupSpec;

    /// The base point whose orbit forms the member set.
    fn start(&self) -> Label;

    /// Applies `g` to a label; `Ok(None)` marks an input outside the domain.
    fn act(&self, g: &GroupElement, label: &Label) -> Result<Option<Label>>;

    /// Whether the label belongs to the orbit of the start label.
    fn member(&self, label: &Label) -> bool;

    /// Bit length of the label encoding.
    fn label_bits(&self) -> usize;

    fn label_width(&self) -> usize {
        self.label_bits().div_ceil(8)
    }

    /// Orbit labels in group-index order: entry i is `elements()[i] * start`.
    fn member_labels(&self) -> Result<Vec<Label>> {
        let start = self.start();
        let mut labels = Vec::with_capacity(self.group().order() as usize);
        for g in self.group().elements() {
            match self.act(&g, &start)? {
                Some(l) => labels.push(l),
                None => {
                    return Err(Error::SpecMismatch(
                        "start label left the domain under a group element".into(),
                    ))
                }
            }
        }
        Ok(labels)
    }

    fn supports_twist(&self) -> bool {
        false
    }

    /// The orbit involution sending `g * start` to `(-g) * start`.
    fn twist(&self, _label: &Label) -> Result<Option<Label>> {
        Err(Error::Unsupported("this action model has no twist"))
    }

    fn descriptor(&self) -> ActionDescriptor;
}

/// Basis of the member set in group-index order.
pub fn member_basis(model: &dyn ActionModel) -> Result<Basis> {
    Basis::new(model.member_labels()?)
}

/// Uniform label of the given bit length, high bits of the leading byte zero.
pub fn random_label<R: Rng>(bits: usize, rng: &mut R) -> Label {
    assert!(bits > 0, "labels need at least one bit");
    let width = bits.div_ceil(8);
    let mut bytes = vec![0u8; width];
    rng.fill(&mut bytes[..]);
    let extra = width * 8 - bits;
    if extra > 0 {
        bytes[0] &= 0xff >> extra;
    }
    Label::new(bytes)
}

fn sample_distinct_labels<R: Rng>(count: u64, bits: usize, rng: &mut R) -> Result<Vec<Label>> {
    if bits < 64 && count > (1u64 << bits) {
        return Err(Error::ParamInvalid(format!(
            "cannot fit {count} distinct labels in {bits} bits"
        )));
    }
    let mut seen = HashSet::with_capacity(count as usize);
    let mut labels = Vec::with_capacity(count as usize);
    while labels.len() < count as usize {
        let l = random_label(bits, rng);
        if seen.insert(l.clone()) {
            labels.push(l);
        }
    }
    Ok(labels)
}

/// Serializable recipe that rebuilds an action model deterministically.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ActionDescriptor {
    pub kind: String,
    pub group: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_bits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub twisted: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_points: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub twist_perm: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<ActionDescriptor>>,
    #[serde(skip_serializing_if = "Option::is_none", rename = "A")]
    pub matrix: Option<Vec<Vec<u64>>>,
    #[serde(skip_serializing_if = "Option::is_none", rename = "B")]
    pub exponent_bound: Option<i64>,
}

impl ActionDescriptor {
    fn bare(kind: &str, group: &GroupSpec) -> Self {
        ActionDescriptor {
            kind: kind.to_string(),
            group: group.to_string(),
            label_bits: None,
            seed: None,
            twisted: None,
            coeffs: None,
            base_points: None,
            twist_perm: None,
            base: None,
            matrix: None,
            exponent_bound: None,
        }
    }
}

/// Rebuilds the described model.
pub fn build_action(desc: &ActionDescriptor) -> Result<Arc<dyn ActionModel>> {
    let spec: GroupSpec = desc.group.parse()?;
    match desc.kind.as_str() {
        "translation" => Ok(Arc::new(TranslationAction::new(&spec))),
        "ggam" => {
            let bits = desc
                .label_bits
                .ok_or_else(|| Error::ParamInvalid("ggam descriptor needs label_bits".into()))?;
            let seed = desc
                .seed
                .ok_or_else(|| Error::ParamInvalid("ggam descriptor needs seed".into()))?;
            Ok(Arc::new(GgamAction::new(
                &spec,
                bits,
                seed,
                desc.twisted.unwrap_or(false),
            )?))
        }
        "wrapped" => {
            let base_desc = desc
                .base
                .as_ref()
                .ok_or_else(|| Error::ParamInvalid("wrapped descriptor needs a base".into()))?;
            let base = build_action(base_desc)?;
            let coeffs = desc
                .coeffs
                .clone()
                .ok_or_else(|| Error::ParamInvalid("wrapped descriptor needs coeffs".into()))?;
            let points = desc
                .base_points
                .as_ref()
                .ok_or_else(|| Error::ParamInvalid("wrapped descriptor needs base_points".into()))?
                .iter()
                .map(|s| s.parse::<Label>())
                .collect::<Result<Vec<_>>>()?;
            let bits = desc
                .label_bits
                .ok_or_else(|| Error::ParamInvalid("wrapped descriptor needs label_bits".into()))?;
            let seed = desc
                .seed
                .ok_or_else(|| Error::ParamInvalid("wrapped descriptor needs seed".into()))?;
            Ok(Arc::new(WrappedAction::new(
                base,
                &coeffs,
                &points,
                bits,
                seed,
                desc.twist_perm.clone(),
            )?))
        }
        "rega" => {
            let matrix = desc
                .matrix
                .clone()
                .ok_or_else(|| Error::ParamInvalid("rega descriptor needs a matrix A".into()))?;
            let bound = desc.exponent_bound.ok_or_else(|| {
                Error::ParamInvalid("rega descriptor needs an exponent bound B".into())
            })?;
            let (modulus, rank) = parse_ambient_group(&desc.group)?;
            if matrix.len() != rank {
                return Err(Error::ParamInvalid(format!(
                    "matrix has {} rows for ambient rank {rank}",
                    matrix.len()
                )));
            }
            let base = match &desc.base {
                Some(b) => build_action(b)?,
                None => {
                    let columns = matrix_columns(&matrix);
                    let sub = AmbientSubgroup::from_generators(modulus, rank, &columns)?;
                    Arc::new(TranslationAction::new(sub.group())) as Arc<dyn ActionModel>
                }
            };
            Ok(Arc::new(RestrictedAction::new(base, modulus, &matrix, bound)?))
        }
        other => Err(Error::ParamInvalid(format!("unknown action kind {other}"))),
    }
}

/// Parses an ambient group string "NxNx...xN" into (N, rank).
fn parse_ambient_group(s: &str) -> Result<(u64, usize)> {
    let parts = s
        .split('x')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| Error::ParamInvalid(format!("bad ambient group component {p:?}")))
        })
        .collect::<Result<Vec<u64>>>()?;
    let modulus = parts[0];
    if parts.iter().any(|&n| n != modulus) {
        return Err(Error::ParamInvalid(
            "ambient group must be a power of a single Z_N".into(),
        ));
    }
    Ok((modulus, parts.len()))
}

fn matrix_columns(matrix: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let cols = matrix.first().map_or(0, |row| row.len());
    (0..cols)
        .map(|j| matrix.iter().map(|row| row[j]).collect())
        .collect()
}

/// The transparent model: labels are the canonical index encodings and the
/// action is translation. Every structure attack works here, so it serves as
/// the insecure reference point.
pub struct TranslationAction {
    spec: GroupSpec,
}

impl TranslationAction {
    pub fn new(spec: &GroupSpec) -> Self {
        TranslationAction { spec: spec.clone() }
    }

    fn decode(&self, label: &Label) -> Option<GroupElement> {
        let idx = label.to_index()?;
        self.spec.element_at(idx).ok()
    }
}

impl ActionModel for TranslationAction {
    fn group(&self) -> &GroupSpec {
        &self.spec
    }

    fn start(&self) -> Label {
        Label::from_index(0)
    }

    fn act(&self, g: &GroupElement, label: &Label) -> Result<Option<Label>> {
        if g.spec() != &self.spec {
            return Err(Error::SpecMismatch("element from a different group".into()));
        }
        match self.decode(label) {
            Some(h) => Ok(Some(Label::from_index(g.add(&h)?.index()))),
            None => Ok(None),
        }
    }

    fn member(&self, label: &Label) -> bool {
        self.decode(label).is_some()
    }

    fn label_bits(&self) -> usize {
        64
    }

    fn supports_twist(&self) -> bool {
        true
    }

    fn twist(&self, label: &Label) -> Result<Option<Label>> {
        Ok(self.decode(label).map(|h| Label::from_index(h.neg().index())))
    }

    fn descriptor(&self) -> ActionDescriptor {
        ActionDescriptor::bare("translation", &self.spec)
    }
}

/// Generic model: a seeded random injection L of the group into bit strings,
/// with the action g * L(h) = L(g + h). Labels outside the image are invalid.
pub struct GgamAction {
    spec: GroupSpec,
    label_bits: usize,
    seed: u64,
    twisted: bool,
    forward: Vec<Label>,
    inverse: HashMap<Label, u64>,
}

impl GgamAction {
    pub fn new(spec: &GroupSpec, label_bits: usize, seed: u64, twisted: bool) -> Result<Self> {
        let order = spec.order();
        if label_bits < 64 && (1u128 << label_bits) < order as u128 {
            return Err(Error::ParamInvalid(format!(
                "{label_bits} label bits cannot address a group of order {order}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forward = sample_distinct_labels(order, label_bits, &mut rng)?;
        let inverse = forward
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u64))
            .collect();
        Ok(GgamAction {
            spec: spec.clone(),
            label_bits,
            seed,
            twisted,
            forward,
            inverse,
        })
    }

    /// The hidden injection, exposed for oracle bookkeeping in tests.
    pub fn label_of(&self, g: &GroupElement) -> &Label {
        &self.forward[g.index() as usize]
    }

    pub fn discrete_log(&self, label: &Label) -> Option<GroupElement> {
        let idx = *self.inverse.get(label)?;
        self.spec.element_at(idx).ok()
    }
}

impl ActionModel for GgamAction {
    fn group(&self) -> &GroupSpec {
        &self.spec
    }

    fn start(&self) -> Label {
        self.forward[0].clone()
    }

    fn act(&self, g: &GroupElement, label: &Label) -> Result<Option<Label>> {
        if g.spec() != &self.spec {
            return Err(Error::SpecMismatch("element from a different group".into()));
        }
        match self.inverse.get(label) {
            Some(&idx) => {
                let h = self.spec.element_at(idx)?;
                Ok(Some(self.forward[g.add(&h)?.index() as usize].clone()))
            }
            None => Ok(None),
        }
    }

    fn member(&self, label: &Label) -> bool {
        self.inverse.contains_key(label)
    }

    fn label_bits(&self) -> usize {
        self.label_bits
    }

    fn supports_twist(&self) -> bool {
        self.twisted
    }

    fn twist(&self, label: &Label) -> Result<Option<Label>> {
        if !self.twisted {
            return Err(Error::Unsupported("this action model has no twist"));
        }
        match self.inverse.get(label) {
            Some(&idx) => {
                let h = self.spec.element_at(idx)?;
                Ok(Some(self.forward[h.neg().index() as usize].clone()))
            }
            None => Ok(None),
        }
    }

    fn descriptor(&self) -> ActionDescriptor {
        ActionDescriptor {
            label_bits: Some(self.label_bits),
            seed: Some(self.seed),
            twisted: Some(self.twisted),
            ..ActionDescriptor::bare("ggam", &self.spec)
        }
    }
}

/// Action built from a base model: the group acts componentwise on k-tuples
/// of base members through integer coefficients, and a fresh random injection
/// hides the tuple structure.
///
/// With base points y_1..y_k and coefficients c_1..c_k, the start label is
/// Pi(y_1, ..., y_k) and g sends Pi(z_1, ..., z_k) to
/// Pi((c_1 g) * z_1, ..., (c_k g) * z_k). Pi covers every tuple of base
/// members, so the action also moves tuples outside the member orbit.
pub struct WrappedAction {
    base: Arc<dyn ActionModel>,
    coeffs: Vec<i64>,
    base_points: Vec<Label>,
    label_bits: usize,
    seed: u64,
    twist_perm: Option<Vec<usize>>,
    base_index: HashMap<Label, usize>,
    base_members: Vec<Label>,
    pi: Vec<Label>,
    pi_inverse: HashMap<Label, u64>,
    members: HashSet<Label>,
}

impl WrappedAction {
    pub fn new(
        base: Arc<dyn ActionModel>,
        coeffs: &[i64],
        base_points: &[Label],
        label_bits: usize,
        seed: u64,
        twist_perm: Option<Vec<usize>>,
    ) -> Result<Self> {
        let k = coeffs.len();
        if k == 0 || base_points.len() != k {
            return Err(Error::ParamInvalid(
                "coefficients and base points must be nonempty and match in length".into(),
            ));
        }
        for p in base_points {
            if !base.member(p) {
                return Err(Error::ParamInvalid(format!(
                    "base point {p} is not a member of the base action"
                )));
            }
        }
        let spec = base.group().clone();
        let base_members = base.member_labels()?;
        let base_index: HashMap<Label, usize> = base_members
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();

        let mut table_size: u64 = 1;
        for _ in 0..k {
            table_size = table_size
                .checked_mul(base_members.len() as u64)
                .filter(|&t| t <= MAX_WRAPPED_TABLE)
                .ok_or(Error::CapExceeded {
                    what: "wrapped relabeling table",
                    requested: u64::MAX,
                    limit: MAX_WRAPPED_TABLE,
                })?;
        }

        if let Some(perm) = &twist_perm {
            validate_perm(perm, k)?;
            // The twist law needs c_{perm(i)} = -c_i as multipliers on the group.
            for (i, &j) in perm.iter().enumerate() {
                if canonical_scalar(&spec, coeffs[j]) != canonical_scalar(&spec, -coeffs[i]) {
                    return Err(Error::ParamInvalid(format!(
                        "twist permutation needs coeff[{j}] = -coeff[{i}]"
                    )));
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi = sample_distinct_labels(table_size, label_bits, &mut rng)?;
        let pi_inverse: HashMap<Label, u64> = pi
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u64))
            .collect();

        let mut wrapped = WrappedAction {
            base,
            coeffs: coeffs.to_vec(),
            base_points: base_points.to_vec(),
            label_bits,
            seed,
            twist_perm,
            base_index,
            base_members,
            pi,
            pi_inverse,
            members: HashSet::new(),
        };

        let mut members = HashSet::with_capacity(spec.order() as usize);
        let mut tuples = HashSet::with_capacity(spec.order() as usize);
        for h in spec.elements() {
            let tuple = wrapped.orbit_tuple(&h)?;
            if !tuples.insert(tuple.clone()) {
                return Err(Error::ParamInvalid(
                    "wrapped orbit map is not injective for these coefficients".into(),
                ));
            }
            members.insert(wrapped.pi[wrapped.tuple_index(&tuple)? as usize].clone());
        }
        wrapped.members = members;
        Ok(wrapped)
    }

    pub fn base_model(&self) -> &Arc<dyn ActionModel> {
        &self.base
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    fn arity(&self) -> usize {
        self.coeffs.len()
    }

    /// The tuple of base labels representing h * start.
    fn orbit_tuple(&self, h: &GroupElement) -> Result<Vec<Label>> {
        let mut tuple = Vec::with_capacity(self.arity());
        for (c, y) in self.coeffs.iter().zip(&self.base_points) {
            let g = h.scale(*c);
            match self.base.act(&g, y)? {
                Some(l) => tuple.push(l),
                None => {
                    return Err(Error::SpecMismatch(
                        "base point left the domain under the base action".into(),
                    ))
                }
            }
        }
        Ok(tuple)
    }

    fn tuple_index(&self, tuple: &[Label]) -> Result<u64> {
        let mut idx: u64 = 0;
        for l in tuple {
            let i = self
                .base_index
                .get(l)
                .ok_or_else(|| Error::InvalidElement(format!("{l} is not a base member")))?;
            idx = idx * self.base_members.len() as u64 + *i as u64;
        }
        Ok(idx)
    }

    fn tuple_at(&self, mut idx: u64) -> Vec<Label> {
        let n = self.base_members.len() as u64;
        let mut rev = Vec::with_capacity(self.arity());
        for _ in 0..self.arity() {
            rev.push(self.base_members[(idx % n) as usize].clone());
            idx /= n;
        }
        rev.reverse();
        rev
    }

    /// Decodes a wrapped label into its base-label tuple.
    pub fn tuple_of(&self, label: &Label) -> Option<Vec<Label>> {
        self.pi_inverse.get(label).map(|&i| self.tuple_at(i))
    }

    /// Encodes a tuple of base members.
    pub fn pi_label(&self, tuple: &[Label]) -> Result<Label> {
        if tuple.len() != self.arity() {
            return Err(Error::ParamInvalid(format!(
                "tuple of length {} for arity {}",
                tuple.len(),
                self.arity()
            )));
        }
        Ok(self.pi[self.tuple_index(tuple)? as usize].clone())
    }

    /// Per-component rewrite of a wrapped label: optional base-label maps run
    /// first, then components are rearranged so that output j is transformed
    /// input perm[j]. Oracles handed in as maps drive the reduction circuits.
    pub fn component_transform(
        &self,
        label: &Label,
        perm: &[usize],
        maps: &[Option<&dyn Fn(&Label) -> Result<Option<Label>>>],
    ) -> Result<Option<Label>> {
        let k = self.arity();
        validate_perm(perm, k)?;
        if maps.len() != k {
            return Err(Error::ParamInvalid(format!(
                "{} maps for arity {k}",
                maps.len()
            )));
        }
        let tuple = match self.tuple_of(label) {
            Some(t) => t,
            None => return Ok(None),
        };
        let mut transformed = Vec::with_capacity(k);
        for (z, m) in tuple.iter().zip(maps) {
            match m {
                Some(f) => match f(z)? {
                    Some(l) => transformed.push(l),
                    None => return Ok(None),
                },
                None => transformed.push(z.clone()),
            }
        }
        let rearranged: Vec<Label> = perm.iter().map(|&j| transformed[j].clone()).collect();
        if rearranged.iter().any(|l| !self.base_index.contains_key(l)) {
            return Ok(None);
        }
        Ok(Some(self.pi_label(&rearranged)?))
    }
}

fn validate_perm(perm: &[usize], k: usize) -> Result<()> {
    if perm.len() != k {
        return Err(Error::PermutationInvalid(format!(
            "permutation of length {} for arity {k}",
            perm.len()
        )));
    }
    let mut seen = vec![false; k];
    for &j in perm {
        if j >= k || seen[j] {
            return Err(Error::PermutationInvalid(format!(
                "bad component permutation {perm:?}"
            )));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Canonical form of a scalar as a multiplier: its residue per modulus.
fn canonical_scalar(spec: &GroupSpec, c: i64) -> Vec<u64> {
    spec.moduli()
        .iter()
        .map(|&n| ((c % n as i64 + n as i64) % n as i64) as u64)
        .collect()
}

impl ActionModel for WrappedAction {
    fn group(&self) -> &GroupSpec {
        self.base.group()
    }

    fn start(&self) -> Label {
        let tuple = self
            .orbit_tuple(&self.group().zero())
            .expect("start tuple is valid by construction");
        self.pi_label(&tuple).expect("start tuple is indexed")
    }

    fn act(&self, g: &GroupElement, label: &Label) -> Result<Option<Label>> {
        if g.spec() != self.group() {
            return Err(Error::SpecMismatch("element from a different group".into()));
        }
        let tuple = match self.tuple_of(label) {
            Some(t) => t,
            None => return Ok(None),
        };
        let mut moved = Vec::with_capacity(self.arity());
        for (c, z) in self.coeffs.iter().zip(&tuple) {
            let step = g.scale(*c);
            match self.base.act(&step, z)? {
                Some(l) => moved.push(l),
                None => {
                    return Err(Error::SpecMismatch(
                        "base member left the domain under the base action".into(),
                    ))
                }
            }
        }
        Ok(Some(self.pi_label(&moved)?))
    }

    fn member(&self, label: &Label) -> bool {
        self.members.contains(label)
    }

    fn label_bits(&self) -> usize {
        self.label_bits
    }

    fn supports_twist(&self) -> bool {
        self.twist_perm.is_some()
    }

    fn twist(&self, label: &Label) -> Result<Option<Label>> {
        let perm = self
            .twist_perm
            .as_ref()
            .ok_or(Error::Unsupported("this action model has no twist"))?;
        let tuple = match self.tuple_of(label) {
            Some(t) => t,
            None => return Ok(None),
        };
        let rearranged: Vec<Label> = perm.iter().map(|&j| tuple[j].clone()).collect();
        Ok(Some(self.pi_label(&rearranged)?))
    }

    fn descriptor(&self) -> ActionDescriptor {
        ActionDescriptor {
            label_bits: Some(self.label_bits),
            seed: Some(self.seed),
            coeffs: Some(self.coeffs.clone()),
            base_points: Some(self.base_points.iter().map(|l| l.to_string()).collect()),
            twist_perm: self.twist_perm.clone(),
            base: Some(Box::new(self.base.descriptor())),
            ..ActionDescriptor::bare("wrapped", self.group())
        }
    }
}

/// Generator-restricted view of a base action. The columns of an ambient
/// matrix A over Z_N pick out m generators of the base group, and the only
/// operation the restricted interface offers is applying an exponent vector
/// from [-B, B]^m, realized as |x_1| + ... + |x_m| single-generator steps.
/// The full `ActionModel` interface stays available for analysis.
pub struct RestrictedAction {
    base: Arc<dyn ActionModel>,
    generators: Vec<GroupElement>,
    bound: i64,
    modulus: u64,
    matrix: Vec<Vec<u64>>,
}

impl RestrictedAction {
    pub fn new(
        base: Arc<dyn ActionModel>,
        modulus: u64,
        matrix: &[Vec<u64>],
        bound: i64,
    ) -> Result<Self> {
        if bound < 1 {
            return Err(Error::ParamInvalid("exponent bound must be positive".into()));
        }
        let rank = matrix.len();
        if rank == 0 || matrix.iter().any(|row| row.len() != matrix[0].len()) {
            return Err(Error::ParamInvalid("matrix rows must be nonempty and equal".into()));
        }
        let columns = matrix_columns(matrix);
        let sub = AmbientSubgroup::from_generators(modulus, rank, &columns)?;
        if sub.group().moduli() != base.group().moduli() {
            return Err(Error::SpecMismatch(format!(
                "columns generate {} but the base action is over {}",
                sub.group(),
                base.group()
            )));
        }
        let generators = columns
            .iter()
            .map(|col| {
                let h = sub.element_of(col).expect("columns lie in their own span");
                base.group()
                    .element(h.residues().to_vec())
                    .expect("moduli were checked equal")
            })
            .collect();
        Ok(RestrictedAction {
            base,
            generators,
            bound,
            modulus,
            matrix: matrix.to_vec(),
        })
    }

    pub fn base_model(&self) -> &Arc<dyn ActionModel> {
        &self.base
    }

    /// The base-group element each matrix column corresponds to.
    pub fn generators(&self) -> &[GroupElement] {
        &self.generators
    }

    pub fn bound(&self) -> i64 {
        self.bound
    }

    /// Applies the exponent vector x, stepping one generator at a time.
    /// Exponents outside [-B, B] violate the restriction and error out.
    pub fn act_vector(&self, x: &[i64], label: &Label) -> Result<Option<Label>> {
        if x.len() != self.generators.len() {
            return Err(Error::ParamInvalid(format!(
                "exponent vector of length {} for {} generators",
                x.len(),
                self.generators.len()
            )));
        }
        if let Some((j, &xj)) = x.iter().enumerate().find(|&(_, &xj)| xj.abs() > self.bound) {
            return Err(Error::Precondition(format!(
                "exponent {xj} at position {j} leaves the box [-{}, {}]",
                self.bound, self.bound
            )));
        }
        let mut cur = match self.base.act(&self.base.group().zero(), label)? {
            Some(l) => l,
            None => return Ok(None),
        };
        for (g, &xj) in self.generators.iter().zip(x) {
            let step = if xj >= 0 { g.clone() } else { g.neg() };
            for _ in 0..xj.unsigned_abs() {
                cur = match self.base.act(&step, &cur)? {
                    Some(l) => l,
                    None => return Ok(None),
                };
            }
        }
        Ok(Some(cur))
    }
}

impl ActionModel for RestrictedAction {
    fn group(&self) -> &GroupSpec {
        self.base.group()
    }

    fn start(&self) -> Label {
        self.base.start()
    }

    fn act(&self, g: &GroupElement, label: &Label) -> Result<Option<Label>> {
        self.base.act(g, label)
    }

    fn member(&self, label: &Label) -> bool {
        self.base.member(label)
    }

    fn label_bits(&self) -> usize {
        self.base.label_bits()
    }

    fn supports_twist(&self) -> bool {
        self.base.supports_twist()
    }

    fn twist(&self, label: &Label) -> Result<Option<Label>> {
        self.base.twist(label)
    }

    fn descriptor(&self) -> ActionDescriptor {
        let rank = self.matrix.len();
        let ambient = vec![self.modulus.to_string(); rank].join("x");
        ActionDescriptor {
            kind: "rega".to_string(),
            group: ambient,
            matrix: Some(self.matrix.clone()),
            exponent_bound: Some(self.bound),
            base: Some(Box::new(self.base.descriptor())),
            label_bits: None,
            seed: None,
            twisted: None,
            coeffs: None,
            base_points: None,
            twist_perm: None,
        }
    }
}
