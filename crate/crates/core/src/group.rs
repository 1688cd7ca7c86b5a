//! Finite abelian group arithmetic over explicit products of cyclic groups.
//!
//! A group is Z_{n1} x ... x Z_{nk}; elements are residue tuples. The bilinear
//! character `chi` defined here fixes the phase convention for every Fourier
//! transform and verification circuit in the crate.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Largest group order accepted for plain arithmetic and enumeration.
pub const MAX_GROUP_ORDER: u64 = 1 << 20;

#[derive(Debug)]
struct SpecInner {
    moduli: Vec<u64>,
    order: u64,
    /// lcm of the moduli; common denominator for exact character angles.
    lcm: u64,
}

/// Shape of a finite abelian group: moduli of its cyclic factors.
#[derive(Clone, Debug)]
pub struct GroupSpec {
    inner: Arc<SpecInner>,
}

impl PartialEq for GroupSpec {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.moduli == other.inner.moduli
    }
}

impl Eq for GroupSpec {}

impl std::hash::Hash for GroupSpec {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.inner.moduli.hash(state);
    }
}

impl GroupSpec {
    pub fn new(moduli: Vec<u64>) -> Result<Self> {
        if moduli.is_empty() {
            return Err(Error::ParamInvalid("group needs at least one factor".into()));
        }
        let mut order: u64 = 1;
        let mut lcm: u64 = 1;
        for &n in &moduli {
            if n == 0 {
                return Err(Error::ParamInvalid("zero modulus".into()));
            }
            order = order
                .checked_mul(n)
                .filter(|&o| o <= MAX_GROUP_ORDER)
                .ok_or(Error::CapExceeded {
                    what: "group order",
                    requested: u64::MAX,
                    limit: MAX_GROUP_ORDER,
                })?;
            lcm = lcm / gcd(lcm, n) * n;
        }
        Ok(GroupSpec {
            inner: Arc::new(SpecInner { moduli, order, lcm }),
        })
    }

    pub fn cyclic(n: u64) -> Result<Self> {
        GroupSpec::new(vec![n])
    }

    pub fn moduli(&self) -> &[u64] {
        &self.inner.moduli
    }

    pub fn order(&self) -> u64 {
        self.inner.order
    }

    pub fn rank(&self) -> usize {
        self.inner.moduli.len()
    }

    pub fn zero(&self) -> GroupElement {
        GroupElement {
            spec: self.clone(),
            residues: vec![0; self.rank()],
        }
    }

    pub fn element(&self, residues: Vec<u64>) -> Result<GroupElement> {
        if residues.len() != self.rank() {
            return Err(Error::InvalidElement(format!(
                "expected {} residues, got {}",
                self.rank(),
                residues.len()
            )));
        }
        for (j, (&r, &n)) in residues.iter().zip(self.moduli()).enumerate() {
            if r >= n {
                return Err(Error::InvalidElement(format!(
                    "residue {r} out of range for modulus {n} at position {j}"
                )));
            }
        }
        Ok(GroupElement {
            spec: self.clone(),
            residues,
        })
    }

    /// Element with the given residues reduced into range, accepting signed input.
    pub fn element_from_signed(&self, values: &[i64]) -> Result<GroupElement> {
        if values.len() != self.rank() {
            return Err(Error::InvalidElement(format!(
                "expected {} residues, got {}",
                self.rank(),
                values.len()
            )));
        }
        let residues = values
            .iter()
            .zip(self.moduli())
            .map(|(&v, &n)| v.rem_euclid(n as i64) as u64)
            .collect();
        Ok(GroupElement {
            spec: self.clone(),
            residues,
        })
    }

    /// Mixed-radix decoding; inverse of `GroupElement::index`.
    pub fn element_at(&self, index: u64) -> Result<GroupElement> {
        if index >= self.order() {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.order(),
            });
        }
        let mut residues = vec![0u64; self.rank()];
        let mut rest = index;
        for j in (0..self.rank()).rev() {
            let n = self.inner.moduli[j];
            residues[j] = rest % n;
            rest /= n;
        }
        Ok(GroupElement {
            spec: self.clone(),
            residues,
        })
    }

    pub fn elements(&self) -> impl Iterator<Item = GroupElement> + '_ {
        (0..self.order()).map(move |i| self.element_at(i).expect("index in range"))
    }

    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> GroupElement {
        let residues = self.moduli().iter().map(|&n| rng.gen_range(0..n)).collect();
        GroupElement {
            spec: self.clone(),
            residues,
        }
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.moduli().iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl FromStr for GroupSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let moduli = s
            .split('x')
            .map(|p| {
                p.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::ParamInvalid(format!("bad group spec component {p:?}")))
            })
            .collect::<Result<Vec<u64>>>()?;
        GroupSpec::new(moduli)
    }
}

/// One element of a `GroupSpec`, stored with canonical residues in [0, n_j).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroupElement {
    spec: GroupSpec,
    residues: Vec<u64>,
}

impl GroupElement {
    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn is_zero(&self) -> bool {
        self.residues.iter().all(|&r| r == 0)
    }

    fn check_same_spec(&self, other: &GroupElement) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(format!(
                "{} vs {}",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &GroupElement) -> Result<GroupElement> {
        self.check_same_spec(other)?;
        let residues = self
            .residues
            .iter()
            .zip(&other.residues)
            .zip(self.spec.moduli())
            .map(|((&a, &b), &n)| (a + b) % n)
            .collect();
        Ok(GroupElement {
            spec: self.spec.clone(),
            residues,
        })
    }

    pub fn neg(&self) -> GroupElement {
        let residues = self
            .residues
            .iter()
            .zip(self.spec.moduli())
            .map(|(&a, &n)| if a == 0 { 0 } else { n - a })
            .collect();
        GroupElement {
            spec: self.spec.clone(),
            residues,
        }
    }

    pub fn sub(&self, other: &GroupElement) -> Result<GroupElement> {
        self.add(&other.neg())
    }

    /// Scalar multiple k*g, accepting any signed integer k.
    pub fn scale(&self, k: i64) -> GroupElement {
        let residues = self
            .residues
            .iter()
            .zip(self.spec.moduli())
            .map(|(&a, &n)| {
                let m = (k.rem_euclid(n as i64) as u128 * a as u128) % n as u128;
                m as u64
            })
            .collect();
        GroupElement {
            spec: self.spec.clone(),
            residues,
        }
    }

    /// Mixed-radix index; inverse of `GroupSpec::element_at`.
    pub fn index(&self) -> u64 {
        let mut idx = 0u64;
        for (&r, &n) in self.residues.iter().zip(self.spec.moduli()) {
            idx = idx * n + r;
        }
        idx
    }

    /// Residues viewed in the signed interval [-floor((n-1)/2), ceil((n-1)/2)].
    pub fn signed_residues(&self) -> Vec<i64> {
        self.residues
            .iter()
            .zip(self.spec.moduli())
            .map(|(&r, &n)| signed_residue(r, n))
            .collect()
    }

    /// Bilinear character: prod_j exp(i 2 pi g_j h_j / n_j).
    ///
    /// The angle is accumulated as an exact fraction over the lcm of the
    /// moduli before the single conversion to floating point.
    pub fn chi(&self, other: &GroupElement) -> Result<Complex64> {
        let num = self.chi_fraction_numerator(other)?;
        let den = self.spec.inner.lcm;
        let angle = std::f64::consts::TAU * (num as f64) / (den as f64);
        Ok(Complex64::from_polar(1.0, angle))
    }

    /// Numerator of the character angle over denominator lcm(moduli), reduced mod lcm.
    pub fn chi_fraction_numerator(&self, other: &GroupElement) -> Result<u64> {
        self.check_same_spec(other)?;
        let den = self.spec.inner.lcm as u128;
        let mut num: u128 = 0;
        for ((&g, &h), &n) in self
            .residues
            .iter()
            .zip(&other.residues)
            .zip(self.spec.moduli())
        {
            let t = (g as u128 * h as u128) % n as u128;
            num = (num + t * (den / n as u128)) % den;
        }
        Ok(num as u64)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.residues.iter().map(|r| r.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

pub(crate) fn signed_residue(r: u64, n: u64) -> i64 {
    let half_up = (n - 1).div_ceil(2);
    if r <= half_up {
        r as i64
    } else {
        r as i64 - n as i64
    }
}

pub(crate) fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

pub(crate) fn vec_add_mod(a: &[u64], b: &[u64], n: u64) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| (x + y) % n).collect()
}

pub(crate) fn vec_scale_mod(a: &[u64], k: u64, n: u64) -> Vec<u64> {
    a.iter()
        .map(|&x| ((x as u128 * k as u128) % n as u128) as u64)
        .collect()
}

pub(crate) fn dot_mod(a: &[u64], b: &[u64], n: u64) -> u64 {
    a.iter()
        .zip(b)
        .fold(0u128, |acc, (&x, &y)| (acc + x as u128 * y as u128) % n as u128) as u64
}

fn ambient_element_order(v: &[u64], n: u64) -> u64 {
    v.iter().fold(1u64, |acc, &x| lcm(acc, n / gcd(n, x)))
}

/// A subgroup of Z_N^rank presented by ambient generator vectors, reduced to
/// invariant-factor form: cyclic factor moduli d_1 | d_2 | ... with a matching
/// ambient basis vector per factor. Keeps the ambient image of every abstract
/// element for exact conversions in both directions.
pub struct AmbientSubgroup {
    modulus: u64,
    rank: usize,
    group: GroupSpec,
    basis: Vec<Vec<u64>>,
    elements: Vec<Vec<u64>>,
    index: HashMap<Vec<u64>, usize>,
}

impl AmbientSubgroup {
    pub fn from_generators(modulus: u64, rank: usize, generators: &[Vec<u64>]) -> Result<Self> {
        if modulus < 2 || rank == 0 {
            return Err(Error::ParamInvalid(
                "ambient group needs a modulus of at least 2 and positive rank".into(),
            ));
        }
        if generators.is_empty() || generators.iter().any(|g| g.len() != rank) {
            return Err(Error::ParamInvalid(format!(
                "generators must be nonempty vectors of length {rank}"
            )));
        }
        if generators.iter().flatten().any(|&v| v >= modulus) {
            return Err(Error::ParamInvalid(
                "generator entries must be reduced mod N".into(),
            ));
        }
        let closure = subgroup_closure(modulus, rank, generators)?;
        let (factors, basis) = invariant_factors(&closure, modulus)?;
        let group = GroupSpec::new(factors)?;

        let mut elements = Vec::with_capacity(group.order() as usize);
        for h in group.elements() {
            let mut v = vec![0u64; rank];
            for (j, &c) in h.residues().iter().enumerate() {
                v = vec_add_mod(&v, &vec_scale_mod(&basis[j], c, modulus), modulus);
            }
            elements.push(v);
        }
        let index: HashMap<Vec<u64>, usize> = elements
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i))
            .collect();
        if index.len() != elements.len() || elements.len() != closure.len() {
            return Err(Error::SpecMismatch(
                "invariant-factor basis fails to enumerate the subgroup".into(),
            ));
        }
        Ok(AmbientSubgroup {
            modulus,
            rank,
            group,
            basis,
            elements,
            index,
        })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// The subgroup as an abstract group in invariant-factor form.
    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn order(&self) -> u64 {
        self.group.order()
    }

    /// Ambient basis vector generating cyclic factor j.
    pub fn basis(&self) -> &[Vec<u64>] {
        &self.basis
    }

    /// Ambient image of an abstract element.
    pub fn embedding(&self, h: &GroupElement) -> Result<&[u64]> {
        if h.spec() != &self.group {
            return Err(Error::SpecMismatch(format!(
                "element of {} in subgroup {}",
                h.spec(),
                self.group
            )));
        }
        Ok(&self.elements[h.index() as usize])
    }

    /// Ambient images of all abstract elements, in abstract index order.
    pub fn embeddings(&self) -> &[Vec<u64>] {
        &self.elements
    }

    /// The abstract element whose ambient image is v, if v lies in the
    /// subgroup.
    pub fn element_of(&self, v: &[u64]) -> Option<GroupElement> {
        Some(
            self.group
                .element_at(self.index_of(v)? as u64)
                .expect("index in range"),
        )
    }

    /// Abstract index of an ambient vector, if it lies in the subgroup.
    pub fn index_of(&self, v: &[u64]) -> Option<usize> {
        self.index.get(v).copied()
    }
}

/// All elements of the subgroup generated by the given ambient vectors.
fn subgroup_closure(modulus: u64, rank: usize, generators: &[Vec<u64>]) -> Result<Vec<Vec<u64>>> {
    let zero = vec![0u64; rank];
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut order: Vec<Vec<u64>> = Vec::new();
    let mut frontier = vec![zero.clone()];
    seen.insert(zero);
    while let Some(v) = frontier.pop() {
        order.push(v.clone());
        if order.len() as u64 > MAX_GROUP_ORDER {
            return Err(Error::CapExceeded {
                what: "subgroup order",
                requested: order.len() as u64,
                limit: MAX_GROUP_ORDER,
            });
        }
        for g in generators {
            let next = vec_add_mod(&v, g, modulus);
            if seen.insert(next.clone()) {
                frontier.push(next);
            }
        }
    }
    Ok(order)
}

/// Invariant-factor form of a subgroup given by its full element list:
/// ascending factor moduli, each dividing the next, with matching generators.
/// Handles one or two factors, which covers every subgroup of Z_N^2.
fn invariant_factors(elements: &[Vec<u64>], modulus: u64) -> Result<(Vec<u64>, Vec<Vec<u64>>)> {
    let order = elements.len() as u64;
    if order == 1 {
        return Err(Error::ParamInvalid("the subgroup is trivial".into()));
    }
    let exponent = elements
        .iter()
        .fold(1u64, |acc, v| lcm(acc, ambient_element_order(v, modulus)));
    let top = elements
        .iter()
        .find(|v| ambient_element_order(v, modulus) == exponent)
        .expect("some element realizes the exponent")
        .clone();
    if exponent == order {
        return Ok((vec![exponent], vec![top]));
    }
    let co = order / exponent;
    if exponent % co != 0 {
        return Err(Error::Unsupported(
            "subgroup does not split into two invariant factors",
        ));
    }
    let top_span: HashSet<Vec<u64>> = (0..exponent)
        .map(|k| vec_scale_mod(&top, k, modulus))
        .collect();
    for candidate in elements {
        if ambient_element_order(candidate, modulus) != co {
            continue;
        }
        let mut span = HashSet::with_capacity(order as usize);
        for k in 0..co {
            let base = vec_scale_mod(candidate, k, modulus);
            for t in &top_span {
                span.insert(vec_add_mod(&base, t, modulus));
            }
        }
        if span.len() as u64 == order {
            return Ok((vec![co, exponent], vec![candidate.clone(), top]));
        }
    }
    Err(Error::Unsupported(
        "no complementary generator found for the invariant-factor split",
    ))
}
