//! Money in the lattice frame: Gaussian coset notes under a short wide
//! matrix, a verifier that can only check supports, the measure-and-resubmit
//! counterfeit, kernel-vector extraction from double spending, and the
//! transform-side equivalence with the phase-weighted action notes.
//!
//! The action side works with sparse states over Z_N^m whose basis vectors
//! are A^T s + e for truncated Gaussian noise e; the money side works with
//! Gaussian superpositions over the short preimages of A x = h. The two
//! sides are one Fourier transform apart, which keeps the counterfeit
//! analyzable in closed form: measuring a note yields a basis state that
//! still passes the support check, while its transform has only a single
//! Gaussian weight of mass inside the span of the action states.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::signed_residue;
use crate::rega::{gaussian_density, sample_index, signed_box_at, MAX_SPARSE_SUPPORT};
use crate::statevec::{qft_axes, FourierDirection};

/// Cells materialized for a dense transform over Z_N^m.
pub const MAX_DENSE_TRANSFORM: u64 = 1_000_000;

/// Secrets enumerated for the rank check and the serial marginal.
pub const MAX_SECRET_ENUM: u64 = 65_536;

/// Gram dimension of the span projector.
const MAX_GRAM_DIM: u64 = 1_024;

/// Work bound for sparse-state overlaps against the whole state family.
const MAX_SPAN_OVERLAP_WORK: u128 = 50_000_000;

/// Amplitudes below this fraction of the peak are dropped from box
/// enumerations; the discarded mass is far below every tolerance in use.
const AMPLITUDE_FLOOR: f64 = 1e-14;

/// Parameters of the noisy-inner-product action over Z_N^m: a short wide
/// matrix A over Z_N, the Gaussian width of the state family, and the
/// per-coordinate truncation of the noise box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LweParams {
    #[serde(rename = "N")]
    pub n_modulus: u64,
    /// Secret dimension: rows of A.
    #[serde(rename = "n")]
    pub secret_dim: usize,
    /// Sample dimension: columns of A.
    pub m: usize,
    /// Row-major secret_dim x m matrix over Z_N.
    #[serde(rename = "A")]
    pub a: Vec<Vec<u64>>,
    pub sigma: f64,
    /// Noise and money coordinates live in [-trunc, trunc].
    pub trunc: i64,
}

impl LweParams {
    /// Number of basis vectors in the truncated box [-trunc, trunc]^m.
    pub fn support_size(&self) -> u128 {
        (2 * self.trunc as u128 + 1).pow(self.m as u32)
    }

    fn secret_count(&self) -> u64 {
        self.n_modulus.pow(self.secret_dim as u32)
    }

    /// Structural checks plus an exhaustive rank check: A^T must annihilate
    /// no nonzero secret, so that s maps to A^T s injectively.
    pub fn validate(&self) -> Result<()> {
        if self.n_modulus < 2 {
            return Err(Error::ParamInvalid(format!(
                "modulus {} is too small",
                self.n_modulus
            )));
        }
        if self.secret_dim == 0 || self.m == 0 {
            return Err(Error::ParamInvalid("dimensions must be positive".into()));
        }
        if self.m < self.secret_dim {
            return Err(Error::ParamInvalid(format!(
                "matrix must be short and wide: {} rows > {} columns",
                self.secret_dim, self.m
            )));
        }
        if self.a.len() != self.secret_dim || self.a.iter().any(|row| row.len() != self.m) {
            return Err(Error::ParamInvalid(format!(
                "matrix must be {} x {}",
                self.secret_dim, self.m
            )));
        }
        if self
            .a
            .iter()
            .any(|row| row.iter().any(|&v| v >= self.n_modulus))
        {
            return Err(Error::ParamInvalid(
                "matrix entries must be reduced mod N".into(),
            ));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::ParamInvalid(format!(
                "width {} must be positive and finite",
                self.sigma
            )));
        }
        if self.trunc < 1 || 2 * self.trunc as u128 + 1 > self.n_modulus as u128 {
            return Err(Error::ParamInvalid(format!(
                "truncation {} must be at least 1 and fit in signed residues mod {}",
                self.trunc, self.n_modulus
            )));
        }
        if self.support_size() > MAX_SPARSE_SUPPORT as u128 {
            return Err(Error::CapExceeded {
                what: "Gaussian box support",
                requested: self.support_size().min(u64::MAX as u128) as u64,
                limit: MAX_SPARSE_SUPPORT,
            });
        }
        let secrets = (self.n_modulus as u128).pow(self.secret_dim as u32);
        if secrets > MAX_SECRET_ENUM as u128 {
            return Err(Error::CapExceeded {
                what: "secret enumeration",
                requested: secrets.min(u64::MAX as u128) as u64,
                limit: MAX_SECRET_ENUM,
            });
        }
        for flat in 1..self.secret_count() {
            let s = flat_to_vec(flat, self.n_modulus, self.secret_dim);
            if self.a_transpose(&s).iter().all(|&v| v == 0) {
                return Err(Error::ParamInvalid(format!(
                    "matrix is rank deficient: A^T annihilates s = {s:?}"
                )));
            }
        }
        Ok(())
    }

    /// A^T s over Z_N: coordinate j is <column j of A, s>.
    pub fn a_transpose(&self, s: &[u64]) -> Vec<u64> {
        let n = self.n_modulus;
        (0..self.m)
            .map(|j| {
                (0..self.secret_dim).fold(0u128, |acc, i| {
                    (acc + self.a[i][j] as u128 * s[i] as u128) % n as u128
                }) as u64
            })
            .collect()
    }

    /// A x over Z_N for a signed coordinate vector.
    pub fn a_times_signed(&self, x: &[i64]) -> Vec<u64> {
        let n = self.n_modulus as i128;
        (0..self.secret_dim)
            .map(|i| {
                x.iter()
                    .enumerate()
                    .fold(0i128, |acc, (j, &xj)| acc + self.a[i][j] as i128 * xj as i128)
                    .rem_euclid(n) as u64
            })
            .collect()
    }

    fn a_times_residues(&self, x: &[u64]) -> Vec<u64> {
        let n = self.n_modulus;
        (0..self.secret_dim)
            .map(|i| {
                x.iter()
                    .enumerate()
                    .fold(0u128, |acc, (j, &xj)| {
                        (acc + self.a[i][j] as u128 * xj as u128) % n as u128
                    }) as u64
            })
            .collect()
    }

    fn check_secret(&self, s: &[u64]) -> Result<()> {
        if s.len() != self.secret_dim || s.iter().any(|&v| v >= self.n_modulus) {
            return Err(Error::InvalidElement(format!(
                "secret {s:?} is not a reduced vector of length {}",
                self.secret_dim
            )));
        }
        Ok(())
    }

    fn check_sample(&self, x: &[u64]) -> Result<()> {
        if x.len() != self.m || x.iter().any(|&v| v >= self.n_modulus) {
            return Err(Error::InvalidElement(format!(
                "sample vector {x:?} is not a reduced vector of length {}",
                self.m
            )));
        }
        Ok(())
    }

    /// Per-coordinate Gaussian amplitude table indexed by value + trunc.
    fn amplitude_table(&self) -> Vec<f64> {
        (-self.trunc..=self.trunc)
            .map(|v| gaussian_density(self.sigma, v as f64))
            .collect()
    }
}

fn flat_to_vec(mut flat: u64, n_modulus: u64, len: usize) -> Vec<u64> {
    let mut v = vec![0u64; len];
    for slot in v.iter_mut().rev() {
        *slot = flat % n_modulus;
        flat /= n_modulus;
    }
    v
}

fn vec_to_flat(v: &[u64], n_modulus: u64) -> u64 {
    v.iter().fold(0u64, |acc, &x| acc * n_modulus + x)
}

/// A normalized state over Z_N^m basis vectors, stored sparsely. Keys are
/// reduced mod N coordinatewise; the ordered map keeps measurement sampling
/// deterministic under a seeded rng.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseState {
    n_modulus: u64,
    m: usize,
    amps: BTreeMap<Vec<u64>, Complex64>,
}

impl SparseState {
    /// Wraps amplitudes that are already normalized within 1e-9.
    pub fn new(
        n_modulus: u64,
        m: usize,
        amps: BTreeMap<Vec<u64>, Complex64>,
    ) -> Result<Self> {
        if amps.len() as u128 > MAX_SPARSE_SUPPORT as u128 {
            return Err(Error::CapExceeded {
                what: "sparse state support",
                requested: amps.len() as u64,
                limit: MAX_SPARSE_SUPPORT,
            });
        }
        for key in amps.keys() {
            if key.len() != m || key.iter().any(|&v| v >= n_modulus) {
                return Err(Error::InvalidElement(format!(
                    "basis vector {key:?} is not a reduced vector of length {m}"
                )));
            }
        }
        let norm_sqr: f64 = amps.values().map(|a| a.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(norm_sqr));
        }
        Ok(SparseState { n_modulus, m, amps })
    }

    /// Rescales arbitrary weights to a normalized state.
    pub fn normalized(
        n_modulus: u64,
        m: usize,
        weights: BTreeMap<Vec<u64>, Complex64>,
    ) -> Result<Self> {
        let norm_sqr: f64 = weights.values().map(|a| a.norm_sqr()).sum();
        if norm_sqr <= f64::MIN_POSITIVE {
            return Err(Error::DegenerateCollapse);
        }
        let scale = norm_sqr.sqrt().recip();
        let amps = weights
            .into_iter()
            .map(|(k, a)| (k, a * scale))
            .collect();
        SparseState::new(n_modulus, m, amps)
    }

    /// The computational basis state |x>.
    pub fn basis_state(n_modulus: u64, m: usize, x: &[u64]) -> Result<Self> {
        let mut amps = BTreeMap::new();
        amps.insert(x.to_vec(), Complex64::new(1.0, 0.0));
        SparseState::new(n_modulus, m, amps)
    }

    pub fn n_modulus(&self) -> u64 {
        self.n_modulus
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn support_len(&self) -> usize {
        self.amps.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u64>, &Complex64)> {
        self.amps.iter()
    }

    /// Amplitude at a basis vector, zero off the support.
    pub fn amp(&self, key: &[u64]) -> Complex64 {
        self.amps
            .get(key)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    fn frame_check(&self, other: &SparseState) -> Result<()> {
        if self.n_modulus != other.n_modulus || self.m != other.m {
            return Err(Error::BasisMismatch(format!(
                "Z_{}^{} vs Z_{}^{}",
                self.n_modulus, self.m, other.n_modulus, other.m
            )));
        }
        Ok(())
    }

    /// <self|other>, iterating over the smaller support.
    pub fn inner(&self, other: &SparseState) -> Result<Complex64> {
        self.frame_check(other)?;
        let (small, large, conj_small) = if self.amps.len() <= other.amps.len() {
            (self, other, true)
        } else {
            (other, self, false)
        };
        let mut acc = Complex64::new(0.0, 0.0);
        for (key, amp) in &small.amps {
            if let Some(partner) = large.amps.get(key) {
                acc += if conj_small {
                    amp.conj() * partner
                } else {
                    partner.conj() * amp
                };
            }
        }
        Ok(acc)
    }

    pub fn fidelity(&self, other: &SparseState) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// min over global phases of || self - e^{i phi} other ||.
    pub fn distance_up_to_phase(&self, other: &SparseState) -> Result<f64> {
        let overlap = self.inner(other)?.norm();
        Ok((2.0 - 2.0 * overlap).max(0.0).sqrt())
    }

    /// Rekeys every basis vector by a signed shift mod N.
    pub fn shifted(&self, delta: &[i64]) -> Result<SparseState> {
        if delta.len() != self.m {
            return Err(Error::ParamInvalid(format!(
                "shift of length {} for m = {}",
                delta.len(),
                self.m
            )));
        }
        let n = self.n_modulus as i64;
        let amps = self
            .amps
            .iter()
            .map(|(key, &amp)| {
                let moved: Vec<u64> = key
                    .iter()
                    .zip(delta)
                    .map(|(&k, &d)| (k as i64 + d).rem_euclid(n) as u64)
                    .collect();
                (moved, amp)
            })
            .collect();
        SparseState::new(self.n_modulus, self.m, amps)
    }

    /// Samples a basis vector with probability |amplitude|^2.
    pub fn measure<R: Rng>(&self, rng: &mut R) -> Vec<u64> {
        let total = self.norm_sqr();
        let mut target = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
        let mut last = None;
        for (key, amp) in &self.amps {
            let p = amp.norm_sqr();
            if p > 0.0 {
                last = Some(key);
                if target < p {
                    return key.clone();
                }
                target -= p;
            }
        }
        last.expect("state has support").clone()
    }
}

/// The action-side state for a secret s: amplitudes rho_sigma(e) on basis
/// vectors A^T s + e over the truncated noise box.
pub fn lwe_psi(p: &LweParams, s: &[u64]) -> Result<SparseState> {
    p.validate()?;
    p.check_secret(s)?;
    let n = p.n_modulus as i64;
    let base = p.a_transpose(s);
    let table = p.amplitude_table();
    let count = p.support_size() as u64;
    let mut weights = BTreeMap::new();
    for flat in 0..count {
        let e = signed_box_at(flat, p.trunc, p.m);
        let amp: f64 = e
            .iter()
            .map(|&ej| table[(ej + p.trunc) as usize])
            .product();
        if amp < AMPLITUDE_FLOOR {
            continue;
        }
        let key: Vec<u64> = base
            .iter()
            .zip(&e)
            .map(|(&b, &ej)| (b as i64 + ej).rem_euclid(n) as u64)
            .collect();
        weights.insert(key, Complex64::new(amp, 0.0));
    }
    SparseState::normalized(p.n_modulus, p.m, weights)
}

/// Applies the group element r by adding A^T r to every basis vector. The
/// amplitudes are untouched, so the action axioms hold with equality.
pub fn lwe_act(p: &LweParams, r: &[u64], state: &SparseState) -> Result<SparseState> {
    p.validate()?;
    p.check_secret(r)?;
    if state.n_modulus() != p.n_modulus || state.m() != p.m {
        return Err(Error::BasisMismatch(format!(
            "state over Z_{}^{} under parameters for Z_{}^{}",
            state.n_modulus(),
            state.m(),
            p.n_modulus,
            p.m
        )));
    }
    let shift: Vec<i64> = p.a_transpose(r).iter().map(|&v| v as i64).collect();
    state.shifted(&shift)
}

/// Distance, up to global phase, between the centered state and its shift
/// by a fixed offset. Wider sigma floods the offset and the distance
/// shrinks; at offset zero it vanishes identically.
pub fn flooding_check(p: &LweParams, offset: &[i64]) -> Result<f64> {
    let centered = lwe_psi(p, &vec![0; p.secret_dim])?;
    let moved = centered.shifted(offset)?;
    centered.distance_up_to_phase(&moved)
}

/// Exact distribution of the measured serial A x under the Gaussian box,
/// indexed by the serial's mixed-radix position in Z_N^n.
pub fn folklore_h_marginal(p: &LweParams) -> Result<Vec<f64>> {
    p.validate()?;
    let table = p.amplitude_table();
    let mut marginal = vec![0.0f64; p.secret_count() as usize];
    let count = p.support_size() as u64;
    for flat in 0..count {
        let x = signed_box_at(flat, p.trunc, p.m);
        let weight: f64 = x
            .iter()
            .map(|&xj| {
                let a = table[(xj + p.trunc) as usize];
                a * a
            })
            .product();
        let h = p.a_times_signed(&x);
        marginal[vec_to_flat(&h, p.n_modulus) as usize] += weight;
    }
    let total: f64 = marginal.iter().sum();
    for slot in &mut marginal {
        *slot /= total;
    }
    Ok(marginal)
}

/// The collapsed money state for a serial: the Gaussian superposition over
/// short x with A x = h.
pub fn folklore_note(p: &LweParams, h: &[u64]) -> Result<SparseState> {
    p.validate()?;
    p.check_secret(h)?;
    let n = p.n_modulus as i64;
    let table = p.amplitude_table();
    let count = p.support_size() as u64;
    let mut weights = BTreeMap::new();
    for flat in 0..count {
        let x = signed_box_at(flat, p.trunc, p.m);
        if p.a_times_signed(&x) != h {
            continue;
        }
        let amp: f64 = x
            .iter()
            .map(|&xj| table[(xj + p.trunc) as usize])
            .product();
        if amp < AMPLITUDE_FLOOR {
            continue;
        }
        let key: Vec<u64> = x.iter().map(|&xj| xj.rem_euclid(n) as u64).collect();
        weights.insert(key, Complex64::new(amp, 0.0));
    }
    if weights.is_empty() {
        return Err(Error::DegenerateCollapse);
    }
    SparseState::normalized(p.n_modulus, p.m, weights)
}

/// Mints a banknote: samples the serial from the exact marginal, then
/// returns it with the collapsed coset note.
pub fn folklore_mint<R: Rng>(p: &LweParams, rng: &mut R) -> Result<(Vec<u64>, SparseState)> {
    let marginal = folklore_h_marginal(p)?;
    let flat = sample_index(&marginal, rng);
    let h = flat_to_vec(flat as u64, p.n_modulus, p.secret_dim);
    let note = folklore_note(p, &h)?;
    Ok((h, note))
}

/// Measures the note and wraps the outcome as a basis-state counterfeit,
/// which is trivially clonable yet passes the support check.
pub fn folklore_attack<R: Rng>(
    note: &SparseState,
    rng: &mut R,
) -> Result<(Vec<u64>, SparseState)> {
    let x = note.measure(rng);
    let fake = SparseState::basis_state(note.n_modulus(), note.m(), &x)?;
    Ok((x, fake))
}

/// Exact acceptance probability of the support-only verifier: the state's
/// mass on short vectors x with A x = h.
pub fn support_verifier(p: &LweParams, h: &[u64], state: &SparseState) -> Result<f64> {
    p.validate()?;
    p.check_secret(h)?;
    if state.n_modulus() != p.n_modulus || state.m() != p.m {
        return Err(Error::BasisMismatch(
            "state frame does not match the parameters".into(),
        ));
    }
    let mut mass = 0.0;
    for (key, amp) in state.iter() {
        let short = key
            .iter()
            .all(|&v| signed_residue(v, p.n_modulus).abs() <= p.trunc);
        if short && p.a_times_residues(key) == h {
            mass += amp.norm_sqr();
        }
    }
    Ok(mass)
}

/// Result of the double-spend extraction: the difference of two measured
/// short preimages of the same serial.
#[derive(Clone, Debug, Serialize)]
pub struct SisOutcome {
    /// x - x' with both outcomes read as signed residues.
    pub v: Vec<i64>,
    /// Whether A v = 0 over Z_N; linearity makes this unconditional.
    pub kernel_ok: bool,
    pub nonzero: bool,
    pub linf_norm: i64,
}

/// Measures two same-serial notes and subtracts the outcomes, yielding a
/// short kernel vector of A.
pub fn sis_from_two_notes<R: Rng>(
    p: &LweParams,
    note1: &SparseState,
    note2: &SparseState,
    h: &[u64],
    rng: &mut R,
) -> Result<SisOutcome> {
    for note in [note1, note2] {
        if support_verifier(p, h, note)? < 1.0 - 1e-9 {
            return Err(Error::Precondition(
                "both notes must pass the support check for the serial".into(),
            ));
        }
    }
    let x1 = note1.measure(rng);
    let x2 = note2.measure(rng);
    let v: Vec<i64> = x1
        .iter()
        .zip(&x2)
        .map(|(&a, &b)| signed_residue(a, p.n_modulus) - signed_residue(b, p.n_modulus))
        .collect();
    let kernel_ok = p.a_times_signed(&v).iter().all(|&c| c == 0);
    let nonzero = v.iter().any(|&c| c != 0);
    let linf_norm = v.iter().map(|c| c.abs()).max().unwrap_or(0);
    Ok(SisOutcome {
        v,
        kernel_ok,
        nonzero,
        linf_norm,
    })
}

/// Per-coordinate overlap of two truncated Gaussians whose centers differ
/// by delta (a residue mod N), honoring the box cutoff on both sides.
fn coordinate_overlap(table: &[f64], trunc: i64, n_modulus: u64, delta: u64) -> f64 {
    let n = n_modulus as i64;
    let mut acc = 0.0;
    for a in -trunc..=trunc {
        let b = signed_residue((a - delta as i64).rem_euclid(n) as u64, n_modulus);
        if b.abs() <= trunc {
            acc += table[(a + trunc) as usize] * table[(b + trunc) as usize];
        }
    }
    acc
}

/// Gram matrix of the state family {psi_s}, computed coordinate-separably.
fn span_gram(p: &LweParams) -> Result<Vec<Vec<f64>>> {
    let count = p.secret_count();
    if count > MAX_GRAM_DIM {
        return Err(Error::CapExceeded {
            what: "span projector Gram dimension",
            requested: count,
            limit: MAX_GRAM_DIM,
        });
    }
    let table = p.amplitude_table();
    let axis_norm: f64 = table.iter().map(|a| a * a).sum();
    let overlap: Vec<f64> = (0..p.n_modulus)
        .map(|d| coordinate_overlap(&table, p.trunc, p.n_modulus, d) / axis_norm)
        .collect();
    let bases: Vec<Vec<u64>> = (0..count)
        .map(|flat| p.a_transpose(&flat_to_vec(flat, p.n_modulus, p.secret_dim)))
        .collect();
    let mut gram = vec![vec![0.0f64; count as usize]; count as usize];
    for (i, bi) in bases.iter().enumerate() {
        for (j, bj) in bases.iter().enumerate() {
            gram[i][j] = bi
                .iter()
                .zip(bj)
                .map(|(&a, &b)| overlap[((b + p.n_modulus - a) % p.n_modulus) as usize])
                .product();
        }
    }
    Ok(gram)
}

/// Solves G z = rhs for a real symmetric positive definite G by Gaussian
/// elimination with partial pivoting.
fn solve_gram(gram: &[Vec<f64>], rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    let k = gram.len();
    let mut a: Vec<Vec<f64>> = gram.to_vec();
    let mut b = rhs.to_vec();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .expect("rows remain");
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::ParamInvalid(
                "span projector Gram matrix is numerically singular".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..k {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for c in col..k {
                    a[row][c] -= factor * a[col][c];
                }
                let delta = b[col] * factor;
                b[row] -= delta;
            }
        }
    }
    for col in (0..k).rev() {
        let mut acc = b[col];
        for c in col + 1..k {
            acc -= a[col][c] * b[c];
        }
        b[col] = acc / a[col][col];
    }
    Ok(b)
}

fn mass_from_overlaps(gram: &[Vec<f64>], b: &[Complex64]) -> Result<f64> {
    let z = solve_gram(gram, b)?;
    let mass: f64 = b.iter().zip(&z).map(|(bi, zi)| (bi.conj() * zi).re).sum();
    Ok(mass.clamp(0.0, 1.0 + 1e-9))
}

/// Exact mass of a state on the span of the family {psi_s}: the ideal
/// membership projector that the support verifier cannot implement.
pub fn span_projection_mass(p: &LweParams, state: &SparseState) -> Result<f64> {
    p.validate()?;
    if state.n_modulus() != p.n_modulus || state.m() != p.m {
        return Err(Error::BasisMismatch(
            "state frame does not match the parameters".into(),
        ));
    }
    let count = p.secret_count();
    let work = state.support_len() as u128 * count as u128;
    if work > MAX_SPAN_OVERLAP_WORK {
        return Err(Error::CapExceeded {
            what: "span overlap enumeration",
            requested: work.min(u64::MAX as u128) as u64,
            limit: MAX_SPAN_OVERLAP_WORK as u64,
        });
    }
    let table = p.amplitude_table();
    let axis_norm: f64 = table.iter().map(|a| a * a).sum();
    let scale = (axis_norm.powi(p.m as i32)).sqrt().recip();
    let gram = span_gram(p)?;
    let mut b = vec![Complex64::new(0.0, 0.0); count as usize];
    for (flat, slot) in b.iter_mut().enumerate() {
        let base = p.a_transpose(&flat_to_vec(flat as u64, p.n_modulus, p.secret_dim));
        let mut acc = Complex64::new(0.0, 0.0);
        for (key, amp) in state.iter() {
            let mut weight = 1.0;
            for (&kj, &bj) in key.iter().zip(&base) {
                let e = signed_residue(
                    (kj + p.n_modulus - bj) % p.n_modulus,
                    p.n_modulus,
                );
                if e.abs() > p.trunc {
                    weight = 0.0;
                    break;
                }
                weight *= table[(e + p.trunc) as usize];
            }
            if weight != 0.0 {
                acc += amp * (weight * scale);
            }
        }
        *slot = acc;
    }
    mass_from_overlaps(&gram, &b)
}

/// Mass of the transformed basis-state counterfeit, QFT|x>, on the span of
/// {psi_s}, computed coordinate-separably so the dense transform is never
/// materialized.
pub fn transformed_fake_mass(p: &LweParams, x: &[u64]) -> Result<f64> {
    p.validate()?;
    p.check_sample(x)?;
    let n = p.n_modulus;
    let count = p.secret_count();
    let table = p.amplitude_table();
    let axis_norm: f64 = table.iter().map(|a| a * a).sum();

    // <psi_s|F x> factors into per-coordinate sums times a phase driven by
    // s . (A x): F maps |x> to amplitudes e^{2 pi i u.x/N} / N^{m/2}.
    let mut profile = Complex64::new(1.0, 0.0);
    for &xj in x {
        let mut axis = Complex64::new(0.0, 0.0);
        for v in -p.trunc..=p.trunc {
            let angle = TAU * ((v.rem_euclid(n as i64) as u64 * xj) % n) as f64 / n as f64;
            axis += table[(v + p.trunc) as usize] * Complex64::from_polar(1.0, angle);
        }
        profile *= axis;
    }
    let scale = (axis_norm.powi(p.m as i32) * (n as f64).powi(p.m as i32)).sqrt();
    let h = p.a_times_residues(x);
    let mut b = vec![Complex64::new(0.0, 0.0); count as usize];
    for (flat, slot) in b.iter_mut().enumerate() {
        let s = flat_to_vec(flat as u64, n, p.secret_dim);
        let dot = s
            .iter()
            .zip(&h)
            .fold(0u128, |acc, (&si, &hi)| (acc + si as u128 * hi as u128) % n as u128);
        let phase = Complex64::from_polar(1.0, TAU * dot as f64 / n as f64);
        *slot = profile * phase / scale;
    }
    let gram = span_gram(p)?;
    mass_from_overlaps(&gram, &b)
}

/// Dense QFT over Z_N^m of a sparse state. Materializes the full grid, so
/// N^m must stay within the dense-transform cap.
pub fn fourier_transform(
    state: &SparseState,
    direction: FourierDirection,
) -> Result<SparseState> {
    let n = state.n_modulus();
    let m = state.m();
    let grid = (n as u128).pow(m as u32);
    if grid > MAX_DENSE_TRANSFORM as u128 {
        return Err(Error::CapExceeded {
            what: "dense transform grid",
            requested: grid.min(u64::MAX as u128) as u64,
            limit: MAX_DENSE_TRANSFORM,
        });
    }
    let mut dense = vec![Complex64::new(0.0, 0.0); grid as usize];
    for (key, &amp) in state.iter() {
        dense[vec_to_flat(key, n) as usize] = amp;
    }
    let moduli = vec![n; m];
    qft_axes(&mut dense, &moduli, 1, direction);
    let mut amps = BTreeMap::new();
    for (flat, &amp) in dense.iter().enumerate() {
        if amp.norm_sqr() > 1e-28 {
            amps.insert(flat_to_vec(flat as u64, n, m), amp);
        }
    }
    SparseState::new(n, m, amps)
}

/// The phase-weighted dual-width state: amplitudes rho_{N/sigma}(e)
/// e^{2 pi i h.s/N} on A^T s + e, summed over every secret s. The transform
/// of an honest coset note approaches this state as the truncation widens.
pub fn dual_banknote_state(p: &LweParams, h: &[u64]) -> Result<SparseState> {
    p.validate()?;
    p.check_secret(h)?;
    let n = p.n_modulus;
    let grid = (n as u128).pow(p.m as u32);
    if grid > MAX_DENSE_TRANSFORM as u128 {
        return Err(Error::CapExceeded {
            what: "dense transform grid",
            requested: grid.min(u64::MAX as u128) as u64,
            limit: MAX_DENSE_TRANSFORM,
        });
    }
    let dual_sigma = n as f64 / p.sigma;
    let dual_table: Vec<f64> = (0..n)
        .map(|r| gaussian_density(dual_sigma, signed_residue(r, n) as f64))
        .collect();
    let mut dense = vec![Complex64::new(0.0, 0.0); grid as usize];
    for flat in 0..p.secret_count() {
        let s = flat_to_vec(flat, n, p.secret_dim);
        let base = p.a_transpose(&s);
        let dot = s
            .iter()
            .zip(h)
            .fold(0u128, |acc, (&si, &hi)| (acc + si as u128 * hi as u128) % n as u128);
        let phase = Complex64::from_polar(1.0, TAU * dot as f64 / n as f64);
        for (t, slot) in dense.iter_mut().enumerate() {
            let tv = flat_to_vec(t as u64, n, p.m);
            let weight: f64 = tv
                .iter()
                .zip(&base)
                .map(|(&tj, &bj)| dual_table[((tj + n - bj) % n) as usize])
                .product();
            *slot += phase * weight;
        }
    }
    let mut amps = BTreeMap::new();
    for (flat, &amp) in dense.iter().enumerate() {
        if amp.norm_sqr() > 1e-28 {
            amps.insert(flat_to_vec(flat as u64, n, p.m), amp);
        }
    }
    SparseState::normalized(n, p.m, amps)
}

/// Fidelity between the transform of the honest coset note for h and the
/// dual-width phase state: the two money frames agree up to truncation
/// effects.
pub fn fourier_equivalence_check(p: &LweParams, h: &[u64]) -> Result<f64> {
    let note = folklore_note(p, h)?;
    let transformed = fourier_transform(&note, FourierDirection::Forward)?;
    let target = dual_banknote_state(p, h)?;
    transformed.fidelity(&target)
}

/// One row of the counterfeiting experiment: the attack passes the support
/// check while double spending extracts kernel vectors; fidelity is the
/// counterfeit's overlap with the honest note.
#[derive(Clone, Debug, Serialize)]
pub struct LatticeTrialRecord {
    pub trial: usize,
    pub h: Vec<u64>,
    pub attack_pass: bool,
    pub sis_nonzero: bool,
    pub fidelity: f64,
}

/// Runs mint / attack / double-spend trials, caching notes by serial.
pub fn run_lattice_trials<R: Rng>(
    p: &LweParams,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<LatticeTrialRecord>> {
    p.validate()?;
    let marginal = folklore_h_marginal(p)?;
    let mut cache: BTreeMap<Vec<u64>, SparseState> = BTreeMap::new();
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let flat = sample_index(&marginal, rng) as u64;
        let h = flat_to_vec(flat, p.n_modulus, p.secret_dim);
        let note = match cache.get(&h) {
            Some(note) => note.clone(),
            None => {
                let note = folklore_note(p, &h)?;
                cache.insert(h.clone(), note.clone());
                note
            }
        };
        let (_, fake) = folklore_attack(&note, rng)?;
        let attack_pass = support_verifier(p, &h, &fake)? >= 1.0 - 1e-9;
        let fidelity = note.fidelity(&fake)?;
        let sis = sis_from_two_notes(p, &note, &note, &h, rng)?;
        out.push(LatticeTrialRecord {
            trial,
            h,
            attack_pass,
            sis_nonzero: sis.nonzero,
            fidelity,
        });
    }
    Ok(out)
}

/// Counterfeiting demo: five samples at modulus 64, self-dual width 8. The
/// coset notes carry about 64k short preimages each, enough entropy for the
/// double-spend extraction while the span projector stays 64-dimensional.
pub fn demo_params_64() -> LweParams {
    LweParams {
        n_modulus: 64,
        secret_dim: 1,
        m: 5,
        a: vec![vec![1, 3, 5, 7, 9]],
        sigma: 8.0,
        trunc: 10,
    }
}

/// Transform-equivalence demo: two samples at modulus 16, width 4, small
/// enough for the dense transform on every path.
pub fn demo_params_16() -> LweParams {
    LweParams {
        n_modulus: 16,
        secret_dim: 1,
        m: 2,
        a: vec![vec![1, 3]],
        sigma: 4.0,
        trunc: 7,
    }
}

/// Flooding demo: a single sample at modulus 512 with adjustable width.
pub fn flooding_params(sigma: f64) -> LweParams {
    LweParams {
        n_modulus: 512,
        secret_dim: 1,
        m: 1,
        a: vec![vec![1]],
        sigma,
        trunc: 255,
    }
}
