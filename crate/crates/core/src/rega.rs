//! Money over a restricted group action on Z_N^n.
//!
//! Only a small set of generators (the columns of a matrix A) can be applied,
//! so there is no full QFT over the acting group. Minting instead prepares a
//! Gaussian-weighted superposition over bounded exponent vectors, transforms
//! the exponent register, and measures it, which yields a noisy serial
//! vector t = A^T phi(h) + e. Verification estimates phases along bounded
//! directions, one per round, correcting by t so the noise cancels.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::{member_basis, ActionDescriptor, ActionModel};
use crate::error::{Error, Result};
use crate::group::{dot_mod, vec_add_mod, vec_scale_mod, AmbientSubgroup, GroupElement, GroupSpec};
use crate::lightning::{findh_distribution, member_projection};
use crate::statevec::{qft_axes, Basis, FourierDirection, Label, StateJson, StateVector};

/// Exponent scale of the Gaussian amplitude exp(-SCALE x^2 / sigma^2); the
/// squared amplitudes then follow the density with exponent scale 2*SCALE.
pub const DENSITY_EXPONENT_SCALE: f64 = std::f64::consts::PI;

/// Largest ambient grid N^n the structure search will enumerate.
const MAX_AMBIENT_SEARCH: u64 = 300_000;

/// Largest sparse exponent support (2B'+1)^m a mint may sum over.
pub const MAX_SPARSE_SUPPORT: u64 = 5_000_000;

/// Largest dense transform table |G| * N^m a mint may materialize.
const MAX_MINT_TABLE: u64 = 32_000_000;

const THRESHOLD_NUM: usize = 7;
const THRESHOLD_DEN: usize = 8;

/// Gaussian amplitude profile exp(-pi x^2 / sigma^2). An infinite sigma
/// degenerates to the flat profile.
pub fn gaussian_density(sigma: f64, x: f64) -> f64 {
    (-DENSITY_EXPONENT_SCALE * (x / sigma) * (x / sigma)).exp()
}

/// A truncated Gaussian amplitude profile over the integers [-bound, bound].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GaussianSpec {
    pub sigma: f64,
    pub bound: i64,
    /// Amplitude exponent scale; squared amplitudes use twice this value.
    #[serde(default = "default_exponent_scale")]
    pub exponent_scale: f64,
}

fn default_exponent_scale() -> f64 {
    DENSITY_EXPONENT_SCALE
}

impl GaussianSpec {
    pub fn new(sigma: f64, bound: i64) -> Result<Self> {
        if !(sigma > 0.0) || bound < 1 {
            return Err(Error::ParamInvalid(
                "gaussian spec needs positive width and bound".into(),
            ));
        }
        Ok(GaussianSpec {
            sigma,
            bound,
            exponent_scale: DENSITY_EXPONENT_SCALE,
        })
    }

    /// Unnormalized amplitude at integer x, zero outside the truncation.
    pub fn amplitude(&self, x: i64) -> f64 {
        if x.abs() > self.bound {
            return 0.0;
        }
        let r = x as f64 / self.sigma;
        (-self.exponent_scale * r * r).exp()
    }

    /// Probability mass the untruncated profile leaves outside [-bound, bound],
    /// relative to the truncated normalization.
    pub fn tail_mass_beyond_bound(&self) -> f64 {
        let kept: f64 = (-self.bound..=self.bound)
            .map(|x| self.amplitude(x) * self.amplitude(x))
            .sum();
        let mut tail = 0.0;
        let mut x = self.bound + 1;
        loop {
            let r = x as f64 / self.sigma;
            let w = (-2.0 * self.exponent_scale * r * r).exp();
            if w < f64::MIN_POSITIVE || x > self.bound + 64 * self.sigma.ceil() as i64 {
                break;
            }
            tail += 2.0 * w;
            x += 1;
        }
        tail / kept
    }
}

/// The state over [-bound, bound] with amplitudes proportional to the
/// truncated Gaussian profile. Basis label at offset x + bound encodes x.
pub fn gaussian_superposition(spec: &GaussianSpec) -> Result<StateVector> {
    let width = (2 * spec.bound + 1) as usize;
    let labels: Vec<Label> = (0..width).map(|i| Label::from_index(i as u64)).collect();
    let basis = Basis::new(labels)?;
    let amps: Vec<Complex64> = (-spec.bound..=spec.bound)
        .map(|x| Complex64::new(spec.amplitude(x), 0.0))
        .collect();
    StateVector::normalized(&basis, amps)
}

/// Amplitudes of the width-sigma Gaussian profile truncated at |x| <= cutoff
/// and folded into Z_N by coherent summation, l2-normalized. When
/// 2 cutoff + 1 <= N no folding happens and this is the plain truncated
/// profile on signed representatives.
pub fn folded_gaussian_amplitudes(n_modulus: u64, sigma: f64, cutoff: i64) -> Result<Vec<f64>> {
    if n_modulus == 0 || !(sigma > 0.0) || cutoff < 0 {
        return Err(Error::ParamInvalid(
            "gaussian register needs a positive modulus, width, and cutoff".into(),
        ));
    }
    let n = n_modulus as i64;
    let mut amps = vec![0.0f64; n_modulus as usize];
    for x in -cutoff..=cutoff {
        let r = x.rem_euclid(n) as usize;
        amps[r] += gaussian_density(sigma, x as f64);
    }
    let norm: f64 = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::ParamInvalid("gaussian register has no mass".into()));
    }
    for a in &mut amps {
        *a /= norm;
    }
    Ok(amps)
}

/// The folded truncated Gaussian as a state over the cyclic group Z_N.
pub fn gaussian_state(n_modulus: u64, sigma: f64, cutoff: i64) -> Result<StateVector> {
    let spec = GroupSpec::cyclic(n_modulus)?;
    let basis = Basis::group_basis(&spec)?;
    let amps = folded_gaussian_amplitudes(n_modulus, sigma, cutoff)?
        .into_iter()
        .map(|a| Complex64::new(a, 0.0))
        .collect();
    StateVector::from_amplitudes(&basis, amps)
}

/// Distance (up to phase) between the QFT of the width-sigma truncated
/// Gaussian and the width-(N/sigma) truncated Gaussian it should map to,
/// both truncated at floor((N-1)/2).
pub fn qft_gaussian_pair_check(n_modulus: u64, sigma: f64) -> Result<f64> {
    let cutoff = ((n_modulus - 1) / 2) as i64;
    let primal = gaussian_state(n_modulus, sigma, cutoff)?;
    let transformed = primal.qft_group(FourierDirection::Forward)?;
    let dual = gaussian_state(n_modulus, n_modulus as f64 / sigma, cutoff)?;
    transformed.distance_up_to_phase(&dual)
}

/// The distribution verification directions are drawn from, over the box
/// [-B, B]^m.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DstarKind {
    UniformBall,
    Gaussian { sigma: f64 },
}

/// Parameters of one restricted-action money instance.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RegaParams {
    /// Ambient modulus N; the acting group lives in Z_N^n.
    #[serde(rename = "N")]
    pub n_modulus: u64,
    /// Ambient rank n.
    #[serde(rename = "n")]
    pub ambient_rank: usize,
    /// Number of generators m, one exponent coordinate each.
    pub m: usize,
    /// Generator matrix, ambient_rank rows of m residues: column j is the
    /// ambient image of generator j.
    #[serde(rename = "A")]
    pub a: Vec<Vec<u64>>,
    /// Verification directions live in [-b_bound, b_bound]^m.
    #[serde(rename = "B")]
    pub b_bound: i64,
    /// Direction distribution.
    pub dstar: DstarKind,
    /// Width of the minting Gaussian.
    pub sigma: f64,
    /// Truncation of the minting Gaussian before folding into Z_N.
    #[serde(rename = "Bprime")]
    pub b_prime: i64,
    /// Number of verification rounds.
    pub lambda: usize,
}

impl RegaParams {
    /// Serial decoding radius C = floor(N / 8Bm), derived.
    pub fn c_bound(&self) -> i64 {
        (self.n_modulus as i64) / (8 * self.b_bound * self.m as i64)
    }

    /// Rounds that must read 0 for the verifier to accept: 7/8 of lambda.
    pub fn threshold_rounds(&self) -> usize {
        (self.lambda * THRESHOLD_NUM).div_ceil(THRESHOLD_DEN)
    }
}

/// The worked instance over Z_169: two generators spanning balanced base-13
/// digits, so directions cover the group exactly uniformly and the serial
/// noise is zero except with negligible probability.
pub fn demo_params_169() -> RegaParams {
    RegaParams {
        n_modulus: 169,
        ambient_rank: 1,
        m: 2,
        a: vec![vec![1, 13]],
        b_bound: 6,
        dstar: DstarKind::UniformBall,
        sigma: 274.0,
        b_prime: 548,
        lambda: 64,
    }
}

/// The worked instance over Z_533: the acting group is the proper subgroup
/// generated by 41 (order 13), exercising the nontrivial annihilator and
/// abstract-isomorphism paths with an unfolded Gaussian register.
pub fn demo_params_533() -> RegaParams {
    RegaParams {
        n_modulus: 533,
        ambient_rank: 1,
        m: 1,
        a: vec![vec![41]],
        b_bound: 6,
        dstar: DstarKind::UniformBall,
        sigma: 160.0,
        b_prime: 250,
        lambda: 64,
    }
}

fn check_params(p: &RegaParams) -> Result<()> {
    if p.n_modulus < 2 {
        return Err(Error::ParamInvalid("modulus must be at least 2".into()));
    }
    if p.ambient_rank == 0 || p.m == 0 {
        return Err(Error::ParamInvalid("rank and m must be positive".into()));
    }
    if p.a.len() != p.ambient_rank || p.a.iter().any(|row| row.len() != p.m) {
        return Err(Error::ParamInvalid(format!(
            "generator matrix must be {} x {}",
            p.ambient_rank, p.m
        )));
    }
    if p.a.iter().flatten().any(|&v| v >= p.n_modulus) {
        return Err(Error::ParamInvalid("matrix entries must be reduced mod N".into()));
    }
    if p.b_bound < 1 || p.b_prime < 1 || !(p.sigma > 0.0) || p.lambda == 0 {
        return Err(Error::ParamInvalid("bounds must be positive".into()));
    }
    if let DstarKind::Gaussian { sigma } = p.dstar {
        if !(sigma > 0.0) {
            return Err(Error::ParamInvalid("direction width must be positive".into()));
        }
    }
    let support = (2 * p.b_prime as u128 + 1).pow(p.m as u32);
    if support > MAX_SPARSE_SUPPORT as u128 {
        return Err(Error::CapExceeded {
            what: "mint exponent support",
            requested: support.min(u64::MAX as u128) as u64,
            limit: MAX_SPARSE_SUPPORT,
        });
    }
    let ambient = (p.n_modulus as u128).pow(p.ambient_rank as u32);
    if ambient > MAX_AMBIENT_SEARCH as u128 {
        return Err(Error::CapExceeded {
            what: "ambient grid",
            requested: ambient.min(u64::MAX as u128) as u64,
            limit: MAX_AMBIENT_SEARCH,
        });
    }
    Ok(())
}

/// Checkable stand-ins for the scheme's asymptotic parameter constraints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamsReport {
    /// Derived decoding radius C.
    pub c_bound: i64,
    /// C must be positive for decoding to be possible at all.
    pub c_positive: bool,
    /// Injectivity window 8BCm, which must stay within N.
    pub window_product: u64,
    pub window_ok: bool,
    /// Worst-case round phase 2 pi B (C/2) m / N, which must stay within pi/8.
    pub worst_round_phase: f64,
    pub phase_ok: bool,
    /// Probability that every serial noise entry lands in [-C/2, C/2],
    /// under the exact mint distribution.
    pub noise_in_half_radius_prob: f64,
    pub noise_ok: bool,
    /// Total-variation distance of A x from uniform over the acting group
    /// for x drawn from the direction distribution.
    pub direction_tv_distance: f64,
}

impl ParamsReport {
    pub fn all_ok(&self) -> bool {
        self.c_positive && self.window_ok && self.phase_ok && self.noise_ok
    }
}

/// Evaluates the concrete parameter inequalities the correctness analysis
/// rests on. Reports pass/fail per inequality; nothing here hard-errors
/// beyond structurally invalid parameters.
pub fn validate_params(params: &RegaParams) -> Result<ParamsReport> {
    let structure = RegaStructure::new(params.clone())?;
    Ok(structure.report())
}

type ZVec = Vec<u64>;

/// Enumerates Z_N^n in mixed-radix order.
fn ambient_grid(n_modulus: u64, rank: usize) -> impl Iterator<Item = ZVec> {
    let total = (n_modulus as u128).pow(rank as u32) as u64;
    (0..total).map(move |mut idx| {
        let mut v = vec![0u64; rank];
        for slot in v.iter_mut().rev() {
            *slot = idx % n_modulus;
            idx /= n_modulus;
        }
        v
    })
}

/// Finds, for each invariant factor, a dual vector pairing to N/d_j against
/// generator j and to zero against the others.
fn dual_vectors(
    generators: &[ZVec],
    factors: &[u64],
    n_modulus: u64,
    rank: usize,
) -> Result<Vec<ZVec>> {
    let mut duals = Vec::with_capacity(factors.len());
    for (j, &d) in factors.iter().enumerate() {
        let want: Vec<u64> = (0..generators.len())
            .map(|i| if i == j { n_modulus / d } else { 0 })
            .collect();
        let found = ambient_grid(n_modulus, rank).find(|v| {
            generators
                .iter()
                .zip(&want)
                .all(|(u, &w)| dot_mod(u, v, n_modulus) == w)
        });
        match found {
            Some(v) => duals.push(v),
            None => {
                return Err(Error::Unsupported(
                    "no dual vector realizes the required character",
                ))
            }
        }
    }
    Ok(duals)
}

/// Mixed-radix decode of an index into a vector over [-bound, bound]^m.
pub(crate) fn signed_box_at(mut idx: u64, bound: i64, m: usize) -> Vec<i64> {
    let width = (2 * bound + 1) as u64;
    let mut e = vec![0i64; m];
    for slot in e.iter_mut().rev() {
        *slot = (idx % width) as i64 - bound;
        idx /= width;
    }
    e
}

pub(crate) fn sample_index<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let total: f64 = dist.iter().sum();
    let mut target = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
    for (i, &p) in dist.iter().enumerate() {
        if target < p {
            return i;
        }
        target -= p;
    }
    dist.iter().rposition(|&p| p > 0.0).expect("mass exists")
}

struct MintTable {
    /// One slice per acting-group element, each a dense vector over Z_N^m
    /// holding the transform of that element's exponent-class amplitudes.
    slices: Vec<Vec<Complex64>>,
    /// Probability of each serial measurement outcome, flattened over Z_N^m.
    marginal: Vec<f64>,
}

/// The analysis side of a restricted-action instance: abstract group,
/// ambient embeddings, dual characters phi, the serial decoding table, and
/// the exact mint transform. Everything here is independent of which action
/// model carries the money register.
pub struct RegaStructure {
    params: RegaParams,
    ambient: AmbientSubgroup,
    /// Dual vector phi(h) for each abstract element.
    phi: Vec<ZVec>,
    /// Measured transform vector -> (abstract serial index, noise).
    decode: HashMap<Vec<u64>, (usize, Vec<i64>)>,
    table: OnceLock<MintTable>,
}

/// Counts colliding decode targets A^T phi(h) + e over all serials h and all
/// noise vectors e in [-C, C]^m; a sound instance has zero.
pub fn serial_decode_collisions(params: &RegaParams) -> Result<u64> {
    RegaStructure::build(params.clone(), true).map(|(_, collisions)| collisions)
}

impl RegaStructure {
    pub fn new(params: RegaParams) -> Result<Self> {
        let (structure, collisions) = RegaStructure::build(params, false)?;
        debug_assert_eq!(collisions, 0);
        Ok(structure)
    }

    fn build(params: RegaParams, tolerate_collisions: bool) -> Result<(Self, u64)> {
        check_params(&params)?;
        let n = params.n_modulus;
        let columns: Vec<ZVec> = (0..params.m)
            .map(|j| (0..params.ambient_rank).map(|i| params.a[i][j]).collect())
            .collect();
        let ambient = AmbientSubgroup::from_generators(n, params.ambient_rank, &columns)?;
        let group = ambient.group().clone();
        let factors = group.moduli().to_vec();

        let table_cells = group.order() as u128 * (n as u128).pow(params.m as u32);
        if table_cells > MAX_MINT_TABLE as u128 {
            return Err(Error::CapExceeded {
                what: "mint transform table",
                requested: table_cells.min(u64::MAX as u128) as u64,
                limit: MAX_MINT_TABLE,
            });
        }

        let duals = dual_vectors(ambient.basis(), &factors, n, params.ambient_rank)?;
        let mut phi = Vec::with_capacity(group.order() as usize);
        for h in group.elements() {
            let mut v = vec![0u64; params.ambient_rank];
            for (j, &c) in h.residues().iter().enumerate() {
                v = vec_add_mod(&v, &vec_scale_mod(&duals[j], c, n), n);
            }
            phi.push(v);
        }

        // The pairing <embed(g), phi(h)> mod N must realize the abstract
        // character sum_j (N/d_j) g_j h_j exactly.
        for g in group.elements() {
            for h in group.elements() {
                let lhs = dot_mod(ambient.embedding(&g)?, &phi[h.index() as usize], n);
                let rhs = g
                    .residues()
                    .iter()
                    .zip(h.residues())
                    .zip(&factors)
                    .fold(0u128, |acc, ((&gj, &hj), &dj)| {
                        (acc + (n / dj) as u128 * gj as u128 % n as u128 * hj as u128) % n as u128
                    }) as u64;
                if lhs != rhs {
                    return Err(Error::SpecMismatch(
                        "dual vectors fail to realize the abstract characters".into(),
                    ));
                }
            }
        }

        let mut decode = HashMap::new();
        let mut collisions = 0u64;
        let c = params.c_bound().max(0);
        let noise_count = (2 * c + 1).pow(params.m as u32) as u64;
        for (h_idx, w) in phi.iter().enumerate() {
            let base = a_transpose_vec(&params, w);
            for noise_idx in 0..noise_count {
                let e = signed_box_at(noise_idx, c, params.m);
                let t: Vec<u64> = base
                    .iter()
                    .zip(&e)
                    .map(|(&b, &ej)| (b as i64 + ej).rem_euclid(n as i64) as u64)
                    .collect();
                if decode.insert(t, (h_idx, e)).is_some() {
                    collisions += 1;
                }
            }
        }
        if collisions > 0 && !tolerate_collisions {
            return Err(Error::ParamInvalid(format!(
                "serial decoding is ambiguous: {collisions} colliding targets"
            )));
        }

        Ok((
            RegaStructure {
                params,
                ambient,
                phi,
                decode,
                table: OnceLock::new(),
            },
            collisions,
        ))
    }

    pub fn params(&self) -> &RegaParams {
        &self.params
    }

    /// The acting group in invariant-factor form.
    pub fn group(&self) -> &GroupSpec {
        self.ambient.group()
    }

    /// The acting subgroup with its ambient embedding data.
    pub fn ambient(&self) -> &AmbientSubgroup {
        &self.ambient
    }

    /// Dual vector realizing the character of h.
    pub fn phi(&self, h: &GroupElement) -> &[u64] {
        &self.phi[h.index() as usize]
    }

    /// All ambient vectors annihilating the subgroup under the dot pairing.
    pub fn annihilator(&self) -> Vec<ZVec> {
        let n = self.params.n_modulus;
        ambient_grid(n, self.params.ambient_rank)
            .filter(|w| {
                self.ambient
                    .embeddings()
                    .iter()
                    .all(|v| dot_mod(v, w, n) == 0)
            })
            .collect()
    }

    /// The noiseless serial A^T phi(h) for a serial element.
    pub fn serial_base(&self, h: &GroupElement) -> Vec<u64> {
        a_transpose_vec(&self.params, self.phi(h))
    }

    /// Recovers (serial element, noise) from a measured transform vector by
    /// the exhaustive decoding table.
    pub fn decode_serial(&self, t: &[u64]) -> Option<(GroupElement, Vec<i64>)> {
        let (h_idx, e) = self.decode.get(t)?;
        let h = self
            .group()
            .element_at(*h_idx as u64)
            .expect("decode indices are in range");
        Some((h, e.clone()))
    }

    /// The abstract element A x for a direction vector x.
    pub fn direction_element(&self, x: &[i64]) -> Result<GroupElement> {
        if x.len() != self.params.m {
            return Err(Error::ParamInvalid(format!(
                "direction of length {} for m = {}",
                x.len(),
                self.params.m
            )));
        }
        let n = self.params.n_modulus;
        let shift: ZVec = (0..self.params.ambient_rank)
            .map(|i| {
                x.iter()
                    .enumerate()
                    .fold(0i128, |acc, (j, &xj)| {
                        acc + self.params.a[i][j] as i128 * xj as i128
                    })
                    .rem_euclid(n as i128) as u64
            })
            .collect();
        Ok(self
            .ambient
            .element_of(&shift)
            .expect("columns of A lie in the subgroup"))
    }

    fn mint_table(&self) -> &MintTable {
        self.table.get_or_init(|| {
            let p = &self.params;
            let n = p.n_modulus;
            let order = self.group().order() as usize;
            let psi = folded_gaussian_amplitudes(n, p.sigma, p.b_prime)
                .expect("parameters were validated");
            let grid: usize = (n as usize).pow(p.m as u32);

            let mut slices = vec![vec![Complex64::new(0.0, 0.0); grid]; order];
            let mut r = vec![0u64; p.m];
            for flat in 0..grid {
                let mut idx = flat as u64;
                for slot in r.iter_mut().rev() {
                    *slot = idx % n;
                    idx /= n;
                }
                let mut amp = 1.0;
                for &rj in &r {
                    amp *= psi[rj as usize];
                }
                let v: ZVec = (0..p.ambient_rank)
                    .map(|i| {
                        r.iter()
                            .enumerate()
                            .fold(0u128, |acc, (j, &rj)| {
                                (acc + p.a[i][j] as u128 * rj as u128) % n as u128
                            }) as u64
                    })
                    .collect();
                let g = self
                    .ambient
                    .index_of(&v)
                    .expect("images of exponent vectors lie in the subgroup");
                slices[g][flat] = Complex64::new(amp, 0.0);
            }

            let moduli = vec![n; p.m];
            slices.par_iter_mut().for_each(|slice| {
                qft_axes(slice, &moduli, 1, FourierDirection::Forward);
            });

            let mut marginal = vec![0.0f64; grid];
            for slice in &slices {
                for (t, a) in slice.iter().enumerate() {
                    marginal[t] += a.norm_sqr();
                }
            }
            MintTable { slices, marginal }
        })
    }

    /// Exact distribution of the measured serial vector, flattened over
    /// Z_N^m in mixed-radix order.
    pub fn serial_distribution(&self) -> &[f64] {
        &self.mint_table().marginal
    }

    fn flat_to_serial(&self, flat: usize) -> Vec<u64> {
        let n = self.params.n_modulus;
        let mut t = vec![0u64; self.params.m];
        let mut idx = flat as u64;
        for slot in t.iter_mut().rev() {
            *slot = idx % n;
            idx /= n;
        }
        t
    }

    /// Probability that every noise entry of the measured serial lies in
    /// [-C/2, C/2], under the exact mint distribution.
    pub fn noise_within_half_radius_prob(&self) -> f64 {
        let c = self.params.c_bound();
        let marginal = self.serial_distribution();
        let mut mass = 0.0;
        for (flat, &p) in marginal.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let t = self.flat_to_serial(flat);
            if let Some((_, e)) = self.decode_serial(&t) {
                if e.iter().all(|&ej| 2 * ej.abs() <= c) {
                    mass += p;
                }
            }
        }
        mass
    }

    /// Weights of the direction distribution over the box [-B, B]^m, in
    /// mixed-radix order, summing to 1.
    pub fn direction_weights(&self) -> Vec<f64> {
        let b = self.params.b_bound;
        let count = (2 * b + 1).pow(self.params.m as u32) as u64;
        let mut weights = Vec::with_capacity(count as usize);
        match self.params.dstar {
            DstarKind::UniformBall => weights.resize(count as usize, 1.0 / count as f64),
            DstarKind::Gaussian { sigma } => {
                for idx in 0..count {
                    let x = signed_box_at(idx, b, self.params.m);
                    let w: f64 = x
                        .iter()
                        .map(|&xj| {
                            let a = gaussian_density(sigma, xj as f64);
                            a * a
                        })
                        .product();
                    weights.push(w);
                }
                let total: f64 = weights.iter().sum();
                for w in &mut weights {
                    *w /= total;
                }
            }
        }
        weights
    }

    /// Total-variation distance of A x from uniform over the acting group,
    /// for x drawn from the direction distribution, by full enumeration.
    pub fn direction_tv_distance(&self) -> Result<f64> {
        let weights = self.direction_weights();
        let mut dist = vec![0.0f64; self.group().order() as usize];
        for (idx, &w) in weights.iter().enumerate() {
            let x = signed_box_at(idx as u64, self.params.b_bound, self.params.m);
            let u = self.direction_element(&x)?;
            dist[u.index() as usize] += w;
        }
        let uniform = 1.0 / self.group().order() as f64;
        Ok(dist.iter().map(|p| (p - uniform).abs()).sum::<f64>() / 2.0)
    }

    /// Evaluates the concrete parameter inequalities.
    pub fn report(&self) -> ParamsReport {
        let p = &self.params;
        let c = p.c_bound();
        let window_product = if c > 0 {
            8 * p.b_bound as u64 * c as u64 * p.m as u64
        } else {
            0
        };
        let worst_round_phase = std::f64::consts::TAU
            * p.b_bound as f64
            * (c as f64 / 2.0)
            * p.m as f64
            / p.n_modulus as f64;
        let noise_prob = if c > 0 {
            self.noise_within_half_radius_prob()
        } else {
            0.0
        };
        ParamsReport {
            c_bound: c,
            c_positive: c >= 1,
            window_product,
            window_ok: c >= 1 && window_product <= p.n_modulus,
            worst_round_phase,
            phase_ok: c >= 1
                && worst_round_phase <= std::f64::consts::PI / 8.0 + 1e-12,
            noise_in_half_radius_prob: noise_prob,
            noise_ok: noise_prob >= 1.0 - 1e-3,
            direction_tv_distance: self.direction_tv_distance().unwrap_or(f64::NAN),
        }
    }
}

/// A^T w over Z_N: coordinate j is <column j of A, w>.
fn a_transpose_vec(params: &RegaParams, w: &[u64]) -> Vec<u64> {
    let n = params.n_modulus;
    (0..params.m)
        .map(|j| {
            (0..params.ambient_rank)
                .fold(0u128, |acc, i| {
                    (acc + params.a[i][j] as u128 * w[i] as u128) % n as u128
                }) as u64
        })
        .collect()
}

/// A restricted-action money instance: the analysis structure coupled to an
/// action model whose group matches the acting subgroup. The money register
/// holds the model's labels.
pub struct RegaInstance {
    structure: RegaStructure,
    model: Arc<dyn ActionModel>,
    money_basis: Basis,
    /// Money-basis position of each abstract element's orbit label.
    slot: Vec<usize>,
}

/// Banknote of the restricted-action scheme: the noisy serial vector, the
/// money state over action labels, and the diagnostic serial element read
/// back from the note itself.
#[derive(Clone, Debug)]
pub struct RegaBanknote {
    pub serial_t: Vec<u64>,
    pub note: StateVector,
    pub h_witness: GroupElement,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegaBanknoteJson {
    pub action: ActionDescriptor,
    pub params: RegaParams,
    pub serial_t: Vec<u64>,
    pub h_witness: Vec<u64>,
    pub state: StateJson,
}

/// One verification round: the sampled direction, the exact probability of
/// reading 0, and the sampled bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegaRound {
    pub direction: Vec<i64>,
    pub p_zero: f64,
    pub zero: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegaVerifyReport {
    /// Mass of the state inside the member span.
    pub member_mass: f64,
    /// Whether the sampled support check passed.
    pub support_ok: bool,
    pub rounds: Vec<RegaRound>,
    pub zeros: usize,
    pub accepted: bool,
}

impl RegaInstance {
    pub fn new(params: RegaParams, model: Arc<dyn ActionModel>) -> Result<Self> {
        let structure = RegaStructure::new(params)?;
        Self::with_structure(structure, model)
    }

    pub fn with_structure(structure: RegaStructure, model: Arc<dyn ActionModel>) -> Result<Self> {
        if model.group().moduli() != structure.group().moduli() {
            return Err(Error::SpecMismatch(format!(
                "action group {} does not match the acting subgroup {}",
                model.group(),
                structure.group()
            )));
        }
        let money_basis = member_basis(model.as_ref())?;
        let start = model.start();
        let mut slot = Vec::with_capacity(structure.group().order() as usize);
        for g in structure.group().elements() {
            let label = model.act(&g, &start)?.ok_or_else(|| {
                Error::SpecMismatch("action undefined on the start label".into())
            })?;
            let pos = money_basis.position(&label).ok_or_else(|| {
                Error::SpecMismatch("orbit label missing from the member basis".into())
            })?;
            slot.push(pos);
        }
        Ok(RegaInstance {
            structure,
            model,
            money_basis,
            slot,
        })
    }

    pub fn structure(&self) -> &RegaStructure {
        &self.structure
    }

    pub fn params(&self) -> &RegaParams {
        self.structure.params()
    }

    pub fn group(&self) -> &GroupSpec {
        self.structure.group()
    }

    pub fn model(&self) -> &Arc<dyn ActionModel> {
        &self.model
    }

    pub fn money_basis(&self) -> &Basis {
        &self.money_basis
    }

    /// The abstract element sum_j r_j g_j applied by an exponent vector.
    pub fn exponent_element(&self, r: &[i64]) -> Result<GroupElement> {
        self.structure.direction_element(r)
    }

    /// Mints a banknote: measures the transform of the exponent register,
    /// collapses the money register, and reads the witness serial element
    /// back from the collapsed note.
    pub fn mint<R: Rng>(&self, rng: &mut R) -> Result<RegaBanknote> {
        let table = self.structure.mint_table();
        let flat = sample_index(&table.marginal, rng);
        let serial_t = self.structure.flat_to_serial(flat);
        let mass = table.marginal[flat].sqrt();
        let mut amps = vec![Complex64::new(0.0, 0.0); self.money_basis.len()];
        for (g_idx, slice) in table.slices.iter().enumerate() {
            amps[self.slot[g_idx]] = slice[flat] / mass;
        }
        let note = StateVector::from_amplitudes(&self.money_basis, amps)?;
        let dist = findh_distribution(self.model.as_ref(), &note)?;
        let witness_idx = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("group is nonempty");
        let h_witness = self.group().element_at(witness_idx as u64)?;
        Ok(RegaBanknote {
            serial_t,
            note,
            h_witness,
        })
    }

    /// Applies the round operator for direction x: the shift of money labels
    /// by -A x. Amplitudes must be over the money basis.
    fn shift_by_direction(&self, amps: &[Complex64], x: &[i64]) -> Result<Vec<Complex64>> {
        let u = self.structure.direction_element(x)?;
        let mut out = vec![Complex64::new(0.0, 0.0); amps.len()];
        for g in self.group().elements() {
            let dst = g.sub(&u)?.index() as usize;
            out[self.slot[dst]] = amps[self.slot[g.index() as usize]];
        }
        Ok(out)
    }

    /// Exact probability that one verification round along direction x reads
    /// 0, for a state over the money basis and a claimed serial vector t.
    pub fn round_zero_prob(&self, state: &StateVector, t: &[u64], x: &[i64]) -> Result<f64> {
        if state.basis() != &self.money_basis {
            return Err(Error::BasisMismatch(
                "round probability needs a money-basis state".into(),
            ));
        }
        let moved = self.shift_by_direction(state.amps(), x)?;
        let overlap: Complex64 = state
            .amps()
            .iter()
            .zip(&moved)
            .map(|(a, b)| a.conj() * b)
            .sum();
        let theta = self.direction_phase(t, x)?;
        Ok(((1.0 + (Complex64::from_polar(1.0, -theta) * overlap).re) / 2.0).clamp(0.0, 1.0))
    }

    /// Measurement-basis phase 2 pi x.t / N for one round.
    fn direction_phase(&self, t: &[u64], x: &[i64]) -> Result<f64> {
        let p = self.params();
        if t.len() != p.m || x.len() != p.m {
            return Err(Error::ParamInvalid(format!(
                "serial and direction must have length m = {}",
                p.m
            )));
        }
        if t.iter().any(|&tj| tj >= p.n_modulus) {
            return Err(Error::ParamInvalid("serial entries must be reduced mod N".into()));
        }
        let n = p.n_modulus as i128;
        let dot = t
            .iter()
            .zip(x)
            .fold(0i128, |acc, (&tj, &xj)| (acc + tj as i128 * xj as i128).rem_euclid(n));
        Ok(std::f64::consts::TAU * dot as f64 / p.n_modulus as f64)
    }

    /// Minimum round-zero probability over the whole direction box, for a
    /// money-basis state and claimed serial t.
    pub fn min_round_zero_prob(&self, state: &StateVector, t: &[u64]) -> Result<f64> {
        let b = self.params().b_bound;
        let count = (2 * b + 1).pow(self.params().m as u32) as u64;
        let mut min = 1.0f64;
        for idx in 0..count {
            let x = signed_box_at(idx, b, self.params().m);
            min = min.min(self.round_zero_prob(state, t, &x)?);
        }
        Ok(min)
    }

    /// Round-zero probability averaged over the direction distribution.
    pub fn mean_round_zero_prob(&self, state: &StateVector, t: &[u64]) -> Result<f64> {
        let weights = self.structure.direction_weights();
        let b = self.params().b_bound;
        let mut mean = 0.0;
        for (idx, &w) in weights.iter().enumerate() {
            let x = signed_box_at(idx as u64, b, self.params().m);
            mean += w * self.round_zero_prob(state, t, &x)?;
        }
        Ok(mean)
    }

    pub fn sample_direction<R: Rng>(&self, rng: &mut R) -> Vec<i64> {
        let b = self.params().b_bound;
        match self.params().dstar {
            DstarKind::UniformBall => {
                (0..self.params().m).map(|_| rng.gen_range(-b..=b)).collect()
            }
            DstarKind::Gaussian { .. } => {
                let weights = self.structure.direction_weights();
                let idx = sample_index(&weights, rng);
                signed_box_at(idx as u64, b, self.params().m)
            }
        }
    }

    /// Runs the full verification protocol against a claimed serial vector:
    /// the support check followed by lambda phase-estimation rounds, with
    /// the money register collapsing between rounds.
    pub fn verify<R: Rng>(
        &self,
        t: &[u64],
        state: &StateVector,
        rng: &mut R,
    ) -> Result<RegaVerifyReport> {
        let lambda = self.params().lambda;
        let (member_mass, member_part) = member_projection(self.model.as_ref(), state)?;
        let support_ok = rng.gen_range(0.0..1.0) < member_mass;
        let Some(aligned) = member_part.filter(|_| support_ok) else {
            return Ok(RegaVerifyReport {
                member_mass,
                support_ok,
                rounds: Vec::new(),
                zeros: 0,
                accepted: false,
            });
        };
        let mut cur = aligned.amps().to_vec();
        let mut rounds = Vec::with_capacity(lambda);
        let mut zeros = 0usize;
        for _ in 0..lambda {
            let x = self.sample_direction(rng);
            let theta = self.direction_phase(t, &x)?;
            let corrected = Complex64::from_polar(1.0, -theta);
            let moved = self.shift_by_direction(&cur, &x)?;
            let plus: Vec<Complex64> = cur
                .iter()
                .zip(&moved)
                .map(|(a, b)| (a + corrected * b) / 2.0)
                .collect();
            let p_zero: f64 = plus
                .iter()
                .map(|a| a.norm_sqr())
                .sum::<f64>()
                .clamp(0.0, 1.0);
            let zero = rng.gen_range(0.0..1.0) < p_zero;
            if zero {
                zeros += 1;
                let norm = p_zero.sqrt();
                cur = plus.into_iter().map(|a| a / norm).collect();
            } else {
                let norm = (1.0 - p_zero).sqrt();
                cur = cur
                    .iter()
                    .zip(&moved)
                    .map(|(a, b)| (a - corrected * b) / (2.0 * norm))
                    .collect();
            }
            rounds.push(RegaRound {
                direction: x,
                p_zero,
                zero,
            });
        }
        Ok(RegaVerifyReport {
            member_mass,
            support_ok,
            rounds,
            zeros,
            accepted: support_ok && zeros >= self.params().threshold_rounds(),
        })
    }
}

impl RegaBanknote {
    pub fn to_json(&self, inst: &RegaInstance) -> RegaBanknoteJson {
        RegaBanknoteJson {
            action: inst.model().descriptor(),
            params: inst.params().clone(),
            serial_t: self.serial_t.clone(),
            h_witness: self.h_witness.residues().to_vec(),
            state: self.note.to_json(),
        }
    }

    pub fn from_json(json: &RegaBanknoteJson) -> Result<(RegaInstance, RegaBanknote)> {
        let model = crate::actions::build_action(&json.action)?;
        let inst = RegaInstance::new(json.params.clone(), model)?;
        let h_witness = inst.group().element(json.h_witness.clone())?;
        let note = StateVector::from_json(&json.state)?;
        Ok((
            inst,
            RegaBanknote {
                serial_t: json.serial_t.clone(),
                note,
                h_witness,
            },
        ))
    }
}

/// Counts elements g of the order-d subgroup of Z_N whose signed residue
/// satisfies |g| >= N/4, by direct enumeration with exact comparisons.
pub fn large_subgroup_element_count(n_modulus: u64, d: u64) -> Result<u64> {
    if d == 0 || n_modulus % d != 0 {
        return Err(Error::ParamInvalid(format!(
            "{d} does not divide the modulus {n_modulus}"
        )));
    }
    let step = n_modulus / d;
    let mut count = 0;
    for k in 0..d {
        let g = k * step;
        let signed = g.min(n_modulus - g);
        if 4 * signed >= n_modulus {
            count += 1;
        }
    }
    Ok(count)
}

/// Closed form for the same count: d + 1 - 2 ceil(d/4).
pub fn large_subgroup_element_formula(d: u64) -> u64 {
    d + 1 - 2 * d.div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::TranslationAction;
    use crate::lightning::note_state;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo_instance(params: RegaParams) -> RegaInstance {
        let structure = RegaStructure::new(params).unwrap();
        let model = Arc::new(TranslationAction::new(structure.group()));
        RegaInstance::with_structure(structure, model).unwrap()
    }

    #[test]
    fn gaussian_superposition_is_symmetric_and_flattens_with_width() {
        let spec = GaussianSpec::new(4.0, 12).unwrap();
        let state = gaussian_superposition(&spec).unwrap();
        let amps = state.amps();
        for x in 0..12usize {
            assert_abs_diff_eq!(amps[12 + x].re, amps[12 - x].re, epsilon = 1e-12);
        }
        assert!(amps[12].re > amps[13].re);
        assert!(spec.tail_mass_beyond_bound() < 1e-6);

        let flat = GaussianSpec {
            sigma: f64::INFINITY,
            bound: 3,
            exponent_scale: DENSITY_EXPONENT_SCALE,
        };
        let state = gaussian_superposition(&flat).unwrap();
        let expect = 1.0 / 7.0f64.sqrt();
        for a in state.amps() {
            assert_abs_diff_eq!(a.re, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn folding_matches_direct_integer_sum() {
        let n = 13u64;
        let sigma = 9.0;
        let cutoff = 40i64;
        let amps = folded_gaussian_amplitudes(n, sigma, cutoff).unwrap();
        let mut expect = vec![0.0f64; n as usize];
        for x in -cutoff..=cutoff {
            expect[x.rem_euclid(n as i64) as usize] += gaussian_density(sigma, x as f64);
        }
        let norm: f64 = expect.iter().map(|a| a * a).sum::<f64>().sqrt();
        for r in 0..n as usize {
            assert_abs_diff_eq!(amps[r], expect[r] / norm, epsilon = 1e-12);
        }
        let total: f64 = amps.iter().map(|a| a * a).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn qft_maps_gaussian_to_dual_gaussian() {
        assert!(qft_gaussian_pair_check(256, 8.0).unwrap() < 1e-3);
        assert!(qft_gaussian_pair_check(64, 8.0).unwrap() < 1e-3);
        // Distance never grows with N for fixed width; at widths >= 8 the
        // periodization error saturates double precision at zero, so the
        // strict decrease is visible only at a narrower width.
        let sweep_at = |sigma: f64| -> Vec<f64> {
            [64u64, 128, 256]
                .iter()
                .map(|&n| qft_gaussian_pair_check(n, sigma).unwrap())
                .collect()
        };
        let wide = sweep_at(8.0);
        assert!(wide.iter().all(|&d| d < 1e-6), "{wide:?}");
        let narrow = sweep_at(4.0);
        assert!(narrow[0] > narrow[1] && narrow[1] > narrow[2], "{narrow:?}");
        // The self-dual width sqrt(N) minimizes the distance over a sweep,
        // saturating the noise floor; widths off the floor sit strictly above.
        let at = |s: f64| qft_gaussian_pair_check(256, s).unwrap();
        let self_dual = at(16.0);
        assert!(self_dual < 1e-6);
        for s in [2.0, 4.0, 64.0, 128.0] {
            assert!(self_dual < at(s), "width {s}");
        }
    }

    #[test]
    fn subgroup_closure_and_factors_of_the_demo_instances() {
        let s = RegaStructure::new(demo_params_533()).unwrap();
        assert_eq!(s.group().moduli(), &[13]);
        assert_eq!(s.annihilator().len(), 41);

        let s = RegaStructure::new(demo_params_169()).unwrap();
        assert_eq!(s.group().moduli(), &[169]);
        assert_eq!(s.annihilator().len(), 1);
    }

    #[test]
    fn rank_two_subgroup_gets_invariant_factors() {
        let params = RegaParams {
            n_modulus: 6,
            ambient_rank: 2,
            m: 2,
            a: vec![vec![1, 0], vec![0, 2]],
            b_bound: 1,
            dstar: DstarKind::UniformBall,
            sigma: 12.0,
            b_prime: 18,
            lambda: 8,
        };
        let s = RegaStructure::new(params).unwrap();
        assert_eq!(s.group().moduli(), &[3, 6]);
        assert_eq!(s.group().order(), 18);
        // |W| = N^n / |G|.
        assert_eq!(s.annihilator().len(), 2);
        // C = floor(6/16) = 0: decoding is impossible and the report says so.
        let report = s.report();
        assert!(!report.c_positive);
        assert!(!report.all_ok());
    }

    #[test]
    fn params_reports_of_the_demo_instances_pass() {
        for params in [demo_params_169(), demo_params_533()] {
            let report = validate_params(&params).unwrap();
            assert!(report.c_positive);
            assert!(report.window_ok, "window {}", report.window_product);
            assert!(
                (report.window_product as u64) < params.n_modulus,
                "demo windows are strict"
            );
            assert!(report.phase_ok, "phase {}", report.worst_round_phase);
            assert!(report.noise_ok, "noise {}", report.noise_in_half_radius_prob);
            assert!(report.all_ok());
            // Both demo boxes tile the acting group exactly.
            assert_abs_diff_eq!(report.direction_tv_distance, 0.0, epsilon = 1e-12);
        }
        assert_eq!(demo_params_169().c_bound(), 1);
        assert_eq!(demo_params_533().c_bound(), 11);
    }

    #[test]
    fn paper_shaped_window_passes_at_equality() {
        // N = 512, m = 2, B = 1 gives C = 32 and window product exactly N.
        let params = RegaParams {
            n_modulus: 512,
            ambient_rank: 1,
            m: 2,
            a: vec![vec![1, 2]],
            b_bound: 1,
            dstar: DstarKind::UniformBall,
            sigma: 64.0,
            b_prime: 256,
            lambda: 8,
        };
        assert_eq!(params.c_bound(), 32);
        let c = params.c_bound();
        let product = 8 * params.b_bound as u64 * c as u64 * params.m as u64;
        assert_eq!(product, 512);
        assert!(product <= params.n_modulus);
    }

    #[test]
    fn decode_round_trips_every_serial_and_noise() {
        for params in [demo_params_169(), demo_params_533()] {
            let s = RegaStructure::new(params.clone()).unwrap();
            assert_eq!(serial_decode_collisions(&params).unwrap(), 0);
            let n = params.n_modulus;
            let c = params.c_bound();
            let noise_count = (2 * c + 1).pow(params.m as u32) as u64;
            for h in s.group().elements() {
                let base = s.serial_base(&h);
                for noise_idx in 0..noise_count {
                    let e = signed_box_at(noise_idx, c, params.m);
                    let t: Vec<u64> = base
                        .iter()
                        .zip(&e)
                        .map(|(&b, &ej)| (b as i64 + ej).rem_euclid(n as i64) as u64)
                        .collect();
                    let (decoded_h, decoded_e) = s.decode_serial(&t).unwrap();
                    assert_eq!(decoded_h, h);
                    assert_eq!(decoded_e, e);
                }
            }
            // Exactly |G| (2C+1)^m vectors decode; everything else is out of
            // radius of every coset and must decode to nothing.
            let grid = (n as usize).pow(params.m as u32);
            let decodable = (0..grid)
                .filter(|&flat| {
                    let t: Vec<u64> = {
                        let mut t = vec![0u64; params.m];
                        let mut idx = flat as u64;
                        for slot in t.iter_mut().rev() {
                            *slot = idx % n;
                            idx /= n;
                        }
                        t
                    };
                    s.decode_serial(&t).is_some()
                })
                .count() as u64;
            assert_eq!(decodable, s.group().order() * noise_count);
            assert!(decodable < grid as u64);
        }
    }

    #[test]
    fn large_element_count_matches_formula() {
        assert_eq!(large_subgroup_element_count(5, 5).unwrap(), 2);
        assert_eq!(large_subgroup_element_formula(5), 2);
        assert_eq!(large_subgroup_element_formula(1), 0);
        for n in 2..=64u64 {
            for d in (1..=n).filter(|d| n % d == 0) {
                assert_eq!(
                    large_subgroup_element_count(n, d).unwrap(),
                    large_subgroup_element_formula(d),
                    "n={n} d={d}"
                );
            }
        }
    }

    #[test]
    fn mint_produces_decodable_notes_on_both_demos() {
        for params in [demo_params_533(), demo_params_169()] {
            let inst = demo_instance(params);
            let dist = inst.structure().serial_distribution();
            let total: f64 = dist.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);

            let mut rng = ChaCha8Rng::seed_from_u64(101);
            let c = inst.params().c_bound();
            let mut within_half_radius = 0;
            for _ in 0..100 {
                let note = inst.mint(&mut rng).unwrap();
                let (h, e) = inst
                    .structure()
                    .decode_serial(&note.serial_t)
                    .expect("demo serials decode");
                assert_eq!(h, note.h_witness);
                assert!(e.iter().all(|&ej| ej.abs() <= c));
                if e.iter().all(|&ej| 2 * ej.abs() <= c) {
                    within_half_radius += 1;
                }
            }
            assert!(
                within_half_radius >= 99,
                "half-radius noise rate {within_half_radius}/100"
            );
        }
    }

    #[test]
    fn direction_sampling_covers_small_groups_and_repeats_under_a_seed() {
        // 2B+1 = N with a single generator: A x runs over Z_N exactly once.
        let params = RegaParams {
            n_modulus: 5,
            ambient_rank: 1,
            m: 1,
            a: vec![vec![1]],
            b_bound: 2,
            dstar: DstarKind::UniformBall,
            sigma: 8.0,
            b_prime: 16,
            lambda: 8,
        };
        let structure = RegaStructure::new(params).unwrap();
        assert_eq!(structure.direction_tv_distance().unwrap(), 0.0);

        let inst = demo_instance(demo_params_533());
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            assert_eq!(inst.sample_direction(&mut a), inst.sample_direction(&mut b));
        }
    }

    #[test]
    fn mint_marginal_matches_a_direct_transform_oracle() {
        // Recompute the serial distribution of the one-generator demo by
        // summing the transform directly over the exponent support, one
        // acting element at a time.
        let params = demo_params_533();
        let structure = RegaStructure::new(params.clone()).unwrap();
        let n = params.n_modulus;
        let psi = folded_gaussian_amplitudes(n, params.sigma, params.b_prime).unwrap();
        let order = structure.group().order() as usize;

        let mut oracle = vec![0.0f64; n as usize];
        for (t, slot) in oracle.iter_mut().enumerate() {
            let mut acc = vec![Complex64::new(0.0, 0.0); order];
            for r in 0..n {
                if psi[r as usize] == 0.0 {
                    continue;
                }
                let g = structure
                    .ambient()
                    .index_of(&[params.a[0][0] * r % n])
                    .unwrap();
                let angle = std::f64::consts::TAU * (t as u64 * r % n) as f64 / n as f64;
                acc[g] += Complex64::from_polar(psi[r as usize], angle);
            }
            *slot = acc.iter().map(|a| a.norm_sqr()).sum::<f64>() / n as f64;
        }

        for (&o, &m) in oracle.iter().zip(structure.serial_distribution()) {
            assert_abs_diff_eq!(o, m, epsilon = 1e-12);
        }
    }

    #[test]
    fn honest_notes_verify_and_wrong_serials_fail() {
        let inst = demo_instance(demo_params_533());
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let note = inst.mint(&mut rng).unwrap();

        let min_honest = inst.min_round_zero_prob(&note.note, &note.serial_t).unwrap();
        assert!(min_honest >= 0.9614, "honest round floor {min_honest}");

        let report = inst.verify(&note.serial_t, &note.note, &mut rng).unwrap();
        assert!(report.support_ok);
        assert!(report.accepted, "zeros {}/{}", report.zeros, report.rounds.len());

        let mut wrong_mean = 0.0;
        let mut wrong_count = 0;
        for h in inst.group().elements() {
            if h == note.h_witness {
                continue;
            }
            let t_wrong = inst.structure().serial_base(&h);
            wrong_mean += inst.mean_round_zero_prob(&note.note, &t_wrong).unwrap();
            wrong_count += 1;
            let report = inst.verify(&t_wrong, &note.note, &mut rng).unwrap();
            assert!(!report.accepted, "wrong serial accepted at {h}");
        }
        wrong_mean /= wrong_count as f64;
        assert!(
            wrong_mean <= 3.0 / 4.0 + std::f64::consts::PI / 32.0 + 0.01,
            "wrong-serial mean {wrong_mean}"
        );
    }

    #[test]
    fn primary_demo_mints_faithful_notes() {
        let inst = demo_instance(demo_params_169());
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let note = inst.mint(&mut rng).unwrap();

        let ideal = note_state(inst.model().as_ref(), &note.h_witness).unwrap();
        let fidelity = note.note.fidelity(&ideal).unwrap();
        assert!(fidelity >= 1.0 - 1e-3, "witness fidelity {fidelity}");

        let min_honest = inst.min_round_zero_prob(&note.note, &note.serial_t).unwrap();
        assert!(min_honest >= 0.9614, "honest round floor {min_honest}");

        let report = inst.verify(&note.serial_t, &note.note, &mut rng).unwrap();
        assert!(report.accepted);

        let wrong = note
            .h_witness
            .add(&inst.group().element(vec![5]).unwrap())
            .unwrap();
        let t_wrong = inst.structure().serial_base(&wrong);
        let p_wrong = inst.mean_round_zero_prob(&note.note, &t_wrong).unwrap();
        assert_abs_diff_eq!(p_wrong, 0.5, epsilon = 1e-3);
        let report = inst.verify(&t_wrong, &note.note, &mut rng).unwrap();
        assert!(!report.accepted);
    }

    #[test]
    fn verify_rejects_states_off_the_member_span() {
        let inst = demo_instance(demo_params_533());
        let bogus_basis = Basis::new(vec![
            Label::from_index(1u64 << 40),
            Label::from_index(1u64 << 41),
        ])
        .unwrap();
        let bogus = StateVector::basis_state(&bogus_basis, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = vec![0u64];
        let report = inst.verify(&t, &bogus, &mut rng).unwrap();
        assert_abs_diff_eq!(report.member_mass, 0.0, epsilon = 1e-12);
        assert!(!report.support_ok);
        assert!(!report.accepted);
    }

    #[test]
    fn banknote_json_round_trip() {
        let inst = demo_instance(demo_params_533());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let note = inst.mint(&mut rng).unwrap();
        let text = serde_json::to_string(&note.to_json(&inst)).unwrap();
        let parsed: RegaBanknoteJson = serde_json::from_str(&text).unwrap();
        let (inst2, note2) = RegaBanknote::from_json(&parsed).unwrap();
        assert_eq!(note2.serial_t, note.serial_t);
        assert_eq!(note2.h_witness, note.h_witness);
        let report = inst2
            .verify(&note2.serial_t, &note2.note, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert!(report.accepted);
    }
}
