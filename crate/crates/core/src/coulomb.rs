//! Four-index Coulomb matrix elements between envelope states.
//!
//! The production path works in in-plane momentum space:
//!
//! V = e²/(4πε₀ε_r) ∫ d²q/(2π)² (2π/q) F(q) ρ_{μμ̄}(q) ρ_{νν̄}(−q)
//!
//! with closed-form Hermite-Gaussian transition densities ρ and the z form
//! factor F. In polar coordinates the 1/q cancels against the Jacobian; the
//! angular integrand is a trigonometric polynomial, so an equispaced rule of
//! sufficient length integrates it exactly, and the radial integral uses
//! Gauss-Legendre nodes. [`brute_force_element`] evaluates the same integral
//! in real space along an independent route.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::confinement::{MaterialParams, SingleParticleBasis, SingleParticleState, Species, Subband};
use crate::error::{Error, Result};
use crate::quadrature::{factorial, gauss_hermite, gauss_legendre, hermite_function, laguerre, Rule};
use crate::units::COULOMB_CONSTANT;

pub const CACHE_SCHEMA: &str = "qdgate.coulomb-cache/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoulombKind {
    Ee,
    Hh,
    Eh,
}

impl CoulombKind {
    pub const ALL: [CoulombKind; 3] = [CoulombKind::Ee, CoulombKind::Hh, CoulombKind::Eh];

    /// Species of particle 1 (indices μ, μ̄) and particle 2 (ν, ν̄).
    pub fn species(self) -> (Species, Species) {
        match self {
            CoulombKind::Ee => (Species::Electron, Species::Electron),
            CoulombKind::Hh => (Species::Hole, Species::Hole),
            CoulombKind::Eh => (Species::Electron, Species::Hole),
        }
    }

    pub fn same_species(self) -> bool {
        !matches!(self, CoulombKind::Eh)
    }

    pub fn name(self) -> &'static str {
        match self {
            CoulombKind::Ee => "ee",
            CoulombKind::Hh => "hh",
            CoulombKind::Eh => "eh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormFactorMode {
    /// Finite well width through F(q).
    QuasiTwoD,
    /// F ≡ 1, a strictly two-dimensional interaction.
    Strict2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoulombOptions {
    pub radial_nodes: usize,
    pub z_nodes: usize,
    pub form_factor: FormFactorMode,
    /// Relative tolerance of the node-doubling self-test.
    pub tolerance: f64,
}

impl Default for CoulombOptions {
    fn default() -> Self {
        CoulombOptions {
            radial_nodes: 256,
            z_nodes: 48,
            form_factor: FormFactorMode::QuasiTwoD,
            tolerance: 1e-6,
        }
    }
}

/// F(q) = ∫∫ |χ(z₁)|² |χ(z₂)|² exp(−q|z₁−z₂|) dz₁ dz₂ for one subband.
pub fn form_factor(q: f64, subband: &Subband, nodes: usize) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::domain("form factor needs q >= 0"));
    }
    Ok(form_factor_pair(q, subband, subband, &gauss_legendre(nodes)))
}

/// Two-subband form factor. The kink at z₁ = z₂ is avoided by integrating
/// each triangle separately, where the integrand is smooth.
fn form_factor_pair(q: f64, first: &Subband, second: &Subband, rule: &Rule) -> f64 {
    let width = first.well_width.max(second.well_width);
    let outer = rule.mapped(0.0, width);
    let mut total = 0.0;
    for (&z1, &w1) in outer.nodes.iter().zip(&outer.weights) {
        if z1 <= 0.0 {
            continue;
        }
        let inner = rule.mapped(0.0, z1);
        let lower: f64 = inner
            .nodes
            .iter()
            .zip(&inner.weights)
            .map(|(&z2, &w2)| {
                let k = (-q * (z1 - z2)).exp();
                w2 * k * (first.density(z1) * second.density(z2) + first.density(z2) * second.density(z1))
            })
            .sum();
        total += w1 * lower;
    }
    total
}

/// ∫ ψ_m(x) ψ_n(x) e^{−ikx} dx for oscillator functions of length `l`.
pub fn transition_1d(m: usize, n: usize, k: f64, l: f64) -> Complex64 {
    let (lo, hi) = if m <= n { (m, n) } else { (n, m) };
    let d = hi - lo;
    let a2 = 0.5 * k * k * l * l;
    let alpha = Complex64::new(0.0, -k * l / 2f64.sqrt());
    let norm = (factorial(lo) / factorial(hi)).sqrt();
    alpha.powu(d as u32) * (norm * (-0.5 * a2).exp() * laguerre(lo, d as f64, a2))
}

/// Precomputed quadrature for one interaction kind.
struct MomentumEngine {
    prefactor: f64,
    /// Radial weights with F(q) folded in.
    weights: Vec<f64>,
    n_theta: usize,
    max_q: usize,
    /// f_{mn}(q cos θ) for particle 1 and 2, indexed [node][angle][m][n].
    first_x: Vec<Complex64>,
    first_y: Vec<Complex64>,
    second_x: Vec<Complex64>,
    second_y: Vec<Complex64>,
}

fn max_quantum(states: &[SingleParticleState]) -> usize {
    states.iter().map(|s| s.n_x.max(s.n_y)).max().unwrap_or(0) as usize
}

impl MomentumEngine {
    fn new(
        kind: CoulombKind,
        basis: &SingleParticleBasis,
        material: &MaterialParams,
        options: &CoulombOptions,
        radial_nodes: usize,
    ) -> Result<Self> {
        let (s1, s2) = kind.species();
        let (st1, st2) = (basis.states(s1), basis.states(s2));
        let max_q = max_quantum(st1).max(max_quantum(st2));
        let l1 = st1[0].oscillator_length;
        let l2 = st2[0].oscillator_length;
        // Total polynomial degree in (q_x, q_y) is at most 8·max_q.
        let degree = 8 * max_q;
        let n_theta = degree + 8;
        let s = 0.25 * (l1 * l1 + l2 * l2);
        let q_max = ((0.5 * degree as f64).sqrt() + 7.0) / s.sqrt();

        let radial = gauss_legendre(radial_nodes).mapped(0.0, q_max);
        let z_rule = gauss_legendre(options.z_nodes);
        let weights: Vec<f64> = radial
            .nodes
            .iter()
            .zip(&radial.weights)
            .map(|(&q, &w)| {
                let f = match options.form_factor {
                    FormFactorMode::Strict2d => 1.0,
                    FormFactorMode::QuasiTwoD => form_factor_pair(q, basis.subband(s1), basis.subband(s2), &z_rule),
                };
                w * f
            })
            .collect();

        let dim = max_q + 1;
        let table = |l: f64, use_cos: bool| -> Vec<Complex64> {
            let mut out = Vec::with_capacity(radial_nodes * n_theta * dim * dim);
            for &q in &radial.nodes {
                for t in 0..n_theta {
                    let theta = 2.0 * PI * t as f64 / n_theta as f64;
                    let k = if use_cos { q * theta.cos() } else { q * theta.sin() };
                    for m in 0..dim {
                        for n in 0..dim {
                            out.push(transition_1d(m, n, k, l));
                        }
                    }
                }
            }
            out
        };
        Ok(MomentumEngine {
            prefactor: COULOMB_CONSTANT / material.dielectric_constant,
            weights,
            n_theta,
            max_q,
            first_x: table(l1, true),
            first_y: table(l1, false),
            second_x: table(l2, true),
            second_y: table(l2, false),
        })
    }

    fn element(
        &self,
        a: &SingleParticleState,
        b: &SingleParticleState,
        c: &SingleParticleState,
        d: &SingleParticleState,
    ) -> f64 {
        // ⟨a b | V | c d⟩: particle 1 a→c, particle 2 b→d.
        let dim = self.max_q + 1;
        let idx = |m: u32, n: u32| m as usize * dim + n as usize;
        let (ix1, iy1) = (idx(a.n_x, c.n_x), idx(a.n_y, c.n_y));
        let (ix2, iy2) = (idx(b.n_x, d.n_x), idx(b.n_y, d.n_y));
        // ρ₂(−q) = (−1)^(total quantum number) ρ₂(q)
        let sign = if (b.n_x + d.n_x + b.n_y + d.n_y).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        let stride = dim * dim;
        let mut total = Complex64::new(0.0, 0.0);
        for (i, &w) in self.weights.iter().enumerate() {
            let mut angular = Complex64::new(0.0, 0.0);
            for t in 0..self.n_theta {
                let base = (i * self.n_theta + t) * stride;
                let rho1 = self.first_x[base + ix1] * self.first_y[base + iy1];
                let rho2 = self.second_x[base + ix2] * self.second_y[base + iy2];
                angular += rho1 * rho2;
            }
            total += angular * w;
        }
        // (1/2π)·(2π/n_theta) from the angular rule
        sign * self.prefactor * total.re / self.n_theta as f64
    }
}

fn parity_allowed(
    a: &SingleParticleState,
    b: &SingleParticleState,
    c: &SingleParticleState,
    d: &SingleParticleState,
) -> bool {
    (a.n_x + b.n_x + c.n_x + d.n_x).is_multiple_of(2) && (a.n_y + b.n_y + c.n_y + d.n_y).is_multiple_of(2)
}

fn check_species(kind: CoulombKind, basis: &SingleParticleBasis, idx: [usize; 4]) -> Result<()> {
    let (s1, s2) = kind.species();
    let (n1, n2) = (basis.states(s1).len(), basis.states(s2).len());
    if idx[0] >= n1 || idx[2] >= n1 || idx[1] >= n2 || idx[3] >= n2 {
        return Err(Error::domain(format!("index tuple {idx:?} outside basis ({n1}, {n2})")));
    }
    Ok(())
}

/// Single element ⟨μ ν | V | μ̄ ν̄⟩ (meV) of the positive Coulomb kernel.
pub fn coulomb_element(
    kind: CoulombKind,
    idx: [usize; 4],
    basis: &SingleParticleBasis,
    material: &MaterialParams,
    options: &CoulombOptions,
) -> Result<f64> {
    check_species(kind, basis, idx)?;
    let (s1, s2) = kind.species();
    let (st1, st2) = (basis.states(s1), basis.states(s2));
    let (a, b, c, d) = (&st1[idx[0]], &st2[idx[1]], &st1[idx[2]], &st2[idx[3]]);
    if !parity_allowed(a, b, c, d) {
        return Ok(0.0);
    }
    let engine = MomentumEngine::new(kind, basis, material, options, options.radial_nodes)?;
    Ok(engine.element(a, b, c, d))
}

/// Same as [`coulomb_element`] but for explicitly given states, which may
/// belong to different species than their position implies.
pub fn coulomb_element_for_states(
    states: [&SingleParticleState; 4],
    kind: CoulombKind,
    basis: &SingleParticleBasis,
    material: &MaterialParams,
    options: &CoulombOptions,
) -> Result<f64> {
    let (s1, s2) = kind.species();
    let expect = [s1, s2, s1, s2];
    for (st, sp) in states.iter().zip(expect) {
        if st.species != sp {
            return Err(Error::SpeciesMismatch(format!(
                "{} element needs {:?} in this slot, got {:?}",
                kind.name(),
                sp,
                st.species
            )));
        }
    }
    let [a, b, c, d] = states;
    if !parity_allowed(a, b, c, d) {
        return Ok(0.0);
    }
    let engine = MomentumEngine::new(kind, basis, material, options, options.radial_nodes)?;
    Ok(engine.element(a, b, c, d))
}

/// Result of a brute-force oracle integral.
#[derive(Clone, Copy, Debug)]
pub struct OracleValue {
    pub value: f64,
    pub error_estimate: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct BruteForceOptions {
    pub radial_panels: usize,
    pub nodes_per_panel: usize,
    pub angles: usize,
    pub tolerance: f64,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        BruteForceOptions {
            radial_panels: 12,
            nodes_per_panel: 16,
            angles: 64,
            tolerance: 1e-4,
        }
    }
}

/// Real-space evaluation of ⟨μ ν | 1/|r₁ − r₂| | μ̄ ν̄⟩ (meV) used only to
/// check the momentum-space path.
///
/// The six coordinates are reduced by nested quadrature: the z pair becomes a
/// smooth function W(ρ) of the in-plane separation (sinh substitution removes
/// the near-singularity), the centre-of-mass plane integral is done with
/// shifted Gauss-Hermite nodes, and the separation plane with a graded radial
/// rule and an equispaced angular rule. The error estimate is the change
/// under doubling the radial resolution.
pub fn brute_force_element(
    kind: CoulombKind,
    idx: [usize; 4],
    basis: &SingleParticleBasis,
    material: &MaterialParams,
    options: &BruteForceOptions,
) -> Result<OracleValue> {
    check_species(kind, basis, idx)?;
    let coarse = brute_force_at(kind, idx, basis, material, options.radial_panels, options)?;
    let fine = brute_force_at(kind, idx, basis, material, 2 * options.radial_panels, options)?;
    let estimate = (fine - coarse).abs();
    let scale = fine.abs().max(1e-12);
    if estimate / scale > options.tolerance && estimate > 1e-10 {
        return Err(Error::OracleUnconverged {
            what: format!("brute-force {} element {idx:?}", kind.name()),
            estimate: estimate / scale,
            tolerance: options.tolerance,
        });
    }
    Ok(OracleValue {
        value: fine,
        error_estimate: estimate,
    })
}

fn brute_force_at(
    kind: CoulombKind,
    idx: [usize; 4],
    basis: &SingleParticleBasis,
    material: &MaterialParams,
    panels: usize,
    options: &BruteForceOptions,
) -> Result<f64> {
    let (s1, s2) = kind.species();
    let (st1, st2) = (basis.states(s1), basis.states(s2));
    let (a, b, c, d) = (st1[idx[0]], st2[idx[1]], st1[idx[2]], st2[idx[3]]);
    let (l1, l2) = (a.oscillator_length, b.oscillator_length);
    let sub1 = *basis.subband(s1);
    let sub2 = *basis.subband(s2);

    // g(u) = ∫ ρ₁(z) ρ₂(z + u) dz
    let z_rule = gauss_legendre(64);
    let width = sub1.well_width.max(sub2.well_width);
    let autocorr = |u: f64| -> f64 {
        let lo = 0f64.max(-u);
        let hi = width.min(width - u);
        if hi <= lo {
            return 0.0;
        }
        z_rule
            .mapped(lo, hi)
            .integrate(|z| sub1.density(z) * sub2.density(z + u))
    };
    // W(r) = ∫ g(u)/√(r² + u²) du, with u = ±r·sinh(t).
    let t_rule = gauss_legendre(64);
    let w_kernel = |r: f64| -> f64 {
        let t_max = (width / r).asinh();
        let rule = t_rule.mapped(0.0, t_max);
        rule.integrate(|t| {
            let u = r * t.sinh();
            autocorr(u) + autocorr(-u)
        })
    };

    let gh = gauss_hermite(32);
    let plane_1d = |m1: u32, n1: u32, m2: u32, n2: u32, s: f64| -> f64 {
        // ∫ ψ_m1 ψ_n1 (x; l1) ψ_m2 ψ_n2 (x − s; l2) dx
        let alpha = 1.0 / (l1 * l1) + 1.0 / (l2 * l2);
        let x0 = s / (l2 * l2) / alpha;
        let sa = alpha.sqrt();
        let mut acc = 0.0;
        for (&t, &w) in gh.nodes.iter().zip(&gh.weights) {
            let x = x0 + t / sa;
            let p1 = hermite_function(m1 as usize, x / l1) * hermite_function(n1 as usize, x / l1);
            let p2 = hermite_function(m2 as usize, (x - s) / l2) * hermite_function(n2 as usize, (x - s) / l2);
            acc += w * p1 * p2 * (t * t).exp();
        }
        acc / (sa * l1 * l2)
    };

    let degree = (a.shell() + b.shell() + c.shell() + d.shell()) as f64;
    let r_max = (l1 * l1 + l2 * l2).sqrt() * (7.0 + degree.sqrt());
    // r = r_max·v², so r dr = 2 r_max² v³ dv, smooth at the origin.
    let panel_rule = gauss_legendre(options.nodes_per_panel);
    let mut total = 0.0;
    for p in 0..panels {
        let v0 = p as f64 / panels as f64;
        let v1 = (p + 1) as f64 / panels as f64;
        let rule = panel_rule.mapped(v0, v1);
        for (&v, &wv) in rule.nodes.iter().zip(&rule.weights) {
            let r = r_max * v * v;
            let jac = 2.0 * r_max * r_max * v * v * v;
            let kernel = w_kernel(r);
            let mut angular = 0.0;
            for k in 0..options.angles {
                let th = 2.0 * PI * k as f64 / options.angles as f64;
                let (rx, ry) = (r * th.cos(), r * th.sin());
                angular += plane_1d(a.n_x, c.n_x, b.n_x, d.n_x, rx) * plane_1d(a.n_y, c.n_y, b.n_y, d.n_y, ry);
            }
            angular *= 2.0 * PI / options.angles as f64;
            total += wv * jac * kernel * angular;
        }
    }
    Ok(COULOMB_CONSTANT / material.dielectric_constant * total)
}

/// Dense four-index tensor of the positive Coulomb kernel for one kind.
///
/// Index order is ⟨μ ν | V | μ̄ ν̄⟩ with particle 1 carrying μ, μ̄ and
/// particle 2 carrying ν, ν̄. The Hamiltonian builders apply the sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoulombTensor {
    pub kind: CoulombKind,
    pub n1: usize,
    pub n2: usize,
    pub basis_hash: String,
    pub material_fingerprint: String,
    pub orbit_count: usize,
    pub elements: Vec<f64>,
}

impl CoulombTensor {
    #[inline]
    fn offset(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.n2 + b) * self.n1 + c) * self.n2 + d
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.elements[self.offset(a, b, c, d)]
    }

    /// Tensor with every element zero, for non-interacting checks.
    pub fn zeroed(&self) -> CoulombTensor {
        CoulombTensor {
            elements: vec![0.0; self.elements.len()],
            ..self.clone()
        }
    }

    /// Multiplies every element by `factor`.
    pub fn scaled(&self, factor: f64) -> CoulombTensor {
        CoulombTensor {
            elements: self.elements.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn naive_count(&self) -> usize {
        self.elements.len()
    }
}

/// Images of a tuple under the symmetry group of real envelopes: bra/ket swap
/// on each particle, plus particle exchange for same-species kinds.
pub fn symmetry_images(t: [usize; 4], same_species: bool) -> Vec<[usize; 4]> {
    let [a, b, c, d] = t;
    let mut out = vec![[a, b, c, d], [c, b, a, d], [a, d, c, b], [c, d, a, b]];
    if same_species {
        let swapped: Vec<[usize; 4]> = out.iter().map(|&[a, b, c, d]| [b, a, d, c]).collect();
        out.extend(swapped);
    }
    out
}

pub fn canonical_tuple(t: [usize; 4], same_species: bool) -> [usize; 4] {
    symmetry_images(t, same_species).into_iter().min().unwrap()
}

/// Canonical representatives of every symmetry orbit.
pub fn orbit_representatives(kind: CoulombKind, n1: usize, n2: usize) -> Vec<[usize; 4]> {
    let mut reps = Vec::new();
    for a in 0..n1 {
        for b in 0..n2 {
            for c in 0..n1 {
                for d in 0..n2 {
                    let t = [a, b, c, d];
                    if canonical_tuple(t, kind.same_species()) == t {
                        reps.push(t);
                    }
                }
            }
        }
    }
    reps
}

fn material_fingerprint(material: &MaterialParams, options: &CoulombOptions) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"qdgate.coulomb-material/1");
    hasher.update(material.dielectric_constant.to_le_bytes());
    hasher.update((options.radial_nodes as u64).to_le_bytes());
    hasher.update((options.z_nodes as u64).to_le_bytes());
    hasher.update([options.form_factor as u8]);
    hex::encode(hasher.finalize())
}

fn compute_tensor(
    kind: CoulombKind,
    basis: &SingleParticleBasis,
    material: &MaterialParams,
    options: &CoulombOptions,
) -> Result<CoulombTensor> {
    let (s1, s2) = kind.species();
    let (st1, st2) = (basis.states(s1), basis.states(s2));
    let (n1, n2) = (st1.len(), st2.len());
    let engine = MomentumEngine::new(kind, basis, material, options, options.radial_nodes)?;
    self_test(kind, basis, material, options, &engine)?;

    let reps = orbit_representatives(kind, n1, n2);
    let values: Vec<f64> = reps
        .par_iter()
        .map(|&[a, b, c, d]| {
            let (a, b, c, d) = (&st1[a], &st2[b], &st1[c], &st2[d]);
            if parity_allowed(a, b, c, d) {
                engine.element(a, b, c, d)
            } else {
                0.0
            }
        })
        .collect();

    let mut tensor = CoulombTensor {
        kind,
        n1,
        n2,
        basis_hash: basis.fingerprint(),
        material_fingerprint: material_fingerprint(material, options),
        orbit_count: reps.len(),
        elements: vec![0.0; n1 * n2 * n1 * n2],
    };
    for (rep, value) in reps.iter().zip(values) {
        for [a, b, c, d] in symmetry_images(*rep, kind.same_species()) {
            let off = tensor.offset(a, b, c, d);
            tensor.elements[off] = value;
        }
    }
    Ok(tensor)
}

/// Node-doubling check of the radial rule on every diagonal direct element.
fn self_test(
    kind: CoulombKind,
    basis: &SingleParticleBasis,
    material: &MaterialParams,
    options: &CoulombOptions,
    engine: &MomentumEngine,
) -> Result<()> {
    let (s1, s2) = kind.species();
    let (st1, st2) = (basis.states(s1), basis.states(s2));
    let doubled = MomentumEngine::new(kind, basis, material, options, 2 * options.radial_nodes)?;
    let mut worst = 0.0f64;
    for a in st1 {
        for b in st2 {
            let v = engine.element(a, b, a, b);
            let v2 = doubled.element(a, b, a, b);
            worst = worst.max(((v - v2) / v2).abs());
        }
    }
    if worst > options.tolerance {
        return Err(Error::OracleUnconverged {
            what: format!("{} radial quadrature", kind.name()),
            estimate: worst,
            tolerance: options.tolerance,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum CacheStatus {
    /// No cache directory configured.
    Disabled,
    Hit(PathBuf),
    /// Computed and written.
    Miss(PathBuf),
    /// Cache file was unreadable or did not match; recomputed.
    Recomputed {
        path: PathBuf,
        reason: String,
    },
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    schema: String,
    kind: CoulombKind,
    basis_hash: String,
    material_fingerprint: String,
    n1: usize,
    n2: usize,
    orbit_count: usize,
    elements: Vec<f64>,
}

pub fn cache_path(dir: &Path, kind: CoulombKind, basis_hash: &str, material_fp: &str) -> PathBuf {
    let mut hasher = Sha256::new();
    hasher.update(basis_hash.as_bytes());
    hasher.update(material_fp.as_bytes());
    hasher.update(kind.name().as_bytes());
    let key = hex::encode(hasher.finalize());
    dir.join(format!("coulomb-{}-{}.json", kind.name(), &key[..16]))
}

fn read_cache(
    path: &Path,
    basis_hash: &str,
    material_fp: &str,
    kind: CoulombKind,
) -> std::result::Result<CoulombTensor, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let file: CacheFile = serde_json::from_str(&text).map_err(|e| format!("unparsable cache: {e}"))?;
    if file.schema != CACHE_SCHEMA {
        return Err(format!("schema {} != {}", file.schema, CACHE_SCHEMA));
    }
    if file.basis_hash != basis_hash || file.material_fingerprint != material_fp || file.kind != kind {
        return Err("hash mismatch".into());
    }
    if file.elements.len() != file.n1 * file.n2 * file.n1 * file.n2 {
        return Err("element count mismatch".into());
    }
    Ok(CoulombTensor {
        kind: file.kind,
        n1: file.n1,
        n2: file.n2,
        basis_hash: file.basis_hash,
        material_fingerprint: file.material_fingerprint,
        orbit_count: file.orbit_count,
        elements: file.elements,
    })
}

fn write_cache(path: &Path, tensor: &CoulombTensor) -> Result<()> {
    let file = CacheFile {
        schema: CACHE_SCHEMA.to_string(),
        kind: tensor.kind,
        basis_hash: tensor.basis_hash.clone(),
        material_fingerprint: tensor.material_fingerprint.clone(),
        n1: tensor.n1,
        n2: tensor.n2,
        orbit_count: tensor.orbit_count,
        elements: tensor.elements.clone(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, serde_json::to_vec(&file)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Builds the full tensor for `kind`, reusing a cached copy when one with a
/// matching fingerprint exists in `cache_dir`.
pub fn build_coulomb_tensor(
    kind: CoulombKind,
    basis: &SingleParticleBasis,
    material: &MaterialParams,
    options: &CoulombOptions,
    cache_dir: Option<&Path>,
) -> Result<(CoulombTensor, CacheStatus)> {
    material.validate()?;
    let Some(dir) = cache_dir else {
        return Ok((compute_tensor(kind, basis, material, options)?, CacheStatus::Disabled));
    };
    let basis_hash = basis.fingerprint();
    let material_fp = material_fingerprint(material, options);
    let path = cache_path(dir, kind, &basis_hash, &material_fp);
    let reason = if path.exists() {
        match read_cache(&path, &basis_hash, &material_fp, kind) {
            Ok(tensor) => return Ok((tensor, CacheStatus::Hit(path))),
            Err(reason) => {
                log::warn!("coulomb cache {} rejected ({reason}); recomputing", path.display());
                Some(reason)
            }
        }
    } else {
        None
    };
    let tensor = compute_tensor(kind, basis, material, options)?;
    write_cache(&path, &tensor)?;
    let status = match reason {
        Some(reason) => CacheStatus::Recomputed { path, reason },
        None => CacheStatus::Miss(path),
    };
    Ok((tensor, status))
}

/// The cached tensor for `kind`; nothing is computed.
pub fn load_cached_tensor(
    kind: CoulombKind,
    basis: &SingleParticleBasis,
    material: &MaterialParams,
    options: &CoulombOptions,
    cache_dir: &Path,
) -> Result<CoulombTensor> {
    let basis_hash = basis.fingerprint();
    let material_fp = material_fingerprint(material, options);
    let path = cache_path(cache_dir, kind, &basis_hash, &material_fp);
    if !path.exists() {
        return Err(Error::MissingArtifact { path, stage: "solve" });
    }
    read_cache(&path, &basis_hash, &material_fp, kind)
        .map_err(|reason| Error::Consistency(format!("{}: {reason}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confinement::{build_sp_basis, DotGeometry};

    fn small_basis() -> SingleParticleBasis {
        build_sp_basis(&MaterialParams::default(), &DotGeometry::default(), 6, 6).unwrap()
    }

    #[test]
    fn transition_density_matches_quadrature() {
        let l = 7.3;
        let rule = gauss_hermite(60);
        for m in 0..4 {
            for n in 0..4 {
                for &k in &[0.0, 0.05, 0.2, 0.45] {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                        // x = l·t, integrand includes exp(−t²) from the pair.
                        let p = hermite_function(m, t) * hermite_function(n, t) * (t * t).exp();
                        re += w * p * (k * l * t).cos();
                        im -= w * p * (k * l * t).sin();
                    }
                    let got = transition_1d(m, n, k, l);
                    assert!((got.re - re).abs() < 1e-12, "{m}{n} k={k}: {} vs {re}", got.re);
                    assert!((got.im - im).abs() < 1e-12, "{m}{n} k={k}: {} vs {im}", got.im);
                }
            }
        }
    }

    #[test]
    fn form_factor_limits() {
        let sub = crate::confinement::solve_box_z(0.067, 5.0).unwrap();
        assert!((form_factor(0.0, &sub, 48).unwrap() - 1.0).abs() < 1e-13);
        let mut prev = 1.0;
        for i in 1..40 {
            let f = form_factor(0.25 * i as f64, &sub, 48).unwrap();
            assert!(f < prev && f > 0.0);
            prev = f;
        }
        assert!(form_factor(200.0, &sub, 64).unwrap() < 0.02);
        assert!(form_factor(-1.0, &sub, 48).is_err());
    }

    #[test]
    fn orbit_images_cover_group() {
        let imgs = symmetry_images([0, 1, 2, 3], true);
        assert_eq!(imgs.len(), 8);
        let c = canonical_tuple([3, 2, 1, 0], true);
        assert!(symmetry_images([3, 2, 1, 0], true).contains(&c));
    }

    #[test]
    fn parity_forbidden_elements_vanish() {
        let basis = small_basis();
        let mat = MaterialParams::default();
        let opts = CoulombOptions::default();
        // s,s | s,p_x
        let v = coulomb_element(CoulombKind::Ee, [0, 0, 0, 1], &basis, &mat, &opts).unwrap();
        assert_eq!(v, 0.0);
        // and the fast path itself gives ~0 when forced through the engine
        let engine = MomentumEngine::new(CoulombKind::Ee, &basis, &mat, &opts, 64).unwrap();
        let e = &basis.electrons;
        assert!(engine.element(&e[0], &e[0], &e[0], &e[1]).abs() < 1e-12);
    }

    #[test]
    fn species_mismatch_is_rejected() {
        let basis = small_basis();
        let e = &basis.electrons[0];
        let h = &basis.holes[0];
        let r = coulomb_element_for_states(
            [e, e, e, h],
            CoulombKind::Ee,
            &basis,
            &MaterialParams::default(),
            &CoulombOptions::default(),
        );
        assert!(matches!(r, Err(Error::SpeciesMismatch(_))));
        let r = coulomb_element(
            CoulombKind::Eh,
            [0, 9, 0, 0],
            &basis,
            &MaterialParams::default(),
            &CoulombOptions::default(),
        );
        assert!(matches!(r, Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn tensor_symmetries_and_positivity() {
        let basis = small_basis();
        let mat = MaterialParams::default();
        for kind in CoulombKind::ALL {
            let (t, status) = build_coulomb_tensor(kind, &basis, &mat, &CoulombOptions::default(), None).unwrap();
            assert_eq!(status, CacheStatus::Disabled);
            for a in 0..t.n1 {
                for b in 0..t.n2 {
                    assert!(t.get(a, b, a, b) > 0.0);
                    for c in 0..t.n1 {
                        for d in 0..t.n2 {
                            let v = t.get(a, b, c, d);
                            assert_eq!(v, t.get(c, d, a, b));
                            if kind.same_species() {
                                assert_eq!(v, t.get(b, a, d, c));
                            }
                        }
                    }
                }
            }
            assert!(t.orbit_count < t.naive_count());
        }
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let basis = build_sp_basis(&MaterialParams::default(), &DotGeometry::default(), 3, 3).unwrap();
        let mat = MaterialParams::default();
        let opts = CoulombOptions::default();
        let (first, s1) = build_coulomb_tensor(CoulombKind::Eh, &basis, &mat, &opts, Some(dir.path())).unwrap();
        let CacheStatus::Miss(path) = s1 else {
            panic!("expected miss, got {s1:?}")
        };
        let (second, s2) = build_coulomb_tensor(CoulombKind::Eh, &basis, &mat, &opts, Some(dir.path())).unwrap();
        assert!(matches!(s2, CacheStatus::Hit(_)));
        assert_eq!(first, second);
        assert!(first
            .elements
            .iter()
            .zip(&second.elements)
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        // Corrupt the stored hash: the tensor is recomputed, not trusted.
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace(&first.basis_hash, "deadbeef");
        fs::write(&path, text).unwrap();
        let (third, s3) = build_coulomb_tensor(CoulombKind::Eh, &basis, &mat, &opts, Some(dir.path())).unwrap();
        assert!(matches!(s3, CacheStatus::Recomputed { .. }), "{s3:?}");
        assert_eq!(third, first);
        fs::write(&path, "not json").unwrap();
        let (_, s4) = build_coulomb_tensor(CoulombKind::Eh, &basis, &mat, &opts, Some(dir.path())).unwrap();
        assert!(matches!(s4, CacheStatus::Recomputed { .. }));
    }
}
