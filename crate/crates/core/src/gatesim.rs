//! Pulse propagation in the rotating-wave approximation, C-NOT synthesis,
//! NOT composition and leakage analysis.
//!
//! The many-body basis is {vac} ∪ excitons ∪ biexcitons with the vacuum as
//! the energy zero. The light-matter Hamiltonian is
//!
//! H(t) = D − ½ Σ_i 𝓔_i(t) [e^{iω_i t/ħ} P + e^{−iω_i t/ħ} P†],
//!
//! with field amplitudes 𝓔 in Rabi units (meV per unit dipole). Between
//! pulses the evolution is the exact diagonal phase. Inside a pulse window
//! the state is moved to a frame rotating at the window's carrier frequency
//! per excitation number, integrated there with an adaptive exponential
//! integrator and moved back; the change of frame is an exact unitary.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{expmv, HermitianOperator, KrylovOptions};
use crate::manybody::{ManyBodySpectrum, QubitMap, QubitState};
use crate::optics::DipoleTable;
use crate::units::HBAR;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Truncation of Gaussian envelopes, in units of τ.
pub const GAUSSIAN_CUTOFF: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseEnvelope {
    /// exp(−(t − t_c)²/2τ²), truncated at ±6τ.
    Gaussian {
        tau: f64,
    },
    Rectangular {
        duration: f64,
    },
}

impl PulseEnvelope {
    pub fn width(&self) -> f64 {
        match *self {
            PulseEnvelope::Gaussian { tau } => tau,
            PulseEnvelope::Rectangular { duration } => duration,
        }
    }

    /// ∫ envelope dt over the support.
    pub fn integral(&self) -> f64 {
        match *self {
            PulseEnvelope::Gaussian { tau } => tau * (2.0 * PI).sqrt(),
            PulseEnvelope::Rectangular { duration } => duration,
        }
    }

    pub fn half_support(&self) -> f64 {
        match *self {
            PulseEnvelope::Gaussian { tau } => GAUSSIAN_CUTOFF * tau,
            PulseEnvelope::Rectangular { duration } => 0.5 * duration,
        }
    }
}

/// Transition a C-NOT pulse is tuned to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CnotLine {
    /// ω_X0 − Δ: |01⟩ ↔ |11⟩, active iff q2 = 1.
    X0MinusDelta,
    /// ω_X0: |00⟩ ↔ |10⟩, active iff q2 = 0.
    X0,
    /// ω_X1 − Δ: |10⟩ ↔ |11⟩, active iff q1 = 1.
    X1MinusDelta,
    /// ω_X1: |00⟩ ↔ |01⟩, active iff q1 = 0.
    X1,
}

impl CnotLine {
    pub fn frequency(self, map: &QubitMap) -> f64 {
        match self {
            CnotLine::X0MinusDelta => map.e_x0x1 - map.e_x1,
            CnotLine::X0 => map.e_x0,
            CnotLine::X1MinusDelta => map.e_x0x1 - map.e_x0,
            CnotLine::X1 => map.e_x1,
        }
    }

    /// (lower, upper) computational states the line connects.
    pub fn pair(self) -> (QubitState, QubitState) {
        use QubitState::*;
        match self {
            CnotLine::X0MinusDelta => (Q01, Q11),
            CnotLine::X0 => (Q00, Q10),
            CnotLine::X1MinusDelta => (Q10, Q11),
            CnotLine::X1 => (Q00, Q01),
        }
    }

    pub fn addresses(self, q: QubitState) -> bool {
        let (a, b) = self.pair();
        q == a || q == b
    }

    /// Permutation of computational indices realized by the ideal gate.
    pub fn permutation(self) -> [usize; 4] {
        let (a, b) = self.pair();
        let mut p = [0, 1, 2, 3];
        p.swap(a.index(), b.index());
        p
    }

    pub fn name(self) -> &'static str {
        match self {
            CnotLine::X0MinusDelta => "cnot(w_X0-D)",
            CnotLine::X0 => "cnot(w_X0)",
            CnotLine::X1MinusDelta => "cnot(w_X1-D)",
            CnotLine::X1 => "cnot(w_X1)",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub envelope: PulseEnvelope,
    /// Peak field 𝓔_o in Rabi units, meV.
    pub amplitude: f64,
    /// ps
    pub center: f64,
    /// Photon energy, meV.
    pub frequency: f64,
    #[serde(default)]
    pub line: Option<CnotLine>,
}

impl Pulse {
    pub fn validate(&self) -> Result<()> {
        let w = self.envelope.width();
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::domain(format!("pulse duration must be positive, got {w}")));
        }
        if !self.amplitude.is_finite() || !self.center.is_finite() || !self.frequency.is_finite() {
            return Err(Error::domain("pulse parameters must be finite"));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        let dt = t - self.center;
        if dt.abs() > self.envelope.half_support() {
            return 0.0;
        }
        match self.envelope {
            PulseEnvelope::Gaussian { tau } => self.amplitude * (-dt * dt / (2.0 * tau * tau)).exp(),
            PulseEnvelope::Rectangular { .. } => self.amplitude,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        let h = self.envelope.half_support();
        (self.center - h, self.center + h)
    }

    /// ∫𝓔(t) dt, meV·ps.
    pub fn area(&self) -> f64 {
        self.amplitude * self.envelope.integral()
    }

    /// Two-level rotation angle θ of a resonant transition with dipole `m`,
    /// normalized so that θ = π/2 is a complete transfer.
    pub fn rotation_angle(&self, m: f64) -> f64 {
        m.abs() * self.area() / (2.0 * HBAR)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub pulses: Vec<Pulse>,
}

impl PulseSequence {
    /// Supports merged where they overlap, in time order.
    pub fn windows(&self) -> Vec<(f64, f64)> {
        let mut w: Vec<(f64, f64)> = self.pulses.iter().map(Pulse::support).collect();
        w.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (a, b) in w {
            match out.last_mut() {
                Some(last) if a < last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        out
    }

    pub fn end(&self) -> f64 {
        self.pulses
            .iter()
            .map(|p| p.support().1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Energies, excitation numbers and P† couplings of the truncated basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub energies: Vec<f64>,
    pub excitation: Vec<u8>,
    /// (upper, lower, ⟨upper|P†|lower⟩), nonzero entries only.
    pub couplings: Vec<(usize, usize, f64)>,
    /// Basis index of each computational state, [`QubitState::ALL`] order.
    pub qubits: [usize; 4],
    components: Vec<Vec<usize>>,
}

impl DynamicsModel {
    /// Basis: index 0 vacuum, then all excitons, then all biexcitons.
    pub fn new(spectrum: &ManyBodySpectrum, map: &QubitMap, dipoles: &DipoleTable) -> Self {
        let nx = spectrum.excitons.len();
        let nxx = spectrum.biexcitons.len();
        let mut energies = vec![0.0];
        let mut excitation = vec![0u8];
        energies.extend(spectrum.excitons.iter().map(|x| x.energy));
        excitation.extend(std::iter::repeat_n(1u8, nx));
        energies.extend(spectrum.biexcitons.iter().map(|x| x.energy));
        excitation.extend(std::iter::repeat_n(2u8, nxx));
        let mut couplings = Vec::new();
        for (x, &m) in dipoles.exciton_vac.iter().enumerate() {
            if m != 0.0 {
                couplings.push((1 + x, 0, m));
            }
        }
        for l in 0..nxx {
            for x in 0..nx {
                let m = dipoles.biexciton_exciton[(l, x)];
                if m != 0.0 {
                    couplings.push((1 + nx + l, 1 + x, m));
                }
            }
        }
        // Entries at round-off level relative to the largest dipole carry
        // no dynamics.
        let largest = couplings.iter().map(|c| c.2.abs()).fold(0.0, f64::max);
        couplings.retain(|c| c.2.abs() > 1e-12 * largest);
        let qubits = [0, 1 + map.x0, 1 + map.x1, 1 + nx + map.x0x1];
        Self::from_parts(energies, excitation, couplings, qubits).expect("spectrum-derived model is consistent")
    }

    pub fn from_parts(
        energies: Vec<f64>,
        excitation: Vec<u8>,
        couplings: Vec<(usize, usize, f64)>,
        qubits: [usize; 4],
    ) -> Result<Self> {
        let n = energies.len();
        if excitation.len() != n {
            return Err(Error::Consistency("one excitation number per level required".into()));
        }
        for &(u, l, _) in &couplings {
            if u >= n || l >= n || excitation[u] != excitation[l] + 1 {
                return Err(Error::Consistency(format!(
                    "coupling ({u}, {l}) must raise the excitation number by one"
                )));
            }
        }
        if qubits.iter().any(|&q| q >= n) {
            return Err(Error::Consistency("qubit index outside basis".into()));
        }
        // Connected components of the coupling graph (union-find).
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(u, l, _) in &couplings {
            let (a, b) = (find(&mut parent, u), find(&mut parent, l));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut root_slot = vec![usize::MAX; n];
        let mut coupled = vec![false; n];
        for &(u, l, _) in &couplings {
            coupled[u] = true;
            coupled[l] = true;
        }
        for i in (0..n).filter(|&i| coupled[i]) {
            let r = find(&mut parent, i);
            if root_slot[r] == usize::MAX {
                root_slot[r] = components.len();
                components.push(Vec::new());
            }
            components[root_slot[r]].push(i);
        }
        Ok(DynamicsModel {
            energies,
            excitation,
            couplings,
            qubits,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn index(&self, q: QubitState) -> usize {
        self.qubits[q.index()]
    }

    pub fn coupling(&self, a: usize, b: usize) -> f64 {
        let (u, l) = if self.excitation[a] > self.excitation[b] {
            (a, b)
        } else {
            (b, a)
        };
        self.couplings
            .iter()
            .find(|&&(cu, cl, _)| cu == u && cl == l)
            .map_or(0.0, |c| c.2)
    }

    /// ⟨upper|P†|lower⟩ for the line's computational pair.
    pub fn line_dipole(&self, line: CnotLine) -> f64 {
        let (a, b) = line.pair();
        self.coupling(self.index(a), self.index(b))
    }

    /// All energies shifted by a constant (a change of the energy zero).
    pub fn shifted(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.energies.iter_mut().for_each(|e| *e += c);
        m
    }

    /// Biexciton energies shifted by `c`; Δ changes by −c.
    pub fn with_biexciton_shift(&self, c: f64) -> Self {
        let mut m = self.clone();
        for (e, &n) in m.energies.iter_mut().zip(&self.excitation) {
            if n == 2 {
                *e += c;
            }
        }
        m
    }

    /// Vector with unit amplitude on one computational state at time `t`.
    pub fn basis_state(&self, q: QubitState, time: f64) -> StateVector {
        let mut amplitudes = vec![ZERO; self.dim()];
        amplitudes[self.index(q)] = Complex64::new(1.0, 0.0);
        StateVector { time, amplitudes }
    }

    /// Restriction to a subset of levels (couplings within the subset only).
    pub fn restricted(&self, levels: &[usize], qubits: [usize; 4]) -> Result<Self> {
        let local = |g: usize| levels.iter().position(|&l| l == g);
        let couplings = self
            .couplings
            .iter()
            .filter_map(|&(u, l, m)| Some((local(u)?, local(l)?, m)))
            .collect();
        Self::from_parts(
            levels.iter().map(|&i| self.energies[i]).collect(),
            levels.iter().map(|&i| self.excitation[i]).collect(),
            couplings,
            qubits,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    /// ps
    pub time: f64,
    pub amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn amplitude(&self, model: &DynamicsModel, q: QubitState) -> Complex64 {
        self.amplitudes[model.index(q)]
    }

    pub fn c00(&self, m: &DynamicsModel) -> Complex64 {
        self.amplitude(m, QubitState::Q00)
    }

    pub fn c10(&self, m: &DynamicsModel) -> Complex64 {
        self.amplitude(m, QubitState::Q10)
    }

    pub fn c01(&self, m: &DynamicsModel) -> Complex64 {
        self.amplitude(m, QubitState::Q01)
    }

    pub fn c11(&self, m: &DynamicsModel) -> Complex64 {
        self.amplitude(m, QubitState::Q11)
    }

    /// |c_q|² in [`QubitState::ALL`] order.
    pub fn populations(&self, model: &DynamicsModel) -> [f64; 4] {
        QubitState::ALL.map(|q| self.amplitude(model, q).norm_sqr())
    }

    /// Probability outside the computational subspace.
    pub fn leakage(&self, model: &DynamicsModel) -> f64 {
        (self.norm().powi(2) - self.populations(model).iter().sum::<f64>()).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Exponential midpoint rule, second order.
    Midpoint,
    /// Fourth-order commutator-free Magnus scheme with two exponentials.
    Cfm4,
}

impl Integrator {
    fn order(self) -> i32 {
        match self {
            Integrator::Midpoint => 2,
            Integrator::Cfm4 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub integrator: Integrator,
    /// Local error bound per accepted step (step doubling).
    pub tolerance: f64,
    pub initial_dt: f64,
    pub min_dt: f64,
    pub max_dt: f64,
    pub krylov_tolerance: f64,
    pub krylov_dim: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            integrator: Integrator::Cfm4,
            tolerance: 1e-8,
            initial_dt: 0.005,
            min_dt: 1e-6,
            max_dt: 0.5,
            krylov_tolerance: 1e-12,
            krylov_dim: 48,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<StateVector>,
    pub final_state: StateVector,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    /// CSV with time and computational populations plus leakage; amplitude
    /// columns optional.
    pub fn to_csv(&self, model: &DynamicsModel, amplitudes: bool) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("time_ps,p00,p10,p01,p11,leakage");
        if amplitudes {
            s.push_str(",re00,im00,re10,im10,re01,im01,re11,im11");
        }
        s.push('\n');
        for st in &self.samples {
            let p = st.populations(model);
            let _ = write!(
                s,
                "{:.6},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                st.time,
                p[0],
                p[1],
                p[2],
                p[3],
                st.leakage(model)
            );
            if amplitudes {
                for q in QubitState::ALL {
                    let c = st.amplitude(model, q);
                    let _ = write!(s, ",{:.10e},{:.10e}", c.re, c.im);
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Maximum over the sampled trajectory of 1 − Σ_q |c_q|².
pub fn leakage_report(trajectory: &Trajectory, model: &DynamicsModel) -> f64 {
    trajectory
        .samples
        .iter()
        .chain(std::iter::once(&trajectory.final_state))
        .map(|s| s.leakage(model))
        .fold(0.0, f64::max)
}

/// H(t) in the lab frame, dense, for inspection and tests.
pub fn build_drive_hamiltonian(model: &DynamicsModel, pulses: &[Pulse], t: f64) -> Vec<Vec<Complex64>> {
    let n = model.dim();
    let mut h = vec![vec![ZERO; n]; n];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = Complex64::new(model.energies[i], 0.0);
    }
    // κ multiplies P, κ̄ multiplies P†.
    let kappa: Complex64 = pulses
        .iter()
        .map(|p| -0.5 * p.value(t) * Complex64::from_polar(1.0, p.frequency * t / HBAR))
        .sum();
    for &(u, l, m) in &model.couplings {
        h[u][l] += kappa.conj() * m;
        h[l][u] += kappa * m;
    }
    h
}

/// Real-coefficient sparse rows: entries of row i are
/// `cols[offsets[i]..offsets[i + 1]]`.
struct SparseRows {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    fn from_entries(n: usize, entries: impl Iterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, c, v) in entries {
            rows[r].push((c, v));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        SparseRows { offsets, cols, vals }
    }

    fn row_dot(&self, i: usize, x: &[Complex64]) -> Complex64 {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        let mut acc = ZERO;
        for k in a..b {
            acc += x[self.cols[k]] * self.vals[k];
        }
        acc
    }
}

/// Generator s·D_r + κP + κ̄P† restricted to the active levels.
struct WindowOperator<'a> {
    diag: &'a [f64],
    raise: &'a SparseRows,
    lower: &'a SparseRows,
    d_scale: f64,
    kappa: Complex64,
}

impl HermitianOperator for WindowOperator<'_> {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let kc = self.kappa.conj();
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = x[i] * (self.diag[i] * self.d_scale)
                + kc * self.raise.row_dot(i, x)
                + self.kappa * self.lower.row_dot(i, x);
        }
    }
}

struct Window<'a> {
    levels: Vec<usize>,
    /// E − Nω_r − shift of each active level.
    diag: Vec<f64>,
    raise: SparseRows,
    lower: SparseRows,
    excitation: Vec<f64>,
    omega_r: f64,
    /// Constant removed from the diagonal to center its spectrum.
    shift: f64,
    pulses: &'a [Pulse],
}

impl<'a> Window<'a> {
    fn new(model: &DynamicsModel, levels: Vec<usize>, pulses: &'a [Pulse]) -> Self {
        let omega_r = pulses.iter().map(|p| p.frequency).sum::<f64>() / pulses.len() as f64;
        let mut local = vec![usize::MAX; model.dim()];
        for (k, &g) in levels.iter().enumerate() {
            local[g] = k;
        }
        let edges: Vec<(usize, usize, f64)> = model
            .couplings
            .iter()
            .filter(|&&(u, l, _)| local[u] != usize::MAX && local[l] != usize::MAX)
            .map(|&(u, l, m)| (local[u], local[l], m))
            .collect();
        let n = levels.len();
        let raw: Vec<f64> = levels
            .iter()
            .map(|&g| model.energies[g] - model.excitation[g] as f64 * omega_r)
            .collect();
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
        let shift = 0.5 * (lo + hi);
        Window {
            diag: raw.iter().map(|d| d - shift).collect(),
            raise: SparseRows::from_entries(n, edges.iter().copied()),
            lower: SparseRows::from_entries(n, edges.iter().map(|&(u, l, m)| (l, u, m))),
            excitation: levels.iter().map(|&g| model.excitation[g] as f64).collect(),
            levels,
            omega_r,
            shift,
            pulses,
        }
    }

    fn kappa(&self, t: f64) -> Complex64 {
        self.pulses
            .iter()
            .map(|p| {
                let e = p.value(t);
                if e == 0.0 {
                    ZERO
                } else {
                    -0.5 * e * Complex64::from_polar(1.0, (p.frequency - self.omega_r) * t / HBAR)
                }
            })
            .sum()
    }

    fn exp_step(
        &self,
        psi: &[Complex64],
        d_scale: f64,
        kappa: Complex64,
        dt: f64,
        k: &KrylovOptions,
    ) -> Result<Vec<Complex64>> {
        let op = WindowOperator {
            diag: &self.diag,
            raise: &self.raise,
            lower: &self.lower,
            d_scale,
            kappa,
        };
        expmv(&op, psi, dt / HBAR, k)
    }

    fn step(
        &self,
        integrator: Integrator,
        psi: &[Complex64],
        t: f64,
        dt: f64,
        k: &KrylovOptions,
    ) -> Result<Vec<Complex64>> {
        match integrator {
            Integrator::Midpoint => self.exp_step(psi, 1.0, self.kappa(t + 0.5 * dt), dt, k),
            Integrator::Cfm4 => {
                let s3 = 3f64.sqrt();
                let (c1, c2) = (0.5 - s3 / 6.0, 0.5 + s3 / 6.0);
                let (a1, a2) = ((3.0 - 2.0 * s3) / 12.0, (3.0 + 2.0 * s3) / 12.0);
                let (k1, k2) = (self.kappa(t + c1 * dt), self.kappa(t + c2 * dt));
                let mid = self.exp_step(psi, a1 + a2, k1 * a2 + k2 * a1, dt, k)?;
                self.exp_step(&mid, a1 + a2, k1 * a1 + k2 * a2, dt, k)
            }
        }
    }

    fn frame_phase(&self, n: f64, t: f64) -> f64 {
        (n * self.omega_r + self.shift) * t / HBAR
    }

    fn to_rotating(&self, lab: &[Complex64], t: f64) -> Vec<Complex64> {
        self.levels
            .iter()
            .zip(&self.excitation)
            .map(|(&g, &n)| lab[g] * Complex64::from_polar(1.0, self.frame_phase(n, t)))
            .collect()
    }

    fn to_lab(&self, rot: &[Complex64], t: f64, lab: &mut [Complex64]) {
        for ((&g, &n), &c) in self.levels.iter().zip(&self.excitation).zip(rot) {
            lab[g] = c * Complex64::from_polar(1.0, -self.frame_phase(n, t));
        }
    }
}

fn free_evolve(model: &DynamicsModel, state: &mut StateVector, t: f64) {
    let dt = t - state.time;
    if dt != 0.0 {
        for (c, &e) in state.amplitudes.iter_mut().zip(&model.energies) {
            if *c != ZERO {
                *c *= Complex64::from_polar(1.0, -e * dt / HBAR);
            }
        }
    }
    state.time = t;
}

fn vec_norm_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Integrates from `initial.time` to `t1`, sampling the lab-frame state at
/// `sample_times` (which must lie in that interval).
pub fn propagate(
    model: &DynamicsModel,
    initial: &StateVector,
    pulses: &PulseSequence,
    t1: f64,
    sample_times: &[f64],
    control: &StepControl,
) -> Result<Trajectory> {
    let t0 = initial.time;
    if !(t1 >= t0) {
        return Err(Error::domain(format!("propagation interval [{t0}, {t1}] is empty")));
    }
    if initial.amplitudes.len() != model.dim() {
        return Err(Error::Consistency("state and model dimensions differ".into()));
    }
    for p in &pulses.pulses {
        p.validate()?;
    }
    let mut samples_sorted: Vec<f64> = sample_times.iter().copied().filter(|&s| s >= t0 && s <= t1).collect();
    samples_sorted.sort_by(f64::total_cmp);
    let mut next_sample = 0usize;
    let mut samples = Vec::with_capacity(samples_sorted.len());
    let mut state = initial.clone();
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let krylov = KrylovOptions {
        tolerance: control.krylov_tolerance,
        max_dim: control.krylov_dim,
    };
    let order = control.integrator.order();

    let windows: Vec<(f64, f64)> = pulses
        .windows()
        .into_iter()
        .filter_map(|(a, b)| {
            let (a, b) = (a.max(t0), b.min(t1));
            (b > a).then_some((a, b))
        })
        .collect();

    let emit_free = |state: &mut StateVector, until: f64, next: &mut usize, out: &mut Vec<StateVector>| {
        while *next < samples_sorted.len() && samples_sorted[*next] <= until {
            free_evolve(model, state, samples_sorted[*next]);
            out.push(state.clone());
            *next += 1;
        }
        free_evolve(model, state, until);
    };

    let mut dt = control.initial_dt;
    for &(a, b) in &windows {
        emit_free(&mut state, a, &mut next_sample, &mut samples);
        let active_pulses: Vec<Pulse> = pulses
            .pulses
            .iter()
            .filter(|p| {
                let (s, e) = p.support();
                s < b && e > a
            })
            .copied()
            .collect();
        // Levels of every coupled component that carries amplitude.
        let mut levels: Vec<usize> = Vec::new();
        for comp in &model.components {
            if comp.iter().any(|&i| state.amplitudes[i] != ZERO) {
                levels.extend(comp);
            }
        }
        levels.sort_unstable();
        if levels.is_empty() {
            continue;
        }
        let window = Window::new(model, levels, &active_pulses);
        // Levels outside the window operator only acquire free phases.
        let mut psi = window.to_rotating(&state.amplitudes, a);
        let mut t = a;
        while t < b {
            let mut target = b;
            if next_sample < samples_sorted.len() && samples_sorted[next_sample] < target {
                target = samples_sorted[next_sample];
            }
            let h = dt.min(control.max_dt).min(target - t);
            if h <= 0.0 {
                // Sample exactly at t.
            } else {
                let full = window.step(control.integrator, &psi, t, h, &krylov);
                let halves = window
                    .step(control.integrator, &psi, t, 0.5 * h, &krylov)
                    .and_then(|m| window.step(control.integrator, &m, t + 0.5 * h, 0.5 * h, &krylov));
                let (err, fine) = match (full, halves) {
                    (Ok(f), Ok(hv)) => (vec_norm_diff(&f, &hv), Some(hv)),
                    _ => (f64::INFINITY, None),
                };
                if err > control.tolerance || fine.is_none() {
                    rejected += 1;
                    let factor = if err.is_finite() {
                        (0.9 * (control.tolerance / err).powf(1.0 / (order + 1) as f64)).clamp(0.1, 0.5)
                    } else {
                        0.25
                    };
                    dt = h * factor;
                    if dt < control.min_dt {
                        return Err(Error::StepUnderflow { time: t, dt });
                    }
                    continue;
                }
                psi = fine.expect("accepted step");
                accepted += 1;
                let grow = if err == 0.0 {
                    4.0
                } else {
                    (0.9 * (control.tolerance / err).powf(1.0 / (order + 1) as f64)).clamp(0.2, 4.0)
                };
                // A step clipped by a sample or window edge keeps the
                // controller's previous proposal.
                dt = if h < dt { dt.max(h * grow) } else { h * grow };
                t += h;
                if target - t <= 1e-12 * b.abs().max(1.0) {
                    t = target;
                }
            }
            if next_sample < samples_sorted.len() && samples_sorted[next_sample] <= t {
                // Synchronize the full lab-frame state at the sample time.
                let mut snap = state.clone();
                free_evolve(model, &mut snap, t);
                window.to_lab(&psi, t, &mut snap.amplitudes);
                samples.push(snap);
                next_sample += 1;
            }
        }
        free_evolve(model, &mut state, b);
        window.to_lab(&psi, b, &mut state.amplitudes);
    }
    emit_free(&mut state, t1, &mut next_sample, &mut samples);
    Ok(Trajectory {
        samples,
        final_state: state,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}

/// Analytic populations of a resonant two-level pair under a rectangular
/// pulse: (lower, upper) after time t from the lower state.
pub fn rabi_populations(dipole: f64, amplitude: f64, t: f64) -> (f64, f64) {
    let theta = dipole.abs() * amplitude * t / (2.0 * HBAR);
    (theta.cos().powi(2), theta.sin().powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeShape {
    Gaussian,
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateOptions {
    pub shape: EnvelopeShape,
    /// τ for Gaussians, full duration for rectangles, ps.
    pub width: f64,
    /// Center-to-center pulse separation in units of the width.
    pub separation: f64,
    pub control: StepControl,
    /// Readout search horizon, ps.
    pub horizon: f64,
    /// rad
    pub phase_tolerance: f64,
    /// Amplitude tolerance of the transfer maximization, relative.
    pub calibration_tolerance: f64,
    /// Trajectory sampling interval, ps.
    pub sample_dt: f64,
}

impl Default for GateOptions {
    fn default() -> Self {
        GateOptions {
            shape: EnvelopeShape::Gaussian,
            width: 0.5,
            separation: 2.0 * GAUSSIAN_CUTOFF,
            control: StepControl::default(),
            horizon: 100.0,
            phase_tolerance: 0.02,
            calibration_tolerance: 1e-4,
            sample_dt: 0.01,
        }
    }
}

impl GateOptions {
    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width;
        self
    }

    pub fn envelope(&self) -> PulseEnvelope {
        match self.shape {
            EnvelopeShape::Gaussian => PulseEnvelope::Gaussian { tau: self.width },
            EnvelopeShape::Rectangular => PulseEnvelope::Rectangular { duration: self.width },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !(self.horizon >= 0.0) || !(self.phase_tolerance > 0.0) || !(self.sample_dt > 0.0) {
            return Err(Error::domain(
                "gate options need positive width, tolerance and sampling",
            ));
        }
        if self.separation * self.width < 2.0 * self.envelope().half_support() - 1e-12 {
            return Err(Error::domain("pulse separation shorter than the pulse support"));
        }
        Ok(())
    }

    fn sample_times(&self, t0: f64, t1: f64) -> Vec<f64> {
        let dt = self.sample_dt.min(self.width / 10.0);
        let n = ((t1 - t0) / dt).ceil() as usize;
        (0..=n).map(|k| (t0 + k as f64 * dt).min(t1)).collect()
    }
}

/// Field amplitude of a complete transfer on `line`: the two-level area
/// estimate refined by maximizing the simulated transfer.
pub fn calibrate_amplitude(
    model: &DynamicsModel,
    map: &QubitMap,
    line: CnotLine,
    options: &GateOptions,
) -> Result<f64> {
    let m = model.line_dipole(line);
    if m == 0.0 {
        return Err(Error::Consistency(format!(
            "{} has a vanishing dipole element",
            line.name()
        )));
    }
    let envelope = options.envelope();
    let guess = PI * HBAR / (m.abs() * envelope.integral());
    let (from, to) = line.pair();
    let end = 2.0 * envelope.half_support();
    let transfer = |a: f64| -> Result<f64> {
        let seq = schedule(map, &[line], &[a], options);
        let tr = propagate(model, &model.basis_state(from, 0.0), &seq, end, &[], &options.control)?;
        Ok(tr.final_state.amplitude(model, to).norm_sqr())
    };
    // Successive parabolic interpolation around the area estimate; the
    // transfer is quadratic near its maximum.
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for x in [0.9 * guess, guess, 1.1 * guess] {
        pts.push((x, transfer(x)?));
    }
    for _ in 0..20 {
        pts.sort_by(|a, b| b.1.total_cmp(&a.1));
        pts.truncate(3);
        let (best, _) = pts[0];
        let [(x0, f0), (x1, f1), (x2, f2)] = [pts[0], pts[1], pts[2]];
        let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
        let a = (x2 * (f1 - f0) + x1 * (f0 - f2) + x0 * (f2 - f1)) / denom;
        let b = (x2 * x2 * (f0 - f1) + x1 * x1 * (f2 - f0) + x0 * x0 * (f1 - f2)) / denom;
        let next = if a < 0.0 {
            (-b / (2.0 * a)).clamp(best - 0.2 * guess, best + 0.2 * guess)
        } else {
            // No curvature information yet: step past the best point.
            let dir = if best >= x1 { 1.0 } else { -1.0 };
            best + dir * 0.1 * guess
        };
        if (next - best).abs() <= options.calibration_tolerance * guess {
            return Ok(best);
        }
        if pts
            .iter()
            .any(|p| (p.0 - next).abs() <= 0.25 * options.calibration_tolerance * guess)
        {
            return Ok(best);
        }
        pts.push((next, transfer(next)?));
    }
    pts.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(pts[0].0)
}

/// Wraps an angle to (−π, π].
fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

type Matrix4 = [[Complex64; 4]; 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    /// Free evolution after the last pulse, ps.
    pub delay: f64,
    /// The accepted target is the ideal gate times diag(1, 1, iᵏ, iᵏ),
    /// a phase on the second qubit.
    pub variant: u8,
    /// Largest phase mismatch among the four mapped entries, rad.
    pub phase_deviation: f64,
    pub commensurable: bool,
}

/// Phases of the four entries the permutation maps onto, as linear
/// functions of the delay: φ_j(t) = base_j − rate_j·t.
struct MappedPhases {
    base: [f64; 4],
    rate: [f64; 4],
    /// 1 for entries in the second-qubit block.
    block: [f64; 4],
}

impl MappedPhases {
    fn new(u: &Matrix4, perm: &[usize; 4], energies: &[f64; 4]) -> Self {
        let mut m = MappedPhases {
            base: [0.0; 4],
            rate: [0.0; 4],
            block: [0.0; 4],
        };
        for j in 0..4 {
            let r = perm[j];
            m.base[j] = u[r][j].arg();
            m.rate[j] = energies[r] / HBAR;
            m.block[j] = if QubitState::ALL[j].bits().1 == 1 { 1.0 } else { 0.0 };
        }
        m
    }

    fn deviation(&self, t: f64, variant: u8) -> f64 {
        let s = variant as f64 * PI / 2.0;
        let p0 = self.base[0] - self.rate[0] * t - self.block[0] * s;
        (1..4)
            .map(|j| wrap(self.base[j] - self.rate[j] * t - self.block[j] * s - p0).abs())
            .fold(0.0, f64::max)
    }
}

/// Searches the earliest free-evolution delay in [0, horizon] after which
/// the realized map matches the permutation up to a global phase and a
/// quarter-turn phase on the second qubit. Reports the best delay found
/// when none meets the tolerance.
pub fn solve_readout(u_end: &Matrix4, perm: &[usize; 4], energies: &[f64; 4], horizon: f64, tolerance: f64) -> Readout {
    let phases = MappedPhases::new(u_end, perm, energies);
    let rate = (1..4)
        .map(|j| (phases.rate[j] - phases.rate[0]).abs())
        .fold(0.0, f64::max);
    let h = if rate > 0.0 {
        0.25 * tolerance / rate
    } else {
        horizon.max(1.0)
    };
    let n = (horizon / h).ceil() as usize;
    let mut best = Readout {
        delay: 0.0,
        variant: 0,
        phase_deviation: f64::INFINITY,
        commensurable: false,
    };
    let refine = |t0: f64, v: u8| -> (f64, f64) {
        // Golden-section polish of the deviation around a grid point.
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = ((t0 - h).max(0.0), (t0 + h).min(horizon.max(0.0)));
        for _ in 0..60 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if phases.deviation(a, v) < phases.deviation(b, v) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let t = 0.5 * (lo + hi);
        let (dt, d0) = (phases.deviation(t, v), phases.deviation(t0, v));
        if dt <= d0 {
            (t, dt)
        } else {
            (t0, d0)
        }
    };
    for k in 0..=n {
        let t = (k as f64 * h).min(horizon);
        for v in 0..4u8 {
            let d = phases.deviation(t, v);
            if d <= 2.0 * tolerance {
                let (tr, dr) = refine(t, v);
                if dr < best.phase_deviation {
                    best = Readout {
                        delay: tr,
                        variant: v,
                        phase_deviation: dr,
                        commensurable: dr <= tolerance,
                    };
                }
                if dr <= tolerance {
                    return best;
                }
            } else if d < best.phase_deviation {
                best = Readout {
                    delay: t,
                    variant: v,
                    phase_deviation: d,
                    commensurable: false,
                };
            }
        }
    }
    best
}

fn target_matrix(perm: &[usize; 4], variant: u8) -> Matrix4 {
    let s = Complex64::i().powu(variant as u32);
    let mut v = [[ZERO; 4]; 4];
    for j in 0..4 {
        v[perm[j]][j] = if QubitState::ALL[j].bits().1 == 1 {
            s
        } else {
            Complex64::new(1.0, 0.0)
        };
    }
    v
}

/// |Tr(V†U)|² / 16.
pub fn gate_fidelity(u: &Matrix4, v: &Matrix4) -> f64 {
    let mut tr = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            tr += v[i][j].conj() * u[i][j];
        }
    }
    tr.norm_sqr() / 16.0
}

/// Largest deviation of U†U from the identity.
pub fn isometry_defect(u: &Matrix4) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let g: Complex64 = (0..4).map(|k| u[k][i].conj() * u[k][j]).sum();
            let id = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - id).norm());
        }
    }
    worst
}

fn matrix_json(u: &Matrix4) -> Vec<Vec<[f64; 2]>> {
    u.iter().map(|r| r.iter().map(|c| [c.re, c.im]).collect()).collect()
}

/// Influence of one pulse on a trajectory that it does not address.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffResonantImpact {
    pub pulse: usize,
    pub state: QubitState,
    /// Population change of `state` from window start to window end.
    pub net_change: f64,
    /// Largest population deficit of `state` inside the window.
    pub max_transient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRun {
    pub input: QubitState,
    pub trajectory: Trajectory,
    pub final_populations: [f64; 4],
    pub max_leakage: f64,
    pub off_resonant: Vec<OffResonantImpact>,
}

fn run_input(
    model: &DynamicsModel,
    seq: &PulseSequence,
    input: QubitState,
    t_end: f64,
    options: &GateOptions,
) -> Result<InputRun> {
    let mut times = options.sample_times(0.0, t_end);
    let windows = seq.windows();
    for &(a, b) in &windows {
        times.push(a);
        times.push(b);
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let trajectory = propagate(
        model,
        &model.basis_state(input, 0.0),
        seq,
        t_end,
        &times,
        &options.control,
    )?;
    let final_populations = trajectory.final_state.populations(model);
    let max_leakage = leakage_report(&trajectory, model);
    let mut off_resonant = Vec::new();
    for (k, p) in seq.pulses.iter().enumerate() {
        let Some(line) = p.line else { continue };
        let (a, b) = p.support();
        let inside: Vec<&StateVector> = trajectory
            .samples
            .iter()
            .filter(|s| s.time >= a && s.time <= b)
            .collect();
        let (Some(first), Some(last)) = (inside.first(), inside.last()) else {
            continue;
        };
        let pops = first.populations(model);
        let (dominant, &p0) = pops
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("four populations");
        let q = QubitState::ALL[dominant];
        if line.addresses(q) {
            continue;
        }
        let max_transient = inside
            .iter()
            .map(|s| (p0 - s.populations(model)[dominant]).abs())
            .fold(0.0, f64::max);
        off_resonant.push(OffResonantImpact {
            pulse: k,
            state: q,
            net_change: (last.populations(model)[dominant] - p0).abs(),
            max_transient,
        });
    }
    Ok(InputRun {
        input,
        trajectory,
        final_populations,
        max_leakage,
        off_resonant,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub name: String,
    pub pulses: PulseSequence,
    /// End of the last pulse window, ps.
    pub pulse_end: f64,
    pub readout: Readout,
    /// Computational block of the propagator at readout, rows outputs.
    pub unitary: Vec<Vec<[f64; 2]>>,
    pub target: Vec<Vec<[f64; 2]>>,
    pub fidelity: f64,
    pub max_leakage: f64,
    pub isometry_defect: f64,
    /// Final computational populations per input, [`QubitState::ALL`] order.
    pub final_populations: Vec<[f64; 4]>,
    pub off_resonant: Vec<OffResonantImpact>,
    /// Two-level rotation angle of each pulse on its own line (π/2 = flip).
    pub rotation_angles: Vec<f64>,
}

impl GateReport {
    pub fn max_off_resonant_change(&self) -> f64 {
        self.off_resonant.iter().map(|o| o.net_change).fold(0.0, f64::max)
    }

    pub fn max_off_resonant_transient(&self) -> f64 {
        self.off_resonant.iter().map(|o| o.max_transient).fold(0.0, f64::max)
    }
}

/// Propagation of all four computational inputs through a pulse sequence
/// plus the readout analysis against the permutation `perm`.
#[derive(Clone, Debug)]
pub struct GateSimulation {
    pub runs: Vec<InputRun>,
    pub report: GateReport,
}

pub fn simulate_gate(
    name: &str,
    model: &DynamicsModel,
    seq: &PulseSequence,
    perm: &[usize; 4],
    options: &GateOptions,
) -> Result<GateSimulation> {
    options.validate()?;
    let t_end = seq.end().max(0.0);
    let runs: Vec<InputRun> = QubitState::ALL
        .iter()
        .map(|&q| run_input(model, seq, q, t_end, options))
        .collect::<Result<_>>()?;
    let mut u_end = [[ZERO; 4]; 4];
    for (j, run) in runs.iter().enumerate() {
        for (i, q) in QubitState::ALL.iter().enumerate() {
            u_end[i][j] = run.trajectory.final_state.amplitude(model, *q);
        }
    }
    // Readout phases are relative to the pulse end; fold the elapsed time
    // back in so the search runs over the free delay only.
    let energies = QubitState::ALL.map(|q| model.energies[model.index(q)]);
    let readout = solve_readout(&u_end, perm, &energies, options.horizon, options.phase_tolerance);
    let mut u = u_end;
    for (i, row) in u.iter_mut().enumerate() {
        let ph = Complex64::from_polar(1.0, -energies[i] * readout.delay / HBAR);
        row.iter_mut().for_each(|c| *c *= ph);
    }
    let target = target_matrix(perm, readout.variant);
    let report = GateReport {
        name: name.into(),
        pulses: seq.clone(),
        pulse_end: t_end,
        readout,
        unitary: matrix_json(&u),
        target: matrix_json(&target),
        fidelity: gate_fidelity(&u, &target),
        max_leakage: runs.iter().map(|r| r.max_leakage).fold(0.0, f64::max),
        isometry_defect: isometry_defect(&u),
        final_populations: runs.iter().map(|r| r.final_populations).collect(),
        off_resonant: runs.iter().flat_map(|r| r.off_resonant.iter().copied()).collect(),
        rotation_angles: seq
            .pulses
            .iter()
            .map(|p| p.line.map_or(0.0, |l| p.rotation_angle(model.line_dipole(l))))
            .collect(),
    };
    Ok(GateSimulation { runs, report })
}

fn require_commensurable(sim: GateSimulation) -> Result<(PulseSequence, GateReport)> {
    let r = &sim.report.readout;
    if !r.commensurable {
        return Err(Error::Commensurability(format!(
            "{}: best delay {:.6} ps leaves a phase mismatch of {:.4} rad (variant i^{}, fidelity {:.4})",
            sim.report.name, r.delay, r.phase_deviation, r.variant, sim.report.fidelity
        )));
    }
    Ok((sim.report.pulses.clone(), sim.report))
}

/// Calibrated single-pulse C-NOT on `line`, simulated on all four inputs.
pub fn simulate_cnot(
    model: &DynamicsModel,
    map: &QubitMap,
    line: CnotLine,
    options: &GateOptions,
) -> Result<GateSimulation> {
    if !(map.delta > 0.0) {
        return Err(Error::domain(format!(
            "conditional gates need a positive biexciton shift, got {:.3e} meV",
            map.delta
        )));
    }
    let amplitude = calibrate_amplitude(model, map, line, options)?;
    let seq = schedule(map, &[line], &[amplitude], options);
    simulate_gate(line.name(), model, &seq, &line.permutation(), options)
}

pub fn synthesize_cnot(
    model: &DynamicsModel,
    map: &QubitMap,
    line: CnotLine,
    options: &GateOptions,
) -> Result<(PulseSequence, GateReport)> {
    require_commensurable(simulate_cnot(model, map, line, options)?)
}

/// The two C-NOT lines whose sequence flips `qubit` unconditionally.
pub fn not_lines(qubit: u8) -> Result<[CnotLine; 2]> {
    match qubit {
        1 => Ok([CnotLine::X0MinusDelta, CnotLine::X0]),
        2 => Ok([CnotLine::X1MinusDelta, CnotLine::X1]),
        _ => Err(Error::domain(format!("qubit must be 1 or 2, got {qubit}"))),
    }
}

/// Pulses on `lines` with the given field amplitudes, the first centered
/// one half-support after t = 0 and the rest `options.separation` widths
/// apart.
pub fn schedule(map: &QubitMap, lines: &[CnotLine], amplitudes: &[f64], options: &GateOptions) -> PulseSequence {
    let first = options.envelope().half_support();
    let pulses = lines
        .iter()
        .zip(amplitudes)
        .enumerate()
        .map(|(k, (&line, &a))| Pulse {
            envelope: options.envelope(),
            amplitude: a,
            center: first + k as f64 * options.separation * options.width,
            frequency: line.frequency(map),
            line: Some(line),
        })
        .collect();
    PulseSequence { pulses }
}

/// [`schedule`] with each line's amplitude calibrated once.
pub fn pulse_train(
    model: &DynamicsModel,
    map: &QubitMap,
    lines: &[CnotLine],
    options: &GateOptions,
) -> Result<PulseSequence> {
    let mut calibrated: Vec<(CnotLine, f64)> = Vec::new();
    let mut amplitudes = Vec::with_capacity(lines.len());
    for &line in lines {
        let a = match calibrated.iter().find(|(l, _)| *l == line) {
            Some(&(_, a)) => a,
            None => {
                let a = calibrate_amplitude(model, map, line, options)?;
                calibrated.push((line, a));
                a
            }
        };
        amplitudes.push(a);
    }
    Ok(schedule(map, lines, &amplitudes, options))
}

/// Permutation of the ideal gate sequence: `lines` applied in order.
pub fn sequence_permutation(lines: &[CnotLine]) -> [usize; 4] {
    lines.iter().fold([0, 1, 2, 3], |acc, line| {
        let p = line.permutation();
        acc.map(|i| p[i])
    })
}

fn not_permutation(qubit: u8) -> [usize; 4] {
    // Flip the chosen qubit in every basis state.
    QubitState::ALL.map(|q| {
        let (a, b) = q.bits();
        let flipped = if qubit == 1 {
            QubitState::from_bits(a ^ 1, b)
        } else {
            QubitState::from_bits(a, b ^ 1)
        };
        flipped.index()
    })
}

pub fn simulate_not(
    model: &DynamicsModel,
    map: &QubitMap,
    qubit: u8,
    repetitions: usize,
    options: &GateOptions,
) -> Result<GateSimulation> {
    if !(map.delta > 0.0) {
        return Err(Error::domain(format!(
            "conditional gates need a positive biexciton shift, got {:.3e} meV",
            map.delta
        )));
    }
    let pair = not_lines(qubit)?;
    let lines: Vec<CnotLine> = (0..repetitions).flat_map(|_| pair).collect();
    let seq = pulse_train(model, map, &lines, options)?;
    let perm = if repetitions.is_multiple_of(2) {
        [0, 1, 2, 3]
    } else {
        not_permutation(qubit)
    };
    let name = if repetitions == 1 {
        format!("not(q{qubit})")
    } else {
        format!("not(q{qubit})^{repetitions}")
    };
    simulate_gate(&name, model, &seq, &perm, options)
}

/// Unconditional NOT on `qubit` from two conditional pulses.
pub fn compose_not(
    model: &DynamicsModel,
    map: &QubitMap,
    qubit: u8,
    options: &GateOptions,
) -> Result<(PulseSequence, GateReport)> {
    require_commensurable(simulate_not(model, map, qubit, 1, options)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateBudget {
    pub pulse_duration: f64,
    pub dephasing_time: f64,
    pub operations: u64,
}

impl GateBudget {
    pub fn new(pulse_duration: f64, dephasing_time: f64) -> Result<Self> {
        if !(pulse_duration > 0.0) || !(dephasing_time > 0.0) {
            return Err(Error::domain("gate budget needs positive times"));
        }
        Ok(GateBudget {
            pulse_duration,
            dephasing_time,
            operations: (dephasing_time / pulse_duration + 1e-9).floor() as u64,
        })
    }

    pub fn text(&self) -> String {
        format!(
            "{} sequential pulse operations of {} ps fit within a dephasing time of {} ps",
            self.operations, self.pulse_duration, self.dephasing_time
        )
    }
}
