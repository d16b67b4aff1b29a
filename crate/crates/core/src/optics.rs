//! Interband polarization matrix elements, state-conditioned absorption
//! spectra and the conditional transition table.
//!
//! The polarization operator is P = Σ M_{μν} d_ν c_μ with real M, so
//! P† = Σ M_{μν} c†_μ d†_ν creates an electron-hole pair. The bulk dipole
//! scale is 1; field amplitudes elsewhere are given in Rabi units.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::confinement::{SingleParticleBasis, SingleParticleState, Subband};
use crate::error::{Error, Result};
use crate::manybody::{ManyBodySpectrum, PairSpace, QubitMap, QubitState};
use crate::quadrature::{gauss_hermite, gauss_legendre, hermite_functions};

#[derive(Clone, Debug, PartialEq)]
pub struct DipoleTable {
    /// M_{μν}: envelope overlap of electron μ and hole ν.
    pub single: DMatrix<f64>,
    /// ⟨x|P†|vac⟩ for every exciton.
    pub exciton_vac: Vec<f64>,
    /// ⟨λ|P†|x⟩, rows biexcitons, columns excitons.
    pub biexciton_exciton: DMatrix<f64>,
}

impl DipoleTable {
    pub fn oscillator_strength(&self, exciton: usize) -> f64 {
        self.exciton_vac[exciton].powi(2)
    }

    /// Σ_{μν} M_{μν}², the exciton sum-rule total.
    pub fn total_single_strength(&self) -> f64 {
        self.single.iter().map(|m| m * m).sum()
    }
}

/// 1-D overlap ∫ψ_m(x/l₁)ψ_n(x/l₂) dx / √(l₁l₂).
fn overlap_1d(m: usize, n: usize, l1: f64, l2: f64) -> f64 {
    let alpha = 0.5 * (1.0 / (l1 * l1) + 1.0 / (l2 * l2));
    let s = alpha.sqrt();
    let rule = gauss_hermite((m + n) / 2 + 2);
    rule.integrate(|t| {
        let x = t / s;
        let a = hermite_functions(m, x / l1)[m];
        let b = hermite_functions(n, x / l2)[n];
        a * b * (t * t).exp()
    }) / (s * (l1 * l2).sqrt())
}

fn subband_overlap(a: &Subband, b: &Subband) -> f64 {
    let l = a.well_width.min(b.well_width);
    gauss_legendre(64)
        .mapped(0.0, l)
        .integrate(|z| a.envelope(z) * b.envelope(z))
}

/// μ_cv × envelope overlap ⟨φ^e|φ^h⟩ for one electron and one hole state.
pub fn single_particle_dipole(e: &SingleParticleState, h: &SingleParticleState, basis: &SingleParticleBasis) -> f64 {
    if e.parity() != h.parity() || e.subband_z != h.subband_z {
        return 0.0;
    }
    let (le, lh) = (e.oscillator_length, h.oscillator_length);
    overlap_1d(e.n_x as usize, h.n_x as usize, le, lh)
        * overlap_1d(e.n_y as usize, h.n_y as usize, le, lh)
        * subband_overlap(&basis.electron_subband, &basis.hole_subband)
}

/// Pair-basis coefficients of P†|x⟩ for an exciton amplitude vector.
pub fn apply_p_dagger(pairs: &PairSpace, m: &DMatrix<f64>, psi: &[f64]) -> Vec<f64> {
    let nh = pairs.n_h;
    let amp = |mu: usize, nu: usize| psi[mu * nh + nu];
    (0..pairs.dim())
        .map(|idx| {
            let ((a, b), (c, d)) = pairs.split(idx);
            -(m[(a, c)] * amp(b, d) - m[(b, c)] * amp(a, d) - m[(a, d)] * amp(b, c) + m[(b, d)] * amp(a, c))
        })
        .collect()
}

pub fn dipole_table(spectrum: &ManyBodySpectrum) -> DipoleTable {
    let basis = &spectrum.basis;
    let (ne, nh) = (basis.n_electrons(), basis.n_holes());
    let single = DMatrix::from_fn(ne, nh, |i, j| {
        single_particle_dipole(&basis.electrons[i], &basis.holes[j], basis)
    });
    let exciton_vac = spectrum
        .excitons
        .iter()
        .map(|x| {
            let mut acc = 0.0;
            for mu in 0..ne {
                for nu in 0..nh {
                    acc += single[(mu, nu)] * x.amplitudes[mu * nh + nu];
                }
            }
            acc
        })
        .collect();
    let nx = spectrum.excitons.len();
    let nxx = spectrum.biexcitons.len();
    let dim = spectrum.pairs.dim();
    let mut created = DMatrix::<f64>::zeros(dim, nx);
    for (k, x) in spectrum.excitons.iter().enumerate() {
        let col = apply_p_dagger(&spectrum.pairs, &single, &x.amplitudes);
        created.column_mut(k).copy_from_slice(&col);
    }
    let biexcitons = DMatrix::from_fn(dim, nxx, |i, l| spectrum.biexcitons[l].amplitudes[i]);
    let biexciton_exciton = biexcitons.transpose() * created;
    DipoleTable {
        single,
        exciton_vac,
        biexciton_exciton,
    }
}

pub fn parse_initial_state(label: &str) -> Result<QubitState> {
    QubitState::from_excitonic_name(label).ok_or_else(|| {
        Error::domain(format!(
            "unknown initial state `{label}` (expected vac, X0, X1 or X0+X1)"
        ))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumOptions {
    /// Lorentzian half width at half maximum, meV.
    pub broadening: f64,
    /// Window relative to E_X0, meV.
    pub window_min: f64,
    pub window_max: f64,
    pub points: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            broadening: 0.5,
            window_min: -30.0,
            window_max: 50.0,
            points: 1601,
        }
    }
}

impl SpectrumOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.broadening > 0.0 && self.broadening.is_finite()) {
            return Err(Error::domain(format!(
                "broadening must be positive, got {}",
                self.broadening
            )));
        }
        if !(self.window_max > self.window_min) || self.points < 2 {
            return Err(Error::domain(
                "spectral window must be non-empty with at least two points",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    /// Photon energy relative to E_X0, meV.
    pub position: f64,
    /// Absolute photon energy, meV.
    pub photon_energy: f64,
    /// Positive for absorption, negative for gain.
    pub weight: f64,
    pub initial: String,
    pub final_state: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub initial: QubitState,
    /// E_X0, the zero of the energy axis.
    pub offset: f64,
    pub broadening: f64,
    pub energies: Vec<f64>,
    pub signal: Vec<f64>,
    pub lines: Vec<SpectralLine>,
}

impl Spectrum {
    pub fn net_weight(&self) -> f64 {
        self.lines.iter().map(|l| l.weight).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("energy_meV,signal\n");
        for (e, v) in self.energies.iter().zip(&self.signal) {
            let _ = writeln!(s, "{e:.6},{v:.12e}");
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "initial": self.initial.excitonic_name(),
            "offset_meV": self.offset,
            "broadening_hwhm_meV": self.broadening,
            "lines": self.lines,
        })
    }
}

fn exciton_name(map: &QubitMap, i: usize) -> String {
    if i == map.x0 {
        "X0".into()
    } else if i == map.x1 {
        "X1".into()
    } else {
        format!("X#{i}")
    }
}

fn biexciton_name(map: &QubitMap, l: usize) -> String {
    if l == map.x0x1 {
        "X0+X1".into()
    } else {
        format!("XX#{l}")
    }
}

/// All optical lines (up and down) out of a computational state, absolute
/// photon energies; negligible weights (< 1e-14) dropped.
fn lines_from(
    initial: QubitState,
    spectrum: &ManyBodySpectrum,
    map: &QubitMap,
    dipoles: &DipoleTable,
) -> Vec<SpectralLine> {
    let offset = map.e_x0;
    let mut lines = Vec::new();
    let mut push = |photon: f64, weight: f64, from: String, to: String| {
        if weight.abs() >= 1e-14 {
            lines.push(SpectralLine {
                position: photon - offset,
                photon_energy: photon,
                weight,
                initial: from,
                final_state: to,
            });
        }
    };
    match initial {
        QubitState::Q00 => {
            for (x, s) in spectrum.excitons.iter().enumerate() {
                push(
                    s.energy,
                    dipoles.exciton_vac[x].powi(2),
                    "vac".into(),
                    exciton_name(map, x),
                );
            }
        }
        QubitState::Q10 | QubitState::Q01 => {
            let x = if initial == QubitState::Q10 { map.x0 } else { map.x1 };
            let ex = spectrum.excitons[x].energy;
            push(ex, -dipoles.exciton_vac[x].powi(2), exciton_name(map, x), "vac".into());
            for (l, b) in spectrum.biexcitons.iter().enumerate() {
                push(
                    b.energy - ex,
                    dipoles.biexciton_exciton[(l, x)].powi(2),
                    exciton_name(map, x),
                    biexciton_name(map, l),
                );
            }
        }
        QubitState::Q11 => {
            let exx = spectrum.biexcitons[map.x0x1].energy;
            for (x, s) in spectrum.excitons.iter().enumerate() {
                push(
                    exx - s.energy,
                    -dipoles.biexciton_exciton[(map.x0x1, x)].powi(2),
                    "X0+X1".into(),
                    exciton_name(map, x),
                );
            }
        }
    }
    lines
}

/// Lorentzian-broadened spectrum out of one of the four computational states.
pub fn absorption_spectrum(
    initial: QubitState,
    spectrum: &ManyBodySpectrum,
    map: &QubitMap,
    dipoles: &DipoleTable,
    options: &SpectrumOptions,
) -> Result<Spectrum> {
    options.validate()?;
    let lines: Vec<SpectralLine> = lines_from(initial, spectrum, map, dipoles)
        .into_iter()
        .filter(|l| l.position >= options.window_min && l.position <= options.window_max)
        .collect();
    let n = options.points;
    let step = (options.window_max - options.window_min) / (n - 1) as f64;
    let gamma = options.broadening;
    let energies: Vec<f64> = (0..n).map(|i| options.window_min + step * i as f64).collect();
    let signal = energies
        .iter()
        .map(|&e| {
            lines
                .iter()
                .map(|l| l.weight * gamma / (std::f64::consts::PI * ((e - l.position).powi(2) + gamma * gamma)))
                .sum()
        })
        .collect();
    Ok(Spectrum {
        initial,
        offset: map.e_x0,
        broadening: gamma,
        energies,
        signal,
        lines,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    /// Lines closer than this are not resolvable, meV.
    pub min_splitting: f64,
    /// Required active/inactive strength ratio.
    pub contrast: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            min_splitting: 1.0,
            contrast: 1e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    /// Photon energy, meV.
    pub frequency: f64,
    /// Relative to E_X0, meV.
    pub position: f64,
    /// Controlling qubit (1 or 2) and the value it must hold.
    pub condition_qubit: u8,
    pub condition_value: u8,
    pub transition: (QubitState, QubitState),
    /// Summed |line weight| near the frequency, per initial state in
    /// [`QubitState::ALL`] order.
    pub strengths: [f64; 4],
    pub min_active: f64,
    pub max_inactive: f64,
}

impl TableRow {
    pub fn is_active(&self, q: QubitState) -> bool {
        let (q1, q2) = q.bits();
        let bit = if self.condition_qubit == 1 { q1 } else { q2 };
        bit == self.condition_value
    }

    pub fn contrast(&self) -> f64 {
        if self.max_inactive == 0.0 {
            f64::INFINITY
        } else {
            self.min_active / self.max_inactive
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub delta: f64,
    pub required_contrast: f64,
    pub rows: Vec<TableRow>,
}

impl ConditionalTable {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.contrast() >= self.required_contrast)
    }

    /// Errors when any row misses the required contrast.
    pub fn check(&self) -> Result<()> {
        for r in &self.rows {
            if r.contrast() < self.required_contrast {
                return Err(Error::Consistency(format!(
                    "transition {} ({:.3} meV): contrast {:.3e} below {:.1e}",
                    r.name,
                    r.position,
                    r.contrast(),
                    self.required_contrast
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# conditional transitions, Δ = {:.4} meV\n", self.delta);
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>8} {:>10} {:>12} {:>12} {:>12} {:>12} {:>10}",
            "line", "rel_meV", "cond", "transition", "vac", "X0", "X1", "X0+X1", "contrast"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>10.4} {:>8} {:>10} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.3e}",
                r.name,
                r.position,
                format!("q{}={}", r.condition_qubit, r.condition_value),
                format!(
                    "{}<->{}",
                    r.transition.0.excitonic_name(),
                    r.transition.1.excitonic_name()
                ),
                r.strengths[0],
                r.strengths[1],
                r.strengths[2],
                r.strengths[3],
                r.contrast()
            );
        }
        s
    }
}

/// The four conditional lines ω_X0, ω_X0−Δ, ω_X1, ω_X1−Δ with their
/// strengths out of each computational state.
pub fn conditional_transition_table(
    spectrum: &ManyBodySpectrum,
    map: &QubitMap,
    dipoles: &DipoleTable,
    options: &TableOptions,
) -> Result<ConditionalTable> {
    use QubitState::*;
    let w_x0 = map.e_x0;
    let w_x1 = map.e_x1;
    let specs = [
        ("w_X0", w_x0, 2u8, 0u8, (Q00, Q10)),
        ("w_X0-D", map.e_x0x1 - map.e_x1, 2, 1, (Q01, Q11)),
        ("w_X1", w_x1, 1, 0, (Q00, Q01)),
        ("w_X1-D", map.e_x0x1 - map.e_x0, 1, 1, (Q10, Q11)),
    ];
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            if (a.1 - b.1).abs() < options.min_splitting {
                return Err(Error::Resolution(format!(
                    "{} and {} are {:.3e} meV apart (Δ = {:.3e} meV, minimum splitting {} meV)",
                    a.0,
                    b.0,
                    (a.1 - b.1).abs(),
                    map.delta,
                    options.min_splitting
                )));
            }
        }
    }
    let lines: Vec<Vec<SpectralLine>> = QubitState::ALL
        .iter()
        .map(|&q| lines_from(q, spectrum, map, dipoles))
        .collect();
    let half = 0.5 * options.min_splitting;
    let rows = specs
        .iter()
        .map(|&(name, freq, cq, cv, transition)| {
            let mut strengths = [0.0; 4];
            for (k, ls) in lines.iter().enumerate() {
                strengths[k] = ls
                    .iter()
                    .filter(|l| (l.photon_energy - freq).abs() <= half)
                    .fold(0.0, |acc, l| acc + l.weight.abs());
            }
            let mut row = TableRow {
                name: name.into(),
                frequency: freq,
                position: freq - map.e_x0,
                condition_qubit: cq,
                condition_value: cv,
                transition,
                strengths,
                min_active: f64::INFINITY,
                max_inactive: 0.0,
            };
            for q in QubitState::ALL {
                let s = strengths[q.index()];
                if row.is_active(q) {
                    row.min_active = row.min_active.min(s);
                } else {
                    row.max_inactive = row.max_inactive.max(s);
                }
            }
            row
        })
        .collect();
    Ok(ConditionalTable {
        delta: map.delta,
        required_contrast: options.contrast,
        rows,
    })
}

/// Gnuplot script drawing the four panels from `spectrum_<label>.csv` files
/// in the same directory.
pub fn gnuplot_script(table: Option<&ConditionalTable>, csv_names: &[(QubitState, String)]) -> String {
    let mut s = String::new();
    s.push_str("set terminal pngcairo size 700,1000\nset output 'absorption.png'\n");
    s.push_str("set datafile separator ','\nset multiplot layout 4,1\nset xlabel 'photon energy - E_{X0} (meV)'\n");
    s.push_str("set ylabel 'absorption (arb. units)'\nset xzeroaxis\n");
    if let Some(t) = table {
        for r in &t.rows {
            let _ = writeln!(
                s,
                "set arrow from {p},graph 0 to {p},graph 1 nohead dt 2 lc rgb 'gray'",
                p = r.position
            );
        }
    }
    for (k, (q, name)) in csv_names.iter().enumerate() {
        let panel = (b'a' + k as u8) as char;
        let _ = writeln!(s, "set title '({panel}) initial state {}'", q.excitonic_name());
        let _ = writeln!(s, "plot '{name}' every ::1 using 1:2 with lines lw 2 notitle");
    }
    s.push_str("unset multiplot\n");
    s
}

/// Writes the four spectra (CSV + JSON line lists) and the plot script.
pub fn write_spectra(dir: &Path, spectra: &[Spectrum], table: Option<&ConditionalTable>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for sp in spectra {
        let stem = match sp.initial {
            QubitState::Q00 => "a_vac",
            QubitState::Q10 => "b_X0",
            QubitState::Q01 => "c_X1",
            QubitState::Q11 => "d_X0X1",
        };
        let csv = format!("spectrum_{stem}.csv");
        std::fs::write(dir.join(&csv), sp.to_csv())?;
        std::fs::write(
            dir.join(format!("spectrum_{stem}.json")),
            serde_json::to_string_pretty(&sp.to_json())?,
        )?;
        names.push((sp.initial, csv));
    }
    std::fs::write(dir.join("absorption.gp"), gnuplot_script(table, &names))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confinement::{build_sp_basis, DotGeometry, MaterialParams};

    #[test]
    fn parity_forbidden_dipoles_vanish() {
        let mat = MaterialParams {
            hole_mass: 0.067,
            ..MaterialParams::default()
        };
        let geo = DotGeometry {
            hbar_omega_h: 20.0,
            ..DotGeometry::default()
        };
        let basis = build_sp_basis(&mat, &geo, 6, 6).unwrap();
        let e = &basis.electrons;
        let h = &basis.holes;
        assert_eq!(single_particle_dipole(&e[0], &h[1], &basis), 0.0);
        // Equal lengths: the overlap is the identity.
        for (i, ei) in e.iter().enumerate() {
            for (j, hj) in h.iter().enumerate() {
                let m = single_particle_dipole(ei, hj, &basis);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((m - expect).abs() < 1e-12, "{i} {j} {m}");
            }
        }
    }

    #[test]
    fn overlap_1d_matches_closed_form() {
        // ⟨ψ₀(l₁)|ψ₀(l₂)⟩ = √(2 l₁ l₂ / (l₁² + l₂²)).
        let (l1, l2) = (7.5_f64, 9.0_f64);
        let expect = (2.0 * l1 * l2 / (l1 * l1 + l2 * l2)).sqrt();
        assert!((overlap_1d(0, 0, l1, l2) - expect).abs() < 1e-14);
        assert!(overlap_1d(0, 1, l1, l2).abs() < 1e-16);
    }

    #[test]
    fn initial_label_parsing() {
        assert_eq!(parse_initial_state("X0+X1").unwrap(), QubitState::Q11);
        assert!(matches!(parse_initial_state("XX"), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn options_validation() {
        let bad = SpectrumOptions {
            broadening: 0.0,
            ..SpectrumOptions::default()
        };
        assert!(bad.validate().is_err());
        assert!(SpectrumOptions::default().validate().is_ok());
    }
}
