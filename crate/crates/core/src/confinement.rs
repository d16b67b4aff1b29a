//! Single-particle envelope states of a dot that is parabolic in the (x, y)
//! plane and an infinite square well along z.
//!
//! The analytic Hermite-Gaussian solver is the production path. The
//! finite-difference solver in [`solve_grid_oracle`] exists to cross-check it.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite, hermite_function, hermite_functions};
use crate::units::HBAR2_OVER_M0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Electron,
    Hole,
}

/// Effective masses in units of m₀, relative permittivity, and a band-gap
/// offset that only shifts displayed transition energies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub electron_mass: f64,
    pub hole_mass: f64,
    pub dielectric_constant: f64,
    pub band_gap_offset: f64,
}

impl Default for MaterialParams {
    /// GaAs-like values.
    fn default() -> Self {
        MaterialParams {
            electron_mass: 0.067,
            hole_mass: 0.38,
            dielectric_constant: 12.9,
            band_gap_offset: 0.0,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.electron_mass > 0.0 && self.hole_mass > 0.0) {
            return Err(Error::domain("effective masses must be positive"));
        }
        if !(self.dielectric_constant >= 1.0) {
            return Err(Error::domain("dielectric constant must be >= 1"));
        }
        if !self.band_gap_offset.is_finite() {
            return Err(Error::domain("band gap offset must be finite"));
        }
        Ok(())
    }

    pub fn mass(&self, species: Species) -> f64 {
        match species {
            Species::Electron => self.electron_mass,
            Species::Hole => self.hole_mass,
        }
    }
}

/// In-plane confinement quanta (meV) and well width (nm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotGeometry {
    pub hbar_omega_e: f64,
    pub hbar_omega_h: f64,
    pub well_width_z: f64,
}

impl Default for DotGeometry {
    fn default() -> Self {
        DotGeometry {
            hbar_omega_e: 20.0,
            hbar_omega_h: 3.5,
            well_width_z: 5.0,
        }
    }
}

impl DotGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.hbar_omega_e > 0.0 && self.hbar_omega_h > 0.0 && self.well_width_z > 0.0) {
            return Err(Error::domain("confinement energies and well width must be positive"));
        }
        Ok(())
    }

    pub fn hbar_omega(&self, species: Species) -> f64 {
        match species {
            Species::Electron => self.hbar_omega_e,
            Species::Hole => self.hbar_omega_h,
        }
    }
}

/// Oscillator length √(ħ²/(m·ħω)) in nm.
pub fn oscillator_length(mass: f64, hbar_omega: f64) -> f64 {
    (HBAR2_OVER_M0 / (mass * hbar_omega)).sqrt()
}

/// A level of the isotropic 2-D oscillator in Cartesian quantum numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorLevel {
    pub n_x: u32,
    pub n_y: u32,
    pub energy: f64,
    pub oscillator_length: f64,
}

impl OscillatorLevel {
    pub fn shell(&self) -> u32 {
        self.n_x + self.n_y
    }
}

/// The `n_levels` lowest levels of the 2-D oscillator, shell by shell.
///
/// Within a shell the order is descending n_x, so the first excited shell
/// reads (1,0), (0,1). A shell is only split when `n_levels` ends inside it.
pub fn solve_inplane_ho(mass: f64, hbar_omega: f64, n_levels: usize) -> Result<Vec<OscillatorLevel>> {
    if !(mass > 0.0) || !(hbar_omega > 0.0) {
        return Err(Error::domain("oscillator mass and quantum must be positive"));
    }
    if n_levels == 0 {
        return Err(Error::domain("at least one level is required"));
    }
    let length = oscillator_length(mass, hbar_omega);
    let mut levels = Vec::with_capacity(n_levels);
    let mut shell = 0u32;
    while levels.len() < n_levels {
        let energy = hbar_omega * f64::from(shell + 1);
        for n_y in 0..=shell {
            if levels.len() == n_levels {
                break;
            }
            levels.push(OscillatorLevel {
                n_x: shell - n_y,
                n_y,
                energy,
                oscillator_length: length,
            });
        }
        shell += 1;
    }
    Ok(levels)
}

/// Ground subband of the infinite well along z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subband {
    pub energy: f64,
    pub well_width: f64,
}

impl Subband {
    /// √(2/L)·sin(πz/L) on [0, L], zero outside.
    pub fn envelope(&self, z: f64) -> f64 {
        if !(0.0..=self.well_width).contains(&z) {
            return 0.0;
        }
        (2.0 / self.well_width).sqrt() * (PI * z / self.well_width).sin()
    }

    pub fn density(&self, z: f64) -> f64 {
        let chi = self.envelope(z);
        chi * chi
    }
}

pub fn solve_box_z(mass: f64, well_width: f64) -> Result<Subband> {
    if !(well_width > 0.0) || !(mass > 0.0) {
        return Err(Error::domain("well width and mass must be positive"));
    }
    let energy = PI * PI * HBAR2_OVER_M0 / (2.0 * mass * well_width * well_width);
    Ok(Subband { energy, well_width })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleParticleState {
    pub species: Species,
    pub n_x: u32,
    pub n_y: u32,
    pub subband_z: u32,
    /// Total energy (in-plane + subband) in meV.
    pub energy: f64,
    pub oscillator_length: f64,
}

impl SingleParticleState {
    pub fn shell(&self) -> u32 {
        self.n_x + self.n_y
    }

    /// Reflection parities (x, y): 0 even, 1 odd.
    pub fn parity(&self) -> (u8, u8) {
        ((self.n_x % 2) as u8, (self.n_y % 2) as u8)
    }

    /// In-plane envelope φ(x, y) in nm⁻¹.
    pub fn inplane(&self, x: f64, y: f64) -> f64 {
        let l = self.oscillator_length;
        hermite_function(self.n_x as usize, x / l) * hermite_function(self.n_y as usize, y / l) / l
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleParticleBasis {
    pub electrons: Vec<SingleParticleState>,
    pub holes: Vec<SingleParticleState>,
    pub electron_subband: Subband,
    pub hole_subband: Subband,
}

impl SingleParticleBasis {
    pub fn states(&self, species: Species) -> &[SingleParticleState] {
        match species {
            Species::Electron => &self.electrons,
            Species::Hole => &self.holes,
        }
    }

    pub fn subband(&self, species: Species) -> &Subband {
        match species {
            Species::Electron => &self.electron_subband,
            Species::Hole => &self.hole_subband,
        }
    }

    pub fn well_width(&self) -> f64 {
        self.electron_subband.well_width
    }

    pub fn n_electrons(&self) -> usize {
        self.electrons.len()
    }

    pub fn n_holes(&self) -> usize {
        self.holes.len()
    }

    /// Fingerprint of everything that determines the envelopes and energies.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"qdgate.basis/1");
        for (tag, states, subband) in [
            (b'e', &self.electrons, &self.electron_subband),
            (b'h', &self.holes, &self.hole_subband),
        ] {
            hasher.update([tag]);
            hasher.update(subband.energy.to_le_bytes());
            hasher.update(subband.well_width.to_le_bytes());
            hasher.update((states.len() as u64).to_le_bytes());
            for s in states.iter() {
                hasher.update(s.n_x.to_le_bytes());
                hasher.update(s.n_y.to_le_bytes());
                hasher.update(s.subband_z.to_le_bytes());
                hasher.update(s.energy.to_le_bytes());
                hasher.update(s.oscillator_length.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Gram matrix of one species' envelopes by Gauss-Hermite quadrature.
    pub fn overlap_matrix(&self, species: Species) -> DMatrix<f64> {
        let states = self.states(species);
        let n = states.len();
        let max_q = states.iter().map(|s| s.n_x.max(s.n_y)).max().unwrap_or(0) as usize;
        let rule = gauss_hermite(max_q + 2);
        // 1-D overlaps in units of the common oscillator length.
        let mut one_d = DMatrix::<f64>::zeros(max_q + 1, max_q + 1);
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let h = hermite_functions(max_q, x);
            let scale = (x * x).exp();
            for a in 0..=max_q {
                for b in 0..=max_q {
                    one_d[(a, b)] += w * h[a] * h[b] * scale;
                }
            }
        }
        DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (&states[i], &states[j]);
            one_d[(a.n_x as usize, b.n_x as usize)] * one_d[(a.n_y as usize, b.n_y as usize)]
        })
    }

    /// JSON document with quantum numbers and energies (meV).
    pub fn to_json(&self) -> serde_json::Value {
        let list = |states: &[SingleParticleState]| -> Vec<serde_json::Value> {
            states
                .iter()
                .map(|s| {
                    serde_json::json!({
                        "n_x": s.n_x,
                        "n_y": s.n_y,
                        "subband_z": s.subband_z,
                        "energy_meV": s.energy,
                        "oscillator_length_nm": s.oscillator_length,
                    })
                })
                .collect()
        };
        serde_json::json!({
            "schema": "qdgate.basis/1",
            "fingerprint": self.fingerprint(),
            "electrons": list(&self.electrons),
            "holes": list(&self.holes),
            "electron_subband_meV": self.electron_subband.energy,
            "hole_subband_meV": self.hole_subband.energy,
            "well_width_nm": self.well_width(),
            "basis": self,
        })
    }
}

fn species_states(
    species: Species,
    material: &MaterialParams,
    geometry: &DotGeometry,
    n: usize,
) -> Result<(Vec<SingleParticleState>, Subband)> {
    let mass = material.mass(species);
    let levels = solve_inplane_ho(mass, geometry.hbar_omega(species), n)?;
    let subband = solve_box_z(mass, geometry.well_width_z)?;
    let states = levels
        .into_iter()
        .map(|lvl| SingleParticleState {
            species,
            n_x: lvl.n_x,
            n_y: lvl.n_y,
            subband_z: 1,
            energy: lvl.energy + subband.energy,
            oscillator_length: lvl.oscillator_length,
        })
        .collect();
    Ok((states, subband))
}

/// Product states (in-plane × ground z-subband) for both species, sorted by
/// energy.
pub fn build_sp_basis(
    material: &MaterialParams,
    geometry: &DotGeometry,
    n_e: usize,
    n_h: usize,
) -> Result<SingleParticleBasis> {
    material.validate()?;
    geometry.validate()?;
    if n_e == 0 || n_h == 0 {
        return Err(Error::domain("basis sizes must be >= 1"));
    }
    let (electrons, electron_subband) = species_states(Species::Electron, material, geometry, n_e)?;
    let (holes, hole_subband) = species_states(Species::Hole, material, geometry, n_h)?;
    Ok(SingleParticleBasis {
        electrons,
        holes,
        electron_subband,
        hole_subband,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct GridOracleOptions {
    /// Interior grid points per direction on the finest grid.
    pub points: usize,
    /// Half-width of the in-plane grid in oscillator lengths.
    pub half_width_lengths: f64,
    /// Maximum relative eigenvalue shift between the two finest grids.
    pub tolerance: f64,
}

impl Default for GridOracleOptions {
    fn default() -> Self {
        GridOracleOptions {
            points: 256,
            half_width_lengths: 8.0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpeciesOracle {
    /// Lowest 2-D in-plane eigenvalues (meV).
    pub inplane: Vec<f64>,
    /// Ground subband energy (meV).
    pub subband: f64,
    /// ⟨x²⟩ of the grid ground state (nm²).
    pub ground_variance: f64,
}

#[derive(Clone, Debug)]
pub struct GridOracle {
    pub electron: SpeciesOracle,
    pub hole: SpeciesOracle,
}

/// Finite-difference eigenvalues of the separable in-plane and z problems.
///
/// The 2-D grid Hamiltonian is the Kronecker sum of two identical 1-D grid
/// Hamiltonians, so its eigenvalues on the n² grid are the pairwise sums of
/// the 1-D eigenvalues.
pub fn solve_grid_oracle(
    material: &MaterialParams,
    geometry: &DotGeometry,
    n_levels: usize,
    options: &GridOracleOptions,
) -> Result<GridOracle> {
    material.validate()?;
    geometry.validate()?;
    if options.half_width_lengths < 6.0 {
        return Err(Error::domain("grid must extend at least 6 oscillator lengths each way"));
    }
    if options.points < 16 {
        return Err(Error::domain("grid too coarse"));
    }
    let species = |sp: Species| -> Result<SpeciesOracle> {
        let mass = material.mass(sp);
        let hw = geometry.hbar_omega(sp);
        let l = oscillator_length(mass, hw);
        let half = options.half_width_lengths * l;
        let kinetic = HBAR2_OVER_M0 / (2.0 * mass);
        let n_1d = n_levels.min(options.points);
        let spring = 0.5 * hw * hw / (HBAR2_OVER_M0 / mass);
        let harmonic = |x: f64| spring * x * x;

        let fine = fd_eigen_1d(&harmonic, -half, half, options.points, kinetic, n_1d)?;
        let coarse = fd_eigen_1d(&harmonic, -half, half, options.points / 2, kinetic, n_1d)?;
        let inplane = pair_sums(&fine.values, n_levels);
        let inplane_coarse = pair_sums(&coarse.values, n_levels);
        check_refinement("in-plane oscillator", &inplane, &inplane_coarse, options.tolerance)?;

        let width = geometry.well_width_z;
        let flat = |_: f64| 0.0;
        let z_fine = fd_eigen_1d(&flat, 0.0, width, options.points, kinetic, 1)?;
        let z_coarse = fd_eigen_1d(&flat, 0.0, width, options.points / 2, kinetic, 1)?;
        check_refinement("z subband", &z_fine.values, &z_coarse.values, options.tolerance)?;

        let ground = &fine.ground_state;
        let norm: f64 = ground.iter().map(|v| v * v).sum();
        let variance = fine.grid.iter().zip(ground).map(|(x, v)| x * x * v * v).sum::<f64>() / norm;
        Ok(SpeciesOracle {
            inplane,
            subband: z_fine.values[0],
            ground_variance: variance,
        })
    };
    Ok(GridOracle {
        electron: species(Species::Electron)?,
        hole: species(Species::Hole)?,
    })
}

fn pair_sums(values: &[f64], n: usize) -> Vec<f64> {
    let mut sums: Vec<f64> = values.iter().flat_map(|a| values.iter().map(move |b| a + b)).collect();
    sums.sort_by(f64::total_cmp);
    sums.truncate(n);
    sums
}

fn check_refinement(what: &str, fine: &[f64], coarse: &[f64], tolerance: f64) -> Result<()> {
    let shift = fine
        .iter()
        .zip(coarse)
        .map(|(f, c)| ((f - c) / f).abs())
        .fold(0.0, f64::max);
    if shift > tolerance {
        return Err(Error::OracleUnconverged {
            what: what.to_string(),
            estimate: shift,
            tolerance,
        });
    }
    Ok(())
}

struct FdSolution {
    values: Vec<f64>,
    grid: Vec<f64>,
    ground_state: Vec<f64>,
}

/// Fourth-order finite differences for −k·ψ'' + V ψ = E ψ with ψ = 0 at both
/// ends. The wall is imposed with an odd ghost reflection, which keeps the
/// matrix symmetric.
fn fd_eigen_1d(
    potential: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    points: usize,
    kinetic: f64,
    n_eigs: usize,
) -> Result<FdSolution> {
    let n = points;
    let h = (b - a) / (n as f64 + 1.0);
    let grid: Vec<f64> = (1..=n).map(|i| a + i as f64 * h).collect();
    let c = kinetic / (12.0 * h * h);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 30.0 * c + potential(grid[i]);
        if i + 1 < n {
            m[(i, i + 1)] = -16.0 * c;
            m[(i + 1, i)] = -16.0 * c;
        }
        if i + 2 < n {
            m[(i, i + 2)] = c;
            m[(i + 2, i)] = c;
        }
    }
    // ψ₋₁ = −ψ₁ next to each wall.
    m[(0, 0)] -= c;
    m[(n - 1, n - 1)] -= c;
    let eig = SymmetricEigen::try_new(m, 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("finite-difference eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().take(n_eigs).map(|&i| eig.eigenvalues[i]).collect();
    let ground_state = eig.eigenvectors.column(order[0]).iter().copied().collect();
    Ok(FdSolution {
        values,
        grid,
        ground_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_and_first_shell() {
        let one = solve_inplane_ho(0.067, 20.0, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].n_x, one[0].n_y), (0, 0));
        assert_eq!(one[0].energy, 20.0);

        let three = solve_inplane_ho(0.067, 20.0, 3).unwrap();
        let energies: Vec<f64> = three.iter().map(|s| s.energy).collect();
        assert_eq!(energies, vec![20.0, 40.0, 40.0]);
        let qn: Vec<(u32, u32)> = three.iter().map(|s| (s.n_x, s.n_y)).collect();
        assert_eq!(qn, vec![(0, 0), (1, 0), (0, 1)]);
    }

    #[test]
    fn partial_shell_uses_fixed_order() {
        let lv = solve_inplane_ho(0.38, 3.5, 5).unwrap();
        let qn: Vec<(u32, u32)> = lv.iter().map(|s| (s.n_x, s.n_y)).collect();
        assert_eq!(qn, vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1)]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(solve_inplane_ho(0.0, 20.0, 1), Err(Error::ParameterDomain(_))));
        assert!(matches!(
            solve_inplane_ho(0.067, -1.0, 1),
            Err(Error::ParameterDomain(_))
        ));
        assert!(matches!(
            solve_inplane_ho(0.067, 20.0, 0),
            Err(Error::ParameterDomain(_))
        ));
        assert!(matches!(solve_box_z(0.067, 0.0), Err(Error::ParameterDomain(_))));
        let mat = MaterialParams {
            dielectric_constant: 0.5,
            ..Default::default()
        };
        assert!(build_sp_basis(&mat, &DotGeometry::default(), 1, 1).is_err());
        assert!(build_sp_basis(&MaterialParams::default(), &DotGeometry::default(), 0, 1).is_err());
    }

    #[test]
    fn box_energy_scaling_and_value() {
        let a = solve_box_z(0.067, 5.0).unwrap();
        let b = solve_box_z(0.067, 10.0).unwrap();
        assert!((a.energy / b.energy - 4.0).abs() < 1e-14);
        let expect = PI * PI * 76.1996 / (2.0 * 0.067 * 25.0);
        assert!((a.energy - expect).abs() < 1e-12);
        let rule = crate::quadrature::gauss_legendre(40).mapped(0.0, 5.0);
        let norm = rule.integrate(|z| a.density(z));
        assert!((norm - 1.0).abs() < 1e-13);
    }

    #[test]
    fn default_basis_shells() {
        let basis = build_sp_basis(&MaterialParams::default(), &DotGeometry::default(), 10, 10).unwrap();
        let ez = basis.electron_subband.energy;
        let inplane: Vec<f64> = basis.electrons.iter().map(|s| s.energy - ez).collect();
        let mut counts = std::collections::BTreeMap::new();
        for e in &inplane {
            *counts.entry((e.round()) as i64).or_insert(0) += 1;
        }
        assert_eq!(
            counts.into_iter().collect::<Vec<_>>(),
            vec![(20, 1), (40, 2), (60, 3), (80, 4)]
        );
        assert!(basis.electrons.windows(2).all(|w| w[0].energy <= w[1].energy));
        assert!(basis.holes.windows(2).all(|w| w[0].energy <= w[1].energy));
        let single = build_sp_basis(&MaterialParams::default(), &DotGeometry::default(), 1, 1).unwrap();
        let s = single.electrons[0];
        assert_eq!((s.n_x, s.n_y, s.subband_z), (0, 0, 1));
    }

    #[test]
    fn basis_is_orthonormal() {
        let basis = build_sp_basis(&MaterialParams::default(), &DotGeometry::default(), 10, 10).unwrap();
        for sp in [Species::Electron, Species::Hole] {
            let gram = basis.overlap_matrix(sp);
            let dev = (gram - DMatrix::identity(10, 10)).abs().max();
            assert!(dev < 1e-12, "{sp:?}: {dev}");
        }
    }

    #[test]
    fn degenerate_shells_are_exact() {
        let lv = solve_inplane_ho(0.067, 20.0, 10).unwrap();
        for w in lv.windows(2) {
            if w[0].shell() == w[1].shell() {
                assert_eq!(w[0].energy.to_bits(), w[1].energy.to_bits());
            }
        }
    }

    #[test]
    fn oscillator_length_scaling() {
        let l1 = oscillator_length(0.067, 20.0);
        let l2 = oscillator_length(0.067, 40.0);
        assert!((l1 / l2 - 2f64.sqrt()).abs() < 1e-14);
        let l4 = oscillator_length(0.067, 80.0);
        assert!((l1 / l4 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn grid_oracle_matches_analytic_levels() {
        let mat = MaterialParams::default();
        let geo = DotGeometry::default();
        let oracle = solve_grid_oracle(&mat, &geo, 6, &GridOracleOptions::default()).unwrap();
        for (sp, or) in [(Species::Electron, &oracle.electron), (Species::Hole, &oracle.hole)] {
            let analytic = solve_inplane_ho(mat.mass(sp), geo.hbar_omega(sp), 6).unwrap();
            for (a, g) in analytic.iter().zip(&or.inplane) {
                assert!(((a.energy - g) / a.energy).abs() < 1e-4, "{sp:?} {} {}", a.energy, g);
            }
            let ez = solve_box_z(mat.mass(sp), geo.well_width_z).unwrap().energy;
            assert!(((or.subband - ez) / ez).abs() < 1e-6, "{} {}", or.subband, ez);
            let l = oscillator_length(mat.mass(sp), geo.hbar_omega(sp));
            let rel = (or.ground_variance - 0.5 * l * l).abs() / (0.5 * l * l);
            assert!(rel < 1e-4, "variance {rel}");
        }
    }

    #[test]
    fn grid_oracle_rejects_small_domain() {
        let opts = GridOracleOptions {
            half_width_lengths: 3.0,
            ..Default::default()
        };
        let r = solve_grid_oracle(&MaterialParams::default(), &DotGeometry::default(), 6, &opts);
        assert!(matches!(r, Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn grid_oracle_flags_unconverged_grid() {
        let opts = GridOracleOptions {
            points: 16,
            tolerance: 1e-9,
            ..Default::default()
        };
        let r = solve_grid_oracle(&MaterialParams::default(), &DotGeometry::default(), 6, &opts);
        assert!(matches!(r, Err(Error::OracleUnconverged { .. })));
    }
}
