//! Config-driven stages behind the `qdgate` binary.
//!
//! `solve` builds the basis, the Coulomb tensors (through the cache) and the
//! labeled many-body spectrum. `spectra`, `gate` and `sweep` read the solve
//! artifacts back, rebuild the spectrum from the cached tensors and refuse to
//! run when the artifacts are missing or belong to a different config. All
//! emitted files are deterministic functions of the config.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confinement::{build_sp_basis, DotGeometry, MaterialParams, SingleParticleBasis};
use crate::coulomb::{
    brute_force_element, build_coulomb_tensor, coulomb_element, load_cached_tensor, BruteForceOptions, CacheStatus,
    CoulombKind, CoulombOptions, CoulombTensor, FormFactorMode,
};
use crate::error::{Error, Result};
use crate::gatesim::{
    calibrate_amplitude, schedule, sequence_permutation, simulate_gate, CnotLine, DynamicsModel, EnvelopeShape,
    GateBudget, GateOptions, GateReport, Integrator, StepControl,
};
use crate::manybody::{identify_states, solve_spectrum, IdentifyOptions, ManyBodySpectrum, QubitMap, QubitState};
use crate::optics::{
    absorption_spectrum, conditional_transition_table, dipole_table, write_spectra, ConditionalTable, DipoleTable,
    Spectrum, SpectrumOptions, TableOptions,
};

pub const CONFIG_SCHEMA: &str = "qdgate.run/1";
const SPECTRUM_FILE: &str = "solve/spectrum.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSection {
    pub electron_mass_m0: f64,
    pub hole_mass_m0: f64,
    pub dielectric_constant: f64,
    pub band_gap_offset_mev: f64,
    /// Multiplies every Coulomb element; 0 switches the interaction off.
    pub coulomb_scale: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        let m = MaterialParams::default();
        MaterialSection {
            electron_mass_m0: m.electron_mass,
            hole_mass_m0: m.hole_mass,
            dielectric_constant: m.dielectric_constant,
            band_gap_offset_mev: m.band_gap_offset,
            coulomb_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub hbar_omega_e_mev: f64,
    pub hbar_omega_h_mev: f64,
    pub well_width_nm: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = DotGeometry::default();
        GeometrySection {
            hbar_omega_e_mev: g.hbar_omega_e,
            hbar_omega_h_mev: g.hbar_omega_h,
            well_width_nm: g.well_width_z,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub electron_states: usize,
    pub hole_states: usize,
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection {
            electron_states: 10,
            hole_states: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub radial_nodes: usize,
    pub z_nodes: usize,
    pub form_factor: FormFactorMode,
    pub self_test_tolerance: f64,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let c = CoulombOptions::default();
        QuadratureSection {
            radial_nodes: c.radial_nodes,
            z_nodes: c.z_nodes,
            form_factor: c.form_factor,
            self_test_tolerance: c.tolerance,
        }
    }
}

/// Seeded spot checks of the Coulomb tensors against the real-space oracle
/// during `solve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub samples_per_kind: usize,
    pub relative_tolerance: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            samples_per_kind: 0,
            relative_tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifySection {
    pub bright_fraction: f64,
    pub dominant_weight: f64,
}

impl Default for IdentifySection {
    fn default() -> Self {
        let o = IdentifyOptions::default();
        IdentifySection {
            bright_fraction: o.bright_fraction,
            dominant_weight: o.dominant_weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraSection {
    pub broadening_mev: f64,
    pub window_min_mev: f64,
    pub window_max_mev: f64,
    pub points: usize,
    pub min_splitting_mev: f64,
    pub contrast: f64,
}

impl Default for SpectraSection {
    fn default() -> Self {
        let s = SpectrumOptions::default();
        let t = TableOptions::default();
        SpectraSection {
            broadening_mev: s.broadening,
            window_min_mev: s.window_min,
            window_max_mev: s.window_max,
            points: s.points,
            min_splitting_mev: t.min_splitting,
            contrast: t.contrast,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub integrator: Integrator,
    pub step_tolerance: f64,
    pub initial_dt_ps: f64,
    pub min_dt_ps: f64,
    pub max_dt_ps: f64,
    pub krylov_tolerance: f64,
    pub krylov_dim: usize,
    /// Center-to-center pulse spacing in pulse widths.
    pub separation_widths: f64,
    pub readout_horizon_ps: f64,
    pub phase_tolerance_rad: f64,
    pub calibration_tolerance: f64,
    pub sample_dt_ps: f64,
    pub budget_pulse_ps: f64,
    pub dephasing_time_ps: f64,
}

impl Default for GateSection {
    fn default() -> Self {
        let g = GateOptions::default();
        GateSection {
            integrator: g.control.integrator,
            step_tolerance: g.control.tolerance,
            initial_dt_ps: g.control.initial_dt,
            min_dt_ps: g.control.min_dt,
            max_dt_ps: g.control.max_dt,
            krylov_tolerance: g.control.krylov_tolerance,
            krylov_dim: g.control.krylov_dim,
            separation_widths: g.separation,
            readout_horizon_ps: g.horizon,
            phase_tolerance_rad: g.phase_tolerance,
            calibration_tolerance: g.calibration_tolerance,
            sample_dt_ps: g.sample_dt,
            budget_pulse_ps: 0.25,
            dephasing_time_ps: 40.0,
        }
    }
}

fn default_width() -> f64 {
    0.5
}

fn default_scale() -> f64 {
    1.0
}

fn default_shape() -> EnvelopeShape {
    EnvelopeShape::Gaussian
}

fn all_inputs() -> Vec<QubitState> {
    QubitState::ALL.to_vec()
}

/// A pulse sequence, one calibrated pulse per listed line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub sequence: Vec<CnotLine>,
    #[serde(default = "default_width")]
    pub width_ps: f64,
    #[serde(default = "default_shape")]
    pub shape: EnvelopeShape,
    /// Multiplies the calibrated amplitudes; 0 gives field-free evolution
    /// whose ideal gate is the identity.
    #[serde(default = "default_scale")]
    pub amplitude_scale: f64,
    /// Inputs whose trajectories are written.
    #[serde(default = "all_inputs")]
    pub inputs: Vec<QubitState>,
}

impl ScenarioConfig {
    /// NOT on qubit 1 composed from the two conditional pulses, started from
    /// |01⟩ and |00⟩.
    pub fn not_q1() -> Self {
        ScenarioConfig {
            name: "not_q1".into(),
            sequence: vec![CnotLine::X0MinusDelta, CnotLine::X0],
            width_ps: 0.5,
            shape: EnvelopeShape::Gaussian,
            amplitude_scale: 1.0,
            inputs: vec![QubitState::Q01, QubitState::Q00],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub tau_ps: Vec<f64>,
    pub sequence: Vec<CnotLine>,
    pub shape: EnvelopeShape,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            tau_ps: vec![0.1, 0.25, 0.5],
            sequence: vec![CnotLine::X0MinusDelta, CnotLine::X0],
            shape: EnvelopeShape::Gaussian,
        }
    }
}

fn default_scenarios() -> Vec<ScenarioConfig> {
    vec![ScenarioConfig::not_q1()]
}

fn default_output() -> PathBuf {
    PathBuf::from("qdgate-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub material: MaterialSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub identify: IdentifySection,
    #[serde(default)]
    pub spectra: SpectraSection,
    #[serde(default)]
    pub gate: GateSection,
    #[serde(default = "default_scenarios", rename = "scenario")]
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: CONFIG_SCHEMA.into(),
            seed: 0,
            output_dir: default_output(),
            cache_dir: None,
            material: MaterialSection::default(),
            geometry: GeometrySection::default(),
            basis: BasisSection::default(),
            quadrature: QuadratureSection::default(),
            oracle: OracleSection::default(),
            identify: IdentifySection::default(),
            spectra: SpectraSection::default(),
            gate: GateSection::default(),
            scenarios: default_scenarios(),
            sweep: SweepSection::default(),
        }
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::ParameterDomain(msg) => Error::Config(msg),
        e => e,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema {:?} is not {CONFIG_SCHEMA:?}",
                self.schema
            )));
        }
        self.material().validate().map_err(config_error)?;
        self.geometry().validate().map_err(config_error)?;
        if self.basis.electron_states == 0 || self.basis.hole_states == 0 {
            return Err(Error::Config("basis sizes must be positive".into()));
        }
        if !(self.material.coulomb_scale >= 0.0 && self.material.coulomb_scale.is_finite()) {
            return Err(Error::Config("coulomb_scale must be finite and non-negative".into()));
        }
        if self.quadrature.radial_nodes < 8 || self.quadrature.z_nodes < 4 {
            return Err(Error::Config("quadrature orders are too small".into()));
        }
        if self.oracle.samples_per_kind > 0 && self.quadrature.form_factor != FormFactorMode::QuasiTwoD {
            return Err(Error::Config(
                "the real-space oracle checks the quasi-2-D interaction only".into(),
            ));
        }
        self.spectrum_options().validate().map_err(config_error)?;
        if !(self.spectra.min_splitting_mev > 0.0 && self.spectra.contrast > 1.0) {
            return Err(Error::Config(
                "min_splitting_mev must be positive and contrast above 1".into(),
            ));
        }
        GateBudget::new(self.gate.budget_pulse_ps, self.gate.dephasing_time_ps).map_err(config_error)?;
        let mut names: Vec<&str> = Vec::new();
        for sc in &self.scenarios {
            if sc.name.is_empty()
                || !sc
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::Config(format!(
                    "scenario name {:?} must be [A-Za-z0-9_-]+",
                    sc.name
                )));
            }
            if names.contains(&sc.name.as_str()) {
                return Err(Error::Config(format!("duplicate scenario {:?}", sc.name)));
            }
            names.push(&sc.name);
            if sc.sequence.is_empty() {
                return Err(Error::Config(format!("scenario {:?} has no pulses", sc.name)));
            }
            if !(sc.amplitude_scale >= 0.0 && sc.amplitude_scale.is_finite()) {
                return Err(Error::Config(format!(
                    "scenario {:?}: amplitude_scale must be non-negative",
                    sc.name
                )));
            }
            self.gate_options(sc.width_ps, sc.shape)
                .validate()
                .map_err(config_error)?;
        }
        for &tau in &self.sweep.tau_ps {
            self.gate_options(tau, self.sweep.shape)
                .validate()
                .map_err(config_error)?;
        }
        if !self.sweep.tau_ps.is_empty() && self.sweep.sequence.is_empty() {
            return Err(Error::Config("sweep needs a pulse sequence".into()));
        }
        Ok(())
    }

    pub fn material(&self) -> MaterialParams {
        MaterialParams {
            electron_mass: self.material.electron_mass_m0,
            hole_mass: self.material.hole_mass_m0,
            dielectric_constant: self.material.dielectric_constant,
            band_gap_offset: self.material.band_gap_offset_mev,
        }
    }

    pub fn geometry(&self) -> DotGeometry {
        DotGeometry {
            hbar_omega_e: self.geometry.hbar_omega_e_mev,
            hbar_omega_h: self.geometry.hbar_omega_h_mev,
            well_width_z: self.geometry.well_width_nm,
        }
    }

    pub fn coulomb_options(&self) -> CoulombOptions {
        CoulombOptions {
            radial_nodes: self.quadrature.radial_nodes,
            z_nodes: self.quadrature.z_nodes,
            form_factor: self.quadrature.form_factor,
            tolerance: self.quadrature.self_test_tolerance,
        }
    }

    pub fn identify_options(&self) -> IdentifyOptions {
        IdentifyOptions {
            bright_fraction: self.identify.bright_fraction,
            dominant_weight: self.identify.dominant_weight,
        }
    }

    pub fn spectrum_options(&self) -> SpectrumOptions {
        SpectrumOptions {
            broadening: self.spectra.broadening_mev,
            window_min: self.spectra.window_min_mev,
            window_max: self.spectra.window_max_mev,
            points: self.spectra.points,
        }
    }

    pub fn table_options(&self) -> TableOptions {
        TableOptions {
            min_splitting: self.spectra.min_splitting_mev,
            contrast: self.spectra.contrast,
        }
    }

    pub fn gate_options(&self, width: f64, shape: EnvelopeShape) -> GateOptions {
        let g = &self.gate;
        GateOptions {
            shape,
            width,
            separation: g.separation_widths,
            control: StepControl {
                integrator: g.integrator,
                tolerance: g.step_tolerance,
                initial_dt: g.initial_dt_ps,
                min_dt: g.min_dt_ps,
                max_dt: g.max_dt_ps,
                krylov_tolerance: g.krylov_tolerance,
                krylov_dim: g.krylov_dim,
            },
            horizon: g.readout_horizon_ps,
            phase_tolerance: g.phase_tolerance_rad,
            calibration_tolerance: g.calibration_tolerance,
            sample_dt: g.sample_dt_ps,
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    fn basis(&self) -> Result<SingleParticleBasis> {
        build_sp_basis(
            &self.material(),
            &self.geometry(),
            self.basis.electron_states,
            self.basis.hole_states,
        )
        .map_err(|e| e.in_stage("confinement"))
    }
}

const KINDS: [CoulombKind; 3] = [CoulombKind::Ee, CoulombKind::Hh, CoulombKind::Eh];

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// The labeled spectrum with its dipoles, as every later stage sees it.
#[derive(Clone, Debug)]
pub struct Solved {
    pub spectrum: ManyBodySpectrum,
    pub map: QubitMap,
    pub dipoles: DipoleTable,
}

fn solve_from_tensors(cfg: &RunConfig, basis: &SingleParticleBasis, tensors: [CoulombTensor; 3]) -> Result<Solved> {
    let scale = cfg.material.coulomb_scale;
    let [ee, hh, eh] = tensors.map(|t| if scale == 1.0 { t } else { t.scaled(scale) });
    let raw = solve_spectrum(basis, &ee, &hh, &eh).map_err(|e| e.in_stage("manybody"))?;
    let dipoles = dipole_table(&raw);
    let (spectrum, map) =
        identify_states(&raw, &dipoles, &cfg.identify_options()).map_err(|e| e.in_stage("manybody"))?;
    Ok(Solved { spectrum, map, dipoles })
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleCheck {
    pub kind: CoulombKind,
    pub indices: [usize; 4],
    pub fast: f64,
    pub oracle: f64,
    pub oracle_error: f64,
    pub relative_difference: f64,
}

fn oracle_checks(
    cfg: &RunConfig,
    basis: &SingleParticleBasis,
    tensors: &[CoulombTensor; 3],
) -> Result<Vec<OracleCheck>> {
    let n = cfg.oracle.samples_per_kind;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = Vec::new();
    for (kind, t) in KINDS.iter().zip(tensors) {
        let mut found = 0;
        for _ in 0..1000 {
            if found == n {
                break;
            }
            let idx = [
                rng.random_range(0..t.n1),
                rng.random_range(0..t.n2),
                rng.random_range(0..t.n1),
                rng.random_range(0..t.n2),
            ];
            if t.get(idx[0], idx[1], idx[2], idx[3]) != 0.0 {
                picks.push((*kind, idx));
                found += 1;
            }
        }
    }
    let material = cfg.material();
    let options = cfg.coulomb_options();
    let checks: Vec<OracleCheck> = picks
        .par_iter()
        .map(|&(kind, idx)| -> Result<OracleCheck> {
            let fast = coulomb_element(kind, idx, basis, &material, &options)?;
            let o = brute_force_element(kind, idx, basis, &material, &BruteForceOptions::default())?;
            Ok(OracleCheck {
                kind,
                indices: idx,
                fast,
                oracle: o.value,
                oracle_error: o.error_estimate,
                relative_difference: (fast - o.value).abs() / o.value.abs().max(1e-300),
            })
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("coulomb"))?;
    if let Some(bad) = checks
        .iter()
        .find(|c| c.relative_difference > cfg.oracle.relative_tolerance)
    {
        return Err(Error::Consistency(format!(
            "{} element {:?}: fast {:.9e} vs oracle {:.9e}",
            bad.kind.name(),
            bad.indices,
            bad.fast,
            bad.oracle
        ))
        .in_stage("coulomb"));
    }
    Ok(checks)
}

#[derive(Clone, Debug)]
pub struct SolveSummary {
    pub basis_fingerprint: String,
    pub map: QubitMap,
    pub n_excitons: usize,
    pub n_biexcitons: usize,
    pub cache: Vec<(CoulombKind, CacheStatus)>,
    pub oracle: Vec<OracleCheck>,
}

/// Builds basis, tensors and the labeled spectrum; writes
/// `solve/basis.json` and `solve/spectrum.json`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<SolveSummary> {
    let basis = cfg.basis()?;
    let material = cfg.material();
    let options = cfg.coulomb_options();
    let cache_dir = cfg.cache_dir();
    let mut cache = Vec::new();
    let mut tensors = Vec::new();
    for kind in KINDS {
        let (t, status) = build_coulomb_tensor(kind, &basis, &material, &options, Some(&cache_dir))
            .map_err(|e| e.in_stage("coulomb"))?;
        log::info!("{} tensor: {:?}", kind.name(), status);
        cache.push((kind, status));
        tensors.push(t);
    }
    let tensors: [CoulombTensor; 3] = tensors.try_into().expect("three kinds");
    let oracle = oracle_checks(cfg, &basis, &tensors)?;
    let solved = solve_from_tensors(cfg, &basis, tensors)?;

    let out = &cfg.output_dir;
    write_json(&out.join("solve/basis.json"), &basis.to_json())?;
    let mut doc = solved.spectrum.to_json(5);
    doc["qubit_map"] = serde_json::to_value(solved.map)?;
    doc["oscillator_strengths"] =
        serde_json::to_value(solved.dipoles.exciton_vac.iter().map(|m| m * m).collect::<Vec<f64>>())?;
    write_json(&out.join(SPECTRUM_FILE), &doc)?;
    if !oracle.is_empty() {
        write_json(&out.join("solve/oracle.json"), &oracle)?;
    }
    Ok(SolveSummary {
        basis_fingerprint: basis.fingerprint(),
        map: solved.map,
        n_excitons: solved.spectrum.excitons.len(),
        n_biexcitons: solved.spectrum.biexcitons.len(),
        cache,
        oracle,
    })
}

/// Rebuilds the solve result from the declared solve artifacts: the spectrum
/// document and the cached tensors. The rebuilt qubit assignment must equal
/// the stored one exactly.
pub fn load_solved(cfg: &RunConfig) -> Result<Solved> {
    let path = cfg.output_dir.join(SPECTRUM_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact { path, stage: "solve" });
    }
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let stored_fp = doc["basis_fingerprint"].as_str().unwrap_or_default().to_string();
    let stored_map: QubitMap = serde_json::from_value(doc["qubit_map"].clone())
        .map_err(|e| Error::Consistency(format!("{}: {e}", path.display())))?;
    let basis = cfg.basis()?;
    if basis.fingerprint() != stored_fp {
        return Err(Error::Consistency(format!(
            "{} was produced with a different basis; rerun `solve`",
            path.display()
        )));
    }
    let material = cfg.material();
    let options = cfg.coulomb_options();
    let cache_dir = cfg.cache_dir();
    let tensors = KINDS
        .iter()
        .map(|&k| load_cached_tensor(k, &basis, &material, &options, &cache_dir))
        .collect::<Result<Vec<_>>>()?;
    let solved = solve_from_tensors(cfg, &basis, tensors.try_into().expect("three kinds"))?;
    if solved.map != stored_map {
        return Err(Error::Consistency(format!(
            "rebuilt qubit assignment differs from {}; rerun `solve`",
            path.display()
        )));
    }
    Ok(solved)
}

#[derive(Clone, Debug)]
pub struct SpectraSummary {
    pub spectra: Vec<Spectrum>,
    pub table: ConditionalTable,
}

/// Writes the four conditioned spectra, the plot script and the
/// conditional transition table under `spectra/`.
pub fn cmd_spectra(cfg: &RunConfig) -> Result<SpectraSummary> {
    let solved = load_solved(cfg)?;
    let options = cfg.spectrum_options();
    let spectra = QubitState::ALL
        .iter()
        .map(|&q| absorption_spectrum(q, &solved.spectrum, &solved.map, &solved.dipoles, &options))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("optics"))?;
    let dir = cfg.output_dir.join("spectra");
    let table = conditional_transition_table(&solved.spectrum, &solved.map, &solved.dipoles, &cfg.table_options());
    write_spectra(&dir, &spectra, table.as_ref().ok())?;
    let table = table.map_err(|e| e.in_stage("optics"))?;
    fs::write(dir.join("conditional_table.txt"), table.to_text())?;
    write_json(&dir.join("conditional_table.json"), &table)?;
    table.check().map_err(|e| e.in_stage("optics"))?;
    Ok(SpectraSummary { spectra, table })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScenarioStatus {
    Ok,
    Incommensurable { message: String },
    Failed { message: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioOutcome {
    pub name: String,
    #[serde(flatten)]
    pub status: ScenarioStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<GateReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GateSummary {
    pub scenarios: Vec<ScenarioOutcome>,
    pub budget: GateBudget,
    pub budget_text: String,
}

impl GateSummary {
    pub fn incommensurable(&self) -> usize {
        self.scenarios
            .iter()
            .filter(|s| matches!(s.status, ScenarioStatus::Incommensurable { .. }))
            .count()
    }

    pub fn failed(&self) -> usize {
        self.scenarios
            .iter()
            .filter(|s| matches!(s.status, ScenarioStatus::Failed { .. }))
            .count()
    }
}

/// Calibrated, scheduled and simulated sequence. A zero `amplitude_scale`
/// skips calibration and compares against the identity.
fn run_sequence(
    name: &str,
    model: &DynamicsModel,
    map: &QubitMap,
    lines: &[CnotLine],
    amplitude_scale: f64,
    options: &GateOptions,
) -> Result<crate::gatesim::GateSimulation> {
    let (amplitudes, perm) = if amplitude_scale == 0.0 {
        (vec![0.0; lines.len()], [0, 1, 2, 3])
    } else {
        if !(map.delta > 0.0) {
            return Err(Error::Consistency(format!(
                "conditional pulses need a positive biexciton shift, got {:.3e} meV",
                map.delta
            )));
        }
        let mut calibrated: Vec<(CnotLine, f64)> = Vec::new();
        let mut amps = Vec::new();
        for &line in lines {
            let a = match calibrated.iter().find(|(l, _)| *l == line) {
                Some(&(_, a)) => a,
                None => {
                    let a = calibrate_amplitude(model, map, line, options)?;
                    calibrated.push((line, a));
                    a
                }
            };
            amps.push(a * amplitude_scale);
        }
        (amps, sequence_permutation(lines))
    };
    let seq = schedule(map, lines, &amplitudes, options);
    simulate_gate(name, model, &seq, &perm, options)
}

fn input_stem(q: QubitState) -> String {
    let (a, b) = q.bits();
    format!("{a}{b}")
}

/// Runs every configured scenario (independently, in parallel) and writes
/// `gate/<name>/report.json`, one trajectory CSV per requested input,
/// `gate/summary.json` and `gate/budget.txt`. Scenario failures are recorded
/// and do not stop the others.
pub fn cmd_gate(cfg: &RunConfig) -> Result<GateSummary> {
    let solved = load_solved(cfg)?;
    let model = DynamicsModel::new(&solved.spectrum, &solved.map, &solved.dipoles);
    let dir = cfg.output_dir.join("gate");
    let outcomes: Vec<Result<ScenarioOutcome>> = cfg
        .scenarios
        .par_iter()
        .map(|sc| {
            let options = cfg.gate_options(sc.width_ps, sc.shape);
            let sim = match run_sequence(
                &sc.name,
                &model,
                &solved.map,
                &sc.sequence,
                sc.amplitude_scale,
                &options,
            ) {
                Ok(sim) => sim,
                Err(e) => {
                    log::error!("scenario {}: {e}", sc.name);
                    return Ok(ScenarioOutcome {
                        name: sc.name.clone(),
                        status: ScenarioStatus::Failed {
                            message: e.in_stage("gatesim").to_string(),
                        },
                        report: None,
                    });
                }
            };
            let sdir = dir.join(&sc.name);
            fs::create_dir_all(&sdir)?;
            write_json(&sdir.join("report.json"), &sim.report)?;
            for run in sim.runs.iter().filter(|r| sc.inputs.contains(&r.input)) {
                fs::write(
                    sdir.join(format!("trajectory_{}.csv", input_stem(run.input))),
                    run.trajectory.to_csv(&model, true),
                )?;
            }
            let r = &sim.report.readout;
            let status = if r.commensurable {
                ScenarioStatus::Ok
            } else {
                ScenarioStatus::Incommensurable {
                    message: format!(
                        "best delay {:.6} ps leaves a phase mismatch of {:.4} rad",
                        r.delay, r.phase_deviation
                    ),
                }
            };
            Ok(ScenarioOutcome {
                name: sc.name.clone(),
                status,
                report: Some(sim.report),
            })
        })
        .collect();
    let scenarios = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let budget = GateBudget::new(cfg.gate.budget_pulse_ps, cfg.gate.dephasing_time_ps)?;
    let summary = GateSummary {
        scenarios,
        budget,
        budget_text: budget.text(),
    };
    let brief: Vec<serde_json::Value> = summary
        .scenarios
        .iter()
        .map(|s| {
            let mut v = serde_json::to_value(&s.status).expect("status serializes");
            v["name"] = s.name.clone().into();
            if let Some(r) = &s.report {
                v["fidelity"] = r.fidelity.into();
                v["max_leakage"] = r.max_leakage.into();
                v["readout_delay_ps"] = r.readout.delay.into();
                v["final_populations"] = serde_json::to_value(&r.final_populations).expect("finite floats");
            }
            v
        })
        .collect();
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({"scenarios": brief, "budget": summary.budget}),
    )?;
    fs::write(dir.join("budget.txt"), format!("{}\n", summary.budget_text))?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau_ps: f64,
    pub fidelity: Option<f64>,
    pub max_leakage: Option<f64>,
    pub off_resonant_change: Option<f64>,
    pub off_resonant_transient: Option<f64>,
    pub commensurable: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepRow {
    fn from_report(tau: f64, r: &GateReport) -> Self {
        SweepRow {
            tau_ps: tau,
            fidelity: Some(r.fidelity),
            max_leakage: Some(r.max_leakage),
            off_resonant_change: Some(r.max_off_resonant_change()),
            off_resonant_transient: Some(r.max_off_resonant_transient()),
            commensurable: Some(r.readout.commensurable),
            error: None,
        }
    }
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
    let mut s = format!(
        "{:>8} {:>11} {:>11} {:>11} {:>11} {:>6}\n",
        "tau_ps", "leakage", "offres_net", "offres_max", "fidelity", "commens"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>8.3} {:>11} {:>11} {:>11} {:>11} {:>6}",
            r.tau_ps,
            opt(r.max_leakage),
            opt(r.off_resonant_change),
            opt(r.off_resonant_transient),
            opt(r.fidelity),
            r.commensurable.map_or("-", |c| if c { "yes" } else { "no" })
        ));
        if let Some(e) = &r.error {
            s.push_str(&format!("  error: {e}"));
        }
        s.push('\n');
    }
    s
}

/// Leakage and off-resonant disturbance of the sweep sequence for each pulse
/// width; writes `sweep/leakage.csv`, `sweep/leakage.json` and
/// `sweep/leakage.txt`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let solved = load_solved(cfg)?;
    let model = DynamicsModel::new(&solved.spectrum, &solved.map, &solved.dipoles);
    let rows: Vec<SweepRow> = cfg
        .sweep
        .tau_ps
        .par_iter()
        .map(|&tau| {
            let options = cfg.gate_options(tau, cfg.sweep.shape);
            match run_sequence("sweep", &model, &solved.map, &cfg.sweep.sequence, 1.0, &options) {
                Ok(sim) => SweepRow::from_report(tau, &sim.report),
                Err(e) => SweepRow {
                    tau_ps: tau,
                    fidelity: None,
                    max_leakage: None,
                    off_resonant_change: None,
                    off_resonant_transient: None,
                    commensurable: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let dir = cfg.output_dir.join("sweep");
    fs::create_dir_all(&dir)?;
    let mut csv =
        String::from("tau_ps,max_leakage,off_resonant_change,off_resonant_transient,fidelity,commensurable\n");
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.10e}"));
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.tau_ps,
            f(r.max_leakage),
            f(r.off_resonant_change),
            f(r.off_resonant_transient),
            f(r.fidelity),
            r.commensurable.map_or(String::new(), |c| c.to_string())
        ));
    }
    fs::write(dir.join("leakage.csv"), csv)?;
    write_json(&dir.join("leakage.json"), &rows)?;
    fs::write(dir.join("leakage.txt"), sweep_table(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_toml_str("schema = \"qdgate.run/1\"\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_schema_are_rejected() {
        let bad_key = "schema = \"qdgate.run/1\"\n[material]\nelectron_mass = 0.067\n";
        assert!(matches!(RunConfig::from_toml_str(bad_key), Err(Error::Config(_))));
        let bad_top = "schema = \"qdgate.run/1\"\nfoo = 1\n";
        assert!(matches!(RunConfig::from_toml_str(bad_top), Err(Error::Config(_))));
        let bad_schema = "schema = \"qdgate.run/0\"\n";
        assert!(matches!(RunConfig::from_toml_str(bad_schema), Err(Error::Config(_))));
        let missing = "[basis]\nelectron_states = 6\n";
        assert!(matches!(RunConfig::from_toml_str(missing), Err(Error::Config(_))));
    }

    #[test]
    fn physical_domain_errors_become_config_errors() {
        let text = "schema = \"qdgate.run/1\"\n[geometry]\nwell_width_nm = -1.0\n";
        assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))));
        let text = "schema = \"qdgate.run/1\"\n[[scenario]]\nname = \"a b\"\nsequence = [\"x0\"]\n";
        assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))));
    }

    #[test]
    fn scenario_parsing() {
        let text = r#"
schema = "qdgate.run/1"
[[scenario]]
name = "cnot"
sequence = ["x0_minus_delta"]
width_ps = 0.25
inputs = ["01", "11"]
[[scenario]]
name = "idle"
sequence = ["x0", "x1"]
amplitude_scale = 0.0
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.scenarios.len(), 2);
        assert_eq!(cfg.scenarios[0].sequence, vec![CnotLine::X0MinusDelta]);
        assert_eq!(cfg.scenarios[0].inputs, vec![QubitState::Q01, QubitState::Q11]);
        assert_eq!(cfg.scenarios[1].inputs.len(), 4);
        assert_eq!(cfg.scenarios[1].width_ps, 0.5);
    }

    #[test]
    fn later_stages_require_solve_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            output_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        for r in [cmd_spectra(&cfg).err(), cmd_gate(&cfg).err(), cmd_sweep(&cfg).err()] {
            assert!(
                matches!(r, Some(Error::MissingArtifact { stage: "solve", .. })),
                "{r:?}"
            );
        }
    }
}
