#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use qdgate_core::confinement::{build_sp_basis, DotGeometry, MaterialParams, SingleParticleBasis};
use qdgate_core::coulomb::{build_coulomb_tensor, CoulombKind, CoulombOptions, CoulombTensor};
use qdgate_core::gatesim::DynamicsModel;
use qdgate_core::manybody::{identify_states, solve_spectrum, IdentifyOptions, ManyBodySpectrum, QubitMap};
use qdgate_core::optics::{dipole_table, DipoleTable};

pub struct System {
    pub basis: SingleParticleBasis,
    pub ee: CoulombTensor,
    pub hh: CoulombTensor,
    pub eh: CoulombTensor,
    pub spectrum: ManyBodySpectrum,
    pub map: QubitMap,
    pub dipoles: DipoleTable,
    pub model: DynamicsModel,
}

pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("qdgate-cache")
}

pub fn tensors(basis: &SingleParticleBasis, material: &MaterialParams) -> [CoulombTensor; 3] {
    [CoulombKind::Ee, CoulombKind::Hh, CoulombKind::Eh].map(|k| {
        build_coulomb_tensor(k, basis, material, &CoulombOptions::default(), Some(&cache_dir()))
            .unwrap()
            .0
    })
}

pub fn build_system(n: usize) -> System {
    let material = MaterialParams::default();
    let basis = build_sp_basis(&material, &DotGeometry::default(), n, n).unwrap();
    let [ee, hh, eh] = tensors(&basis, &material);
    let raw = solve_spectrum(&basis, &ee, &hh, &eh).unwrap();
    let dipoles = dipole_table(&raw);
    let (spectrum, map) = identify_states(&raw, &dipoles, &IdentifyOptions::default()).unwrap();
    let model = DynamicsModel::new(&spectrum, &map, &dipoles);
    System {
        basis,
        ee,
        hh,
        eh,
        spectrum,
        map,
        dipoles,
        model,
    }
}

/// Default dot with ten states per species, built once per test binary.
pub fn default_system() -> &'static System {
    static SYSTEM: OnceLock<System> = OnceLock::new();
    SYSTEM.get_or_init(|| build_system(10))
}
