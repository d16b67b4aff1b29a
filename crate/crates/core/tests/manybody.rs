mod common;

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use qdgate_core::confinement::Species;
use qdgate_core::coulomb::CoulombTensor;
use qdgate_core::manybody::{
    build_biexciton_hamiltonian, build_exciton_hamiltonian, diagonalize_sectored, identify_states, solve_spectrum,
    IdentifyOptions, PairSpace, QubitState,
};
use qdgate_core::optics::dipole_table;

/// Second-quantized Hamiltonian acting on occupation bitmasks: electron
/// modes 0..n_e, hole modes n_e..n_e+n_h, canonical order ascending.
struct Fock<'a> {
    eps_e: Vec<f64>,
    eps_h: Vec<f64>,
    ee: &'a CoulombTensor,
    hh: &'a CoulombTensor,
    eh: &'a CoulombTensor,
}

fn annihilate(k: usize, s: u64) -> Option<(f64, u64)> {
    if s & (1 << k) == 0 {
        return None;
    }
    let sign = if (s & ((1u64 << k) - 1)).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    Some((sign, s & !(1 << k)))
}

fn create(k: usize, s: u64) -> Option<(f64, u64)> {
    if s & (1 << k) != 0 {
        return None;
    }
    let sign = if (s & ((1u64 << k) - 1)).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    Some((sign, s | (1 << k)))
}

/// a†_p a†_q a_r a_s |state⟩
fn two_body(p: usize, q: usize, r: usize, s: usize, state: u64) -> Option<(f64, u64)> {
    let (s1, x) = annihilate(s, state)?;
    let (s2, x) = annihilate(r, x)?;
    let (s3, x) = create(q, x)?;
    let (s4, x) = create(p, x)?;
    Some((s1 * s2 * s3 * s4, x))
}

impl Fock<'_> {
    fn apply(&self, state: u64) -> HashMap<u64, f64> {
        let (ne, nh) = (self.eps_e.len(), self.eps_h.len());
        let mut out: HashMap<u64, f64> = HashMap::new();
        let diag: f64 = (0..ne)
            .filter(|&i| state & (1 << i) != 0)
            .map(|i| self.eps_e[i])
            .sum::<f64>()
            + (0..nh)
                .filter(|&i| state & (1 << (ne + i)) != 0)
                .map(|i| self.eps_h[i])
                .sum::<f64>();
        *out.entry(state).or_default() += diag;
        let mut add = |v: f64, t: Option<(f64, u64)>| {
            if let Some((sign, s)) = t {
                *out.entry(s).or_default() += sign * v;
            }
        };
        for a in 0..ne {
            for b in 0..ne {
                for c in 0..ne {
                    for d in 0..ne {
                        add(0.5 * self.ee.get(a, b, c, d), two_body(a, b, d, c, state));
                    }
                }
            }
        }
        for a in 0..nh {
            for b in 0..nh {
                for c in 0..nh {
                    for d in 0..nh {
                        add(
                            0.5 * self.hh.get(a, b, c, d),
                            two_body(ne + a, ne + b, ne + d, ne + c, state),
                        );
                    }
                }
            }
        }
        for a in 0..ne {
            for b in 0..nh {
                for c in 0..ne {
                    for d in 0..nh {
                        add(-self.eh.get(a, b, c, d), two_body(a, ne + b, ne + d, c, state));
                    }
                }
            }
        }
        out
    }
}

fn fock(sys: &common::System) -> Fock<'_> {
    Fock {
        eps_e: sys.basis.states(Species::Electron).iter().map(|s| s.energy).collect(),
        eps_h: sys.basis.states(Species::Hole).iter().map(|s| s.energy).collect(),
        ee: &sys.ee,
        hh: &sys.hh,
        eh: &sys.eh,
    }
}

#[test]
fn exciton_hamiltonian_matches_second_quantized_operator() {
    let sys = common::build_system(6);
    let f = fock(&sys);
    let (ne, nh) = (6, 6);
    let h = build_exciton_hamiltonian(&sys.basis, &sys.eh).unwrap().matrix;
    let mask = |i: usize| (1u64 << (i / nh)) | (1u64 << (ne + i % nh));
    for col in 0..ne * nh {
        let image = f.apply(mask(col));
        for row in 0..ne * nh {
            let expect = image.get(&mask(row)).copied().unwrap_or(0.0);
            assert!(
                (h[(row, col)] - expect).abs() < 1e-10,
                "({row},{col}): {} vs {expect}",
                h[(row, col)]
            );
        }
    }
}

#[test]
fn biexciton_hamiltonian_matches_second_quantized_operator() {
    let sys = common::build_system(6);
    let f = fock(&sys);
    let pairs = PairSpace::new(6, 6);
    let mask = |i: usize| {
        let ((p, q), (h, k)) = pairs.split(i);
        (1u64 << p) | (1u64 << q) | (1u64 << (6 + h)) | (1u64 << (6 + k))
    };
    let h = build_biexciton_hamiltonian(&sys.basis, &sys.ee, &sys.hh, &sys.eh)
        .unwrap()
        .matrix;
    let mut worst: f64 = 0.0;
    for col in 0..pairs.dim() {
        let image = f.apply(mask(col));
        // The operator conserves particle numbers: nothing leaves the space.
        assert!(image.keys().all(|s| s.count_ones() == 4));
        for row in 0..pairs.dim() {
            let expect = image.get(&mask(row)).copied().unwrap_or(0.0);
            worst = worst.max((h[(row, col)] - expect).abs());
        }
    }
    assert!(worst < 1e-10, "largest deviation {worst:.3e}");
}

#[test]
fn zero_interaction_gives_exactly_zero_shift() {
    let sys = common::build_system(10);
    let (ee, hh, eh) = (sys.ee.zeroed(), sys.hh.zeroed(), sys.eh.zeroed());
    let raw = solve_spectrum(&sys.basis, &ee, &hh, &eh).unwrap();
    let d = dipole_table(&raw);
    let (_, map) = identify_states(&raw, &d, &IdentifyOptions::default()).unwrap();
    assert_eq!(map.delta, 0.0);
    assert_eq!(map.e_x0x1, map.e_x0 + map.e_x1);
}

#[test]
fn ground_energies_decrease_with_basis_size() {
    let small = common::build_system(6);
    let large = common::default_system();
    assert!(large.spectrum.excitons[0].energy <= small.spectrum.excitons[0].energy + 1e-9);
    assert!(large.spectrum.biexcitons[0].energy <= small.spectrum.biexcitons[0].energy + 1e-9);
    assert!(large.map.e_x0 <= small.map.e_x0 + 1e-9);
}

#[test]
fn block_diagonalization_matches_dense_solver() {
    let sys = common::build_system(6);
    let h = build_biexciton_hamiltonian(&sys.basis, &sys.ee, &sys.hh, &sys.eh).unwrap();
    let blocks = diagonalize_sectored(&h).unwrap();
    let mut dense: Vec<f64> = SymmetricEigen::new(h.matrix.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    dense.sort_by(f64::total_cmp);
    let mut got: Vec<f64> = blocks.iter().map(|p| p.energy).collect();
    got.sort_by(f64::total_cmp);
    assert_eq!(got.len(), dense.len());
    for (a, b) in got.iter().zip(&dense) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn default_biexciton_eigenpairs_have_small_residuals() {
    let sys = common::default_system();
    let h = build_biexciton_hamiltonian(&sys.basis, &sys.ee, &sys.hh, &sys.eh)
        .unwrap()
        .matrix;
    let n = h.nrows();
    let v = DMatrix::from_fn(n, n, |i, j| sys.spectrum.biexcitons[j].amplitudes[i]);
    let hv = &h * &v;
    let scale = sys
        .spectrum
        .biexcitons
        .iter()
        .map(|b| b.energy.abs())
        .fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for (j, b) in sys.spectrum.biexcitons.iter().enumerate() {
        let r = (0..n)
            .map(|i| (hv[(i, j)] - b.energy * v[(i, j)]).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(r);
    }
    assert!(worst <= 1e-10 * scale, "residual {worst:.3e} vs ‖H‖ {scale}");
    let gram = v.transpose() * &v;
    let defect = (gram - DMatrix::identity(n, n)).abs().max();
    assert!(defect < 1e-10, "orthonormality defect {defect:.3e}");
}

#[test]
fn qubit_encoding_table() {
    let rows = [
        (QubitState::Q00, (0, 0), "vac"),
        (QubitState::Q10, (1, 0), "X0"),
        (QubitState::Q01, (0, 1), "X1"),
        (QubitState::Q11, (1, 1), "X0+X1"),
    ];
    for (q, bits, name) in rows {
        assert_eq!(q.bits(), bits);
        assert_eq!(q.excitonic_name(), name);
        assert_eq!(QubitState::from_bits(bits.0, bits.1), q);
        assert_eq!(QubitState::from_excitonic_name(name), Some(q));
    }
    let map = common::default_system().map;
    assert_eq!(map.energy(QubitState::Q00), 0.0);
    assert_eq!(map.energy(QubitState::Q11), map.e_x0x1);
    assert!((map.e_x0 + map.e_x1 - map.e_x0x1 - map.delta).abs() < 1e-12);
}

#[test]
fn default_dot_has_a_redshifted_biexciton() {
    let sys = common::default_system();
    let delta = sys.map.delta;
    assert!(delta > 0.0);
    // Within a factor of three of 8 meV.
    assert!(delta > 8.0 / 3.0 && delta < 24.0, "Δ = {delta}");
    let dark = sys
        .spectrum
        .excitons
        .iter()
        .position(|x| x.label == Some(qdgate_core::manybody::ExcitonLabel::Dark));
    let dark = dark.expect("dark partner labeled");
    let s_x1 = sys.dipoles.oscillator_strength(sys.map.x1);
    assert!(sys.dipoles.oscillator_strength(dark) < 1e-3 * s_x1);
}
