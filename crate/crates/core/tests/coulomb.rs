mod common;

use qdgate_core::confinement::{build_sp_basis, oscillator_length, DotGeometry, MaterialParams, Species};
use qdgate_core::coulomb::{
    brute_force_element, coulomb_element, orbit_representatives, BruteForceOptions, CoulombKind, CoulombOptions,
    FormFactorMode,
};
use qdgate_core::units::COULOMB_CONSTANT;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn strict() -> CoulombOptions {
    CoulombOptions {
        form_factor: FormFactorMode::Strict2d,
        ..CoulombOptions::default()
    }
}

#[test]
fn strict_2d_ground_state_elements_have_closed_forms() {
    let material = MaterialParams::default();
    let geometry = DotGeometry::default();
    let basis = build_sp_basis(&material, &geometry, 6, 6).unwrap();
    let c = COULOMB_CONSTANT / material.dielectric_constant;
    let le = oscillator_length(material.electron_mass, geometry.hbar_omega_e);
    let lh = oscillator_length(material.hole_mass, geometry.hbar_omega_h);

    let ee = coulomb_element(CoulombKind::Ee, [0, 0, 0, 0], &basis, &material, &strict()).unwrap();
    let expect = c * (PI / 2.0).sqrt() / le;
    assert!((ee - expect).abs() < 1e-9 * expect, "{ee} vs {expect}");

    let hh = coulomb_element(CoulombKind::Hh, [0, 0, 0, 0], &basis, &material, &strict()).unwrap();
    let expect = c * (PI / 2.0).sqrt() / lh;
    assert!((hh - expect).abs() < 1e-9 * expect, "{hh} vs {expect}");

    // Relative coordinate of two Gaussians is Gaussian with l² = l_e² + l_h².
    let eh = coulomb_element(CoulombKind::Eh, [0, 0, 0, 0], &basis, &material, &strict()).unwrap();
    let expect = c * PI.sqrt() / (le * le + lh * lh).sqrt();
    assert!((eh - expect).abs() < 1e-9 * expect, "{eh} vs {expect}");
}

#[test]
fn finite_width_lowers_the_interaction() {
    let material = MaterialParams::default();
    let basis = build_sp_basis(&material, &DotGeometry::default(), 3, 3).unwrap();
    for kind in [CoulombKind::Ee, CoulombKind::Hh, CoulombKind::Eh] {
        let q2d = coulomb_element(kind, [0, 0, 0, 0], &basis, &material, &CoulombOptions::default()).unwrap();
        let s2d = coulomb_element(kind, [0, 0, 0, 0], &basis, &material, &strict()).unwrap();
        assert!(q2d > 0.0 && q2d < s2d, "{kind:?}: {q2d} vs {s2d}");
    }
}

#[test]
fn fast_path_matches_real_space_oracle_on_seeded_tuples() {
    let material = MaterialParams::default();
    let basis = build_sp_basis(&material, &DotGeometry::default(), 10, 10).unwrap();
    let options = CoulombOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    for kind in [CoulombKind::Ee, CoulombKind::Hh, CoulombKind::Eh] {
        let mut checked = 0;
        while checked < 5 {
            let idx = [0; 4].map(|_| rng.random_range(0..10));
            let fast = coulomb_element(kind, idx, &basis, &material, &options).unwrap();
            if fast == 0.0 {
                continue;
            }
            let oracle = brute_force_element(kind, idx, &basis, &material, &BruteForceOptions::default()).unwrap();
            let rel = (fast - oracle.value).abs() / oracle.value.abs();
            assert!(
                rel < 1e-3,
                "{kind:?} {idx:?}: fast {fast} oracle {} (rel {rel:.2e})",
                oracle.value
            );
            checked += 1;
        }
    }
}

#[test]
fn elements_scale_inversely_with_permittivity() {
    let material = MaterialParams::default();
    let doubled = MaterialParams {
        dielectric_constant: 2.0 * material.dielectric_constant,
        ..material
    };
    let basis = build_sp_basis(&material, &DotGeometry::default(), 6, 6).unwrap();
    for (kind, idx) in [
        (CoulombKind::Ee, [0, 1, 1, 0]),
        (CoulombKind::Hh, [2, 0, 2, 0]),
        (CoulombKind::Eh, [0, 3, 0, 3]),
    ] {
        let a = coulomb_element(kind, idx, &basis, &material, &CoulombOptions::default()).unwrap();
        let b = coulomb_element(kind, idx, &basis, &doubled, &CoulombOptions::default()).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-12 * a.abs(), "{kind:?}: {a} vs 2·{b}");
    }
}

/// Orbits of the index tuples under the generators of the symmetry group,
/// by union-find over all N⁴ tuples.
fn orbit_count(n: usize, same_species: bool) -> usize {
    let id = |t: [usize; 4]| ((t[0] * n + t[1]) * n + t[2]) * n + t[3];
    let mut parent: Vec<usize> = (0..n.pow(4)).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let t = [a, b, c, d];
                    let mut gens = vec![[c, b, a, d], [a, d, c, b]];
                    if same_species {
                        gens.push([b, a, d, c]);
                    }
                    for g in gens {
                        let (x, y) = (find(&mut parent, id(t)), find(&mut parent, id(g)));
                        parent[x] = y;
                    }
                }
            }
        }
    }
    (0..n.pow(4)).filter(|&i| find(&mut parent, i) == i).count()
}

#[test]
fn orbit_representatives_cover_each_orbit_once() {
    for kind in [CoulombKind::Ee, CoulombKind::Hh, CoulombKind::Eh] {
        let reps = orbit_representatives(kind, 3, 3);
        assert_eq!(reps.len(), orbit_count(3, kind.same_species()), "{kind:?}");
    }
}

#[test]
fn electron_hole_ground_state_element_is_largest() {
    let sys = common::default_system();
    let eh = &sys.eh;
    let ss = eh.get(0, 0, 0, 0);
    let largest = eh.elements.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert_eq!(ss, largest);
    assert_eq!(sys.basis.states(Species::Electron)[0].shell(), 0);
}
