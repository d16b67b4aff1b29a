//! Exciton (one electron, one hole) and biexciton (two electrons, two holes,
//! parallel spins) Hamiltonians, their diagonalization and the qubit
//! assignment.
//!
//! Spin is frozen, so antisymmetry acts on orbital indices only. Biexcitons
//! are expanded over ordered pairs p < p′ and h < h′; a pair-basis vector
//! corresponds to the normalized antisymmetric four-index function
//!
//! A(μ μ′; ν ν′) = ½ (δ_{μp}δ_{μ′p′} − δ_{μp′}δ_{μ′p}) (δ_{νh}δ_{ν′h′} − δ_{νh′}δ_{ν′h}),
//!
//! i.e. to the determinant c†_p c†_p′ d†_h d†_h′ |vac⟩.
//!
//! Both Hamiltonians commute with the x and y reflections of all particles,
//! and the Coulomb tensors carry the parity selection rules exactly, so the
//! matrices split into four parity sectors that are diagonalized separately.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::confinement::SingleParticleBasis;
use crate::coulomb::{CoulombKind, CoulombTensor};
use crate::error::{Error, Result};
use crate::optics::DipoleTable;

/// Reflection-parity sector: bit 0 is the x parity, bit 1 the y parity.
pub type Sector = u8;

fn sector_of(parities: &[(u8, u8)]) -> Sector {
    let (px, py) = parities.iter().fold((0u8, 0u8), |(ax, ay), &(x, y)| (ax ^ x, ay ^ y));
    px | (py << 1)
}

/// The sector every optically created pair lives in.
pub const BRIGHT_SECTOR: Sector = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExcitonLabel {
    X0,
    X1,
    Dark,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiexcitonLabel {
    X0X1,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitonState {
    pub energy: f64,
    /// Ψ(μ_e, ν_h) stored at μ·N_h + ν.
    pub amplitudes: Vec<f64>,
    pub sector: Sector,
    pub label: Option<ExcitonLabel>,
}

impl ExcitonState {
    pub fn amplitude(&self, n_h: usize, mu: usize, nu: usize) -> f64 {
        self.amplitudes[mu * n_h + nu]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiexcitonState {
    pub energy: f64,
    /// Coefficients over [`PairSpace`].
    pub amplitudes: Vec<f64>,
    pub sector: Sector,
    pub label: Option<BiexcitonLabel>,
}

/// Ordered-pair basis for two electrons and two holes.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSpace {
    pub n_e: usize,
    pub n_h: usize,
    pub electron_pairs: Vec<(usize, usize)>,
    pub hole_pairs: Vec<(usize, usize)>,
    electron_lookup: Vec<Option<usize>>,
    hole_lookup: Vec<Option<usize>>,
}

fn ordered_pairs(n: usize) -> (Vec<(usize, usize)>, Vec<Option<usize>>) {
    let mut pairs = Vec::new();
    let mut lookup = vec![None; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            lookup[i * n + j] = Some(pairs.len());
            pairs.push((i, j));
        }
    }
    (pairs, lookup)
}

impl PairSpace {
    pub fn new(n_e: usize, n_h: usize) -> Self {
        let (electron_pairs, electron_lookup) = ordered_pairs(n_e);
        let (hole_pairs, hole_lookup) = ordered_pairs(n_h);
        PairSpace {
            n_e,
            n_h,
            electron_pairs,
            hole_pairs,
            electron_lookup,
            hole_lookup,
        }
    }

    pub fn dim(&self) -> usize {
        self.electron_pairs.len() * self.hole_pairs.len()
    }

    pub fn index(&self, ep: usize, hp: usize) -> usize {
        ep * self.hole_pairs.len() + hp
    }

    /// (electron pair, hole pair) of a pair-basis index.
    pub fn split(&self, idx: usize) -> ((usize, usize), (usize, usize)) {
        let nh = self.hole_pairs.len();
        (self.electron_pairs[idx / nh], self.hole_pairs[idx % nh])
    }

    /// Position of the ordered pair (i < j) or `None`.
    pub fn electron_pair(&self, i: usize, j: usize) -> Option<usize> {
        self.electron_lookup[i * self.n_e + j]
    }

    pub fn hole_pair(&self, i: usize, j: usize) -> Option<usize> {
        self.hole_lookup[i * self.n_h + j]
    }

    /// Pair-basis index and sign for unordered indices, `None` when a pair
    /// index repeats.
    pub fn signed_index(&self, e1: usize, e2: usize, h1: usize, h2: usize) -> Option<(usize, f64)> {
        if e1 == e2 || h1 == h2 {
            return None;
        }
        let (ea, eb, se) = if e1 < e2 { (e1, e2, 1.0) } else { (e2, e1, -1.0) };
        let (ha, hb, sh) = if h1 < h2 { (h1, h2, 1.0) } else { (h2, h1, -1.0) };
        let ep = self.electron_pair(ea, eb)?;
        let hp = self.hole_pair(ha, hb)?;
        Some((self.index(ep, hp), se * sh))
    }

    /// Expands pair coefficients into the unrestricted antisymmetric
    /// four-index array Ψ(μ, μ′, ν, ν′) at ((μ·N_e + μ′)·N_h + ν)·N_h + ν′.
    pub fn expand(&self, coefficients: &[f64]) -> Vec<f64> {
        let (ne, nh) = (self.n_e, self.n_h);
        let mut out = vec![0.0; ne * ne * nh * nh];
        for (idx, &c) in coefficients.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let ((p, q), (h, k)) = self.split(idx);
            let v = 0.5 * c;
            for (e1, e2, se) in [(p, q, 1.0), (q, p, -1.0)] {
                for (h1, h2, sh) in [(h, k, 1.0), (k, h, -1.0)] {
                    out[((e1 * ne + e2) * nh + h1) * nh + h2] = se * sh * v;
                }
            }
        }
        out
    }

    /// Inverse of [`PairSpace::expand`] for an antisymmetric array.
    pub fn project(&self, four_index: &[f64]) -> Vec<f64> {
        let (ne, nh) = (self.n_e, self.n_h);
        (0..self.dim())
            .map(|idx| {
                let ((p, q), (h, k)) = self.split(idx);
                2.0 * four_index[((p * ne + q) * nh + h) * nh + k]
            })
            .collect()
    }
}

fn check_tensor(t: &CoulombTensor, kind: CoulombKind, basis: &SingleParticleBasis, hash: &str) -> Result<()> {
    if t.kind != kind {
        return Err(Error::Consistency(format!(
            "expected {} tensor, got {}",
            kind.name(),
            t.kind.name()
        )));
    }
    if t.basis_hash != hash {
        return Err(Error::Consistency(format!(
            "{} tensor was built for basis {}, not {}",
            kind.name(),
            &t.basis_hash[..12.min(t.basis_hash.len())],
            &hash[..12]
        )));
    }
    let (s1, s2) = kind.species();
    if t.n1 != basis.states(s1).len() || t.n2 != basis.states(s2).len() {
        return Err(Error::Consistency(format!(
            "{} tensor dimensions do not match basis",
            kind.name()
        )));
    }
    Ok(())
}

/// Real symmetric matrix plus the parity sector of each basis row.
#[derive(Clone, Debug)]
pub struct SectoredMatrix {
    pub matrix: DMatrix<f64>,
    pub sectors: Vec<Sector>,
}

/// Exciton Hamiltonian over the (μ_e, ν_h) product space:
/// H = (ε_μ + ε_ν) δ − V^{eh}(μ, ν; μ̄, ν̄).
pub fn build_exciton_hamiltonian(basis: &SingleParticleBasis, eh: &CoulombTensor) -> Result<SectoredMatrix> {
    let hash = basis.fingerprint();
    check_tensor(eh, CoulombKind::Eh, basis, &hash)?;
    let (ne, nh) = (basis.n_electrons(), basis.n_holes());
    let dim = ne * nh;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for m in 0..ne {
        for n in 0..nh {
            let row = m * nh + n;
            for mb in 0..ne {
                for nb in 0..nh {
                    h[(row, mb * nh + nb)] = -eh.get(m, n, mb, nb);
                }
            }
            h[(row, row)] += basis.electrons[m].energy + basis.holes[n].energy;
        }
    }
    let sectors = (0..dim)
        .map(|i| sector_of(&[basis.electrons[i / nh].parity(), basis.holes[i % nh].parity()]))
        .collect();
    Ok(SectoredMatrix { matrix: h, sectors })
}

struct BiexcitonBuilder<'a> {
    basis: &'a SingleParticleBasis,
    pairs: &'a PairSpace,
    ee: &'a CoulombTensor,
    hh: &'a CoulombTensor,
    eh: &'a CoulombTensor,
}

impl BiexcitonBuilder<'_> {
    fn element(&self, row: usize, col: usize) -> f64 {
        let ((p1, p2), (h1, h2)) = self.pairs.split(row);
        let ((q1, q2), (k1, k2)) = self.pairs.split(col);
        let mut v = 0.0;
        if row == col {
            let e = &self.basis.electrons;
            let h = &self.basis.holes;
            v += (e[p1].energy + h[h1].energy) + (e[p2].energy + h[h2].energy);
        }
        // Electron-electron: direct minus exchange, holes unchanged.
        if h1 == k1 && h2 == k2 {
            v += self.ee.get(p1, p2, q1, q2) - self.ee.get(p1, p2, q2, q1);
        }
        if p1 == q1 && p2 == q2 {
            v += self.hh.get(h1, h2, k1, k2) - self.hh.get(h1, h2, k2, k1);
        }
        // Electron-hole: four attractive pair terms. Electron a of P scatters
        // to b of Q while the spectator electrons must agree; same for holes.
        let pe = [(p1, p2, 0usize), (p2, p1, 1)];
        let qe = [(q1, q2, 0usize), (q2, q1, 1)];
        let ph = [(h1, h2, 0usize), (h2, h1, 1)];
        let qh = [(k1, k2, 0usize), (k2, k1, 1)];
        let mut eh = 0.0;
        for &(a, a_rest, ia) in &pe {
            for &(b, b_rest, ib) in &qe {
                if a_rest != b_rest {
                    continue;
                }
                let se = if ia == ib { 1.0 } else { -1.0 };
                for &(c, c_rest, ic) in &ph {
                    for &(d, d_rest, id) in &qh {
                        if c_rest != d_rest {
                            continue;
                        }
                        let sh = if ic == id { 1.0 } else { -1.0 };
                        eh += se * sh * self.eh.get(a, c, b, d);
                    }
                }
            }
        }
        v - eh
    }
}

fn pair_sectors(basis: &SingleParticleBasis, pairs: &PairSpace) -> Vec<Sector> {
    (0..pairs.dim())
        .map(|i| {
            let ((p, q), (h, k)) = pairs.split(i);
            sector_of(&[
                basis.electrons[p].parity(),
                basis.electrons[q].parity(),
                basis.holes[h].parity(),
                basis.holes[k].parity(),
            ])
        })
        .collect()
}

/// Biexciton Hamiltonian over the antisymmetrized pair space.
pub fn build_biexciton_hamiltonian(
    basis: &SingleParticleBasis,
    ee: &CoulombTensor,
    hh: &CoulombTensor,
    eh: &CoulombTensor,
) -> Result<SectoredMatrix> {
    let hash = basis.fingerprint();
    check_tensor(ee, CoulombKind::Ee, basis, &hash)?;
    check_tensor(hh, CoulombKind::Hh, basis, &hash)?;
    check_tensor(eh, CoulombKind::Eh, basis, &hash)?;
    let pairs = PairSpace::new(basis.n_electrons(), basis.n_holes());
    let builder = BiexcitonBuilder {
        basis,
        pairs: &pairs,
        ee,
        hh,
        eh,
    };
    let dim = pairs.dim();
    let matrix = DMatrix::from_fn(dim, dim, |r, c| builder.element(r, c));
    Ok(SectoredMatrix {
        matrix,
        sectors: pair_sectors(basis, &pairs),
    })
}

/// Eigenpair with its parity sector, eigenvector over the full space.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub energy: f64,
    pub vector: Vec<f64>,
    pub sector: Sector,
}

fn dump_matrix(m: &DMatrix<f64>) -> String {
    let path = std::env::temp_dir().join(format!("qdgate-eigen-failure-{}.json", std::process::id()));
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    match serde_json::to_vec(&rows).map(|bytes| std::fs::write(&path, bytes)) {
        Ok(Ok(())) => path.display().to_string(),
        _ => "<dump failed>".into(),
    }
}

/// Full eigendecomposition, block by parity sector when the matrix has no
/// coupling between sectors. Eigenvectors are normalized with their
/// largest-magnitude component positive; results sorted by energy.
pub fn diagonalize_sectored(h: &SectoredMatrix) -> Result<Vec<Eigenpair>> {
    let dim = h.matrix.nrows();
    if h.matrix.ncols() != dim || h.sectors.len() != dim {
        return Err(Error::Consistency(
            "Hamiltonian must be square with one sector per row".into(),
        ));
    }
    let mut blocks: Vec<(Sector, Vec<usize>)> = Vec::new();
    for s in 0..4u8 {
        let idx: Vec<usize> = (0..dim).filter(|&i| h.sectors[i] == s).collect();
        if !idx.is_empty() {
            blocks.push((s, idx));
        }
    }
    let decoupled = (0..dim).all(|i| (0..dim).all(|j| h.sectors[i] == h.sectors[j] || h.matrix[(i, j)] == 0.0));
    if !decoupled {
        // Fall back to one block; sectors are then only nominal.
        log::warn!("Hamiltonian couples parity sectors; diagonalizing as a single block");
        blocks = vec![(u8::MAX, (0..dim).collect())];
    }
    let norm = h.matrix.norm();
    let mut out = Vec::with_capacity(dim);
    for (sector, idx) in blocks {
        let n = idx.len();
        let block = DMatrix::from_fn(n, n, |i, j| h.matrix[(idx[i], idx[j])]);
        let eig = SymmetricEigen::try_new(block.clone(), 1e-15, 100_000).ok_or_else(|| {
            Error::Numerical(format!(
                "symmetric eigensolver did not converge on a {n}×{n} block; matrix dumped to {}",
                dump_matrix(&block)
            ))
        })?;
        for k in 0..n {
            let col = eig.eigenvectors.column(k);
            let mut vector = vec![0.0; dim];
            let (mut best, mut best_abs) = (0usize, -1.0f64);
            for (i, &v) in col.iter().enumerate() {
                if v.abs() > best_abs + 1e-12 {
                    best = i;
                    best_abs = v.abs();
                }
            }
            let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
            for (i, &v) in col.iter().enumerate() {
                vector[idx[i]] = sign * v;
            }
            let energy = eig.eigenvalues[k];
            // Residual on the block.
            let hv = &block * col;
            let resid = (hv - col * energy).norm();
            if resid > 1e-10 * norm.max(1.0) {
                return Err(Error::Numerical(format!(
                    "eigen-residual {resid:.3e} exceeds tolerance; matrix dumped to {}",
                    dump_matrix(&block)
                )));
            }
            out.push(Eigenpair {
                energy,
                vector,
                sector: if sector == u8::MAX { 0 } else { sector },
            });
        }
    }
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.sector.cmp(&b.sector)));
    Ok(out)
}

pub fn diagonalize_exciton(h: &SectoredMatrix) -> Result<Vec<ExcitonState>> {
    Ok(diagonalize_sectored(h)?
        .into_iter()
        .map(|e| ExcitonState {
            energy: e.energy,
            amplitudes: e.vector,
            sector: e.sector,
            label: None,
        })
        .collect())
}

pub fn diagonalize_biexciton(h: &SectoredMatrix) -> Result<Vec<BiexcitonState>> {
    Ok(diagonalize_sectored(h)?
        .into_iter()
        .map(|e| BiexcitonState {
            energy: e.energy,
            amplitudes: e.vector,
            sector: e.sector,
            label: None,
        })
        .collect())
}

/// Computational basis state, written |q1 q2⟩.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QubitState {
    #[serde(rename = "00")]
    Q00,
    #[serde(rename = "10")]
    Q10,
    #[serde(rename = "01")]
    Q01,
    #[serde(rename = "11")]
    Q11,
}

impl QubitState {
    /// Ordering used for 4×4 gate matrices: (|00⟩, |10⟩, |01⟩, |11⟩).
    pub const ALL: [QubitState; 4] = [QubitState::Q00, QubitState::Q10, QubitState::Q01, QubitState::Q11];

    pub fn index(self) -> usize {
        self as usize
    }

    /// (q1, q2)
    pub fn bits(self) -> (u8, u8) {
        match self {
            QubitState::Q00 => (0, 0),
            QubitState::Q10 => (1, 0),
            QubitState::Q01 => (0, 1),
            QubitState::Q11 => (1, 1),
        }
    }

    pub fn from_bits(q1: u8, q2: u8) -> Self {
        match (q1 & 1, q2 & 1) {
            (0, 0) => QubitState::Q00,
            (1, 0) => QubitState::Q10,
            (0, 1) => QubitState::Q01,
            _ => QubitState::Q11,
        }
    }

    pub fn excitonic_name(self) -> &'static str {
        match self {
            QubitState::Q00 => "vac",
            QubitState::Q10 => "X0",
            QubitState::Q01 => "X1",
            QubitState::Q11 => "X0+X1",
        }
    }

    pub fn from_excitonic_name(name: &str) -> Option<Self> {
        QubitState::ALL.into_iter().find(|q| q.excitonic_name() == name)
    }
}

impl fmt::Display for QubitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.bits();
        write!(f, "|{a}{b}⟩")
    }
}

/// Excitonic states assigned to the two qubits and their energies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QubitMap {
    pub x0: usize,
    pub x1: usize,
    pub x0x1: usize,
    pub e_x0: f64,
    pub e_x1: f64,
    pub e_x0x1: f64,
    pub delta: f64,
}

impl QubitMap {
    /// Energy of a computational state; the vacuum is the zero.
    pub fn energy(&self, q: QubitState) -> f64 {
        match q {
            QubitState::Q00 => 0.0,
            QubitState::Q10 => self.e_x0,
            QubitState::Q01 => self.e_x1,
            QubitState::Q11 => self.e_x0x1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    /// Brightness threshold relative to the X0 oscillator strength.
    pub bright_fraction: f64,
    /// Minimum p-shell configuration weight of X1.
    pub dominant_weight: f64,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            bright_fraction: 0.01,
            dominant_weight: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManyBodySpectrum {
    pub basis: SingleParticleBasis,
    pub pairs: PairSpace,
    pub excitons: Vec<ExcitonState>,
    pub biexcitons: Vec<BiexcitonState>,
}

impl ManyBodySpectrum {
    pub fn n_e(&self) -> usize {
        self.basis.n_electrons()
    }

    pub fn n_h(&self) -> usize {
        self.basis.n_holes()
    }

    pub fn exciton_labeled(&self, label: ExcitonLabel) -> Option<usize> {
        self.excitons.iter().position(|x| x.label == Some(label))
    }

    pub fn biexciton_labeled(&self, label: BiexcitonLabel) -> Option<usize> {
        self.biexcitons.iter().position(|x| x.label == Some(label))
    }

    /// Δ = E_X0 + E_X1 − E_{X0+X1} from the labeled states.
    pub fn delta(&self) -> Option<f64> {
        let x0 = self.excitons[self.exciton_labeled(ExcitonLabel::X0)?].energy;
        let x1 = self.excitons[self.exciton_labeled(ExcitonLabel::X1)?].energy;
        let xx = self.biexcitons[self.biexciton_labeled(BiexcitonLabel::X0X1)?].energy;
        Some(x0 + x1 - xx)
    }

    /// Weight of configurations with both carriers in the given shells.
    pub fn exciton_shell_weight(&self, x: usize, shell_e: u32, shell_h: u32) -> f64 {
        let nh = self.n_h();
        self.excitons[x]
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                self.basis.electrons[i / nh].shell() == shell_e && self.basis.holes[i % nh].shell() == shell_h
            })
            .map(|(_, a)| a * a)
            .sum()
    }

    /// Antisymmetrized, normalized product of two excitons in pair-basis
    /// coefficients.
    pub fn exciton_product(&self, a: usize, b: usize) -> Vec<f64> {
        let (ne, nh) = (self.n_e(), self.n_h());
        let xa = &self.excitons[a].amplitudes;
        let xb = &self.excitons[b].amplitudes;
        let amp = |x: &[f64], m: usize, n: usize| x[m * nh + n];
        let mut out: Vec<f64> = (0..self.pairs.dim())
            .map(|idx| {
                let ((p, q), (h, k)) = self.pairs.split(idx);
                let _ = ne;
                amp(xa, p, h) * amp(xb, q, k) - amp(xa, q, h) * amp(xb, p, k) - amp(xa, p, k) * amp(xb, q, h)
                    + amp(xa, q, k) * amp(xb, p, h)
            })
            .collect();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        out
    }

    pub fn exciton_config_name(&self, idx: usize) -> String {
        let nh = self.n_h();
        let e = &self.basis.electrons[idx / nh];
        let h = &self.basis.holes[idx % nh];
        format!("e({},{})h({},{})", e.n_x, e.n_y, h.n_x, h.n_y)
    }

    pub fn biexciton_config_name(&self, idx: usize) -> String {
        let ((p, q), (h, k)) = self.pairs.split(idx);
        let e = &self.basis.electrons;
        let hs = &self.basis.holes;
        format!(
            "e({},{})({},{})h({},{})({},{})",
            e[p].n_x, e[p].n_y, e[q].n_x, e[q].n_y, hs[h].n_x, hs[h].n_y, hs[k].n_x, hs[k].n_y
        )
    }

    /// JSON export: energies, labels, Δ and the leading configurations of the
    /// labeled states.
    pub fn to_json(&self, top: usize) -> serde_json::Value {
        fn top_weights(amps: &[f64], top: usize, name: impl Fn(usize) -> String) -> Vec<serde_json::Value> {
            let mut idx: Vec<usize> = (0..amps.len()).collect();
            idx.sort_by(|&a, &b| (amps[b] * amps[b]).total_cmp(&(amps[a] * amps[a])).then(a.cmp(&b)));
            idx.into_iter()
                .take(top)
                .map(|i| serde_json::json!({"configuration": name(i), "weight": amps[i] * amps[i]}))
                .collect()
        }
        let excitons: Vec<serde_json::Value> = self
            .excitons
            .iter()
            .map(|x| {
                let mut v = serde_json::json!({"energy_meV": x.energy, "sector": x.sector, "label": x.label});
                if matches!(x.label, Some(l) if l != ExcitonLabel::Other) {
                    v["top_configurations"] = top_weights(&x.amplitudes, top, |i| self.exciton_config_name(i)).into();
                }
                v
            })
            .collect();
        let biexcitons: Vec<serde_json::Value> = self
            .biexcitons
            .iter()
            .map(|x| {
                let mut v = serde_json::json!({"energy_meV": x.energy, "sector": x.sector, "label": x.label});
                if x.label == Some(BiexcitonLabel::X0X1) {
                    v["top_configurations"] = top_weights(&x.amplitudes, top, |i| self.biexciton_config_name(i)).into();
                }
                v
            })
            .collect();
        serde_json::json!({
            "schema": "qdgate.spectrum/1",
            "basis_fingerprint": self.basis.fingerprint(),
            "delta_meV": self.delta(),
            "excitons": excitons,
            "biexcitons": biexcitons,
        })
    }
}

/// Builds and diagonalizes both Hamiltonians.
pub fn solve_spectrum(
    basis: &SingleParticleBasis,
    ee: &CoulombTensor,
    hh: &CoulombTensor,
    eh: &CoulombTensor,
) -> Result<ManyBodySpectrum> {
    let hx = build_exciton_hamiltonian(basis, eh)?;
    let excitons = diagonalize_exciton(&hx)?;
    let hxx = build_biexciton_hamiltonian(basis, ee, hh, eh)?;
    let biexcitons = diagonalize_biexciton(&hxx)?;
    Ok(ManyBodySpectrum {
        basis: basis.clone(),
        pairs: PairSpace::new(basis.n_electrons(), basis.n_holes()),
        excitons,
        biexcitons,
    })
}

/// Labels X0, X1 (and its dark partner) and X0+X1, and returns the qubit
/// assignment.
pub fn identify_states(
    spectrum: &ManyBodySpectrum,
    dipoles: &DipoleTable,
    options: &IdentifyOptions,
) -> Result<(ManyBodySpectrum, QubitMap)> {
    let mut out = spectrum.clone();
    out.excitons
        .iter_mut()
        .for_each(|x| x.label = Some(ExcitonLabel::Other));
    out.biexcitons
        .iter_mut()
        .for_each(|x| x.label = Some(BiexcitonLabel::Other));

    let strengths: Vec<f64> = dipoles.exciton_vac.iter().map(|m| m * m).collect();
    let max_strength = strengths.iter().copied().fold(0.0, f64::max);
    if max_strength <= 0.0 {
        return Err(Error::IdentificationFailed(
            "no exciton couples to the light field".into(),
        ));
    }
    let x0 = strengths
        .iter()
        .position(|&s| s >= options.bright_fraction * max_strength)
        .expect("maximum exists");
    let bright = options.bright_fraction * strengths[x0];

    let p_weight: Vec<f64> = (0..out.excitons.len())
        .map(|x| out.exciton_shell_weight(x, 1, 1))
        .collect();
    let x1 = (x0 + 1..out.excitons.len())
        .find(|&x| strengths[x] >= bright && p_weight[x] >= options.dominant_weight)
        .ok_or_else(|| {
            let report: Vec<String> = (0..out.excitons.len())
                .filter(|&x| p_weight[x] >= options.dominant_weight)
                .map(|x| format!("E={:.3} meV f={:.3e}", out.excitons[x].energy, strengths[x]))
                .collect();
            Error::IdentificationFailed(format!(
                "no bright p-exciton above {:.3e}; p-dominated excitons: [{}]",
                bright,
                report.join(", ")
            ))
        })?;
    // Dark partner: nearest other p-dominated exciton, same sector first.
    let e_x1 = out.excitons[x1].energy;
    let s_x1 = out.excitons[x1].sector;
    let dark = (0..out.excitons.len())
        .filter(|&x| x != x1 && p_weight[x] >= options.dominant_weight)
        .min_by(|&a, &b| {
            let da = (out.excitons[a].energy - e_x1).abs();
            let db = (out.excitons[b].energy - e_x1).abs();
            let key = |x: usize| out.excitons[x].sector != s_x1;
            key(a).cmp(&key(b)).then(da.total_cmp(&db))
        });

    out.excitons[x0].label = Some(ExcitonLabel::X0);
    out.excitons[x1].label = Some(ExcitonLabel::X1);
    if let Some(d) = dark {
        out.excitons[d].label = Some(ExcitonLabel::Dark);
    }

    let product = out.exciton_product(x0, x1);
    let connected = |l: usize| {
        let a = dipoles.biexciton_exciton[(l, x0)];
        let b = dipoles.biexciton_exciton[(l, x1)];
        a * a >= bright && b * b >= bright
    };
    let xx = (0..out.biexcitons.len())
        .filter(|&l| connected(l))
        .map(|l| {
            let ov: f64 = out.biexcitons[l]
                .amplitudes
                .iter()
                .zip(&product)
                .map(|(a, b)| a * b)
                .sum();
            (l, ov * ov)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .ok_or_else(|| Error::IdentificationFailed("no biexciton optically connected to both X0 and X1".into()))?;
    out.biexcitons[xx].label = Some(BiexcitonLabel::X0X1);

    let e_x0 = out.excitons[x0].energy;
    let e_xx = out.biexcitons[xx].energy;
    let map = QubitMap {
        x0,
        x1,
        x0x1: xx,
        e_x0,
        e_x1,
        e_x0x1: e_xx,
        delta: e_x0 + e_x1 - e_xx,
    };
    Ok((out, map))
}
