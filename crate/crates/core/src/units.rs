//! Physical constants. Interfaces use meV, ps and nm throughout.

/// Reduced Planck constant in meV·ps.
pub const HBAR: f64 = 0.658_211_9;

/// ħ²/m₀ in meV·nm².
pub const HBAR2_OVER_M0: f64 = 76.1996;

/// e²/(4πε₀) in meV·nm.
pub const COULOMB_CONSTANT: f64 = 1439.96;

/// Converts an energy in meV into an angular frequency in rad/ps.
#[inline]
pub fn angular_frequency(energy_mev: f64) -> f64 {
    energy_mev / HBAR
}
