//! Unit conversions. All internal quantities are in Hartree atomic units
//! (energy in hartree, time in hbar/hartree, mass-weighted lengths), hbar = 1.

/// Wavenumbers per hartree (CODATA).
pub const CM1_PER_HARTREE: f64 = 219_474.631_363_2;

/// Boltzmann constant in hartree per kelvin.
pub const KB_HARTREE_PER_K: f64 = 3.166_811_563e-6;

/// Atomic time units per femtosecond.
pub const AU_PER_FS: f64 = 41.341_374_575_751;

pub fn cm1_to_hartree(x: f64) -> f64 {
    x / CM1_PER_HARTREE
}

pub fn hartree_to_cm1(x: f64) -> f64 {
    x * CM1_PER_HARTREE
}

pub fn fs_to_au(t: f64) -> f64 {
    t * AU_PER_FS
}

pub fn au_to_fs(t: f64) -> f64 {
    t / AU_PER_FS
}

/// Inverse temperature beta = 1/(kB T) in 1/hartree.
pub fn beta_from_kelvin(t_kelvin: f64) -> f64 {
    1.0 / (KB_HARTREE_PER_K * t_kelvin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wavenumber_round_trip() {
        assert_relative_eq!(cm1_to_hartree(1000.0), 4.5563352e-3, max_relative = 1e-7);
        assert_relative_eq!(hartree_to_cm1(cm1_to_hartree(1234.5)), 1234.5, epsilon = 1e-10);
    }

    #[test]
    fn room_temperature_beta() {
        assert_relative_eq!(beta_from_kelvin(300.0), 1052.58, max_relative = 1e-5);
    }
}
