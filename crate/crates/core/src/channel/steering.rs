use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::C64;

/// Half-wavelength ULA response, entry `m` equal to `e^{j pi (m-1) sin(phi)}`.
/// Not normalized.
pub fn steering_ula(m_antennas: usize, phi: f64) -> Vec<C64> {
    phase_ramp(m_antennas, phi.sin())
}

/// ULA response in the azimuth/elevation parameterization used by the RIS
/// geometry: `e^{j pi (m-1) cos(phi) cos(theta)}`.
pub fn steering_ula_azel(m_antennas: usize, phi: f64, theta: f64) -> Vec<C64> {
    phase_ramp(m_antennas, phi.cos() * theta.cos())
}

/// `e^{j pi (m-1) s}` for a spatial frequency `s`.
pub(crate) fn phase_ramp(m: usize, s: f64) -> Vec<C64> {
    (0..m)
        .map(|k| C64::from_polar(1.0, PI * k as f64 * s))
        .collect()
}

/// Uniform rectangular RIS response with `n_horizontal` elements per row.
pub fn steering_ris(n_elements: usize, n_horizontal: usize, phi_v: f64, theta_v: f64) -> Result<Vec<C64>> {
    if n_horizontal == 0 || n_elements % n_horizontal != 0 {
        return Err(Error::InvalidArgument(format!(
            "{n_horizontal} horizontal elements do not tile {n_elements} RIS elements"
        )));
    }
    let horiz = phi_v.sin() * theta_v.cos();
    let vert = theta_v.sin();
    Ok((0..n_elements)
        .map(|m| {
            let i1 = (m % n_horizontal) as f64;
            let i2 = (m / n_horizontal) as f64;
            C64::from_polar(1.0, PI * (i1 * horiz + i2 * vert))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn near(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    #[test]
    fn broadside_is_all_ones() {
        assert!(near(&steering_ula(4, 0.0), &[C64::new(1.0, 0.0); 4], 0.0));
    }

    #[test]
    fn thirty_degrees_gives_j() {
        let a = steering_ula(2, 30f64.to_radians());
        assert!(near(&a, &[C64::new(1.0, 0.0), C64::new(0.0, 1.0)], 1e-15));
    }

    #[test]
    fn negated_angle_conjugates() {
        let phi = 0.37;
        let a = steering_ula(8, phi);
        let b: Vec<C64> = steering_ula(8, -phi).iter().map(|z| z.conj()).collect();
        assert!(near(&a, &b, 1e-13));
    }

    #[test]
    fn ris_broadside_is_all_ones() {
        let a = steering_ris(4, 2, 0.0, 0.0).unwrap();
        assert!(near(&a, &[C64::new(1.0, 0.0); 4], 0.0));
    }

    #[test]
    fn ris_ninety_degree_azimuth_alternates() {
        let a = steering_ris(4, 2, 90f64.to_radians(), 0.0).unwrap();
        let one = C64::new(1.0, 0.0);
        assert!(near(&a, &[one, -one, one, -one], 1e-15));
    }

    #[test]
    fn ris_matches_per_entry_formula() {
        let mut rng = crate::numerics::Rng::new(19);
        for _ in 0..10 {
            let (phi, theta) = (rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
            let a = steering_ris(64, 8, phi, theta).unwrap();
            for (m, z) in a.iter().enumerate() {
                let (ip, ipp) = ((m % 8) as f64, (m / 8) as f64);
                let arg = PI * (ip * phi.sin() * theta.cos() + ipp * theta.sin());
                assert!((z - C64::new(arg.cos(), arg.sin())).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn ris_rejects_ragged_grid() {
        assert!(steering_ris(10, 4, 0.0, 0.0).is_err());
    }
}
