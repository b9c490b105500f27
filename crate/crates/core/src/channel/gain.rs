use crate::error::{Error, Result};
use crate::numerics::{inner, norm, svd, ComplexMatrix, C64};

use super::model::{cascaded, ChannelMatrices, ChannelRealization, Direction};
use super::steering::phase_ramp;

const NORM_TOL: f64 = 1e-9;

fn check_unit_norm(x: &[C64], what: &str) -> Result<()> {
    let n = norm(x);
    if (n - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidArgument(format!(
            "{what} must have unit norm, has norm {n}"
        )));
    }
    Ok(())
}

/// `|w_r^H H w_t|^2` for a downlink matrix `H` (`Mr x Mt`), no constraint checks.
pub fn bilinear_gain(h: &ComplexMatrix, w_t: &[C64], w_r: &[C64]) -> Result<f64> {
    let hw = h.matvec(w_t)?;
    if hw.len() != w_r.len() {
        return Err(Error::Dimension {
            op: "beamforming_gain",
            lhs: (hw.len(), 1),
            rhs: (w_r.len(), 1),
        });
    }
    Ok(inner(w_r, &hw).norm_sqr())
}

/// `|w_r^H G^H w_t|^2`, or `|w_r^H R^H diag(v) T^H w_t|^2` on a RIS link.
pub fn beamforming_gain(chan: &ChannelRealization, w_t: &[C64], w_r: &[C64], v: Option<&[C64]>) -> Result<f64> {
    check_unit_norm(w_t, "transmit beamformer")?;
    check_unit_norm(w_r, "receive beamformer")?;
    match &chan.matrices {
        ChannelMatrices::Direct { g } => {
            let gw = g.adjoint_matvec(w_t)?;
            if gw.len() != w_r.len() {
                return Err(Error::Dimension {
                    op: "beamforming_gain",
                    lhs: (gw.len(), 1),
                    rhs: (w_r.len(), 1),
                });
            }
            Ok(inner(w_r, &gw).norm_sqr())
        }
        ChannelMatrices::Ris { .. } => {
            let v = v.ok_or_else(|| Error::InvalidArgument("RIS link needs reflection coefficients".into()))?;
            bilinear_gain(&cascaded(chan, v, Direction::AB)?, w_t, w_r)
        }
    }
}

/// `|w^H a(theta)|^2` with `a` the `1/sqrt(M)`-normalized ULA response.
pub fn array_response(w: &[C64], theta: f64) -> f64 {
    let m = w.len();
    if m == 0 {
        return 0.0;
    }
    let a = phase_ramp(m, theta.sin());
    inner(w, &a).norm_sqr() / m as f64
}

/// Surface pattern `(1/N) |v^H a(theta)|^2` with `a` normalized by `1/sqrt(N)`.
pub fn ris_array_response(v: &[C64], theta: f64) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    array_response(v, theta) / n as f64
}

/// Gain `|w_t^H u_i v_i^H w_r|^2` in the `i`-th effective direction (1-based)
/// of the uplink matrix `G = sum sigma_i u_i v_i^H`.
pub fn direction_gain(g: &ComplexMatrix, w_t: &[C64], w_r: &[C64], i: usize) -> Result<f64> {
    let gains = direction_gains(g, w_t, w_r, i)?;
    Ok(gains[i - 1])
}

/// Gains in the first `count` effective directions.
pub fn direction_gains(g: &ComplexMatrix, w_t: &[C64], w_r: &[C64], count: usize) -> Result<Vec<f64>> {
    let d = svd(g)?;
    let rank = d.rank(1e-10);
    if count == 0 || count > rank {
        return Err(Error::InvalidArgument(format!(
            "direction {count} requested but the channel has rank {rank}"
        )));
    }
    if w_t.len() != g.rows() || w_r.len() != g.cols() {
        return Err(Error::Dimension {
            op: "direction_gain",
            lhs: g.shape(),
            rhs: (w_t.len(), w_r.len()),
        });
    }
    Ok((0..count)
        .map(|i| (inner(w_t, &d.left(i)) * inner(&d.right(i), w_r)).norm_sqr())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::model::{ChannelModel, Geometry};
    use crate::channel::steering::steering_ula;
    use crate::numerics::{top_singular_pair, unit_normalize, Rng};

    fn direct(seed: u64) -> ChannelRealization {
        ChannelModel::direct(Geometry::direct(16, 8), 3)
            .sample(&mut Rng::new(seed))
            .unwrap()
    }

    #[test]
    fn top_pair_attains_sigma_squared() {
        let chan = direct(1);
        let p = top_singular_pair(chan.direct_matrix().unwrap()).unwrap();
        let g = beamforming_gain(&chan, &p.u, &p.v, None).unwrap();
        assert!((g - p.sigma * p.sigma).abs() / g < 1e-9);
    }

    #[test]
    fn orthogonal_receiver_gets_nothing() {
        let chan = direct(2);
        let mut rng = Rng::new(3);
        let w_t = rng.unit_vector(16);
        let gw = unit_normalize(&chan.direct_matrix().unwrap().adjoint_matvec(&w_t).unwrap()).unwrap();
        // Gram-Schmidt a random vector against G^H w_t.
        let x = rng.unit_vector(8);
        let proj = inner(&gw, &x);
        let w_r = unit_normalize(&x.iter().zip(&gw).map(|(a, b)| a - proj * b).collect::<Vec<_>>()).unwrap();
        assert!(beamforming_gain(&chan, &w_t, &w_r, None).unwrap() < 1e-24);
    }

    #[test]
    fn gain_matches_scalar_loop() {
        let chan = direct(4);
        let g = chan.direct_matrix().unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let (w_t, w_r) = (rng.unit_vector(16), rng.unit_vector(8));
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..16 {
                for j in 0..8 {
                    acc += w_r[j].conj() * g[(i, j)].conj() * w_t[i];
                }
            }
            let got = beamforming_gain(&chan, &w_t, &w_r, None).unwrap();
            assert!((got - acc.norm_sqr()).abs() < 1e-10 * (1.0 + got));
        }
    }

    #[test]
    fn gain_rejects_unnormalized_beams() {
        let chan = direct(6);
        let w_t = vec![C64::new(1.0, 0.0); 16];
        let w_r = Rng::new(1).unit_vector(8);
        assert!(beamforming_gain(&chan, &w_t, &w_r, None).is_err());
    }

    #[test]
    fn gain_is_homogeneous_of_degree_two() {
        let chan = direct(7);
        let scaled = ChannelRealization::from_matrix(chan.direct_matrix().unwrap().scale(2.5));
        let mut rng = Rng::new(8);
        let (w_t, w_r) = (rng.unit_vector(16), rng.unit_vector(8));
        let a = beamforming_gain(&chan, &w_t, &w_r, None).unwrap();
        let b = beamforming_gain(&scaled, &w_t, &w_r, None).unwrap();
        assert!((b - 6.25 * a).abs() < 1e-10 * b);
    }

    #[test]
    fn svd_beams_dominate_random_pairs() {
        let mut rng = Rng::new(9);
        let model = ChannelModel::direct(Geometry::direct(16, 8), 3);
        for _ in 0..100 {
            let chan = model.sample(&mut rng).unwrap();
            let p = top_singular_pair(chan.direct_matrix().unwrap()).unwrap();
            let best = beamforming_gain(&chan, &p.u, &p.v, None).unwrap();
            for _ in 0..1000 {
                let g = beamforming_gain(&chan, &rng.unit_vector(16), &rng.unit_vector(8), None).unwrap();
                assert!(g <= best + 1e-9);
            }
        }
    }

    #[test]
    fn ris_gain_uses_downlink_cascade() {
        let model = ChannelModel::ris(Geometry::with_ris(8, 4, 16, 4), 2, 2);
        let mut rng = Rng::new(10);
        let chan = model.sample(&mut rng).unwrap();
        let v = rng.unit_phases(16);
        let (w_t, w_r) = (rng.unit_vector(8), rng.unit_vector(4));
        let h = cascaded(&chan, &v, Direction::AB).unwrap();
        let expect = inner(&w_r, &h.matvec(&w_t).unwrap()).norm_sqr();
        assert!((beamforming_gain(&chan, &w_t, &w_r, Some(&v)).unwrap() - expect).abs() < 1e-12);
        assert!(beamforming_gain(&chan, &w_t, &w_r, None).is_err());
    }

    #[test]
    fn matched_steering_gives_unit_response() {
        let theta = 0.4;
        let a: Vec<C64> = steering_ula(8, theta).iter().map(|z| z / 8f64.sqrt()).collect();
        assert!((array_response(&a, theta) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_element_beam_is_flat_half() {
        let w = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        for k in -5..=5 {
            assert!((array_response(&w, k as f64 * 0.3) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn array_response_matches_scalar_sweep() {
        let w = Rng::new(12).unit_vector(6);
        for k in 0..181 {
            let theta = (-90.0 + k as f64).to_radians();
            let mut acc = C64::new(0.0, 0.0);
            for (m, wm) in w.iter().enumerate() {
                let arg = std::f64::consts::PI * m as f64 * theta.sin();
                acc += wm.conj() * C64::new(arg.cos(), arg.sin()) / 6f64.sqrt();
            }
            assert!((array_response(&w, theta) - acc.norm_sqr()).abs() < 1e-13);
        }
    }

    #[test]
    fn ris_response_is_scaled_by_element_count() {
        let v = vec![C64::new(1.0, 0.0); 16];
        // all-ones aligned with broadside: |v^H a|^2 = 16, divided by N
        assert!((ris_array_response(&v, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_direction_match() {
        let chan = direct(13);
        let g = chan.direct_matrix().unwrap();
        let d = svd(g).unwrap();
        let dg = direction_gains(g, &d.left(0), &d.right(0), 3).unwrap();
        assert!((dg[0] - 1.0).abs() < 1e-12);
        assert!(dg[1] < 1e-20 && dg[2] < 1e-20);
        assert!(direction_gain(g, &d.left(0), &d.right(0), 4).is_err());
    }

    #[test]
    fn amplitude_bounded_by_direction_sum() {
        // sqrt(gain) = |sum sigma_i w_t^H u_i v_i^H w_r| <= sum sigma_i sqrt(dg_i),
        // with equality when the beams live in a single direction.
        let mut rng = Rng::new(14);
        for seed in 0..20 {
            let chan = direct(100 + seed);
            let g = chan.direct_matrix().unwrap();
            let d = svd(g).unwrap();
            let (w_t, w_r) = (rng.unit_vector(16), rng.unit_vector(8));
            let dg = direction_gains(g, &w_t, &w_r, 3).unwrap();
            let bound: f64 = dg.iter().zip(&d.singular_values).map(|(x, s)| s * x.sqrt()).sum();
            let gain = beamforming_gain(&chan, &w_t, &w_r, None).unwrap();
            assert!(gain.sqrt() <= bound + 1e-9);
            let dg2 = direction_gains(g, &d.left(1), &d.right(1), 3).unwrap();
            let b2: f64 = dg2.iter().zip(&d.singular_values).map(|(x, s)| s * x.sqrt()).sum();
            let g2 = beamforming_gain(&chan, &d.left(1), &d.right(1), None).unwrap();
            assert!((g2.sqrt() - b2).abs() < 1e-9 * b2);
        }
    }
}
