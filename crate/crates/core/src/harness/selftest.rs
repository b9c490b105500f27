use crate::channel::{beamforming_gain, ChannelModel, Geometry, LinkMode};
use crate::error::Result;
use crate::nn::gradient_check;
use crate::numerics::{top_singular_pair, ComplexMatrix, Rng};
use crate::policies::{bcd_from_reflection, power_iteration, ActiveSensing, NetConfig, RisSensing, TrainBatch, Trainable, BCD_TOL};
use crate::protocol::ProtocolConfig;

use super::evaluate::{draw_episode, run_one};

#[derive(Clone, Debug, PartialEq)]
pub struct SelfTestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SelfTestResult {
    match f() {
        Ok((passed, detail)) => SelfTestResult { name, passed, detail },
        Err(e) => SelfTestResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn active_gradient(mode: LinkMode) -> Result<(bool, String)> {
    let geom = match mode {
        LinkMode::Direct => Geometry::direct(4, 2),
        LinkMode::Ris => Geometry::with_ris(4, 2, 4, 2),
    };
    let cfg = ProtocolConfig::from_snr_db(2, 0.0, geom, mode);
    let model = match mode {
        LinkMode::Direct => ChannelModel::direct(geom, 2),
        LinkMode::Ris => ChannelModel::ris(geom, 2, 2),
    };
    let net = NetConfig {
        hidden_a: 8,
        hidden_b: 8,
        head: vec![16, 16],
        batch_norm: true,
    };
    let p = ActiveSensing::new(cfg, net, RisSensing::Active, 3)?;
    let batch = TrainBatch::sample(&cfg, &model, 4, &mut Rng::new(2))?;
    let checks = gradient_check(p.store(), 1e-6, |g| {
        let gains = p.unroll(g, &batch)?;
        let m = g.mean(gains);
        Ok(g.scale(m, -1.0))
    })?;
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok((worst < 1e-4, format!("max relative error {worst:.2e} over {} tensors", checks.len())))
}

/// Gradient checks and oracle identities, fast enough for interactive use.
pub fn selftest() -> Vec<SelfTestResult> {
    vec![
        check("gradient: active sensing, direct link", || active_gradient(LinkMode::Direct)),
        check("gradient: active sensing, RIS link", || active_gradient(LinkMode::Ris)),
        check("oracle: perfect CSI attains sigma_1^2", || {
            let geom = Geometry::direct(16, 8);
            let cfg = ProtocolConfig::from_snr_db(1, 0.0, geom, LinkMode::Direct);
            let model = ChannelModel::direct(geom, 3);
            let mut worst = 0.0f64;
            for i in 0..100 {
                let (chan, ps, mut rng) = draw_episode(&model, 7, i)?;
                let t = run_one(&crate::policies::PerfectCsi, &cfg, &chan, ps, &mut rng)?;
                let g = beamforming_gain(&chan, &t.design.w_t, &t.design.w_r, None)?;
                let s = top_singular_pair(chan.direct_matrix()?)?.sigma;
                worst = worst.max((g - s * s).abs() / (s * s));
            }
            Ok((worst < 1e-9, format!("max relative error {worst:.2e}")))
        }),
        check("oracle: power iteration on diag(3, 1)", || {
            let r = power_iteration(&ComplexMatrix::from_real_diag(2, 2, &[3.0, 1.0]), 30)?;
            Ok(((r.gain - 9.0).abs() < 1e-12, format!("gain {}", r.gain)))
        }),
        check("oracle: BCD is monotone", || {
            let geom = Geometry::with_ris(8, 4, 16, 4);
            let model = ChannelModel::ris(geom, 2, 2);
            let mut rng = Rng::new(3);
            let mut ok = true;
            for _ in 0..20 {
                let chan = model.sample(&mut rng)?;
                let run = bcd_from_reflection(&chan, &rng.unit_phases(16), 100, BCD_TOL)?;
                ok &= run.history.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            }
            Ok((ok, "20 instances".into()))
        }),
    ]
}
