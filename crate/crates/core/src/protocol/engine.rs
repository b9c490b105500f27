use crate::channel::{beamforming_gain, ChannelMatrices, ChannelRealization, LinkMode};
use crate::error::{Error, Result};
use crate::numerics::{inner, norm, Rng, C64};

use super::trace::{EpisodeTrace, FinalDesign, RoundRecord};
use super::{Agents, Feedback, ProtocolConfig};

const CONSTRAINT_TOL: f64 = 1e-9;

fn check_beam(round: usize, what: &str, w: &[C64], len: usize) -> Result<()> {
    if w.len() != len {
        return Err(Error::InvalidArgument(format!(
            "round {round}: {what} has {} entries, expected {len}",
            w.len()
        )));
    }
    let off = (norm(w) - 1.0).abs();
    if !(off <= CONSTRAINT_TOL) {
        return Err(Error::ConstraintViolation {
            round,
            what: format!("{what} (unit norm)"),
            magnitude: off,
        });
    }
    Ok(())
}

fn check_reflection(round: usize, what: &str, v: &[C64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::InvalidArgument(format!(
            "round {round}: {what} has {} entries, expected {len}",
            v.len()
        )));
    }
    let off = v.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);
    if !(off <= CONSTRAINT_TOL) {
        return Err(Error::ConstraintViolation {
            round,
            what: format!("{what} (unit modulus)"),
            magnitude: off,
        });
    }
    Ok(())
}

fn reflection<'v>(chan: &ChannelRealization, v: Option<&'v [C64]>) -> Result<Option<&'v [C64]>> {
    match (&chan.matrices, v) {
        (ChannelMatrices::Direct { .. }, _) => Ok(None),
        (ChannelMatrices::Ris { .. }, Some(v)) => Ok(Some(v)),
        (ChannelMatrices::Ris { .. }, None) => {
            Err(Error::InvalidArgument("RIS link needs reflection coefficients".into()))
        }
    }
}

/// Noiseless A-to-B pilot `w_r^H G^H w_t` (or through the surface with `v`).
pub fn pilot_ab(chan: &ChannelRealization, wt_a: &[C64], wr_b: &[C64], v: Option<&[C64]>) -> Result<C64> {
    match &chan.matrices {
        ChannelMatrices::Direct { g } => Ok(inner(wr_b, &g.adjoint_matvec(wt_a)?)),
        ChannelMatrices::Ris { t, r } => {
            let v = reflection(chan, v)?.expect("ris");
            let b = r.matvec(wr_b)?;
            let a = t.adjoint_matvec(wt_a)?;
            Ok((0..v.len()).map(|n| b[n].conj() * v[n] * a[n]).sum())
        }
    }
}

/// Noiseless B-to-A pilot `w_r^H G w_t` (or `w_r^H T diag(conj v) R w_t`).
pub fn pilot_ba(chan: &ChannelRealization, wt_b: &[C64], wr_a: &[C64], v: Option<&[C64]>) -> Result<C64> {
    match &chan.matrices {
        ChannelMatrices::Direct { g } => Ok(inner(wr_a, &g.matvec(wt_b)?)),
        ChannelMatrices::Ris { t, r } => {
            let v = reflection(chan, v)?.expect("ris");
            let b = t.adjoint_matvec(wr_a)?;
            let a = r.matvec(wt_b)?;
            Ok((0..v.len()).map(|n| b[n].conj() * v[n].conj() * a[n]).sum())
        }
    }
}

/// Runs `config.rounds` ping-pong rounds and collects the final design.
///
/// Noise `n^B_l` then `n^A_l` is drawn from `rng` in every round unless
/// `noiseless` is set. Any emitted vector that breaks its constraint aborts
/// the episode with the round index.
pub fn run_episode(
    config: &ProtocolConfig,
    chan: &ChannelRealization,
    agents: &mut Agents<'_>,
    feedback: Feedback,
    rng: &mut Rng,
    noiseless: bool,
) -> Result<EpisodeTrace> {
    config.validate()?;
    if chan.mode() != config.mode {
        return Err(Error::InvalidArgument(format!(
            "protocol expects a {} link, channel is {}",
            config.mode,
            chan.mode()
        )));
    }
    let ris = config.mode == LinkMode::Ris;
    let (mt, mr) = (config.geometry.mt, config.geometry.mr);
    let n_ris = config.geometry.ris_elements;
    if ris && agents.controller.is_none() {
        return Err(Error::InvalidArgument("RIS mode requires a reflection controller".into()));
    }
    let (sp1, sp2) = (config.p1.sqrt(), config.p2.sqrt());
    let noise = |rng: &mut Rng| {
        if noiseless {
            C64::new(0.0, 0.0)
        } else {
            rng.complex_normal(config.noise_var)
        }
    };

    let (mut wt_a, mut wr_a) = agents.tx.initial_sensing()?;
    let mut wr_b = agents.rx.initial_receive()?;
    let mut v_ab = match agents.controller.as_mut() {
        Some(c) if ris => Some(c.initial()?),
        _ => None,
    };
    let mut rounds = Vec::with_capacity(config.rounds);
    for l in 0..config.rounds {
        check_beam(l, "w^A_t", &wt_a, mt)?;
        check_beam(l, "w^B_r", &wr_b, mr)?;
        if let Some(v) = &v_ab {
            check_reflection(l, "v^AB", v, n_ris)?;
        }
        let n_b = noise(rng);
        let y_b = pilot_ab(chan, &wt_a, &wr_b, v_ab.as_deref())? * sp1 + n_b;
        agents.rx.observe(l, y_b)?;
        let wt_b = agents.rx.transmit_beam(l)?;
        check_beam(l, "w^B_t", &wt_b, mr)?;

        let v_ba = match agents.controller.as_mut() {
            Some(c) if ris => {
                let v = c.design_ba(l, &agents.tx.summary(), &agents.rx.summary())?;
                check_reflection(l, "v^BA", &v, n_ris)?;
                Some(v)
            }
            _ => None,
        };
        check_beam(l, "w^A_r", &wr_a, mt)?;
        let n_a = noise(rng);
        let y_a = pilot_ba(chan, &wt_b, &wr_a, v_ba.as_deref())? * sp2 + n_a;
        agents.tx.observe(l, y_a)?;

        let last = l + 1 == config.rounds;
        let (next_a, next_b, next_v) = if last {
            (None, None, None)
        } else {
            let a = agents.tx.next_sensing(l)?;
            let b = agents.rx.next_receive(l)?;
            let v = match agents.controller.as_mut() {
                Some(c) if ris => Some(c.design_ab(l, &agents.tx.summary(), &agents.rx.summary())?),
                _ => None,
            };
            (Some(a), Some(b), v)
        };
        rounds.push(RoundRecord {
            wt_a: std::mem::take(&mut wt_a),
            wr_b: std::mem::take(&mut wr_b),
            v_ab: v_ab.take(),
            y_b,
            n_b,
            wt_b,
            wr_a: std::mem::take(&mut wr_a),
            v_ba,
            y_a,
            n_a,
        });
        if let (Some((t, r)), Some(b)) = (next_a, next_b) {
            wt_a = t;
            wr_a = r;
            wr_b = b;
            v_ab = next_v;
        }
    }

    let fb: Option<Vec<C64>> = match feedback {
        Feedback::None => None,
        Feedback::RxObservationsToTx => Some(agents.rx.summary().observations),
    };
    let (w_t, forwarded) = agents.tx.finalize(fb.as_deref())?;
    let w_r = agents.rx.finalize(forwarded)?;
    let done = config.rounds;
    check_beam(done, "final w_t", &w_t, mt)?;
    check_beam(done, "final w_r", &w_r, mr)?;
    let v = match agents.controller.as_mut() {
        Some(c) if ris => {
            let v = c.finalize(&agents.tx.summary(), &agents.rx.summary())?;
            check_reflection(done, "final v", &v, n_ris)?;
            Some(v)
        }
        _ => None,
    };
    Ok(EpisodeTrace {
        rounds,
        design: FinalDesign { w_t, w_r, v },
    })
}

/// Beamforming gain of the trace's final design on `chan`.
pub fn evaluate_design(chan: &ChannelRealization, trace: &EpisodeTrace) -> Result<f64> {
    let d = &trace.design;
    beamforming_gain(chan, &d.w_t, &d.w_r, d.v.as_deref())
}
