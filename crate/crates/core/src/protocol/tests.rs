use std::cell::RefCell;
use std::rc::Rc;

use super::*;
use crate::channel::{ChannelModel, Geometry};
use crate::numerics::{top_singular_pair, Rng};

/// Emits the same unit vectors every round and records what it observes.
struct Fixed {
    a: (Vec<C64>, Vec<C64>),
    b: (Vec<C64>, Vec<C64>),
    v: Vec<C64>,
    bad_round: Option<usize>,
}

#[derive(Default)]
struct Log {
    a_seen: Vec<C64>,
    b_seen: Vec<C64>,
    calls: Vec<String>,
}

struct A<'a> {
    p: &'a Fixed,
    log: Rc<RefCell<Log>>,
    seen: Vec<C64>,
}

struct B<'a> {
    p: &'a Fixed,
    log: Rc<RefCell<Log>>,
    seen: Vec<C64>,
}

struct Ctrl<'a> {
    p: &'a Fixed,
    log: Rc<RefCell<Log>>,
}

impl TxAgent for A<'_> {
    fn initial_sensing(&mut self) -> Result<(Vec<C64>, Vec<C64>)> {
        Ok(self.p.a.clone())
    }
    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        self.log.borrow_mut().a_seen.push(y);
        Ok(())
    }
    fn next_sensing(&mut self, round: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        let mut out = self.p.a.clone();
        if self.p.bad_round == Some(round + 1) {
            out.0[0] *= 2.0;
        }
        Ok(out)
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, _feedback: Option<&[C64]>) -> Result<(Vec<C64>, Option<Vec<C64>>)> {
        Ok((self.p.a.0.clone(), None))
    }
}

impl RxAgent for B<'_> {
    fn initial_receive(&mut self) -> Result<Vec<C64>> {
        Ok(self.p.b.1.clone())
    }
    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        self.log.borrow_mut().b_seen.push(y);
        Ok(())
    }
    fn transmit_beam(&mut self, _round: usize) -> Result<Vec<C64>> {
        Ok(self.p.b.0.clone())
    }
    fn next_receive(&mut self, _round: usize) -> Result<Vec<C64>> {
        Ok(self.p.b.1.clone())
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, _from_tx: Option<Vec<C64>>) -> Result<Vec<C64>> {
        Ok(self.p.b.1.clone())
    }
}

impl ReflectionController for Ctrl<'_> {
    fn initial(&mut self) -> Result<Vec<C64>> {
        self.log.borrow_mut().calls.push("ab0".into());
        Ok(self.p.v.clone())
    }
    fn design_ba(&mut self, round: usize, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>> {
        assert_eq!((a.observations.len(), b.observations.len()), (round, round + 1));
        self.log.borrow_mut().calls.push(format!("ba{round}"));
        Ok(self.p.v.clone())
    }
    fn design_ab(&mut self, round: usize, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>> {
        assert_eq!((a.observations.len(), b.observations.len()), (round + 1, round + 1));
        self.log.borrow_mut().calls.push(format!("ab{}", round + 1));
        Ok(self.p.v.clone())
    }
    fn finalize(&mut self, _a: &AgentSummary, _b: &AgentSummary) -> Result<Vec<C64>> {
        self.log.borrow_mut().calls.push("final".into());
        Ok(self.p.v.clone())
    }
}

fn fixed(mt: usize, mr: usize, n: usize, seed: u64) -> Fixed {
    let mut rng = Rng::new(seed);
    Fixed {
        a: (rng.unit_vector(mt), rng.unit_vector(mt)),
        b: (rng.unit_vector(mr), rng.unit_vector(mr)),
        v: rng.unit_phases(n),
        bad_round: None,
    }
}

fn agents<'a>(p: &'a Fixed, log: &Rc<RefCell<Log>>, ris: bool) -> Agents<'a> {
    Agents {
        tx: Box::new(A {
            p,
            log: log.clone(),
            seen: Vec::new(),
        }),
        rx: Box::new(B {
            p,
            log: log.clone(),
            seen: Vec::new(),
        }),
        controller: ris.then(|| Box::new(Ctrl { p, log: log.clone() }) as Box<dyn ReflectionController>),
    }
}

fn direct_setup() -> (ProtocolConfig, crate::channel::ChannelRealization) {
    let geom = Geometry::direct(8, 4);
    let chan = ChannelModel::direct(geom, 3).sample(&mut Rng::new(1)).unwrap();
    (ProtocolConfig::from_snr_db(3, 0.0, geom, LinkMode::Direct), chan)
}

#[test]
fn noiseless_single_round_matches_formula() {
    let (mut cfg, chan) = direct_setup();
    cfg.rounds = 1;
    cfg.p1 = 2.0;
    cfg.p2 = 3.0;
    let p = fixed(8, 4, 0, 2);
    let log = Rc::new(RefCell::new(Log::default()));
    let trace = run_episode(&cfg, &chan, &mut agents(&p, &log, false), Feedback::None, &mut Rng::new(0), true).unwrap();
    let g = chan.direct_matrix().unwrap();
    let expect_b = inner_(&p.b.1, &g.adjoint_matvec(&p.a.0).unwrap()) * 2f64.sqrt();
    let expect_a = inner_(&p.a.1, &g.matvec(&p.b.0).unwrap()) * 3f64.sqrt();
    assert_eq!(trace.rounds[0].y_b, expect_b);
    assert_eq!(trace.rounds[0].y_a, expect_a);
    assert_eq!(trace.rounds[0].n_b, C64::new(0.0, 0.0));
}

fn inner_(a: &[C64], b: &[C64]) -> C64 {
    crate::numerics::inner(a, b)
}

#[test]
fn overhead_is_two_symbols_per_round() {
    let (cfg, chan) = direct_setup();
    let p = fixed(8, 4, 0, 3);
    let log = Rc::new(RefCell::new(Log::default()));
    let trace = run_episode(&cfg, &chan, &mut agents(&p, &log, false), Feedback::None, &mut Rng::new(0), false).unwrap();
    assert_eq!(trace.rounds.len(), 3);
    assert_eq!(trace.overhead(), 6);
    assert_eq!(cfg.overhead(), 6);
}

#[test]
fn noise_variance_scales_linearly() {
    let (mut cfg, chan) = direct_setup();
    cfg.rounds = 1;
    let p = fixed(8, 4, 0, 4);
    let var_at = |noise_var: f64| {
        let mut cfg = cfg;
        cfg.noise_var = noise_var;
        let mut rng = Rng::new(77);
        let log = Rc::new(RefCell::new(Log::default()));
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let t = run_episode(&cfg, &chan, &mut agents(&p, &log, false), Feedback::None, &mut rng, false).unwrap();
            let clean = pilot_ab(&chan, &p.a.0, &p.b.1, None).unwrap() * cfg.p1.sqrt();
            acc += (t.rounds[0].y_b - clean).norm_sqr();
        }
        acc / n as f64
    };
    let (v1, v2) = (var_at(0.5), var_at(1.0));
    assert!((v2 / v1 - 2.0).abs() < 0.1, "{v1} {v2}");
    cfg.noise_var = 0.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn agents_only_see_their_own_pilots() {
    let (cfg, chan) = direct_setup();
    let p = fixed(8, 4, 0, 5);
    let log = Rc::new(RefCell::new(Log::default()));
    let trace = run_episode(&cfg, &chan, &mut agents(&p, &log, false), Feedback::None, &mut Rng::new(9), false).unwrap();
    let log = log.borrow();
    let ya: Vec<C64> = trace.rounds.iter().map(|r| r.y_a).collect();
    let yb: Vec<C64> = trace.rounds.iter().map(|r| r.y_b).collect();
    assert_eq!(log.a_seen, ya);
    assert_eq!(log.b_seen, yb);
    assert!(log.a_seen.iter().all(|y| !yb.contains(y)));
}

#[test]
fn violation_aborts_with_round_index() {
    let (cfg, chan) = direct_setup();
    let mut p = fixed(8, 4, 0, 6);
    p.bad_round = Some(2);
    let log = Rc::new(RefCell::new(Log::default()));
    let err = run_episode(&cfg, &chan, &mut agents(&p, &log, false), Feedback::None, &mut Rng::new(0), false).unwrap_err();
    match err {
        crate::Error::ConstraintViolation { round, magnitude, .. } => {
            assert_eq!(round, 2);
            assert!(magnitude > 1e-6);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn seeded_episodes_are_reproducible() {
    let (cfg, chan) = direct_setup();
    let p = fixed(8, 4, 0, 7);
    let run = || {
        let log = Rc::new(RefCell::new(Log::default()));
        run_episode(&cfg, &chan, &mut agents(&p, &log, false), Feedback::None, &mut Rng::new(31), false)
            .unwrap()
            .to_text()
    };
    assert_eq!(run(), run());
}

#[test]
fn ris_schedule_alternates_reflections() {
    let geom = Geometry::with_ris(8, 4, 16, 4);
    let chan = ChannelModel::ris(geom, 2, 2).sample(&mut Rng::new(2)).unwrap();
    let cfg = ProtocolConfig::from_snr_db(3, 0.0, geom, LinkMode::Ris);
    let p = fixed(8, 4, 16, 8);
    let log = Rc::new(RefCell::new(Log::default()));
    let trace = run_episode(&cfg, &chan, &mut agents(&p, &log, true), Feedback::None, &mut Rng::new(0), true).unwrap();
    assert_eq!(log.borrow().calls, ["ab0", "ba0", "ab1", "ba1", "ab2", "ba2", "final"]);
    assert!(trace.rounds.iter().all(|r| r.v_ab.is_some() && r.v_ba.is_some()));
    // pilots through the explicit cascade
    let h_ab = crate::channel::cascaded(&chan, &p.v, crate::channel::Direction::AB).unwrap();
    let h_ba = crate::channel::cascaded(&chan, &p.v, crate::channel::Direction::BA).unwrap();
    let yb = inner_(&p.b.1, &h_ab.matvec(&p.a.0).unwrap());
    let ya = inner_(&p.a.1, &h_ba.matvec(&p.b.0).unwrap());
    assert!((trace.rounds[0].y_b - yb).norm() < 1e-12);
    assert!((trace.rounds[0].y_a - ya).norm() < 1e-12);
    assert!(trace.to_text().contains("v_ba="));
}

#[test]
fn ris_mode_requires_controller() {
    let geom = Geometry::with_ris(8, 4, 16, 4);
    let chan = ChannelModel::ris(geom, 2, 2).sample(&mut Rng::new(2)).unwrap();
    let cfg = ProtocolConfig::from_snr_db(2, 0.0, geom, LinkMode::Ris);
    let p = fixed(8, 4, 16, 8);
    let log = Rc::new(RefCell::new(Log::default()));
    assert!(run_episode(&cfg, &chan, &mut agents(&p, &log, false), Feedback::None, &mut Rng::new(0), true).is_err());
}

#[test]
fn random_designs_never_beat_the_top_singular_value() {
    let (cfg, chan) = direct_setup();
    let sigma = top_singular_pair(chan.direct_matrix().unwrap()).unwrap().sigma;
    for seed in 0..50 {
        let p = fixed(8, 4, 0, 100 + seed);
        let log = Rc::new(RefCell::new(Log::default()));
        let trace = run_episode(&cfg, &chan, &mut agents(&p, &log, false), Feedback::None, &mut Rng::new(seed), false).unwrap();
        assert!(evaluate_design(&chan, &trace).unwrap() <= sigma * sigma + 1e-9);
    }
}
