use super::*;
use crate::channel::array_response;
use crate::numerics::{top_singular_pair, Rng, C64};
use crate::policies::{PerfectCsi, RisSensing};
use crate::protocol::{Agents, EpisodeContext, Policy};

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        geometry: Geometry::direct(8, 4),
        net: NetConfig {
            hidden_a: 16,
            hidden_b: 16,
            head: vec![24, 24],
            batch_norm: true,
        },
        train: TrainConfig {
            batch_size: 64,
            steps_per_epoch: 10,
            max_epochs: 3,
            validation_size: 256,
            ..TrainConfig::default()
        },
        eval_episodes: 200,
        workers: 1,
        ..ExperimentSpec::default()
    }
}

#[test]
fn metric_row_db_and_csv() {
    let row = MetricRow::from_gains("x".into(), 3, 0.0, &[100.0, 100.0]);
    assert!((row.mean_gain_db() - 20.0).abs() < 1e-12);
    assert_eq!(row.stderr, 0.0);
    assert_eq!(row.csv_line(), "x,3,6,0,20,0,2");
    let table = MetricTable { rows: vec![row] };
    assert!(table.to_csv().starts_with("policy,L,overhead,snr_db,mean_gain_db,stderr_db,n\n"));
}

#[test]
fn stderr_db_is_the_delta_method() {
    let gains = [1.0, 3.0, 2.0, 6.0];
    let row = MetricRow::from_gains("x".into(), 1, 0.0, &gains);
    let mean = 3.0;
    let sd = ((4.0 + 0.0 + 1.0 + 9.0) / 3.0f64).sqrt();
    assert!((row.stderr - sd / 2.0).abs() < 1e-15);
    assert!((row.stderr_db() - 10.0 / 10f64.ln() * sd / 2.0 / mean).abs() < 1e-12);
}

#[test]
fn perfect_csi_mean_is_mean_top_singular_value() {
    let spec = small_spec();
    let cfg = spec.protocol(2, 0.0);
    let model = spec.channel_model();
    let eval = evaluate(&PerfectCsi, &cfg, &model, 200, 11, 1).unwrap();
    let oracle: f64 = (0..200)
        .map(|i| {
            let chan = model.sample(&mut episode_rng(11, i)).unwrap();
            top_singular_pair(chan.direct_matrix().unwrap()).unwrap().sigma.powi(2)
        })
        .sum::<f64>()
        / 200.0;
    assert!((eval.row.mean_gain - oracle).abs() <= 1e-12 * oracle);
    assert_eq!(eval.row.n, 200);
}

#[test]
fn evaluation_is_reproducible_across_workers() {
    let spec = small_spec();
    let cfg = spec.protocol(3, 0.0);
    let model = spec.channel_model();
    let p = ActiveSensing::new(cfg, spec.net.clone(), RisSensing::Active, 1).unwrap();
    let a = evaluate(&p, &cfg, &model, 64, 5, 1).unwrap();
    let b = evaluate(&p, &cfg, &model, 64, 5, 3).unwrap();
    let c = evaluate(&p, &cfg, &model, 64, 5, 1).unwrap();
    let bits = |e: &Evaluation| e.gains.iter().map(|g| g.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&a), bits(&c));
    let d = evaluate(&p, &cfg, &model, 64, 6, 1).unwrap();
    assert_ne!(bits(&a), bits(&d));
}

use crate::policies::ActiveSensing;

#[test]
fn doubling_episodes_shrinks_stderr() {
    let spec = small_spec();
    let cfg = spec.protocol(1, 0.0);
    let model = spec.channel_model();
    let p = crate::policies::FixedSensing::new(cfg, spec.net.clone(), crate::policies::SensingKind::Random, 2).unwrap();
    let small = evaluate(&p, &cfg, &model, 2000, 9, 0).unwrap().row;
    let large = evaluate(&p, &cfg, &model, 4000, 9, 0).unwrap().row;
    let ratio = large.stderr / small.stderr;
    assert!((ratio - 0.5f64.sqrt()).abs() < 0.2 * 0.5f64.sqrt(), "ratio {ratio}");
}

#[test]
fn zero_epochs_leave_the_policy_untouched() {
    let mut spec = small_spec();
    spec.train.max_epochs = 0;
    let cfg = spec.protocol(2, 0.0);
    let model = spec.channel_model();
    let mut p = LearnedPolicy::new(PolicyId::Active(RisSensing::Active), cfg, spec.net.clone(), 3).unwrap();
    let before = p.store().clone();
    let report = train(&mut p, &model, &spec.train).unwrap();
    assert!(p.store().bit_identical(&before));
    assert_eq!(report.steps, 0);
    assert_eq!(report.curve.epochs.len(), 1);
    let fresh = LearnedPolicy::new(PolicyId::Active(RisSensing::Active), cfg, spec.net.clone(), 3).unwrap();
    let e1 = evaluate(&p, &cfg, &model, 50, 1, 1).unwrap();
    let e2 = evaluate(&fresh, &cfg, &model, 50, 1, 1).unwrap();
    assert_eq!(e1, e2);
}

use crate::policies::Trainable;

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let spec = small_spec();
    let cfg = spec.protocol(2, 0.0);
    let model = spec.channel_model();
    let run = || {
        let mut p = LearnedPolicy::new(PolicyId::Fixed(crate::policies::SensingKind::Learned), cfg, spec.net.clone(), 4).unwrap();
        let r = train(&mut p, &model, &spec.train).unwrap();
        (p, r)
    };
    let (p1, r1) = run();
    let (p2, r2) = run();
    assert_eq!(r1, r2);
    assert!(p1.store().bit_identical(p2.store()));
    let valid = validation_set(&p1, &model, spec.train.validation_size, spec.train.seed).unwrap();
    let v = batched_gain(&p1, &valid).unwrap();
    assert_eq!(v.to_bits(), r1.best_validation.to_bits());
    assert_eq!(r1.curve.epochs[r1.best_epoch].validation_gain, r1.best_validation);
    assert!(r1.curve.to_csv().starts_with("epoch,steps,lr,train_gain,validation_gain\n"));
}

#[test]
fn plateau_drops_the_rate_then_stops() {
    let mut spec = small_spec();
    spec.train = TrainConfig {
        batch_size: 8,
        steps_per_epoch: 1,
        max_epochs: 1000,
        validation_size: 16,
        patience: 1,
        lr: 1e-12,
        lr_decay: 0.5,
        lr_drops: 2,
        seed: 0,
    };
    let cfg = spec.protocol(1, 0.0);
    let mut p = LearnedPolicy::new(PolicyId::Active(RisSensing::Active), cfg, spec.net.clone(), 4).unwrap();
    let r = train(&mut p, &spec.channel_model(), &spec.train).unwrap();
    // with a negligible rate nothing improves for long
    assert!(r.curve.epochs.len() < 100, "{} epochs", r.curve.epochs.len());
    let lrs: Vec<f64> = r.curve.epochs.iter().map(|e| e.lr).collect();
    assert!(lrs.iter().any(|&l| l == 0.25e-12));
}

#[test]
fn non_finite_parameters_abort_training() {
    let spec = small_spec();
    let cfg = spec.protocol(2, 0.0);
    let mut p = LearnedPolicy::new(PolicyId::Active(RisSensing::Active), cfg, spec.net.clone(), 4).unwrap();
    let id = p.store().id("a.lstm.w_i").unwrap();
    p.store_mut().value_mut(id).as_mut_slice()[0] = f64::NAN;
    let err = train(&mut p, &spec.channel_model(), &spec.train).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn active_policy_learns_a_single_path_toy() {
    let geom = Geometry::direct(4, 2);
    let cfg = ProtocolConfig::from_snr_db(2, 40.0, geom, LinkMode::Direct);
    let model = ChannelModel::direct(geom, 1);
    let net = NetConfig {
        hidden_a: 32,
        hidden_b: 32,
        head: vec![32, 32],
        batch_norm: true,
    };
    let mut p = ActiveSensing::new(cfg, net, RisSensing::Active, 7).unwrap();
    let tc = TrainConfig {
        batch_size: 128,
        steps_per_epoch: 50,
        max_epochs: 60,
        validation_size: 1000,
        patience: 5,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    train(&mut p, &model, &tc).unwrap();
    let eval = evaluate(&p, &cfg, &model, 2000, 123, 0).unwrap();
    let anchor = evaluate(&PerfectCsi, &cfg, &model, 2000, 123, 0).unwrap();
    let ratio = eval.row.mean_gain / anchor.row.mean_gain;
    assert!(ratio >= 0.95, "reached {ratio:.3} of the perfect-CSI gain");
}

#[test]
fn perfect_csi_always_matches_direction_one() {
    let spec = small_spec();
    let cfg = spec.protocol(1, 0.0);
    let stats = direction_stats(&PerfectCsi, &cfg, &spec.channel_model(), 300, 3, 1, 1).unwrap();
    assert_eq!(stats.counts, vec![300, 0, 0]);
    assert_eq!(stats.histograms[0].total(), 300);
    assert!(stats.to_csv().starts_with("direction,proportion,count\n1,1,300\n"));
}

struct RandomBeams;

impl Policy for RandomBeams {
    fn name(&self) -> String {
        "random-beams".into()
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> crate::Result<Agents<'a>> {
        let mut rng = Rng::new(ctx.seed);
        let g = ctx.config.geometry;
        Ok(crate::policies::constant_agents(rng.unit_vector(g.mt), rng.unit_vector(g.mr), None))
    }
}

#[test]
fn random_beams_match_the_sampling_oracle() {
    let spec = small_spec();
    let cfg = spec.protocol(1, 0.0);
    let model = spec.channel_model();
    let n = 6000;
    let stats = direction_stats(&RandomBeams, &cfg, &model, n, 3, 21, 0).unwrap();
    // independent draws of channels and beams
    let mut rng = Rng::new(99);
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let chan = model.sample(&mut rng).unwrap();
        let d = crate::numerics::svd(chan.direct_matrix().unwrap()).unwrap();
        let (wt, wr) = (rng.unit_vector(8), rng.unit_vector(4));
        let dg: Vec<f64> = (0..3)
            .map(|i| (crate::numerics::inner(&wt, &d.left(i)) * crate::numerics::inner(&d.right(i), &wr)).norm_sqr())
            .collect();
        counts[argmax(&dg)] += 1;
    }
    for (a, b) in stats.proportions().iter().zip(counts) {
        let b = b as f64 / n as f64;
        // both are binomial proportions near 1/3
        assert!((a - b).abs() < 0.04, "{a} vs {b}");
    }
}

#[test]
fn histogram_binning() {
    let mut h = Histogram::new(vec![0.0, 1.0, 2.0]).unwrap();
    for x in [-5.0, 0.0, 0.5, 1.0, 1.5, 2.0, 9.0] {
        h.add(x);
    }
    assert_eq!(h.counts, vec![3, 4]);
    assert!(Histogram::new(vec![1.0, 1.0]).is_err());
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
}

#[test]
fn angle_grid_endpoints_are_exact() {
    let g = angle_grid(PATTERN_POINTS);
    assert_eq!(g.len(), 361);
    assert_eq!(g[0], -90.0);
    assert_eq!(g[360], 90.0);
    assert_eq!(g[180], 0.0);
    assert!(g.windows(2).all(|w| (w[1] - w[0] - 0.5).abs() < 1e-12));
}

#[test]
fn pattern_integral_does_not_depend_on_direction() {
    let g = angle_grid(4001);
    let mut rng = Rng::new(5);
    for m in [4usize, 8] {
        for _ in 0..5 {
            let w = rng.unit_vector(m);
            let p: Vec<f64> = g.iter().map(|d| array_response(&w, d.to_radians())).collect();
            let i = pattern_integral(&g, &p).unwrap();
            assert!((i - 2.0 / m as f64).abs() < 1e-3 / m as f64, "m {m}: {i}");
        }
    }
}

#[test]
fn matched_beam_peaks_at_the_path() {
    let geom = Geometry::direct(16, 8);
    let cfg = ProtocolConfig::from_snr_db(1, 0.0, geom, LinkMode::Direct);
    for deg in [-51.5, -10.0, 0.0, 33.0] {
        let chan = crate::channel::ChannelRealization::from_direct_paths(
            geom,
            vec![crate::channel::DirectPath {
                gain: C64::new(0.3, 0.4),
                aoa: f64::to_radians(deg),
                aod: f64::to_radians(-deg / 2.0),
            }],
        );
        let trace = run_one(&PerfectCsi, &cfg, &chan, 0, &mut Rng::new(0)).unwrap();
        let files = episode_patterns(&trace, PATTERN_POINTS);
        assert_eq!(files.len(), 3);
        let (name, fin) = files.last().unwrap();
        assert_eq!(name, "final");
        // within half a grid step of the path
        let pt = peak_angle(&fin.angles_deg, fin.column("w_t").unwrap());
        let pr = peak_angle(&fin.angles_deg, fin.column("w_r").unwrap());
        assert!((pt - deg).abs() <= 0.25, "{pt} vs {deg}");
        assert!((pr + deg / 2.0).abs() <= 0.25, "{pr} vs {}", -deg / 2.0);
        let csv = fin.to_csv();
        assert!(csv.starts_with("angle_deg,w_t,w_r\n-90,"));
        assert!(csv.lines().last().unwrap().starts_with("90,"));
    }
}

#[test]
fn sweep_covers_each_path_count() {
    let spec = small_spec();
    let cfg = spec.protocol(1, 0.0);
    let rows = generalization_sweep(&PerfectCsi, &cfg, &spec.channel_model(), &SWEEP_PATHS, 50, 1, 1).unwrap();
    assert_eq!(rows.iter().map(|r| r.paths).collect::<Vec<_>>(), SWEEP_PATHS);
    // more paths carry more energy on average
    assert!(rows[5].row.mean_gain > rows[0].row.mean_gain);
    assert!(sweep_csv(&rows).starts_with("paths,policy,L,"));
}

#[test]
fn policy_ids_round_trip() {
    for name in LEARNED_NAMES.iter().chain(BASELINE_NAMES) {
        let id: PolicyId = name.parse().unwrap();
        assert_eq!(id.to_string(), *name);
    }
    let err = "nope".parse::<PolicyId>().unwrap_err().to_string();
    assert!(err.contains("perfect-csi") && err.contains("active-ris-learned"));
    let cfg = small_spec().protocol(1, 0.0);
    assert!(baseline(PolicyId::Bcd, &cfg, 3, Default::default()).is_err());
    assert!(baseline(PolicyId::Omp, &cfg, 3, Default::default()).is_ok());
    assert!(LearnedPolicy::new(PolicyId::Active(RisSensing::Learned), cfg, NetConfig::default(), 0).is_err());
}

#[test]
fn learned_policy_names_match_ids() {
    let spec = small_spec();
    let cfg = spec.protocol(1, 0.0);
    let rcfg = ProtocolConfig::from_snr_db(1, 0.0, Geometry::with_ris(8, 4, 4, 2), LinkMode::Ris);
    for name in LEARNED_NAMES {
        let id: PolicyId = name.parse().unwrap();
        let c = if id.supports(LinkMode::Direct) { cfg } else { rcfg };
        let p = LearnedPolicy::new(id, c, spec.net.clone(), 0).unwrap();
        // the RIS variant of "active" reports its surface mode
        assert!(p.name() == *name || p.name() == "active-ris-active", "{}", p.name());
    }
}

#[test]
fn selftest_passes() {
    for r in selftest() {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}

