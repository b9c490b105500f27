mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use pingpong::harness::{
    self, baseline, direction_stats, draw_episode, episode_patterns, evaluate, generalization_sweep, sweep_csv,
    ExperimentSpec, LearnedPolicy, MetricTable, PolicyId, BASELINE_NAMES, PATTERN_POINTS, SWEEP_PATHS,
};
use pingpong::nn::checkpoint;
use pingpong::policies::Trainable;
use pingpong::protocol::{run_episode, EpisodeContext, Policy, ProtocolConfig};
use pingpong::Error;

const AFTER_HELP: &str = "\
Environment:
  PINGPONG_OUTPUT_DIR  output directory (overrides experiment.output_dir)
  PINGPONG_WORKERS     evaluation threads, 0 = all cores (overrides experiment.workers)

Exit codes: 0 success, 1 I/O or self-test failure, 2 configuration error,
3 training failure, 4 checkpoint mismatch.";

#[derive(Parser)]
#[command(name = "pingpong", version, about = "Ping-pong pilot beam alignment experiments", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set training.lr=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, env = "PINGPONG_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, env = "PINGPONG_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned policy at every grid point.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the configured policy on fresh channels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint of a learned policy; defaults to the one `train` wrote.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write strongest-direction statistics.
        #[arg(long)]
        directions: bool,
        /// Also evaluate on 1..=6 paths.
        #[arg(long)]
        sweep: bool,
    },
    /// Evaluate an analytic baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// One of perfect-csi, omp, bisection, power-iteration, bcd, random-ris.
        name: String,
    },
    /// Write beam patterns of one episode.
    Beampattern {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        channel_seed: u64,
        /// Run the episode without pilot noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Run gradient checks and oracle tests.
    Selftest,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn mismatch(message: impl Into<String>) -> Failure {
    Failure {
        code: 4,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Checkpoint(_) | Error::CheckpointMismatch(_) => 4,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T> = Result<T, Failure>;

struct Run {
    spec: ExperimentSpec,
    out: PathBuf,
}

impl Run {
    fn load(common: &Common, policy_override: Option<&str>) -> CliResult<Self> {
        let mut overrides = common.overrides.clone();
        if let Some(p) = policy_override {
            overrides.push(format!("experiment.policy=\"{p}\""));
        }
        if let Some(d) = &common.output_dir {
            overrides.push(format!("experiment.output_dir={}", toml::Value::String(d.display().to_string())));
        }
        if let Some(w) = common.workers {
            overrides.push(format!("experiment.workers={w}"));
        }
        let config = config::load(common.config.as_deref(), &overrides).map_err(config_error)?;
        let spec = config.spec().map_err(config_error)?;
        let out = spec.output_dir.clone();
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("resolved_config.toml"), config.to_toml())?;
        Ok(Self { spec, out })
    }

    fn grid(&self) -> Vec<(usize, f64)> {
        let mut g = Vec::new();
        for &l in &self.spec.rounds {
            for &s in &self.spec.snr_db {
                g.push((l, s));
            }
        }
        g
    }

    fn stem(&self, rounds: usize, snr_db: f64) -> String {
        format!("{}_L{rounds}_snr{snr_db}", self.spec.policy)
    }

    fn write(&self, name: &str, text: &str) -> CliResult<()> {
        std::fs::write(self.out.join(name), text)?;
        Ok(())
    }

    /// Appends a timestamped line to the sidecar log.
    fn log(&self, line: &str) -> CliResult<()> {
        use std::io::Write;
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.out.join("run.log"))?;
        writeln!(f, "{t} {line}")?;
        Ok(())
    }

    fn learned(&self, rounds: usize, snr_db: f64) -> CliResult<LearnedPolicy> {
        Ok(LearnedPolicy::new(
            self.spec.policy,
            self.spec.protocol(rounds, snr_db),
            self.spec.net.clone(),
            self.spec.seed,
        )?)
    }

    /// Builds the policy at one grid point, loading its checkpoint if it is
    /// learned.
    fn policy(&self, rounds: usize, snr_db: f64, ckpt: Option<&Path>) -> CliResult<Box<dyn Policy>> {
        let config = self.spec.protocol(rounds, snr_db);
        if !self.spec.policy.is_learned() {
            if let Some(p) = ckpt {
                return Err(mismatch(format!(
                    "`{}` is an analytic baseline and takes no checkpoint (got {})",
                    self.spec.policy,
                    p.display()
                )));
            }
            let range = self.spec.azimuth;
            return Ok(baseline(self.spec.policy, &config, self.spec.sparsity(), range)?);
        }
        let path = match ckpt {
            Some(p) => p.to_path_buf(),
            None => self.out.join(format!("{}.ckpt", self.stem(rounds, snr_db))),
        };
        if !path.exists() {
            return Err(mismatch(format!("learned policy `{}` needs a checkpoint; {} not found", self.spec.policy, path.display())));
        }
        let mut policy = self.learned(rounds, snr_db)?;
        let loaded = checkpoint::load(&path)?;
        checkpoint::restore_into(policy.store_mut(), loaded)?;
        Ok(Box::new(policy))
    }

    fn single_point(&self, ckpt: Option<&Path>) -> CliResult<()> {
        if ckpt.is_some() && self.grid().len() > 1 {
            return Err(config_error("--checkpoint needs a single rounds/snr_db grid point"));
        }
        Ok(())
    }
}

fn cmd_train(common: &Common) -> CliResult<()> {
    let run = Run::load(common, None)?;
    if !run.spec.policy.is_learned() {
        return Err(config_error(format!("`{}` is an analytic baseline; nothing to train", run.spec.policy)));
    }
    let model = run.spec.channel_model();
    let mut summary = String::from("checkpoint,best_epoch,best_validation_gain,steps,sha256\n");
    for (l, s) in run.grid() {
        let stem = run.stem(l, s);
        let mut policy = run.learned(l, s)?;
        run.log(&format!("train {stem} start seed {} train_seed {}", run.spec.seed, run.spec.train.seed))?;
        match harness::train(&mut policy, &model, &run.spec.train) {
            Ok(report) => {
                let path = run.out.join(format!("{stem}.ckpt"));
                let bytes = checkpoint::encode(policy.store());
                std::fs::write(&path, &bytes)?;
                run.write(&format!("{stem}_curve.csv"), &report.curve.to_csv())?;
                let sha = checkpoint::sha256_hex(&bytes);
                let _ = writeln!(
                    summary,
                    "{stem}.ckpt,{},{},{},{sha}",
                    report.best_epoch, report.best_validation, report.steps
                );
                run.log(&format!("train {stem} done best_epoch {} sha256 {sha}", report.best_epoch))?;
            }
            Err(e @ Error::Divergence { .. }) => {
                checkpoint::save(policy.store(), &run.out.join(format!("{stem}.last-good.ckpt")))?;
                run.log(&format!("train {stem} failed: {e}"))?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    run.write(&format!("train_{}.csv", run.spec.policy), &summary)
}

fn metric_table(run: &Run, ckpt: Option<&Path>) -> CliResult<MetricTable> {
    run.single_point(ckpt)?;
    let model = run.spec.channel_model();
    let mut table = MetricTable::default();
    for (l, s) in run.grid() {
        let policy = run.policy(l, s, ckpt)?;
        let config = run.spec.protocol(l, s);
        let e = evaluate(policy.as_ref(), &config, &model, run.spec.eval_episodes, run.spec.seed, run.spec.workers)?;
        let mut row = e.row;
        row.policy = run.spec.policy.to_string();
        table.rows.push(row);
    }
    Ok(table)
}

fn cmd_evaluate(common: &Common, ckpt: Option<&Path>, directions: bool, sweep: bool) -> CliResult<()> {
    let run = Run::load(common, None)?;
    let table = metric_table(&run, ckpt)?;
    run.write(&format!("metrics_{}.csv", run.spec.policy), &table.to_csv())?;
    let model = run.spec.channel_model();
    let (episodes, seed, workers) = (run.spec.eval_episodes, run.spec.seed, run.spec.workers);
    if directions {
        let g = run.spec.geometry;
        let k = 3.min(g.mt).min(g.mr);
        for (l, s) in run.grid() {
            let policy = run.policy(l, s, ckpt)?;
            let config = run.spec.protocol(l, s);
            let stats = direction_stats(policy.as_ref(), &config, &model, episodes, k, seed, workers)?;
            let stem = run.stem(l, s);
            run.write(&format!("directions_{stem}.csv"), &stats.to_csv())?;
            run.write(&format!("direction_histograms_{stem}.csv"), &stats.histograms_csv())?;
        }
    }
    if sweep {
        let mut rows = Vec::new();
        for (l, s) in run.grid() {
            let policy = run.policy(l, s, ckpt)?;
            let config = run.spec.protocol(l, s);
            let mut part = generalization_sweep(policy.as_ref(), &config, &model, &SWEEP_PATHS, episodes, seed, workers)?;
            for r in &mut part {
                r.row.policy = run.spec.policy.to_string();
            }
            rows.extend(part);
        }
        run.write(&format!("sweep_{}.csv", run.spec.policy), &sweep_csv(&rows))?;
    }
    run.log(&format!("evaluate {} ok", run.spec.policy))
}

fn cmd_baseline(common: &Common, name: &str) -> CliResult<()> {
    let id: PolicyId = name.parse().ok().filter(|id: &PolicyId| !id.is_learned()).ok_or_else(|| {
        config_error(format!("unknown baseline `{name}`; valid: {}", BASELINE_NAMES.join(", ")))
    })?;
    let run = Run::load(common, Some(&id.to_string()))?;
    let table = metric_table(&run, None)?;
    run.write(&format!("metrics_{id}.csv"), &table.to_csv())?;
    run.log(&format!("baseline {id} ok"))
}

fn cmd_beampattern(common: &Common, ckpt: Option<&Path>, channel_seed: u64, noiseless: bool) -> CliResult<()> {
    let run = Run::load(common, None)?;
    let (l, s) = (run.spec.rounds[0], run.spec.snr_db[0]);
    let policy = run.policy(l, s, ckpt)?;
    let config: ProtocolConfig = run.spec.protocol(l, s);
    let (chan, policy_seed, mut rng) = draw_episode(&run.spec.channel_model(), channel_seed, 0)?;
    let ctx = EpisodeContext {
        config: &config,
        channel: &chan,
        seed: policy_seed,
    };
    let mut agents = policy.spawn(&ctx)?;
    let trace = run_episode(&config, &chan, &mut agents, policy.feedback(), &mut rng, noiseless)?;
    let stem = run.stem(l, s);
    for (name, table) in episode_patterns(&trace, PATTERN_POINTS) {
        run.write(&format!("pattern_{stem}_{name}.csv"), &table.to_csv())?;
    }
    run.log(&format!("beampattern {stem} channel_seed {channel_seed}"))
}

fn cmd_selftest() -> CliResult<()> {
    let results = harness::selftest();
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure {
            code: 1,
            message: format!("{failed} of {} self-tests failed", results.len()),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common } => cmd_train(common),
        Command::Evaluate {
            common,
            checkpoint,
            directions,
            sweep,
        } => cmd_evaluate(common, checkpoint.as_deref(), *directions, *sweep),
        Command::Baseline { common, name } => cmd_baseline(common, name),
        Command::Beampattern {
            common,
            checkpoint,
            channel_seed,
            noiseless,
        } => cmd_beampattern(common, checkpoint.as_deref(), *channel_seed, *noiseless),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
