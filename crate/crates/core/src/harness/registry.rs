use std::fmt;
use std::str::FromStr;

use crate::channel::{AngleRange, LinkMode};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParameterStore, Var};
use crate::policies::{
    ActiveSensing, Bcd, Bisection, FixedSensing, NetConfig, Omp, PerfectCsi, PowerIteration, RandomRis, RisSensing,
    SensingKind, TrainBatch, Trainable,
};
use crate::protocol::{Agents, EpisodeContext, Feedback, Policy, ProtocolConfig};

/// Every policy selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyId {
    Active(RisSensing),
    Fixed(SensingKind),
    PerfectCsi,
    Omp,
    Bisection,
    PowerIteration,
    Bcd,
    RandomRis,
}

pub const LEARNED_NAMES: &[&str] = &[
    "active",
    "active-ris-learned",
    "active-ris-random",
    "learned-sensing",
    "random-sensing",
];

pub const BASELINE_NAMES: &[&str] = &["perfect-csi", "omp", "bisection", "power-iteration", "bcd", "random-ris"];

impl PolicyId {
    pub fn is_learned(self) -> bool {
        matches!(self, Self::Active(_) | Self::Fixed(_))
    }

    /// Link modes the policy supports.
    pub fn supports(self, mode: LinkMode) -> bool {
        match self {
            Self::Active(RisSensing::Active) | Self::Fixed(_) | Self::PerfectCsi => true,
            Self::Active(_) | Self::Bcd | Self::RandomRis => mode == LinkMode::Ris,
            Self::Omp | Self::Bisection | Self::PowerIteration => mode == LinkMode::Direct,
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Active(RisSensing::Active) => f.write_str("active"),
            Self::Active(m) => write!(f, "active-ris-{m}"),
            Self::Fixed(k) => write!(f, "{k}-sensing"),
            Self::PerfectCsi => f.write_str("perfect-csi"),
            Self::Omp => f.write_str("omp"),
            Self::Bisection => f.write_str("bisection"),
            Self::PowerIteration => f.write_str("power-iteration"),
            Self::Bcd => f.write_str("bcd"),
            Self::RandomRis => f.write_str("random-ris"),
        }
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "active" | "active-ris-active" => Self::Active(RisSensing::Active),
            "active-ris-learned" => Self::Active(RisSensing::Learned),
            "active-ris-random" => Self::Active(RisSensing::Random),
            "learned-sensing" => Self::Fixed(SensingKind::Learned),
            "random-sensing" => Self::Fixed(SensingKind::Random),
            "perfect-csi" => Self::PerfectCsi,
            "omp" => Self::Omp,
            "bisection" => Self::Bisection,
            "power-iteration" => Self::PowerIteration,
            "bcd" => Self::Bcd,
            "random-ris" => Self::RandomRis,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown policy `{s}`; valid: {}, {}",
                    LEARNED_NAMES.join(", "),
                    BASELINE_NAMES.join(", ")
                )))
            }
        })
    }
}

fn check_mode(id: PolicyId, mode: LinkMode) -> Result<()> {
    if id.supports(mode) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("policy `{id}` does not support the {mode} link")))
    }
}

/// A trainable policy chosen at run time.
#[derive(Clone, Debug)]
pub enum LearnedPolicy {
    Active(ActiveSensing),
    Fixed(FixedSensing),
}

impl LearnedPolicy {
    pub fn new(id: PolicyId, config: ProtocolConfig, net: NetConfig, seed: u64) -> Result<Self> {
        check_mode(id, config.mode)?;
        match id {
            PolicyId::Active(m) => Ok(Self::Active(ActiveSensing::new(config, net, m, seed)?)),
            PolicyId::Fixed(k) => Ok(Self::Fixed(FixedSensing::new(config, net, k, seed)?)),
            _ => Err(Error::InvalidArgument(format!("`{id}` is not a learned policy"))),
        }
    }
}

impl Policy for LearnedPolicy {
    fn name(&self) -> String {
        match self {
            Self::Active(p) => p.name(),
            Self::Fixed(p) => p.name(),
        }
    }

    fn feedback(&self) -> Feedback {
        match self {
            Self::Active(p) => p.feedback(),
            Self::Fixed(p) => p.feedback(),
        }
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        match self {
            Self::Active(p) => p.spawn(ctx),
            Self::Fixed(p) => p.spawn(ctx),
        }
    }
}

impl Trainable for LearnedPolicy {
    fn store(&self) -> &ParameterStore {
        match self {
            Self::Active(p) => p.store(),
            Self::Fixed(p) => p.store(),
        }
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        match self {
            Self::Active(p) => p.store_mut(),
            Self::Fixed(p) => p.store_mut(),
        }
    }

    fn config(&self) -> &ProtocolConfig {
        match self {
            Self::Active(p) => p.config(),
            Self::Fixed(p) => p.config(),
        }
    }

    fn unroll(&self, g: &mut Graph<'_>, batch: &TrainBatch) -> Result<Var> {
        match self {
            Self::Active(p) => p.unroll(g, batch),
            Self::Fixed(p) => p.unroll(g, batch),
        }
    }
}

/// An analytic baseline. `sparsity` is the OMP path budget.
pub fn baseline(id: PolicyId, config: &ProtocolConfig, sparsity: usize, range: AngleRange) -> Result<Box<dyn Policy>> {
    check_mode(id, config.mode)?;
    Ok(match id {
        PolicyId::PerfectCsi => Box::new(PerfectCsi),
        PolicyId::Omp => Box::new(Omp::new(config.geometry, sparsity)),
        PolicyId::Bisection => Box::new(Bisection::new(config.geometry, range)?),
        PolicyId::PowerIteration => Box::new(PowerIteration),
        PolicyId::Bcd => Box::new(Bcd),
        PolicyId::RandomRis => Box::new(RandomRis),
        _ => return Err(Error::InvalidArgument(format!("`{id}` is a learned policy"))),
    })
}
