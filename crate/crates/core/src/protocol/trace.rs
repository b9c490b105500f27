use std::fmt::Write as _;

use crate::numerics::C64;

/// Everything exchanged in one ping-pong round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub wt_a: Vec<C64>,
    pub wr_b: Vec<C64>,
    pub v_ab: Option<Vec<C64>>,
    pub y_b: C64,
    pub n_b: C64,
    pub wt_b: Vec<C64>,
    pub wr_a: Vec<C64>,
    pub v_ba: Option<Vec<C64>>,
    pub y_a: C64,
    pub n_a: C64,
}

/// Data-transmission design after the last round.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalDesign {
    pub w_t: Vec<C64>,
    pub w_r: Vec<C64>,
    pub v: Option<Vec<C64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub rounds: Vec<RoundRecord>,
    pub design: FinalDesign,
}

fn scalar(out: &mut String, key: &str, z: C64) {
    let _ = write!(out, " {key}={:.16e},{:.16e}", z.re, z.im);
}

fn vector(out: &mut String, key: &str, v: &[C64]) {
    let _ = write!(out, " {key}=");
    for (k, z) in v.iter().enumerate() {
        if k > 0 {
            out.push(';');
        }
        let _ = write!(out, "{:.16e},{:.16e}", z.re, z.im);
    }
}

impl EpisodeTrace {
    /// Pilot symbols spent: two per round.
    pub fn overhead(&self) -> usize {
        2 * self.rounds.len()
    }

    /// One `round` line per round and a closing `final` line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in self.rounds.iter().enumerate() {
            let _ = write!(out, "round l={l}");
            vector(&mut out, "wt_a", &r.wt_a);
            vector(&mut out, "wr_b", &r.wr_b);
            if let Some(v) = &r.v_ab {
                vector(&mut out, "v_ab", v);
            }
            scalar(&mut out, "y_b", r.y_b);
            scalar(&mut out, "n_b", r.n_b);
            vector(&mut out, "wt_b", &r.wt_b);
            vector(&mut out, "wr_a", &r.wr_a);
            if let Some(v) = &r.v_ba {
                vector(&mut out, "v_ba", v);
            }
            scalar(&mut out, "y_a", r.y_a);
            scalar(&mut out, "n_a", r.n_a);
            out.push('\n');
        }
        out.push_str("final");
        vector(&mut out, "w_t", &self.design.w_t);
        vector(&mut out, "w_r", &self.design.w_r);
        if let Some(v) = &self.design.v {
            vector(&mut out, "v", v);
        }
        out.push('\n');
        out
    }
}
