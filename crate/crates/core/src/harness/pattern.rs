use std::fmt::Write as _;

use crate::channel::{array_response, ris_array_response};
use crate::error::{Error, Result};
use crate::numerics::C64;
use crate::protocol::EpisodeTrace;

pub const PATTERN_POINTS: usize = 361;

/// `points` angles in degrees, uniform over `[-90, 90]` with both ends exact.
pub fn angle_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|k| {
                if k + 1 == points {
                    90.0
                } else {
                    -90.0 + 180.0 * k as f64 / (points - 1) as f64
                }
            })
            .collect(),
    }
}

/// Patterns of several vectors on a common angle grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternTable {
    pub angles_deg: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl PatternTable {
    pub fn new(angles_deg: Vec<f64>) -> Self {
        Self {
            angles_deg,
            columns: Vec::new(),
        }
    }

    /// Adds the array response of a beamformer.
    pub fn push_beam(&mut self, name: &str, w: &[C64]) {
        let col = self.angles_deg.iter().map(|d| array_response(w, d.to_radians())).collect();
        self.columns.push((name.to_string(), col));
    }

    /// Adds the surface response of reflection coefficients.
    pub fn push_surface(&mut self, name: &str, v: &[C64]) {
        let col = self.angles_deg.iter().map(|d| ris_array_response(v, d.to_radians())).collect();
        self.columns.push((name.to_string(), col));
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_deg");
        for (name, _) in &self.columns {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (i, a) in self.angles_deg.iter().enumerate() {
            let _ = write!(out, "{a}");
            for (_, col) in &self.columns {
                let _ = write!(out, ",{}", col[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// Trapezoid integral of a pattern over `sin(angle)`. For a unit-norm
/// `M`-element beam the exact value is `2 / M`, whatever the beam points at.
pub fn pattern_integral(angles_deg: &[f64], pattern: &[f64]) -> Result<f64> {
    if angles_deg.len() != pattern.len() || angles_deg.len() < 2 {
        return Err(Error::InvalidArgument("pattern and grid must match and have two points".into()));
    }
    let s: Vec<f64> = angles_deg.iter().map(|d| d.to_radians().sin()).collect();
    Ok(s.windows(2)
        .zip(pattern.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum())
}

/// Angle of the largest pattern value, the first on ties.
pub fn peak_angle(angles_deg: &[f64], pattern: &[f64]) -> f64 {
    angles_deg[super::directions::argmax(pattern)]
}

/// Pattern files of one episode: per round one table for each side (its
/// transmit and receive sensing beams), and one table of final designs.
/// RIS reflections appear in the round tables of the side that listens
/// through them.
pub fn episode_patterns(trace: &EpisodeTrace, points: usize) -> Vec<(String, PatternTable)> {
    let grid = angle_grid(points);
    let mut out = Vec::with_capacity(2 * trace.rounds.len() + 1);
    for (l, r) in trace.rounds.iter().enumerate() {
        let mut a = PatternTable::new(grid.clone());
        a.push_beam("transmit", &r.wt_a);
        a.push_beam("receive", &r.wr_a);
        if let Some(v) = &r.v_ba {
            a.push_surface("reflection", v);
        }
        out.push((format!("a_round{l}"), a));
        let mut b = PatternTable::new(grid.clone());
        b.push_beam("transmit", &r.wt_b);
        b.push_beam("receive", &r.wr_b);
        if let Some(v) = &r.v_ab {
            b.push_surface("reflection", v);
        }
        out.push((format!("b_round{l}"), b));
    }
    let mut f = PatternTable::new(grid);
    f.push_beam("w_t", &trace.design.w_t);
    f.push_beam("w_r", &trace.design.w_r);
    if let Some(v) = &trace.design.v {
        f.push_surface("v", v);
    }
    out.push(("final".to_string(), f));
    out
}
