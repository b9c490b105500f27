//! Shared fixtures for the criterion benchmarks.

use pingpong::channel::{ChannelModel, ChannelRealization, Geometry, LinkMode};
use pingpong::protocol::ProtocolConfig;
use pingpong::Rng;

/// Protocol and channel model of a direct link at 0 dB.
pub fn direct(mt: usize, mr: usize, rounds: usize) -> (ProtocolConfig, ChannelModel) {
    let g = Geometry::direct(mt, mr);
    (ProtocolConfig::from_snr_db(rounds, 0.0, g, LinkMode::Direct), ChannelModel::direct(g, 3))
}

/// Same through a surface of `n` elements on a 4-wide grid.
pub fn ris(mt: usize, mr: usize, n: usize, rounds: usize) -> (ProtocolConfig, ChannelModel) {
    let g = Geometry::with_ris(mt, mr, n, 4);
    (ProtocolConfig::from_snr_db(rounds, 0.0, g, LinkMode::Ris), ChannelModel::ris(g, 2, 2))
}

pub fn channels(model: &ChannelModel, n: usize, seed: u64) -> Vec<ChannelRealization> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| model.sample(&mut rng).unwrap()).collect()
}
