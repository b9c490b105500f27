//! Sparse multipath channels, direct and through a reconfigurable surface.

mod dump;
mod gain;
mod model;
mod steering;

pub use dump::{dump_channels, parse_channels, write_channel};
pub use gain::{array_response, beamforming_gain, bilinear_gain, direction_gain, direction_gains, ris_array_response};
pub use model::{
    assemble_direct, assemble_ris, cascaded, generate_direct, generate_ris, AngleRange, ChannelMatrices,
    ChannelModel, ChannelRealization, Direction, DirectPath, Geometry, LinkMode, PathSet, RisPath,
};
pub use steering::{steering_ris, steering_ula, steering_ula_azel};
pub(crate) use model::check_unit_modulus;
pub(crate) use steering::phase_ramp;
