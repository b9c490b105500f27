use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, Rng, C64};

use super::steering::{steering_ris, steering_ula, steering_ula_azel};

/// Direct link, or a link whose direct path is blocked and which is served
/// by a reconfigurable surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkMode {
    Direct,
    Ris,
}

impl std::fmt::Display for LinkMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LinkMode::Direct => "direct",
            LinkMode::Ris => "ris",
        })
    }
}

impl std::str::FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(LinkMode::Direct),
            "ris" => Ok(LinkMode::Ris),
            other => Err(Error::InvalidArgument(format!(
                "unknown link mode `{other}` (expected direct or ris)"
            ))),
        }
    }
}

/// Array sizes. `ris_elements` and `ris_horizontal` are ignored for direct links.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub mt: usize,
    pub mr: usize,
    pub ris_elements: usize,
    pub ris_horizontal: usize,
}

impl Geometry {
    pub fn direct(mt: usize, mr: usize) -> Self {
        Self {
            mt,
            mr,
            ris_elements: 0,
            ris_horizontal: 0,
        }
    }

    pub fn with_ris(mt: usize, mr: usize, ris_elements: usize, ris_horizontal: usize) -> Self {
        Self {
            mt,
            mr,
            ris_elements,
            ris_horizontal,
        }
    }

    pub fn validate(&self, mode: LinkMode) -> Result<()> {
        if self.mt == 0 || self.mr == 0 {
            return Err(Error::InvalidArgument("arrays need at least one antenna".into()));
        }
        if mode == LinkMode::Ris
            && (self.ris_elements == 0
                || self.ris_horizontal == 0
                || self.ris_elements % self.ris_horizontal != 0)
        {
            return Err(Error::InvalidArgument(format!(
                "RIS of {} elements cannot be a grid with {} columns",
                self.ris_elements, self.ris_horizontal
            )));
        }
        Ok(())
    }
}

/// Closed interval of angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl AngleRange {
    pub fn degrees(min: f64, max: f64) -> Self {
        Self {
            min: min.to_radians(),
            max: max.to_radians(),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        rng.uniform_range(self.min, self.max)
    }
}

impl Default for AngleRange {
    fn default() -> Self {
        Self::degrees(-60.0, 60.0)
    }
}

/// One path of the direct channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectPath {
    pub gain: C64,
    /// Angle at the transmitter array (agent A).
    pub aoa: f64,
    /// Angle at the receiver array (agent B).
    pub aod: f64,
}

/// One path between an array and the surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RisPath {
    pub gain: C64,
    pub array_azimuth: f64,
    pub array_elevation: f64,
    pub ris_azimuth: f64,
    pub ris_elevation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PathSet {
    Direct(Vec<DirectPath>),
    Ris {
        /// Transmitter to surface, builds `T`.
        tx: Vec<RisPath>,
        /// Surface to receiver, builds `R`.
        rx: Vec<RisPath>,
    },
}

/// Assembled channel matrices.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelMatrices {
    /// Uplink `G` (`Mt x Mr`); the downlink is `G^H`.
    Direct { g: ComplexMatrix },
    /// `T` (`Mt x N`, surface to transmitter) and `R` (`N x Mr`, receiver to surface).
    Ris { t: ComplexMatrix, r: ComplexMatrix },
}

/// Direction of a pilot over the cascaded channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Agent A (transmitter) to agent B (receiver).
    AB,
    /// Agent B to agent A.
    BA,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub geometry: Geometry,
    pub paths: PathSet,
    pub matrices: ChannelMatrices,
}

/// Everything needed to draw channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModel {
    pub geometry: Geometry,
    pub mode: LinkMode,
    /// Path count of the direct link.
    pub paths: usize,
    pub ris_tx_paths: usize,
    pub ris_rx_paths: usize,
    pub azimuth: AngleRange,
    pub elevation: AngleRange,
}

impl ChannelModel {
    pub fn direct(geometry: Geometry, paths: usize) -> Self {
        Self {
            geometry,
            mode: LinkMode::Direct,
            paths,
            ris_tx_paths: 0,
            ris_rx_paths: 0,
            azimuth: AngleRange::default(),
            elevation: AngleRange::default(),
        }
    }

    pub fn ris(geometry: Geometry, tx_paths: usize, rx_paths: usize) -> Self {
        Self {
            geometry,
            mode: LinkMode::Ris,
            paths: 0,
            ris_tx_paths: tx_paths,
            ris_rx_paths: rx_paths,
            azimuth: AngleRange::default(),
            elevation: AngleRange::default(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<ChannelRealization> {
        match self.mode {
            LinkMode::Direct => generate_direct(self.geometry, self.azimuth, self.paths, rng),
            LinkMode::Ris => generate_ris(
                self.geometry,
                self.azimuth,
                self.elevation,
                self.ris_tx_paths,
                self.ris_rx_paths,
                rng,
            ),
        }
    }
}

/// `G = sum_i alpha_i a_t(aoa_i) a_r(aod_i)^H`.
pub fn assemble_direct(geometry: Geometry, paths: &[DirectPath]) -> ComplexMatrix {
    let mut g = ComplexMatrix::zeros(geometry.mt, geometry.mr);
    for p in paths {
        let at = steering_ula(geometry.mt, p.aoa);
        let ar = steering_ula(geometry.mr, p.aod);
        accumulate_outer(&mut g, p.gain, &at, &ar);
    }
    g
}

/// `T = sum alpha a_t a_v^H` and `R = sum alpha a_v a_r^H`.
pub fn assemble_ris(geometry: Geometry, tx: &[RisPath], rx: &[RisPath]) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let n = geometry.ris_elements;
    let nh = geometry.ris_horizontal;
    let mut t = ComplexMatrix::zeros(geometry.mt, n);
    for p in tx {
        let at = steering_ula_azel(geometry.mt, p.array_azimuth, p.array_elevation);
        let av = steering_ris(n, nh, p.ris_azimuth, p.ris_elevation)?;
        accumulate_outer(&mut t, p.gain, &at, &av);
    }
    let mut r = ComplexMatrix::zeros(n, geometry.mr);
    for p in rx {
        let av = steering_ris(n, nh, p.ris_azimuth, p.ris_elevation)?;
        let ar = steering_ula_azel(geometry.mr, p.array_azimuth, p.array_elevation);
        accumulate_outer(&mut r, p.gain, &av, &ar);
    }
    Ok((t, r))
}

fn accumulate_outer(m: &mut ComplexMatrix, gain: C64, left: &[C64], right: &[C64]) {
    for (i, l) in left.iter().enumerate() {
        let gl = gain * l;
        for (j, r) in right.iter().enumerate() {
            m[(i, j)] += gl * r.conj();
        }
    }
}

pub fn generate_direct(geometry: Geometry, range: AngleRange, paths: usize, rng: &mut Rng) -> Result<ChannelRealization> {
    geometry.validate(LinkMode::Direct)?;
    if paths == 0 {
        return Err(Error::InvalidArgument("a channel needs at least one path".into()));
    }
    let list: Vec<DirectPath> = (0..paths)
        .map(|_| {
            let gain = rng.complex_normal(1.0);
            let aoa = range.sample(rng);
            let aod = range.sample(rng);
            DirectPath { gain, aoa, aod }
        })
        .collect();
    Ok(ChannelRealization::from_direct_paths(geometry, list))
}

pub fn generate_ris(
    geometry: Geometry,
    azimuth: AngleRange,
    elevation: AngleRange,
    tx_paths: usize,
    rx_paths: usize,
    rng: &mut Rng,
) -> Result<ChannelRealization> {
    geometry.validate(LinkMode::Ris)?;
    if tx_paths == 0 || rx_paths == 0 {
        return Err(Error::InvalidArgument("each RIS hop needs at least one path".into()));
    }
    let draw = |rng: &mut Rng| RisPath {
        gain: rng.complex_normal(1.0),
        array_azimuth: azimuth.sample(rng),
        array_elevation: elevation.sample(rng),
        ris_azimuth: azimuth.sample(rng),
        ris_elevation: elevation.sample(rng),
    };
    let tx: Vec<RisPath> = (0..tx_paths).map(|_| draw(rng)).collect();
    let rx: Vec<RisPath> = (0..rx_paths).map(|_| draw(rng)).collect();
    ChannelRealization::from_ris_paths(geometry, tx, rx)
}

impl ChannelRealization {
    pub fn from_direct_paths(geometry: Geometry, paths: Vec<DirectPath>) -> Self {
        let g = assemble_direct(geometry, &paths);
        Self {
            geometry,
            paths: PathSet::Direct(paths),
            matrices: ChannelMatrices::Direct { g },
        }
    }

    pub fn from_ris_paths(geometry: Geometry, tx: Vec<RisPath>, rx: Vec<RisPath>) -> Result<Self> {
        let (t, r) = assemble_ris(geometry, &tx, &rx)?;
        Ok(Self {
            geometry,
            paths: PathSet::Ris { tx, rx },
            matrices: ChannelMatrices::Ris { t, r },
        })
    }

    /// Direct link from an explicit matrix with no path description.
    pub fn from_matrix(g: ComplexMatrix) -> Self {
        let geometry = Geometry::direct(g.rows(), g.cols());
        Self {
            geometry,
            paths: PathSet::Direct(Vec::new()),
            matrices: ChannelMatrices::Direct { g },
        }
    }

    pub fn mode(&self) -> LinkMode {
        match self.matrices {
            ChannelMatrices::Direct { .. } => LinkMode::Direct,
            ChannelMatrices::Ris { .. } => LinkMode::Ris,
        }
    }

    /// Uplink matrix `G` of a direct link.
    pub fn direct_matrix(&self) -> Result<&ComplexMatrix> {
        match &self.matrices {
            ChannelMatrices::Direct { g } => Ok(g),
            ChannelMatrices::Ris { .. } => Err(Error::InvalidArgument(
                "a RIS link has no fixed direct matrix".into(),
            )),
        }
    }

    /// Effective `Mt x Mr` uplink matrix: `G` for a direct link, the
    /// Hermitian of the A-to-B cascade for a RIS link.
    pub fn uplink(&self, v: Option<&[C64]>) -> Result<ComplexMatrix> {
        match &self.matrices {
            ChannelMatrices::Direct { g } => Ok(g.clone()),
            ChannelMatrices::Ris { .. } => {
                let v = v.ok_or_else(|| Error::InvalidArgument("RIS link needs reflection coefficients".into()))?;
                cascaded(self, v, Direction::BA)
            }
        }
    }

    /// Effective `Mr x Mt` downlink matrix seen by an A-to-B pilot.
    pub fn downlink(&self, v: Option<&[C64]>) -> Result<ComplexMatrix> {
        match &self.matrices {
            ChannelMatrices::Direct { g } => Ok(g.adjoint()),
            ChannelMatrices::Ris { .. } => {
                let v = v.ok_or_else(|| Error::InvalidArgument("RIS link needs reflection coefficients".into()))?;
                cascaded(self, v, Direction::AB)
            }
        }
    }
}

/// Cascaded channel through the surface.
///
/// `AB` is `R^H diag(v) T^H` (`Mr x Mt`) and `BA` is `T diag(conj v) R`
/// (`Mt x Mr`), so that `(G_AB)^H == G_BA` for the same `v`.
pub fn cascaded(chan: &ChannelRealization, v: &[C64], direction: Direction) -> Result<ComplexMatrix> {
    let (t, r) = match &chan.matrices {
        ChannelMatrices::Ris { t, r } => (t, r),
        ChannelMatrices::Direct { .. } => {
            return Err(Error::InvalidArgument("cascade requires a RIS link".into()))
        }
    };
    check_unit_modulus(v, t.cols())?;
    let (mt, n, mr) = (t.rows(), t.cols(), r.cols());
    Ok(match direction {
        Direction::AB => ComplexMatrix::from_fn(mr, mt, |i, j| {
            (0..n).map(|k| r[(k, i)].conj() * v[k] * t[(j, k)].conj()).sum()
        }),
        Direction::BA => ComplexMatrix::from_fn(mt, mr, |i, j| {
            (0..n).map(|k| t[(i, k)] * v[k].conj() * r[(k, j)]).sum()
        }),
    })
}

pub(crate) fn check_unit_modulus(v: &[C64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension {
            op: "reflection",
            lhs: (n, 1),
            rhs: (v.len(), 1),
        });
    }
    let worst = v.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);
    if worst > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "reflection coefficients must have unit modulus (off by {worst:e})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{svd, top_singular_pair};

    #[test]
    fn single_unit_path_is_rank_one_with_known_sigma() {
        let geom = Geometry::direct(16, 8);
        let chan = ChannelRealization::from_direct_paths(
            geom,
            vec![DirectPath {
                gain: C64::new(1.0, 0.0),
                aoa: 0.3,
                aod: -0.7,
            }],
        );
        let d = svd(chan.direct_matrix().unwrap()).unwrap();
        assert!((d.singular_values[0] - (16.0f64 * 8.0).sqrt()).abs() < 1e-12);
        assert!(d.singular_values[1] < 1e-12);
    }

    #[test]
    fn generation_is_reproducible_and_in_range() {
        let model = ChannelModel::direct(Geometry::direct(64, 32), 3);
        let a = model.sample(&mut Rng::new(9)).unwrap();
        let b = model.sample(&mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let PathSet::Direct(paths) = &a.paths else { unreachable!() };
        for p in paths {
            assert!(model.azimuth.contains(p.aoa) && model.azimuth.contains(p.aod));
        }
    }

    #[test]
    fn matrix_matches_path_sum() {
        let model = ChannelModel::direct(Geometry::direct(6, 4), 3);
        let chan = model.sample(&mut Rng::new(2)).unwrap();
        let PathSet::Direct(paths) = &chan.paths else { unreachable!() };
        let mut g = ComplexMatrix::zeros(6, 4);
        for p in paths {
            let (at, ar) = (steering_ula(6, p.aoa), steering_ula(4, p.aod));
            for i in 0..6 {
                for j in 0..4 {
                    g[(i, j)] += p.gain * at[i] * ar[j].conj();
                }
            }
        }
        assert!(g.sub(chan.direct_matrix().unwrap()).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn single_hop_paths_give_rank_one_factors() {
        let model = ChannelModel::ris(Geometry::with_ris(16, 8, 16, 4), 1, 1);
        let chan = model.sample(&mut Rng::new(4)).unwrap();
        let ChannelMatrices::Ris { t, r } = &chan.matrices else { unreachable!() };
        assert_eq!(svd(t).unwrap().rank(1e-10), 1);
        assert_eq!(svd(r).unwrap().rank(1e-10), 1);
        assert_eq!(model.sample(&mut Rng::new(4)).unwrap(), chan);
    }

    #[test]
    fn paper_scale_surface_is_eight_by_eight() {
        let geom = Geometry::with_ris(64, 32, 64, 8);
        assert!(geom.validate(LinkMode::Ris).is_ok());
        assert!(Geometry::with_ris(64, 32, 64, 7).validate(LinkMode::Ris).is_err());
    }

    #[test]
    fn cascade_is_reciprocal() {
        let model = ChannelModel::ris(Geometry::with_ris(16, 8, 16, 4), 3, 3);
        let mut rng = Rng::new(10);
        let chan = model.sample(&mut rng).unwrap();
        let v = rng.unit_phases(16);
        let ab = cascaded(&chan, &v, Direction::AB).unwrap();
        let ba = cascaded(&chan, &v, Direction::BA).unwrap();
        assert!(ab.adjoint().sub(&ba).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn cascade_matches_elementwise_expansion() {
        let model = ChannelModel::ris(Geometry::with_ris(5, 3, 4, 2), 2, 2);
        let mut rng = Rng::new(11);
        let chan = model.sample(&mut rng).unwrap();
        let ChannelMatrices::Ris { t, r } = &chan.matrices else { unreachable!() };
        let v = rng.unit_phases(4);
        // sum_n v_n r_n t_n^H with r_n the n-th row of R^H ... expressed per element
        let mut expect = ComplexMatrix::zeros(3, 5);
        for n in 0..4 {
            let rn: Vec<C64> = (0..3).map(|i| r[(n, i)].conj()).collect();
            let tn: Vec<C64> = (0..5).map(|j| t[(j, n)]).collect();
            let term = ComplexMatrix::outer(&rn, &tn);
            expect = ComplexMatrix::from_fn(3, 5, |i, j| expect[(i, j)] + v[n] * term[(i, j)]);
        }
        let got = cascaded(&chan, &v, Direction::AB).unwrap();
        assert!(got.sub(&expect).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn single_element_cascade_is_outer_product() {
        let mut rng = Rng::new(12);
        let model = ChannelModel::ris(Geometry::with_ris(4, 3, 1, 1), 1, 1);
        let chan = model.sample(&mut rng).unwrap();
        let ChannelMatrices::Ris { t, r } = &chan.matrices else { unreachable!() };
        let v = [C64::new(1.0, 0.0)];
        let got = cascaded(&chan, &v, Direction::AB).unwrap();
        let expect = ComplexMatrix::outer(&r.adjoint().column(0), &t.column(0));
        assert!(got.sub(&expect).unwrap().frobenius_norm() < 1e-12);
        assert_eq!(top_singular_pair(&got).unwrap().u.len(), 3);
    }

    #[test]
    fn cascade_rejects_non_unit_modulus() {
        let model = ChannelModel::ris(Geometry::with_ris(4, 2, 4, 2), 1, 1);
        let chan = model.sample(&mut Rng::new(1)).unwrap();
        let mut v = vec![C64::new(1.0, 0.0); 4];
        v[2] = C64::new(1.1, 0.0);
        assert!(cascaded(&chan, &v, Direction::AB).is_err());
    }
}
