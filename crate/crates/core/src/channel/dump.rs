//! Line-oriented text dump of channel realizations.
//!
//! ```text
//! channel mode=direct mt=16 mr=8 n=0 nh=0
//! path gain=<re>,<im> aoa_deg=<x> aod_deg=<x>
//! end
//! ```
//!
//! RIS records use `tx` and `rx` lines with `array_az_deg`, `array_el_deg`,
//! `ris_az_deg` and `ris_el_deg`. Numbers are written with 17 significant digits.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::C64;

use super::model::{ChannelRealization, DirectPath, Geometry, LinkMode, PathSet, RisPath};

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn complex(z: C64) -> String {
    format!("{},{}", num(z.re), num(z.im))
}

pub fn write_channel(out: &mut String, chan: &ChannelRealization) {
    let g = chan.geometry;
    let _ = writeln!(
        out,
        "channel mode={} mt={} mr={} n={} nh={}",
        chan.mode(),
        g.mt,
        g.mr,
        g.ris_elements,
        g.ris_horizontal
    );
    match &chan.paths {
        PathSet::Direct(paths) => {
            for p in paths {
                let _ = writeln!(
                    out,
                    "path gain={} aoa_deg={} aod_deg={}",
                    complex(p.gain),
                    num(p.aoa.to_degrees()),
                    num(p.aod.to_degrees())
                );
            }
        }
        PathSet::Ris { tx, rx } => {
            for (tag, list) in [("tx", tx), ("rx", rx)] {
                for p in list {
                    let _ = writeln!(
                        out,
                        "{tag} gain={} array_az_deg={} array_el_deg={} ris_az_deg={} ris_el_deg={}",
                        complex(p.gain),
                        num(p.array_azimuth.to_degrees()),
                        num(p.array_elevation.to_degrees()),
                        num(p.ris_azimuth.to_degrees()),
                        num(p.ris_elevation.to_degrees())
                    );
                }
            }
        }
    }
    out.push_str("end\n");
}

pub fn dump_channels<'a>(chans: impl IntoIterator<Item = &'a ChannelRealization>) -> String {
    let mut out = String::new();
    for c in chans {
        write_channel(&mut out, c);
    }
    out
}

fn fields(line: &str, lineno: usize) -> Result<HashMap<&str, &str>> {
    line.split_whitespace()
        .skip(1)
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| parse_err(lineno, &format!("expected key=value, got `{kv}`")))
        })
        .collect()
}

fn parse_err(lineno: usize, msg: &str) -> Error {
    Error::InvalidArgument(format!("channel dump line {lineno}: {msg}"))
}

fn get<'a>(f: &HashMap<&str, &'a str>, key: &str, lineno: usize) -> Result<&'a str> {
    f.get(key)
        .copied()
        .ok_or_else(|| parse_err(lineno, &format!("missing `{key}`")))
}

fn get_f64(f: &HashMap<&str, &str>, key: &str, lineno: usize) -> Result<f64> {
    get(f, key, lineno)?
        .parse()
        .map_err(|_| parse_err(lineno, &format!("`{key}` is not a number")))
}

fn get_usize(f: &HashMap<&str, &str>, key: &str, lineno: usize) -> Result<usize> {
    get(f, key, lineno)?
        .parse()
        .map_err(|_| parse_err(lineno, &format!("`{key}` is not a count")))
}

fn get_complex(f: &HashMap<&str, &str>, key: &str, lineno: usize) -> Result<C64> {
    let raw = get(f, key, lineno)?;
    let (re, im) = raw
        .split_once(',')
        .ok_or_else(|| parse_err(lineno, &format!("`{key}` must be re,im")))?;
    match (re.parse(), im.parse()) {
        (Ok(re), Ok(im)) => Ok(C64::new(re, im)),
        _ => Err(parse_err(lineno, &format!("`{key}` is not a complex number"))),
    }
}

fn ris_path(f: &HashMap<&str, &str>, lineno: usize) -> Result<RisPath> {
    Ok(RisPath {
        gain: get_complex(f, "gain", lineno)?,
        array_azimuth: get_f64(f, "array_az_deg", lineno)?.to_radians(),
        array_elevation: get_f64(f, "array_el_deg", lineno)?.to_radians(),
        ris_azimuth: get_f64(f, "ris_az_deg", lineno)?.to_radians(),
        ris_elevation: get_f64(f, "ris_el_deg", lineno)?.to_radians(),
    })
}

/// Parses every record of a dump, reassembling the channel matrices.
pub fn parse_channels(text: &str) -> Result<Vec<ChannelRealization>> {
    let mut out = Vec::new();
    let mut current: Option<(Geometry, LinkMode, Vec<DirectPath>, Vec<RisPath>, Vec<RisPath>)> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tag = line.split_whitespace().next().unwrap_or_default();
        let f = fields(line, lineno)?;
        match (tag, current.as_mut()) {
            ("channel", None) => {
                let mode: LinkMode = get(&f, "mode", lineno)?.parse()?;
                let geom = Geometry {
                    mt: get_usize(&f, "mt", lineno)?,
                    mr: get_usize(&f, "mr", lineno)?,
                    ris_elements: get_usize(&f, "n", lineno)?,
                    ris_horizontal: get_usize(&f, "nh", lineno)?,
                };
                geom.validate(mode)?;
                current = Some((geom, mode, Vec::new(), Vec::new(), Vec::new()));
            }
            ("path", Some((_, LinkMode::Direct, paths, _, _))) => paths.push(DirectPath {
                gain: get_complex(&f, "gain", lineno)?,
                aoa: get_f64(&f, "aoa_deg", lineno)?.to_radians(),
                aod: get_f64(&f, "aod_deg", lineno)?.to_radians(),
            }),
            ("tx", Some((_, LinkMode::Ris, _, tx, _))) => tx.push(ris_path(&f, lineno)?),
            ("rx", Some((_, LinkMode::Ris, _, _, rx))) => rx.push(ris_path(&f, lineno)?),
            ("end", Some(_)) => {
                let (geom, mode, paths, tx, rx) = current.take().expect("record open");
                out.push(match mode {
                    LinkMode::Direct => ChannelRealization::from_direct_paths(geom, paths),
                    LinkMode::Ris => ChannelRealization::from_ris_paths(geom, tx, rx)?,
                });
            }
            _ => return Err(parse_err(lineno, &format!("unexpected `{tag}` line"))),
        }
    }
    if current.is_some() {
        return Err(Error::InvalidArgument("channel dump ends inside a record".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::model::ChannelModel;
    use crate::numerics::Rng;

    #[test]
    fn direct_round_trip() {
        let model = ChannelModel::direct(Geometry::direct(16, 8), 3);
        let mut rng = Rng::new(20);
        let chans: Vec<_> = (0..5).map(|_| model.sample(&mut rng).unwrap()).collect();
        let text = dump_channels(&chans);
        let back = parse_channels(&text).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in chans.iter().zip(&back) {
            let diff = a.direct_matrix().unwrap().sub(b.direct_matrix().unwrap()).unwrap();
            assert!(diff.frobenius_norm() < 1e-12);
        }
        // a second dump of the parsed records is stable
        assert_eq!(dump_channels(&back), dump_channels(&parse_channels(&dump_channels(&back)).unwrap()));
    }

    #[test]
    fn ris_round_trip() {
        let model = ChannelModel::ris(Geometry::with_ris(4, 2, 16, 4), 2, 3);
        let chan = model.sample(&mut Rng::new(21)).unwrap();
        let back = parse_channels(&dump_channels([&chan])).unwrap().remove(0);
        let v = Rng::new(1).unit_phases(16);
        let a = chan.uplink(Some(&v)).unwrap();
        let b = back.uplink(Some(&v)).unwrap();
        assert!(a.sub(&b).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn rejects_truncated_record() {
        assert!(parse_channels("channel mode=direct mt=2 mr=2 n=0 nh=0\n").is_err());
        assert!(parse_channels("path gain=1,0 aoa_deg=0 aod_deg=0\n").is_err());
    }
}
