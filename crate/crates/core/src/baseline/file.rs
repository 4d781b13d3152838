//! Line-oriented text container for baselines.
//!
//! ```text
//! nrhosk-baseline <version>
//! <key> = <value>            (header)
//! knots <count>
//! <epoch_s> <x y z vx vy vz> <ax ay az>
//! apolune <count>
//! <epoch_s>
//! perilune <count>
//! <epoch_s>
//! ```
//!
//! Epochs are seconds; states and accelerations are canonical. Every float is
//! written with 17 significant digits so a round trip is exact.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{BaselineMetadata, BaselineOrbit, Cr3bpOrbit, Knot, BASELINE_FORMAT_VERSION};
use crate::dynamics::StateVector;
use crate::error::{Error, Result};
use crate::frames::Epoch;

const MAGIC: &str = "nrhosk-baseline";

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl BaselineOrbit {
    pub fn to_text(&self) -> String {
        let m = &self.metadata;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {}", m.format_version);
        let _ = writeln!(s, "mass_ratio = {}", num(m.seed.mass_ratio));
        let seed: Vec<String> = m.seed.initial_state.iter().map(|v| num(*v)).collect();
        let _ = writeln!(s, "cr3bp_state = {}", seed.join(" "));
        let _ = writeln!(s, "cr3bp_period = {}", num(m.seed.period));
        let _ = writeln!(s, "revolutions = {}", m.revolutions);
        let _ = writeln!(s, "knots_per_revolution = {}", m.knots_per_revolution);
        for (k, v) in [
            ("lu_km", m.lu),
            ("vu_km_s", m.vu),
            ("tu_s", m.tu),
            ("area_to_mass", m.area_to_mass),
            ("cr", m.cr),
            ("max_position_defect_km", m.max_position_defect_km),
            ("max_velocity_defect_km_s", m.max_velocity_defect_kms),
        ] {
            let _ = writeln!(s, "{k} = {}", num(v));
        }
        let _ = writeln!(s, "knots {}", self.knots.len());
        for k in &self.knots {
            let x = k.state.to_array();
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {} {}",
                num(k.epoch.seconds()),
                num(x[0]),
                num(x[1]),
                num(x[2]),
                num(x[3]),
                num(x[4]),
                num(x[5]),
                num(k.accel.x),
                num(k.accel.y),
                num(k.accel.z)
            );
        }
        for (name, list) in [("apolune", &self.apolune_epochs), ("perilune", &self.perilune_epochs)] {
            let _ = writeln!(s, "{name} {}", list.len());
            for e in list {
                let _ = writeln!(s, "{}", num(e.seconds()));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |n: usize, msg: &str| Error::Parse(format!("baseline line {}: {msg}", n + 1));
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("baseline truncated before {what}")));

        let (n, first) = next("header")?;
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| err(n, "not a baseline file"))?;
        if version != BASELINE_FORMAT_VERSION {
            return Err(err(n, &format!("unsupported format version {version}")));
        }

        let floats = |n: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(n, &format!("`{t}` is not a number"))))
                .collect()
        };
        let mut header = std::collections::BTreeMap::new();
        let knot_count;
        loop {
            let (n, line) = next("knot table")?;
            if let Some(c) = line.strip_prefix("knots ") {
                knot_count = c.trim().parse::<usize>().map_err(|_| err(n, "bad knot count"))?;
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(n, "expected `key = value`"))?;
            if header.insert(k.trim().to_string(), (n, v.trim().to_string())).is_some() {
                return Err(err(n, "duplicate header key"));
            }
        }
        let mut take = |key: &str| -> Result<Vec<f64>> {
            let (n, v) = header.remove(key).ok_or_else(|| Error::Parse(format!("baseline header lacks `{key}`")))?;
            floats(n, &v)
        };
        let scalar = |v: Vec<f64>, key: &str| -> Result<f64> {
            if v.len() == 1 {
                Ok(v[0])
            } else {
                Err(Error::Parse(format!("baseline header `{key}` must be a single number")))
            }
        };
        let mass_ratio = scalar(take("mass_ratio")?, "mass_ratio")?;
        let state = take("cr3bp_state")?;
        if state.len() != 6 {
            return Err(Error::Parse("cr3bp_state needs 6 components".into()));
        }
        let period = scalar(take("cr3bp_period")?, "cr3bp_period")?;
        let revolutions = scalar(take("revolutions")?, "revolutions")? as usize;
        let knots_per_revolution = scalar(take("knots_per_revolution")?, "knots_per_revolution")? as usize;
        let mut get = |k: &str| -> Result<f64> { scalar(take(k)?, k) };
        let metadata = BaselineMetadata {
            format_version: version,
            seed: Cr3bpOrbit {
                mass_ratio,
                initial_state: std::array::from_fn(|i| state[i]),
                period,
            },
            revolutions,
            knots_per_revolution,
            lu: get("lu_km")?,
            vu: get("vu_km_s")?,
            tu: get("tu_s")?,
            area_to_mass: get("area_to_mass")?,
            cr: get("cr")?,
            max_position_defect_km: get("max_position_defect_km")?,
            max_velocity_defect_kms: get("max_velocity_defect_km_s")?,
        };
        if let Some(k) = header.keys().next() {
            return Err(Error::Parse(format!("unknown baseline header key `{k}`")));
        }

        let mut knots = Vec::with_capacity(knot_count);
        for _ in 0..knot_count {
            let (n, line) = next("end of knot table")?;
            let v = floats(n, line)?;
            if v.len() != 10 {
                return Err(err(n, "knot lines carry 10 numbers"));
            }
            knots.push(Knot {
                epoch: Epoch::from_seconds(v[0]),
                state: StateVector::from_slice(&v[1..7]),
                accel: Vector3::new(v[7], v[8], v[9]),
            });
        }
        let mut tables = Vec::new();
        for name in ["apolune", "perilune"] {
            let (n, line) = next(name)?;
            let count = line
                .strip_prefix(name)
                .and_then(|c| c.trim().parse::<usize>().ok())
                .ok_or_else(|| err(n, &format!("expected `{name} <count>`")))?;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                let (n, line) = next(name)?;
                list.push(Epoch::from_seconds(line.trim().parse().map_err(|_| err(n, "bad epoch"))?));
            }
            tables.push(list);
        }
        if let Some((n, _)) = lines.next() {
            return Err(err(n, "trailing content"));
        }
        let perilune_epochs = tables.pop().unwrap();
        let apolune_epochs = tables.pop().unwrap();
        let b = BaselineOrbit {
            knots,
            apolune_epochs,
            perilune_epochs,
            metadata,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::invalid("baseline needs at least two knots"));
        }
        if self.knots.windows(2).any(|w| !(w[1].epoch > w[0].epoch)) {
            return Err(Error::invalid("baseline knot epochs must be strictly increasing"));
        }
        for list in [&self.apolune_epochs, &self.perilune_epochs] {
            if list.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::invalid("apsis epochs must be strictly increasing"));
            }
        }
        if !(self.metadata.tu > 0.0) {
            return Err(Error::invalid("baseline time unit must be positive"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("output path has no file name"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
