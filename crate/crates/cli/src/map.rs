use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use firecast_core::sampling::{PreparedCube, SampleRef};
use firecast_core::{CellTime, Error, Model};

pub const MAP_CSV: &str = "map.csv";
pub const MAP_PGM: &str = "map.pgm";

/// Scores every land cell whose sample ends at `t_idx` and writes `map.csv` and `map.pgm`.
pub fn write_map(model: &Model, cube: &PreparedCube, t_idx: usize, out: &Path) -> Result<()> {
    let h = &cube.header;
    let spec = model.spec;
    if t_idx + 1 < spec.ts || t_idx + spec.h >= h.time_len {
        return Err(Error::Config(format!(
            "t_idx {t_idx} must lie in [{}, {}) for ts = {} and h = {}",
            spec.ts - 1,
            h.time_len.saturating_sub(spec.h),
            spec.ts,
            spec.h
        ))
        .into());
    }
    let mut refs = Vec::new();
    for lat in 0..h.lat_len {
        for lon in 0..h.lon_len {
            if cube.is_land(lat, lon) {
                refs.push(SampleRef {
                    cell: CellTime::new(h, lat, lon, t_idx)?,
                    label: cube.label(lat, lon, t_idx + spec.h),
                });
            }
        }
    }
    let scores = model.predict(cube, &refs, 256)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = csv::Writer::from_path(out.join(MAP_CSV))?;
    w.write_record(["lon", "lat", "score"])?;
    let mut pixels = vec![0u8; h.lat_len * h.lon_len];
    for (r, &s) in refs.iter().zip(&scores) {
        let (lat, lon) = (r.cell.lat_idx, r.cell.lon_idx);
        w.serialize((h.lon_values[lon], h.lat_values[lat], s))?;
        pixels[lat * h.lon_len + lon] = (s * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    w.flush()?;

    let mut pgm = format!("P5\n{} {}\n255\n", h.lon_len, h.lat_len).into_bytes();
    pgm.extend_from_slice(&pixels);
    let path = out.join(MAP_PGM);
    fs::write(&path, pgm).with_context(|| format!("writing {}", path.display()))?;
    println!("scored {} land cells at t_idx {t_idx}", refs.len());
    Ok(())
}
