//! Long-format tick files with header `asset,time,value`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HyError, Result};
use crate::grids::{Panel, TickSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    asset: String,
    time: f64,
    value: f64,
}

/// Reads a panel. Assets appear in order of first occurrence; rows of one
/// asset must already be in increasing time order.
///
/// With `normalize_time` the pooled time range `[min, max]` is mapped
/// affinely onto `[0, 1]`; otherwise times must lie in `[0, 1]`.
pub fn read_ticks<R: Read>(reader: R, normalize_time: bool) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut names: Vec<String> = Vec::new();
    let mut cols: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        let slot = match names.iter().position(|n| *n == row.asset) {
            Some(p) => p,
            None => {
                names.push(row.asset.clone());
                cols.push((Vec::new(), Vec::new()));
                names.len() - 1
            }
        };
        cols[slot].0.push(row.time);
        cols[slot].1.push(row.value);
    }
    if names.is_empty() {
        return Err(HyError::validation("<input>", None, "no observations"));
    }
    if normalize_time {
        let all = cols.iter().flat_map(|c| c.0.iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(HyError::validation("<input>", None, "time range is empty or not finite"));
        }
        for c in &mut cols {
            for t in &mut c.0 {
                *t = ((*t - lo) / (hi - lo)).clamp(0.0, 1.0);
            }
        }
    }
    let series = names
        .into_iter()
        .zip(cols)
        .map(|(name, (t, v))| TickSeries::new(name, t, v))
        .collect::<Result<Vec<_>>>()?;
    Panel::new(series)
}

pub fn write_ticks<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in panel.series() {
        for (&time, &value) in s.times().iter().zip(s.values()) {
            w.serialize(Row {
                asset: s.name().to_string(),
                time,
                value,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
