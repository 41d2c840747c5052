//! One-parameter sweeps over a scenario config.

use rayon::prelude::*;
use serde_json::Value;
use std::collections::BTreeSet;

use spinrotor_core::dynamics::fmt_f64;

use crate::config::from_value;
use crate::error::{config_err, failure_code, PartialSweep};
use crate::manifest::{ManifestEntry, OutputSink};
use crate::scenarios::{run_scenario, Metrics};

pub const SWEEP_CSV: &str = "sweep.csv";

/// Parses a grid: `a,b,c` (explicit values), `start:stop:n` (linear, both
/// ends included) or `log:start:stop:n` (geometric).
pub fn parse_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(config_err("empty grid"));
    }
    let num = |s: &str| -> anyhow::Result<f64> {
        let v: f64 = s.trim().parse().map_err(|_| config_err(format!("grid: `{s}` is not a number")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(config_err(format!("grid: `{s}` is not finite")))
        }
    };
    let count = |s: &str| -> anyhow::Result<usize> {
        s.trim().parse().map_err(|_| config_err(format!("grid: `{s}` is not a point count")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [list] => list.split(',').map(num).collect::<anyhow::Result<Vec<_>>>()?,
        [a, b, n] => linspace(num(a)?, num(b)?, count(n)?),
        ["log", a, b, n] => {
            let (a, b) = (num(a)?, num(b)?);
            if !(a > 0.0 && b > 0.0) {
                return Err(config_err("grid: log spacing needs positive end points"));
            }
            let n = count(n)?;
            let mut g: Vec<f64> = linspace(0.0, 1.0, n).into_iter().map(|x| a * (b / a).powf(x)).collect();
            // Hit the end point exactly.
            if n > 1 {
                g[n - 1] = b;
            }
            g
        }
        _ => return Err(config_err(format!("grid: cannot parse `{spec}`"))),
    };
    if values.is_empty() {
        return Err(config_err("empty grid"));
    }
    Ok(values)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Sets the dotted `path` (object keys or array indices) in `doc` to `v`.
/// Missing object keys are created.
pub fn set_path(doc: &mut Value, path: &str, v: f64) -> anyhow::Result<()> {
    if path.is_empty() {
        return Err(config_err("sweep parameter path is empty"));
    }
    let mut cur = doc;
    for seg in path.split('.') {
        cur = match cur {
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let i: usize = seg
                    .parse()
                    .map_err(|_| config_err(format!("sweep path `{path}`: `{seg}` is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .ok_or_else(|| config_err(format!("sweep path `{path}`: index {i} out of range ({len})")))?
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                match cur {
                    Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
                    _ => unreachable!(),
                }
            }
            _ => return Err(config_err(format!("sweep path `{path}`: `{seg}` is below a scalar"))),
        };
    }
    // Integral values stay integers so integer fields (seed, counts) accept them.
    *cur = if v.fract() == 0.0 && v.abs() < 9.0e15 {
        if v >= 0.0 {
            Value::from(v as u64)
        } else {
            Value::from(v as i64)
        }
    } else {
        Value::from(v)
    };
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    /// `ok` or a failure code.
    pub status: String,
    pub message: String,
    pub metrics: Metrics,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub manifest: Vec<ManifestEntry>,
}

/// Runs every grid point (concurrently) in `point_NNN/` below the sink root
/// and writes `sweep.csv` with one row per point in grid order. Failed points
/// are recorded and the sweep continues; if any failed the result is a
/// [`PartialSweep`] error after all outputs are written.
pub fn run_sweep(base: &Value, param: &str, grid: &[f64], sink: &OutputSink) -> anyhow::Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(config_err("empty grid"));
    }
    // Reject a bad path up front rather than failing every point.
    set_path(&mut base.clone(), param, grid[0])?;
    let width = (grid.len().saturating_sub(1)).to_string().len().max(3);
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .enumerate()
        .map(|(index, &value)| {
            let result = (|| {
                let mut doc = base.clone();
                set_path(&mut doc, param, value)?;
                let cfg = from_value(doc)?;
                let point = sink.scoped(&format!("point_{index:0width$}"));
                run_scenario(&cfg, &point)
            })();
            match result {
                Ok(summary) => {
                    SweepRow { index, value, status: "ok".into(), message: String::new(), metrics: summary.metrics }
                }
                Err(e) => SweepRow {
                    index,
                    value,
                    status: failure_code(&e).into(),
                    message: format!("{e:#}"),
                    metrics: Metrics::new(),
                },
            }
        })
        .collect();

    let keys: BTreeSet<&String> = rows.iter().flat_map(|r| r.metrics.keys()).collect();
    let mut buf = Vec::new();
    {
        let mut out = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["index".to_string(), param.to_string(), "status".to_string()];
        header.extend(keys.iter().map(|k| k.to_string()));
        header.push("message".into());
        out.write_record(&header)?;
        for r in &rows {
            let mut rec = vec![r.index.to_string(), fmt_f64(r.value), r.status.clone()];
            rec.extend(keys.iter().map(|k| r.metrics.get(*k).map(|v| fmt_f64(*v)).unwrap_or_default()));
            rec.push(r.message.clone());
            out.write_record(&rec)?;
        }
        out.flush()?;
    }
    sink.write(SWEEP_CSV, &buf)?;
    let manifest = sink.finish()?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        return Err(PartialSweep { failed, total: rows.len() }.into());
    }
    Ok(SweepOutcome { rows, manifest })
}
