use std::fs;
use std::io::Write;
use std::path::Path;

use cnls_core::solver::SimulationTrace;
use serde::Serialize;

/// Seventeen significant digits, enough to round-trip every `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_header(radii: &[f64]) -> Vec<String> {
    let mut cols: Vec<String> = [
        "t",
        "mass",
        "energy",
        "k",
        "grad_sq",
        "norm_critical",
        "norm_subcritical",
        "h",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for r in radii {
        cols.push(format!("vR_{r}"));
        cols.push(format!("dtvR_{r}"));
        cols.push(format!("dt2vR_{r}"));
    }
    cols.extend(radii.iter().map(|r| format!("ext_{r}")));
    cols
}

pub fn trace_rows(trace: &SimulationTrace) -> Vec<Vec<f64>> {
    (0..trace.times.len())
        .map(|k| {
            let r = &trace.reports[k];
            let mut row = vec![
                trace.times[k],
                r.mass,
                r.energy,
                r.k,
                r.grad_norm_sq,
                r.norm_critical,
                r.norm_subcritical,
                r.h,
            ];
            for s in &trace.virials[k] {
                row.extend([s.v, s.dt_v, s.dt2_v]);
            }
            row.extend(&trace.exterior[k]);
            row
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(trace: &SimulationTrace, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(trace_header(&trace.virial_radii))?;
    for row in trace_rows(trace) {
        w.write_record(row.iter().map(|x| fmt_float(*x)))?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric rows of a trace CSV.
pub fn read_trace_csv(text: &str) -> csv::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}
