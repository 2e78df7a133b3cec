use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "t,vtime,F,h,gap_sq,planes,c1,active";

/// Observables logged after one master iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub vtime: f64,
    /// `F = Σ G_i(x_i, y_i)`.
    pub upper: f64,
    pub h: f64,
    pub gap_sq: f64,
    pub planes: usize,
    pub c1: f64,
    pub active: Vec<usize>,
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the trace with the fixed header and 17-significant-digit floats.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        let active: Vec<String> = r.active.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t,
            float(r.vtime),
            float(r.upper),
            float(r.h),
            float(r.gap_sq),
            r.planes,
            float(r.c1),
            active.join(";")
        )?;
    }
    Ok(())
}

pub fn trace_to_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(rows, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("trace is ASCII")
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::Config(format!("unexpected trace header `{}`", header.join(","))));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let bad = |field: &str| Error::Config(format!("trace line {line}: bad `{field}` value"));
        let f = |idx: usize, name: &str| rec.get(idx).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| bad(name));
        let u = |idx: usize, name: &str| rec.get(idx).and_then(|s| s.trim().parse::<usize>().ok()).ok_or_else(|| bad(name));
        let active_field = rec.get(7).ok_or_else(|| bad("active"))?;
        let active = if active_field.is_empty() {
            Vec::new()
        } else {
            active_field
                .split(';')
                .map(|s| s.parse::<usize>().map_err(|_| bad("active")))
                .collect::<Result<Vec<_>>>()?
        };
        rows.push(TraceRow {
            t: u(0, "t")?,
            vtime: f(1, "vtime")?,
            upper: f(2, "F")?,
            h: f(3, "h")?,
            gap_sq: f(4, "gap_sq")?,
            planes: u(5, "planes")?,
            c1: f(6, "c1")?,
            active,
        });
    }
    Ok(rows)
}
