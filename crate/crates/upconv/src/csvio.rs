//! CSV formats produced and consumed by the toolkit. Writers emit
//! full round-trip precision (shortest exact decimal); parsers accept
//! untrusted input and fail with line-numbered errors.

use std::io::Write;

use crate::dispersion::QpmCurve;
use crate::error::{Error, Result};
use crate::hbt::{CoincidenceHistogram, G2Bin, G2Estimate, NormalizedBin};
use crate::propagation::{FieldRecord, GateResponse, SweepResult};

fn io_err(e: std::io::Error) -> Error {
    Error::Config(format!("write failed: {e}"))
}

/// `lambda_signal_nm,lambda_pump_nm,lambda_sfg_nm,delta_k_rad_per_mm`;
/// signal wavelengths without a QPM root appear with empty cells.
pub fn write_qpm_curve<W: Write>(mut w: W, curve: &QpmCurve) -> Result<()> {
    writeln!(
        w,
        "lambda_signal_nm,lambda_pump_nm,lambda_sfg_nm,delta_k_rad_per_mm"
    )
    .map_err(io_err)?;
    let mut rows: Vec<(f64, Option<&crate::dispersion::QpmPoint>)> = curve
        .points
        .iter()
        .map(|p| (p.triplet.lambda_signal_nm, Some(p)))
        .chain(curve.gaps_nm.iter().map(|&g| (g, None)))
        .collect();
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (signal, point) in rows {
        match point {
            Some(p) => writeln!(
                w,
                "{},{},{},{}",
                signal,
                p.triplet.lambda_pump_nm,
                p.triplet.lambda_sfg_nm,
                p.delta_k_rad_per_mm
            )
            .map_err(io_err)?,
            None => writeln!(w, "{signal},,,").map_err(io_err)?,
        }
    }
    Ok(())
}

/// Two-column gate response: `t_ps,h`.
pub fn write_gate<W: Write>(mut w: W, gate: &GateResponse) -> Result<()> {
    writeln!(w, "t_ps,h").map_err(io_err)?;
    for (t, h) in gate.time_ps.iter().zip(&gate.h) {
        writeln!(w, "{t},{h}").map_err(io_err)?;
    }
    Ok(())
}

/// Pump-power sweep: `power_mW,sfg_energy,resolution_ps`
/// (SFG energy in pJ per pump period).
pub fn write_sweep<W: Write>(mut w: W, sweep: &SweepResult) -> Result<()> {
    writeln!(w, "power_mW,sfg_energy,resolution_ps").map_err(io_err)?;
    for p in &sweep.points {
        writeln!(w, "{},{},{}", p.power_mw, p.sfg_energy_pj, p.resolution_fwhm_ps)
            .map_err(io_err)?;
    }
    Ok(())
}

/// Histogram export: `dt_ps,C,acc_mean,singles_A,singles_B,n_periods`.
pub fn write_histogram<W: Write>(mut w: W, hist: &CoincidenceHistogram) -> Result<()> {
    writeln!(w, "dt_ps,C,acc_mean,singles_A,singles_B,n_periods").map_err(io_err)?;
    for b in &hist.bins {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            b.delay_ps,
            b.coincidences,
            b.accidental_mean(),
            b.singles_a,
            b.singles_b,
            hist.n_periods
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// g² estimate export: `dt_ps,c,c_err,g2,g2_err`.
pub fn write_g2<W: Write>(mut w: W, est: &G2Estimate) -> Result<()> {
    writeln!(w, "dt_ps,c,c_err,g2,g2_err").map_err(io_err)?;
    for b in &est.bins {
        writeln!(w, "{},{},{},{},{}", b.delay_ps, b.c, b.c_err, b.g2, b.g2_err).map_err(io_err)?;
    }
    Ok(())
}

fn parse_f64(field: &str, line_no: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Parse(format!("line {line_no}: '{}' is not a number", field.trim()))
    })
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').collect()
}

/// Parse a g² CSV (`dt_ps,c,c_err,g2,g2_err`, header required).
/// Returns a [`G2Estimate`] carrying the count-level error structure.
pub fn read_g2(text: &str) -> Result<G2Estimate> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((n, l)) => break (n, l),
            None => return Err(Error::Parse("empty g2 file".into())),
        }
    };
    let cols: Vec<&str> = split_csv_line(header.1).iter().map(|s| s.trim()).collect();
    if cols != ["dt_ps", "c", "c_err", "g2", "g2_err"] {
        return Err(Error::Parse(format!(
            "line {}: expected header dt_ps,c,c_err,g2,g2_err, got '{}'",
            header.0 + 1,
            header.1.trim()
        )));
    }
    let mut bins = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let f = split_csv_line(line);
        if f.len() != 5 {
            return Err(Error::Parse(format!("line {n}: expected 5 fields, got {}", f.len())));
        }
        let delay_ps = parse_f64(f[0], n)?;
        if !delay_ps.is_finite() {
            return Err(Error::Parse(format!("line {n}: non-finite delay")));
        }
        bins.push(G2Bin {
            delay_ps,
            c: parse_f64(f[1], n)?,
            c_err: parse_f64(f[2], n)?,
            g2: parse_f64(f[3], n)?,
            g2_err: parse_f64(f[4], n)?,
        });
    }
    if bins.is_empty() {
        return Err(Error::Parse("g2 file has no data rows".into()));
    }
    if bins.len() > 10_000_000 {
        return Err(Error::Parse("g2 file too large".into()));
    }
    let zero = bins.iter().find(|b| b.delay_ps.abs() < 1e-12);
    let (c0, c0_err) = match zero {
        Some(z) if z.c.is_finite() && z.c_err.is_finite() && z.c_err > 0.0 => {
            (z.c, Some(z.c_err))
        }
        Some(z) => (z.g2, None),
        None => (f64::NAN, None),
    };
    Ok(G2Estimate { bins, c0, c0_err })
}

/// Parse a measured saturation curve: `power_mW,output` rows, header
/// optional.
pub fn read_measurement(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = split_csv_line(line);
        if f.len() != 2 {
            return Err(Error::Parse(format!("line {n}: expected 2 fields, got {}", f.len())));
        }
        // tolerate one header line
        if i == 0 && f[0].trim().parse::<f64>().is_err() {
            continue;
        }
        let p = parse_f64(f[0], n)?;
        let y = parse_f64(f[1], n)?;
        if !p.is_finite() || !y.is_finite() {
            return Err(Error::Parse(format!("line {n}: non-finite value")));
        }
        out.push((p, y));
        if out.len() > 1_000_000 {
            return Err(Error::Parse("measurement file too large".into()));
        }
    }
    if out.is_empty() {
        return Err(Error::Parse("measurement file has no data rows".into()));
    }
    Ok(out)
}

/// Convert normalized bins to a plain (Δt, g², σ) trace for fitting.
pub fn g2_trace(est: &G2Estimate) -> Vec<(f64, f64, f64)> {
    est.bins.iter().map(|b| (b.delay_ps, b.g2, b.g2_err)).collect()
}

/// Convert a histogram + normalization into CSV-ready rows (used by
/// tests to cross-check the exports).
pub fn normalized_rows(bins: &[NormalizedBin]) -> Vec<(f64, f64, f64)> {
    bins.iter().map(|b| (b.delay_ps, b.c, b.c_err)).collect()
}

/// Field-record export: `metadata` JSON plus one CSV matrix per wave
/// with instantaneous power |A|² in W (rows = time, one column per
/// checkpoint).
pub fn write_field_metadata<W: Write>(mut w: W, record: &FieldRecord) -> Result<()> {
    let meta = serde_json::json!({
        "crystal": record.crystal,
        "pump": record.pump_spec,
        "signal": record.signal_spec,
        "gvm_ps_per_mm": record.gvm,
        "lambda_sfg_nm": record.lambda_sfg_nm,
        "signal_input_power_w": record.signal_input_power_w,
        "z_checkpoints_mm": record.z_mm,
        "n_time": record.time_ps.len(),
        "values": "instantaneous power |A|^2 in W",
    });
    serde_json::to_writer_pretty(&mut w, &meta)
        .map_err(|e| Error::Config(format!("metadata write failed: {e}")))?;
    writeln!(w).map_err(io_err)?;
    Ok(())
}

/// One wave of a field record as a CSV matrix.
pub fn write_field_wave<W: Write>(
    mut w: W,
    record: &FieldRecord,
    wave: &[Vec<num_complex::Complex64>],
) -> Result<()> {
    write!(w, "t_ps").map_err(io_err)?;
    for z in &record.z_mm {
        write!(w, ",z_{z}_mm").map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    for (i, t) in record.time_ps.iter().enumerate() {
        write!(w, "{t}").map_err(io_err)?;
        for cp in wave {
            write!(w, ",{}", cp[i].norm_sqr()).map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    Ok(())
}
