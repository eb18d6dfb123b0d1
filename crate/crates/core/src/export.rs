//! CSV writers for generators, kernels, distributions and sample sets.
//!
//! Every float is written with 17 significant digits so files round-trip
//! exactly. Records are RFC-4180 with LF terminators.

use std::io::Write;

use csv::{Terminator, WriterBuilder};

use crate::error::Result;
use crate::grid::StateGrid;
use crate::sparse::CsrMatrix;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(w)
}

/// `row,col,rate` for every stored entry.
pub fn write_triplets<W: Write>(w: W, m: &CsrMatrix) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["row", "col", "rate"])?;
    for (r, c, v) in m.triplets() {
        out.write_record([r.to_string(), c.to_string(), fmt_f64(v)])?;
    }
    out.flush()?;
    Ok(())
}

/// Dense row-major matrix; the header carries the column state values and
/// the first field of each row its own state value.
pub fn write_dense<W: Write>(w: W, row_states: &[f64], col_states: &[f64], values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), row_states.len() * col_states.len());
    let mut out = writer(w);
    let mut header = vec!["state".to_string()];
    header.extend(col_states.iter().map(|&x| fmt_f64(x)));
    out.write_record(&header)?;
    for (r, &x) in row_states.iter().enumerate() {
        let mut rec = vec![fmt_f64(x)];
        let row = &values[r * col_states.len()..(r + 1) * col_states.len()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// One line per joint state: coordinates on every axis, then pmf and cdf.
pub fn write_joint_table<W: Write>(w: W, axes: &[StateGrid], pmf: &[f64], cdf: &[f64]) -> Result<()> {
    let mut out = writer(w);
    let mut header: Vec<String> = (1..=axes.len()).map(|k| format!("x{k}")).collect();
    header.push("pmf".into());
    header.push("cdf".into());
    out.write_record(&header)?;
    let dims: Vec<usize> = axes.iter().map(|g| g.len()).collect();
    for (z, (&p, &f)) in pmf.iter().zip(cdf).enumerate() {
        let idx = crate::kernel::unravel(z, &dims);
        let mut rec: Vec<String> = idx
            .iter()
            .zip(axes)
            .map(|(&i, g)| fmt_f64(g.points()[i]))
            .collect();
        rec.push(fmt_f64(p));
        rec.push(fmt_f64(f));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Generic numeric table with named columns.
pub fn write_columns<W: Write>(w: W, names: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(names)?;
    for row in rows {
        out.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    out.flush()?;
    Ok(())
}
