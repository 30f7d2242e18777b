//! CSV emission and parsing for the lab's file formats.
//!
//! Floats are written with 17 significant digits in exponent form so files
//! are locale-free and reproduce bit-identical values when read back.

use std::io::{Read, Write};

use crate::converge::ConvergenceCurve;
use crate::error::Result;
use crate::hellinger::VerdictMatrix;
use crate::identify::CovarianceBlock;
use crate::measure::OutcomeSequence;
use crate::posterior::EmpiricalMeasureQ;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header comment, `g1..gK,weight` header, one row per point.
pub fn write_empirical_csv<W: Write>(mut w: W, est: &EmpiricalMeasureQ) -> Result<()> {
    match &est.provenance {
        Some(p) => writeln!(w, "# n={}, M={}, seed={}", p.n, p.replicates, p.seed)?,
        None => writeln!(w, "# provenance unknown")?,
    }
    let header: Vec<String> = (1..=est.dim())
        .map(|k| format!("g{k}"))
        .chain(std::iter::once("weight".to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (p, weight) in est.points.iter().zip(&est.weights) {
        let row: Vec<String> = p
            .coords()
            .iter()
            .chain(std::iter::once(weight))
            .map(|&x| fmt_f64(x))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Columns `n,M,R,metric,mean_distance,stderr`.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &ConvergenceCurve) -> Result<()> {
    writeln!(w, "n,M,R,metric,mean_distance,stderr")?;
    for r in &curve.rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.n,
            r.replicates,
            r.repeats,
            curve.metric.name(),
            fmt_f64(r.mean_distance),
            fmt_f64(r.stderr)
        )?;
    }
    Ok(())
}

/// Square matrix of verdict codes with grid indices as row and column labels.
pub fn write_verdict_csv<W: Write>(mut w: W, m: &VerdictMatrix) -> Result<()> {
    let size = m.verdicts.len();
    let header: Vec<String> = std::iter::once("i".to_string())
        .chain((0..size).map(|j| j.to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, row) in m.verdicts.iter().enumerate() {
        let cells: Vec<String> = std::iter::once(i.to_string())
            .chain(row.iter().map(|v| v.code().to_string()))
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Header `b{j}_{l}` labels, then the matrix rows.
pub fn write_covariance_csv<W: Write>(mut w: W, c: &CovarianceBlock) -> Result<()> {
    writeln!(w, "{}", c.labels().join(","))?;
    for row in c.matrix.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// `a1..an` header sized to the longest sequence, one row per sequence.
pub fn write_outcomes_csv<W: Write>(mut w: W, seqs: &[OutcomeSequence]) -> Result<()> {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let header: Vec<String> = (1..=width).map(|j| format!("a{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for s in seqs {
        let cells: Vec<String> = s.values().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Parses an outcome file. Rows may be ragged; trailing empty cells are
/// ignored. A header row is recognized by a leading `a`. Rows that fail to
/// parse come back as `Err(message)` so callers can keep going.
pub fn read_outcomes_csv<R: Read>(
    r: R,
) -> Result<Vec<std::result::Result<OutcomeSequence, String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if idx == 0 && record.get(0).is_some_and(|c| c.starts_with('a')) {
            continue;
        }
        let mut cells: Vec<&str> = record.iter().collect();
        while cells.last() == Some(&"") {
            cells.pop();
        }
        let parsed = cells
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.parse::<usize>()
                    .map_err(|_| format!("item {}: cannot parse {c:?} as a category", j + 1))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(OutcomeSequence);
        out.push(parsed);
    }
    Ok(out)
}
