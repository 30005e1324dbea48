//! CSV writers for sweeps, enumerations and solver traces.

use std::io::Write;

use crate::codesign::{CodesignResult, EnumRow};
use crate::error::Result;
use crate::solvers::TraceRow;

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// `"i<-j"` tokens joined by `;`.
pub fn fmt_edges(edges: &[(usize, usize)]) -> String {
    edges.iter().map(|(i, j)| format!("{i}<-{j}")).collect::<Vec<_>>().join(";")
}

pub const SWEEP_HEADER: [&str; 8] = [
    "lambda",
    "num_extra_links",
    "selected_edges",
    "nu_polished",
    "reg_objective",
    "iters",
    "gap",
    "converged",
];

pub fn write_sweep_csv<W: Write>(out: W, results: &[CodesignResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in results {
        w.write_record([
            fmt_f64(r.lambda),
            r.selected_edges.len().to_string(),
            fmt_edges(&r.selected_edges),
            fmt_f64(r.nu_polished),
            fmt_f64(r.reg_objective),
            r.iters.to_string(),
            fmt_f64(r.gap),
            r.converged.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_enumeration_csv<W: Write>(out: W, rows: &[EnumRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bitmask", "num_extra_links", "edges", "nu"])?;
    for r in rows {
        w.write_record([
            r.bitmask.to_string(),
            r.num_extra_links.to_string(),
            fmt_edges(&r.edges),
            fmt_f64(r.nu),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "objective", "gap", "max_group_norm"])?;
    for r in trace {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.objective),
            r.gap.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.max_group_norm),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let v = 0.1 + 0.2;
        let s = fmt_f64(v);
        assert_eq!(s, "3.0000000000000004e-1");
        assert_eq!(s.parse::<f64>().unwrap(), v);
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }

    #[test]
    fn edges_join() {
        assert_eq!(fmt_edges(&[(0, 2), (2, 0)]), "0<-2;2<-0");
        assert_eq!(fmt_edges(&[]), "");
    }

    #[test]
    fn enumeration_csv_quotes_nothing_and_has_header() {
        let rows = vec![
            EnumRow {
                bitmask: 0,
                num_extra_links: 0,
                edges: vec![],
                nu: 2.0,
            },
            EnumRow {
                bitmask: 3,
                num_extra_links: 2,
                edges: vec![(0, 2), (2, 0)],
                nu: 1.5,
            },
        ];
        let mut buf = Vec::new();
        write_enumeration_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "bitmask,num_extra_links,edges,nu");
        assert_eq!(lines[2], "3,2,0<-2;2<-0,1.5000000000000000e0");
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rd.records().count(), 2);
    }

    #[test]
    fn trace_leaves_missing_gaps_empty() {
        let trace = [
            TraceRow {
                iter: 1,
                objective: 1.0,
                gap: None,
                max_group_norm: 0.0,
            },
            TraceRow {
                iter: 2,
                objective: 0.5,
                gap: Some(1e-3),
                max_group_norm: 0.25,
            },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("1,1.0000000000000000e0,,"));
    }
}
