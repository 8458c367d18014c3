//! The `sweep` command: one bound-and-synthesize run per `(d, M)` cell.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use oppsyn::pattern::ConverterProblem;
use oppsyn::recovery::RefineOptions;
use oppsyn::sdp::SolveStatus;
use oppsyn::synth::{bound, certify, BoundOptions};
use oppsyn::Error;

use crate::{read, write, CmdResult, Failure, RelaxArgs};

pub const CSV_HEADER: &str = "d,M,beta,status,q_bound,q_rec,gap,prep_s,solve_s";

#[derive(Debug, Clone, PartialEq)]
struct Row {
    d: usize,
    m: f64,
    beta: usize,
    status: String,
    q_bound: Option<f64>,
    q_rec: Option<f64>,
    prep_s: Option<f64>,
    solve_s: Option<f64>,
}

impl Row {
    fn csv(&self) -> String {
        let opt =
            |v: Option<f64>, prec: usize| v.map(|x| format!("{x:.prec$e}")).unwrap_or_default();
        let gap = match (self.q_rec, self.q_bound) {
            (Some(r), Some(b)) => Some(r - b),
            _ => None,
        };
        let secs = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.d,
            self.m,
            self.beta,
            self.status,
            opt(self.q_bound, 10),
            opt(self.q_rec, 10),
            opt(gap, 4),
            secs(self.prep_s),
            secs(self.solve_s)
        )
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Failure::input(format!("{what}: cannot parse {s:?}")))
        })
        .collect()
}

pub fn parse_d_range(text: &str) -> Result<Vec<usize>, Failure> {
    let out = match text.split_once(':') {
        Some((a, b)) => {
            let a: usize = a
                .trim()
                .parse()
                .map_err(|_| Failure::input(format!("--d-range: bad start {a:?}")))?;
            let b: usize = b
                .trim()
                .parse()
                .map_err(|_| Failure::input(format!("--d-range: bad end {b:?}")))?;
            (a..=b).collect()
        }
        None => parse_list(text, "--d-range")?,
    };
    if out.is_empty() {
        return Err(Failure::input("--d-range is empty"));
    }
    Ok(out)
}

pub fn parse_m_range(text: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let out = match parts.as_slice() {
        [single] => parse_list(single, "--m-range")?,
        [start, stop, step] => {
            let [start, stop, step]: [f64; 3] =
                parse_list::<f64>(&format!("{start},{stop},{step}"), "--m-range")?
                    .try_into()
                    .expect("three values");
            if !(step > 0.0) {
                return Err(Failure::input("--m-range: step must be positive"));
            }
            let count = ((stop - start) / step + 1e-9).floor();
            if count < 0.0 {
                Vec::new()
            } else {
                // rounded so that grid values print as typed
                (0..=count as usize)
                    .map(|k| ((start + k as f64 * step) * 1e10).round() / 1e10)
                    .collect()
            }
        }
        _ => {
            return Err(Failure::input(
                "--m-range: expected START:STOP:STEP or a comma list",
            ))
        }
    };
    if out.is_empty() {
        return Err(Failure::input("--m-range is empty"));
    }
    Ok(out)
}

fn cell_problem(template: &ConverterProblem, d: usize, m: f64) -> oppsyn::Result<ConverterProblem> {
    let mut prob = template.clone();
    prob.pulse_number = d;
    prob.harmonics.retain(|h| h.order != 1);
    prob.modulation_index = Some(m);
    prob.normalized()
}

fn run_cell(template: &ConverterProblem, d: usize, m: f64, opts: &BoundOptions) -> Row {
    let mut row = Row {
        d,
        m,
        beta: opts.beta,
        status: String::new(),
        q_bound: None,
        q_rec: None,
        prep_s: None,
        solve_s: None,
    };
    let fail = |row: &mut Row, e: Error| {
        eprintln!("sweep cell d={d} M={m}: {e}");
        row.status = match e {
            Error::Infeasible => "infeasible",
            Error::RefineFailed(_) => "refine_failed",
            Error::NumericalFailure { .. } => "numerical",
            _ => "error",
        }
        .to_string();
    };
    let prob = match cell_problem(template, d, m) {
        Ok(p) => p,
        Err(e) => {
            fail(&mut row, e);
            return row;
        }
    };
    let run = match bound(&prob, opts) {
        Ok(r) => r,
        Err(e) => {
            fail(&mut row, e);
            return row;
        }
    };
    row.prep_s = Some(run.report.prep_s);
    row.solve_s = Some(run.report.solve_s);
    row.q_bound = run.report.q_beta;
    if run.report.status != SolveStatus::Optimal {
        row.status = run.report.status.to_string();
        return row;
    }
    match certify(&prob, run, &RefineOptions::default(), None) {
        Ok(out) => {
            row.status = "optimal".into();
            row.q_rec = Some(out.certificate.q_refined);
        }
        Err(e) => fail(&mut row, e),
    }
    row
}

fn thread_count(requested: Option<usize>) -> Option<usize> {
    requested
        .or_else(|| std::env::var("OPPSYN_THREADS").ok()?.trim().parse().ok())
        .filter(|&n| n > 0)
}

pub fn cmd_sweep(
    template: &Path,
    d_range: &str,
    m_range: &str,
    relax: &RelaxArgs,
    out: Option<&Path>,
    threads: Option<usize>,
) -> CmdResult {
    let template: ConverterProblem = serde_json::from_str(&read(template)?)
        .map_err(|e| Failure::input(format!("template {}: {e}", template.display())))?;
    let ds = parse_d_range(d_range)?;
    let ms = parse_m_range(m_range)?;
    let opts = relax.options(false);
    let cells: Vec<(usize, f64)> = ds
        .iter()
        .flat_map(|&d| ms.iter().map(move |&m| (d, m)))
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(threads) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::input(format!("thread pool: {e}")))?;
    // collect keeps the (d, M) order whatever the completion order
    let rows: Vec<Row> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(d, m)| run_cell(&template, d, m, &opts))
            .collect()
    });

    for &m in &ms {
        let bounds: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.m == m)
            .filter_map(|r| r.q_bound.map(|q| (r.d, q)))
            .collect();
        for w in bounds.windows(2) {
            if w[1].1 > w[0].1 + 1e-7 {
                eprintln!(
                    "sweep expectation: Q_beta rises from {:.6e} (d={}) to {:.6e} (d={}) at M={m}",
                    w[0].1, w[0].0, w[1].1, w[1].0
                );
            }
        }
    }

    let mut csv = String::new();
    let _ = writeln!(csv, "{CSV_HEADER}");
    for r in &rows {
        let _ = writeln!(csv, "{}", r.csv());
    }
    match out {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_d_range("1:4").ok(), Some(vec![1, 2, 3, 4]));
        assert_eq!(parse_d_range("2,5").ok(), Some(vec![2, 5]));
        let m = parse_m_range("0.05:1.1:0.05").ok().unwrap();
        assert_eq!(m.len(), 22);
        assert_eq!(m[2], 0.15);
        assert_eq!(m[21], 1.1);
        assert!(parse_m_range("0.5:0.1:0.1").is_err());
        assert!(parse_m_range("a").is_err());
    }

    #[test]
    fn rows_keep_empty_fields() {
        let row = Row {
            d: 1,
            m: 0.6,
            beta: 2,
            status: "infeasible".into(),
            q_bound: None,
            q_rec: None,
            prep_s: Some(0.01),
            solve_s: Some(0.02),
        };
        assert_eq!(row.csv(), "1,0.6,2,infeasible,,,,0.010,0.020");
    }
}
