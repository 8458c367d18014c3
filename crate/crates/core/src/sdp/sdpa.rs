//! Sparse SDPA files.
//!
//! A [`ConicProblem`] `min c'x, constant_k + sum_i x_i F_ki PSD` maps onto
//! the SDPA primal `min c'x, sum_i x_i F_i - F_0 PSD` with `F_0 = -constant`.
//! All linear rows go into one trailing diagonal block: each inequality is
//! one diagonal entry, each equality becomes an adjacent `(+row, -row)` pair.
//! [`read_problem`] recognises such pairs and restores the equalities.
//!
//! The objective offset has no place in the format and is written into a
//! comment line (`"objective_offset <value>`), which [`read_problem`] honours.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ConicProblem, ConicSolution, EqualityRow, LinearInequality, PsdBlock, SolveStatus};
use crate::error::{Error, Result};

const OFFSET_TAG: &str = "objective_offset";

/// Renders `cp` in sparse SDPA format.
pub fn to_sdpa_string(cp: &ConicProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\"{} vars, {} equalities",
        cp.num_vars,
        cp.equalities.len()
    );
    let _ = writeln!(out, "\"{OFFSET_TAG} {:e}", cp.objective_offset);
    let diag = cp.linear.len() + 2 * cp.equalities.len();
    let nblocks = cp.psd.len() + usize::from(diag > 0);
    let _ = writeln!(out, "{}", cp.num_vars);
    let _ = writeln!(out, "{nblocks}");
    let mut sizes: Vec<String> = cp.psd.iter().map(|b| b.side.to_string()).collect();
    if diag > 0 {
        sizes.push(format!("-{diag}"));
    }
    let _ = writeln!(out, "{}", sizes.join(" "));
    let c: Vec<String> = cp.objective.iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(out, "{}", c.join(" "));

    for (k, b) in cp.psd.iter().enumerate() {
        let blk = k + 1;
        for ((r, c), v) in merge(b.constant.iter().map(|&(i, j, v)| ((i, j), v))) {
            if v != 0.0 {
                let _ = writeln!(out, "0 {blk} {} {} {:e}", r + 1, c + 1, -v);
            }
        }
        for ((var, r, c), v) in merge(b.entries.iter().map(|&(var, i, j, v)| ((var, i, j), v))) {
            if v != 0.0 {
                let _ = writeln!(out, "{} {blk} {} {} {v:e}", var + 1, r + 1, c + 1);
            }
        }
    }
    if diag > 0 {
        let blk = cp.psd.len() + 1;
        let mut pos = 0;
        for row in &cp.linear {
            pos += 1;
            write_diag(&mut out, blk, pos, -row.constant, &row.coeffs, 1.0);
        }
        for row in &cp.equalities {
            pos += 1;
            write_diag(&mut out, blk, pos, row.rhs, &row.coeffs, 1.0);
            pos += 1;
            write_diag(&mut out, blk, pos, -row.rhs, &row.coeffs, -1.0);
        }
    }
    out
}

/// Sums duplicate keys; output ordered by key.
fn merge<K: Ord>(items: impl Iterator<Item = (K, f64)>) -> BTreeMap<K, f64> {
    let mut map = BTreeMap::new();
    for (k, v) in items {
        *map.entry(k).or_insert(0.0) += v;
    }
    map
}

fn write_diag(
    out: &mut String,
    blk: usize,
    pos: usize,
    f0: f64,
    coeffs: &[(usize, f64)],
    sign: f64,
) {
    if f0 != 0.0 {
        let _ = writeln!(out, "0 {blk} {pos} {pos} {f0:e}");
    }
    for (var, v) in merge(coeffs.iter().copied()) {
        if v != 0.0 {
            let _ = writeln!(out, "{} {blk} {pos} {pos} {:e}", var + 1, sign * v);
        }
    }
}

/// Writes `cp` as a `.dat-s` file.
pub fn export_sdpa(cp: &ConicProblem, path: &Path) -> Result<()> {
    std::fs::write(path, to_sdpa_string(cp))?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Splits on whitespace and the punctuation SDPA allows between numbers.
fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|ch: char| ch.is_whitespace() || matches!(ch, ',' | '{' | '}' | '(' | ')'))
        .filter(|t| !t.is_empty())
}

fn number<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| parse_err(line, format!("expected a number, found {tok:?}")))
}

/// Parses sparse SDPA text back into a [`ConicProblem`].
pub fn parse_problem(text: &str) -> Result<ConicProblem> {
    let mut offset = 0.0;
    let mut entries: Vec<(usize, &str)> = Vec::new();
    let mut stage = 0usize;
    let mut m = 0usize;
    let mut nblocks = 0usize;
    let mut sizes: Vec<i64> = Vec::new();
    let mut c: Vec<f64> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed
            .strip_prefix('"')
            .or_else(|| trimmed.strip_prefix('*'))
        {
            if let Some(v) = rest.trim().strip_prefix(OFFSET_TAG) {
                offset = number(v.trim(), line)?;
            }
            continue;
        }
        match stage {
            0 => {
                m = number(tokens(trimmed).next().unwrap_or(""), line)?;
                stage = 1;
            }
            1 => {
                nblocks = number(tokens(trimmed).next().unwrap_or(""), line)?;
                if nblocks == 0 {
                    return Err(parse_err(line, "block count must be positive"));
                }
                stage = 2;
            }
            2 => {
                for t in tokens(trimmed) {
                    if sizes.len() < nblocks {
                        sizes.push(number(t, line)?);
                    }
                }
                if sizes.len() == nblocks {
                    if sizes.contains(&0) {
                        return Err(parse_err(line, "block size 0"));
                    }
                    stage = 3;
                }
            }
            3 => {
                for t in tokens(trimmed) {
                    if c.len() < m {
                        c.push(number(t, line)?);
                    }
                }
                if c.len() == m {
                    stage = 4;
                }
            }
            _ => entries.push((line, trimmed)),
        }
    }
    if stage < 4 {
        return Err(parse_err(
            text.lines().count(),
            "unexpected end of file in header",
        ));
    }

    let mut psd: Vec<PsdBlock> = Vec::new();
    let mut psd_index = vec![usize::MAX; nblocks];
    let mut diag_blocks: Vec<(usize, usize)> = Vec::new();
    for (k, &s) in sizes.iter().enumerate() {
        if s > 0 {
            psd_index[k] = psd.len();
            psd.push(PsdBlock {
                label: format!("block{}", k + 1),
                side: s as usize,
                entries: Vec::new(),
                constant: Vec::new(),
            });
        } else {
            diag_blocks.push((k, (-s) as usize));
        }
    }
    // linear rows: (constant, coeffs) per diagonal position
    let mut diag_rows: BTreeMap<(usize, usize), (f64, BTreeMap<usize, f64>)> = BTreeMap::new();
    for &(k, n) in &diag_blocks {
        for p in 0..n {
            diag_rows.insert((k, p), (0.0, BTreeMap::new()));
        }
    }

    for (line, text) in entries {
        let t: Vec<&str> = tokens(text).collect();
        if t.len() != 5 {
            return Err(parse_err(
                line,
                format!("expected 5 fields, found {}", t.len()),
            ));
        }
        let mat: usize = number(t[0], line)?;
        let blk: usize = number(t[1], line)?;
        let i: usize = number(t[2], line)?;
        let j: usize = number(t[3], line)?;
        let v: f64 = number(t[4], line)?;
        if mat > m {
            return Err(parse_err(line, format!("matrix index {mat} exceeds {m}")));
        }
        if blk == 0 || blk > nblocks {
            return Err(parse_err(line, format!("block index {blk} out of range")));
        }
        let side = sizes[blk - 1].unsigned_abs() as usize;
        if i == 0 || j == 0 || i > side || j > side {
            return Err(parse_err(
                line,
                format!("entry ({i},{j}) outside block of side {side}"),
            ));
        }
        let (i, j) = (i.min(j) - 1, i.max(j) - 1);
        if sizes[blk - 1] > 0 {
            let b = &mut psd[psd_index[blk - 1]];
            if mat == 0 {
                b.constant.push((i, j, -v));
            } else {
                b.entries.push((mat - 1, i, j, v));
            }
        } else {
            if i != j {
                return Err(parse_err(line, "off-diagonal entry in a diagonal block"));
            }
            let row = diag_rows.get_mut(&(blk - 1, i)).expect("diagonal position");
            if mat == 0 {
                row.0 -= v;
            } else {
                *row.1.entry(mat - 1).or_insert(0.0) += v;
            }
        }
    }

    let rows: Vec<(f64, Vec<(usize, f64)>)> = diag_rows
        .into_values()
        .map(|(k, map)| (k, map.into_iter().filter(|&(_, v)| v != 0.0).collect()))
        .collect();
    let mut linear = Vec::new();
    let mut equalities = Vec::new();
    let mut idx = 0;
    while idx < rows.len() {
        let (c0, a0) = &rows[idx];
        if let Some((c1, a1)) = rows.get(idx + 1) {
            let negated = a0.len() == a1.len()
                && !a0.is_empty()
                && *c1 == -*c0
                && a0
                    .iter()
                    .zip(a1)
                    .all(|(&(k0, v0), &(k1, v1))| k0 == k1 && v1 == -v0);
            if negated {
                equalities.push(EqualityRow {
                    label: format!("eq{}", equalities.len()),
                    coeffs: a0.clone(),
                    rhs: -*c0,
                });
                idx += 2;
                continue;
            }
        }
        linear.push(LinearInequality {
            label: format!("lin{}", linear.len()),
            coeffs: a0.clone(),
            constant: *c0,
        });
        idx += 1;
    }
    let cp = ConicProblem {
        num_vars: m,
        objective: c,
        objective_offset: offset,
        equalities,
        linear,
        psd,
        embedding: None,
    };
    cp.validate()?;
    Ok(cp)
}

pub fn read_problem(path: &Path) -> Result<ConicProblem> {
    parse_problem(&std::fs::read_to_string(path)?)
}

/// Fields of an SDPA `.result` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaResult {
    pub phase: String,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub x: Vec<f64>,
    pub iterations: usize,
}

pub fn parse_result(text: &str) -> Result<SdpaResult> {
    let mut phase = None;
    let mut pobj = None;
    let mut dobj = None;
    let mut x: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let line = idx + 1;
        let trimmed = raw.trim();
        let Some((key, value)) = trimmed.split_once('=') else {
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "phase.value" => phase = Some(value.to_string()),
            "objValPrimal" => pobj = Some(number(value, line)?),
            "objValDual" => dobj = Some(number(value, line)?),
            "iteration" => iterations = number(value, line)?,
            "xVec" => {
                let mut body = value.to_string();
                while !body.contains('}') {
                    match lines.next() {
                        Some((_, more)) => body.push_str(more),
                        None => return Err(parse_err(line, "unterminated xVec")),
                    }
                }
                let parsed: Result<Vec<f64>> = tokens(&body).map(|t| number(t, line)).collect();
                x = Some(parsed?);
            }
            _ => {}
        }
    }
    let last = text.lines().count();
    Ok(SdpaResult {
        phase: phase.ok_or_else(|| parse_err(last, "missing phase.value"))?,
        primal_objective: pobj.ok_or_else(|| parse_err(last, "missing objValPrimal"))?,
        dual_objective: dobj.ok_or_else(|| parse_err(last, "missing objValDual"))?,
        x: x.ok_or_else(|| parse_err(last, "missing xVec"))?,
        iterations,
    })
}

fn status_from_phase(phase: &str) -> SolveStatus {
    match phase {
        "pdOPT" => SolveStatus::Optimal,
        "pINF_dFEAS" | "pdINF" => SolveStatus::Infeasible,
        "pFEAS_dINF" => SolveStatus::Unbounded,
        "pdFEAS" | "pFEAS" | "dFEAS" => SolveStatus::MaxIter,
        _ => SolveStatus::Numerical,
    }
}

fn phase_from_status(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "pdOPT",
        SolveStatus::Infeasible => "pINF_dFEAS",
        SolveStatus::Unbounded => "pFEAS_dINF",
        SolveStatus::MaxIter => "pdFEAS",
        SolveStatus::Numerical => "noINFO",
    }
}

/// Reads an SDPA `.result` file for `cp` into a [`ConicSolution`]; residuals
/// are recomputed from `cp` and the objective offset is added back.
pub fn import_solution(path: &Path, cp: &ConicProblem) -> Result<ConicSolution> {
    solution_from_result(&parse_result(&std::fs::read_to_string(path)?)?, cp)
}

pub fn solution_from_result(res: &SdpaResult, cp: &ConicProblem) -> Result<ConicSolution> {
    if res.x.len() != cp.num_vars {
        return Err(Error::invalid(format!(
            "xVec has {} entries, problem has {} variables",
            res.x.len(),
            cp.num_vars
        )));
    }
    let x = res.x.clone();
    let lin = cp.min_linear_slack(&x).min(0.0);
    let eig = cp
        .block_min_eigenvalues(&x)
        .into_iter()
        .fold(0.0f64, f64::min);
    let primal_residual = cp.max_equality_residual(&x).max(-lin).max(-eig);
    let dual_objective = res.dual_objective + cp.objective_offset;
    Ok(ConicSolution {
        status: status_from_phase(&res.phase),
        primal_objective: res.primal_objective + cp.objective_offset,
        dual_objective,
        p_beta: dual_objective,
        gap: (res.primal_objective - res.dual_objective).abs(),
        x,
        primal_residual,
        dual_residual: f64::NAN,
        iterations: res.iterations,
        trace: Vec::new(),
    })
}

/// Writes a solution in the `.result` layout understood by [`parse_result`].
pub fn result_string(sol: &ConicSolution, cp: &ConicProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "phase.value  = {}", phase_from_status(sol.status));
    let _ = writeln!(out, "iteration    = {}", sol.iterations);
    let _ = writeln!(
        out,
        "objValPrimal = {:e}",
        sol.primal_objective - cp.objective_offset
    );
    let _ = writeln!(
        out,
        "objValDual   = {:e}",
        sol.dual_objective - cp.objective_offset
    );
    let xs: Vec<String> = sol.x.iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(out, "xVec = \n{{{}}}", xs.join(","));
    out
}

pub fn write_result(sol: &ConicSolution, cp: &ConicProblem, path: &Path) -> Result<()> {
    std::fs::write(path, result_string(sol, cp))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ConicProblem {
        ConicProblem {
            num_vars: 2,
            objective: vec![1.0, 0.5],
            objective_offset: 0.25,
            equalities: vec![EqualityRow {
                label: "e".into(),
                coeffs: vec![(0, 1.0), (1, -1.0)],
                rhs: 0.5,
            }],
            linear: vec![LinearInequality {
                label: "l".into(),
                coeffs: vec![(1, 1.0)],
                constant: 2.0,
            }],
            psd: vec![PsdBlock {
                label: "m".into(),
                side: 2,
                entries: vec![(0, 0, 0, 1.0), (1, 1, 1, 1.0)],
                constant: vec![(0, 1, 1.0)],
            }],
            embedding: None,
        }
    }

    #[test]
    fn problem_round_trip() {
        let cp = sample();
        let text = to_sdpa_string(&cp);
        assert!(text.lines().any(|l| l == "2 -3"));
        let back = parse_problem(&text).unwrap();
        assert_eq!(back.num_vars, 2);
        assert_eq!(back.objective, cp.objective);
        assert_eq!(back.objective_offset, 0.25);
        assert_eq!(back.equalities.len(), 1);
        assert_eq!(back.equalities[0].coeffs, cp.equalities[0].coeffs);
        assert_eq!(back.equalities[0].rhs, 0.5);
        assert_eq!(back.linear.len(), 1);
        assert_eq!(back.linear[0].constant, 2.0);
        assert_eq!(back.psd[0].constant, vec![(0, 1, 1.0)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "\"c\n1\n1\n2\n1.0\n1 1 1 x 1.0\n";
        match parse_problem(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        match parse_problem("1\n1\n2\n1.0\n1 2 1 1 1.0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn result_round_trip() {
        let cp = sample();
        let sol = ConicSolution {
            status: SolveStatus::Optimal,
            primal_objective: 1.25,
            dual_objective: 1.25,
            p_beta: 1.25,
            x: vec![1.0, 0.5],
            gap: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 7,
            trace: vec![],
        };
        let text = result_string(&sol, &cp);
        let res = parse_result(&text).unwrap();
        assert_eq!(res.phase, "pdOPT");
        assert_eq!(res.x, sol.x);
        let back = solution_from_result(&res, &cp).unwrap();
        assert_eq!(back.status, SolveStatus::Optimal);
        assert!((back.p_beta - 1.25).abs() < 1e-15);
        assert_eq!(back.iterations, 7);
    }
}
