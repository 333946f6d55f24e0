//! Command-line driver: reads a JSON problem file, runs one pipeline stage
//! and writes a JSON report plus an optional CSV table.

pub mod problem;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use exactpert_core::borel::{growth_estimate, taylor_match, RayFunction, RayGrid};
use exactpert_core::formal::{
    certify_constants, formal_ift, formal_residual, g_recursion, majorant_check,
    majorant_growth_fit, majorant_sequence, to_standard_form, CoeffTable, StandardFormProblem,
};
use exactpert_core::laplace::{
    laplace, pade_continue, resum_implicit_solution, resum_series, solve_borel, ResumParams,
    ResummationResult, SectorSpec,
};
use exactpert_core::linalg::CMat;
use exactpert_core::matrix::{
    characteristic_problem, eigen_resum, recursive_block_diagonalize, similarity_residual,
    MatrixFamily, DEFAULT_GAP_TOL,
};
use exactpert_core::oracle::{
    eig_direct, implicit_residual, newton_direct, sorted_eigenvalues, VerificationRecord,
    VerificationReport,
};
use exactpert_core::series::{formal_borel, TruncatedSeries};
use exactpert_core::{Error, Result, C64};
use problem::{Kind, ProblemFile, XiMax};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

/// Largest deviation from the direct oracle accepted by `check`.
pub const CHECK_TOL: f64 = 1e-7;

/// Newton tolerance of the direct oracle.
const ORACLE_TOL: f64 = 1e-14;

/// Ray length used where no `hbar` is available to size it.
const FALLBACK_XI_MAX: f64 = 40.0;

/// At most this many ray samples are echoed into JSON output.
const JSON_RAY_SAMPLES: usize = 401;

#[derive(Parser, Debug)]
#[command(name = "exactpert", version, about = "Borel-Laplace resummation of perturbative solutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Formal power-series solution through order K.
    Formal(Args),
    /// The standard form w = hbar G(hbar, w) of an implicit problem.
    StandardForm(Args),
    /// Borel-plane solution on the ray.
    Borel(Args),
    /// Resummed values at the requested hbar.
    Resum(Args),
    /// Resummed values against the direct oracle.
    Check(Args),
    /// Majorant sequence and the coefficient bound check.
    Majorant(Args),
    /// Block diagonalisation of a matrix family.
    Matrix(Args),
    /// Resummed eigenvalues of a matrix family.
    Eigen(Args),
    /// Resummation over the hbar and x grids of the problem file.
    Sweep(Args),
}

#[derive(clap::Args, Debug, Clone)]
struct Args {
    /// JSON problem file.
    problem: PathBuf,
    #[arg(short = 'K', long)]
    order: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long = "R")]
    radius: Option<f64>,
    /// Repeatable; `re` or `re,im`.
    #[arg(long, value_parser = parse_hbar, allow_hyphen_values = true)]
    hbar: Vec<C64>,
    /// A number, or `auto`.
    #[arg(long)]
    xi_max: Option<String>,
    #[arg(long)]
    grid_h: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

fn parse_hbar(s: &str) -> std::result::Result<C64, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    match parts.as_slice() {
        [re] => Ok(C64::new(num(re)?, 0.0)),
        [re, im] => Ok(C64::new(num(re)?, num(im)?)),
        _ => Err(format!("expected `re` or `re,im`, got {s:?}")),
    }
}

/// Resolved numeric knobs, echoed into every report.
#[derive(Clone, Debug, Serialize)]
struct Config {
    order: usize,
    theta: f64,
    #[serde(rename = "R")]
    radius: f64,
    hbar: Vec<C64>,
    xi_max: XiMax,
    h: f64,
    tol: f64,
    n_max: usize,
    gap_tol: f64,
}

impl Config {
    fn resolve(args: &Args, file: &ProblemFile) -> Result<Self> {
        let n = file.numerics.clone().unwrap_or_default();
        let defaults = ResumParams::default();
        let xi_max = match &args.xi_max {
            Some(s) if s == "auto" => XiMax::Auto("auto".into()),
            Some(s) => XiMax::Fixed(s.parse::<f64>().map_err(|e| {
                Error::InvalidInput(format!("--xi-max: expected a number or auto, got {s:?} ({e})"))
            })?),
            None => n
                .xi_max
                .unwrap_or(XiMax::Fixed(defaults.xi_max.unwrap_or(FALLBACK_XI_MAX))),
        };
        let file_sector = file.sector_spec()?;
        let hbar = if args.hbar.is_empty() {
            file.sweep.as_ref().map(|s| s.hbar_values()).unwrap_or_default()
        } else {
            args.hbar.clone()
        };
        let cfg = Self {
            order: args.order.or(n.order).unwrap_or(defaults.order),
            theta: args.theta.unwrap_or(file_sector.theta),
            radius: args.radius.unwrap_or(file_sector.radius),
            hbar,
            xi_max,
            h: args.grid_h.or(n.h).unwrap_or(defaults.h),
            tol: args.tol.or(n.tol).unwrap_or(defaults.tol),
            n_max: args.n_max.or(n.n_max).unwrap_or(defaults.n_max),
            gap_tol: args.gap_tol.or(n.gap_tol).unwrap_or(DEFAULT_GAP_TOL),
        };
        for (name, v) in [("--grid-h", cfg.h), ("--tol", cfg.tol), ("--gap-tol", cfg.gap_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if let XiMax::Fixed(x) = cfg.xi_max {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidInput(format!("--xi-max must be positive, got {x}")));
            }
        }
        if cfg.n_max == 0 {
            return Err(Error::InvalidInput("--n-max must be positive".into()));
        }
        Ok(cfg)
    }

    fn sector(&self) -> Result<SectorSpec> {
        SectorSpec::new(self.theta, self.radius)
    }

    fn xi_max(&self) -> Option<f64> {
        match self.xi_max {
            XiMax::Fixed(x) => Some(x),
            XiMax::Auto(_) => None,
        }
    }

    fn params(&self) -> ResumParams {
        ResumParams {
            order: self.order,
            xi_max: self.xi_max(),
            h: self.h,
            tol: self.tol,
            n_max: self.n_max,
        }
    }

    fn grid(&self) -> Result<RayGrid> {
        RayGrid::new(self.theta, self.xi_max().unwrap_or(FALLBACK_XI_MAX), self.h)
    }

    fn hbars(&self) -> Result<&[C64]> {
        if self.hbar.is_empty() {
            return Err(Error::InvalidInput(
                "no hbar values: pass --hbar or give sweep.hbar in the problem file".into(),
            ));
        }
        Ok(&self.hbar)
    }
}

/// A CSV table held as strings.
#[derive(Clone, Debug, Default)]
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integers print without a fractional part, everything else in the
/// shortest round-trip form.
fn num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x}")
    } else {
        format!("{x:?}")
    }
}

/// Per-hbar outcome in which a failure at one point does not abort the rest.
struct Outcome {
    report: Value,
    table: Option<Table>,
    code: i32,
}

impl Outcome {
    fn new(report: Value, table: Option<Table>) -> Self {
        Self { report, table, code: 0 }
    }

    fn with_code(mut self, code: i32) -> Self {
        self.code = code;
        self
    }
}

fn error_entry(hbar: Option<C64>, e: &Error) -> Value {
    let mut v = json!({ "error": e.to_string(), "exit_code": e.exit_code() });
    if let Some(h) = hbar {
        v["hbar"] = json!(h);
    }
    v
}

fn first_code<'a, I: IntoIterator<Item = &'a Error>>(errors: I) -> i32 {
    errors.into_iter().next().map(|e| e.exit_code()).unwrap_or(0)
}

fn series_table(series: &TruncatedSeries, label: Option<usize>) -> Table {
    let mut t = series_header(series.dim(), label.is_some());
    append_series(&mut t, series, label);
    t
}

fn series_header(dim: usize, labelled: bool) -> Table {
    if dim == 1 && !labelled {
        Table::new(&["n", "re", "im"])
    } else {
        Table::new(&["n", "i", "re", "im"])
    }
}

fn append_series(t: &mut Table, series: &TruncatedSeries, label: Option<usize>) {
    for (n, c) in series.coeffs().iter().enumerate() {
        for (i, z) in c.iter().enumerate() {
            let mut row = vec![n.to_string()];
            if t.header.len() == 4 {
                row.push(label.unwrap_or(i + 1).to_string());
            }
            row.extend([num(z.re), num(z.im)]);
            t.rows.push(row);
        }
    }
}

/// One row of a sweep table.
struct SweepRow {
    prefix: Vec<String>,
    hbar: C64,
    value: C64,
    oracle: Option<C64>,
}

/// `hbar, value, oracle, deviation`, preceded by labelling columns and
/// followed by imaginary parts when any entry is complex.
fn sweep_table(prefix: &[&str], rows: &[SweepRow]) -> Table {
    let complex = rows.iter().any(|r| {
        r.hbar.im != 0.0 || r.value.im != 0.0 || r.oracle.map(|o| o.im != 0.0).unwrap_or(false)
    });
    let mut header: Vec<&str> = prefix.to_vec();
    header.extend(["hbar", "value", "oracle", "deviation"]);
    if complex {
        header.extend(["hbar_im", "value_im", "oracle_im"]);
    }
    let mut t = Table::new(&header);
    for r in rows {
        let mut row = r.prefix.clone();
        row.push(num(r.hbar.re));
        row.push(num(r.value.re));
        match r.oracle {
            Some(o) => row.extend([num(o.re), num((r.value - o).norm())]),
            None => row.extend([String::new(), String::new()]),
        }
        if complex {
            row.push(num(r.hbar.im));
            row.push(num(r.value.im));
            row.push(r.oracle.map(|o| num(o.im)).unwrap_or_default());
        }
        t.rows.push(row);
    }
    t
}

fn matrix_json(m: &CMat) -> Value {
    let rows: Vec<Vec<C64>> = (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect();
    json!(rows)
}

fn table_json(table: &CoeffTable) -> Value {
    json!(table
        .iter()
        .map(|((k, m, i), v)| json!({ "k": k, "m": m.parts(), "i": i + 1, "v": v }))
        .collect::<Vec<_>>())
}

fn standard_form_of(file: &ProblemFile, cfg: &Config) -> Result<(StandardFormProblem, Option<(Vec<C64>, Vec<C64>)>)> {
    match file.kind {
        Kind::Implicit => {
            let p = file.problem_spec()?;
            let sol = formal_ift(&p, &file.seed(), cfg.order.max(1))?;
            let s = to_standard_form(&p, &sol)?;
            let base = (sol.series.coeff(0).to_vec(), sol.series.coeff(1).to_vec());
            Ok((s, Some(base)))
        }
        Kind::StandardForm => Ok((file.standard_form(cfg.order)?, None)),
        other => Err(Error::InvalidInput(format!(
            "{other:?} problems have no standard form"
        ))),
    }
}

fn cmd_formal(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    match file.kind {
        Kind::Implicit => {
            let p = file.problem_spec()?;
            let sol = formal_ift(&p, &file.seed(), cfg.order)?;
            let residual = formal_residual(&p, &sol)?;
            let report = json!({
                "series": sol.series.coeffs(),
                "condition": sol.condition,
                "residual": residual,
            });
            Ok(Outcome::new(report, Some(series_table(&sol.series, None))))
        }
        Kind::StandardForm => {
            let g = g_recursion(&file.standard_form(cfg.order)?, cfg.order)?;
            Ok(Outcome::new(json!({ "series": g.coeffs() }), Some(series_table(&g, None))))
        }
        Kind::Matrix => {
            let fam = file.matrix_family()?;
            let p = characteristic_problem(&fam)?;
            let mut table = series_header(1, true);
            let mut entries = Vec::new();
            for (j, l) in sorted_eigenvalues(&fam.orders[0])?.into_iter().enumerate() {
                let sol = formal_ift(&p, &[l], cfg.order)?;
                append_series(&mut table, &sol.series, Some(j + 1));
                entries.push(json!({
                    "leading": l,
                    "series": sol.series.coeffs(),
                    "condition": sol.condition,
                }));
            }
            Ok(Outcome::new(json!({ "eigenvalues": entries }), Some(table)))
        }
        Kind::Series => Err(Error::InvalidInput(
            "formal needs an implicit, standard-form or matrix problem".into(),
        )),
    }
}

fn cmd_standard_form(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    let (s, base) = standard_form_of(file, cfg)?;
    let table = s.table_to(cfg.order)?;
    let borel: Vec<Value> = s
        .borel_coeffs
        .iter()
        .flatten()
        .map(|((m, i), cf)| json!({ "m": m.parts(), "i": i + 1, "function": cf }))
        .collect();
    let mut report = json!({
        "dim": s.dim,
        "table_order": s.table_order,
        "coeffs": table_json(&table),
        "borel": borel,
    });
    if let Some((f0, f1)) = base {
        report["f0"] = json!(f0);
        report["f1"] = json!(f1);
    }
    let mut csv = Table::new(&["k", "m", "i", "re", "im"]);
    for ((k, m, i), v) in &table {
        let m: Vec<String> = m.parts().iter().map(|x| x.to_string()).collect();
        csv.rows.push(vec![
            k.to_string(),
            m.join(";"),
            (i + 1).to_string(),
            num(v.re),
            num(v.im),
        ]);
    }
    Ok(Outcome::new(report, Some(csv)))
}

fn ray_outputs(sigma: &RayFunction) -> (Value, Table) {
    let grid = sigma.grid;
    let stride = grid.len().div_ceil(JSON_RAY_SAMPLES).max(1);
    let samples: Vec<Value> = (0..grid.len())
        .step_by(stride)
        .map(|j| {
            let v: Vec<C64> = sigma.components().iter().map(|c| c[j]).collect();
            json!({ "xi": grid.s(j), "value": v })
        })
        .collect();
    let mut t = if sigma.dim() == 1 {
        Table::new(&["xi", "re", "im"])
    } else {
        Table::new(&["xi", "i", "re", "im"])
    };
    for j in 0..grid.len() {
        for (i, c) in sigma.components().iter().enumerate() {
            let mut row = vec![num(grid.s(j))];
            if sigma.dim() > 1 {
                row.push((i + 1).to_string());
            }
            row.extend([num(c[j].re), num(c[j].im)]);
            t.rows.push(row);
        }
    }
    (json!(samples), t)
}

fn cmd_borel(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    if file.kind == Kind::Series {
        let f = file.truncated_series()?;
        let sigma = pade_continue(&formal_borel(&f), &cfg.grid()?)?;
        let growth = growth_estimate(&sigma);
        let (samples, table) = ray_outputs(&sigma);
        let report = json!({
            "xi_max": sigma.grid.xi_max,
            "h": sigma.grid.h,
            "nodes": sigma.grid.len(),
            "growth": growth,
            "samples": samples,
        });
        return Ok(Outcome::new(report, Some(table)));
    }
    let (s, _) = standard_form_of(file, cfg)?;
    let sector = cfg.sector()?;
    let inside: Vec<C64> = cfg.hbar.iter().copied().filter(|h| sector.contains(*h)).collect();
    if cfg.xi_max().is_none() && inside.is_empty() {
        return Err(Error::InvalidInput(
            "xi_max = auto needs at least one hbar inside the sector".into(),
        ));
    }
    let sol = solve_borel(&s, cfg.theta, &inside, &cfg.params())?;
    let g = g_recursion(&s, cfg.order)?;
    let phi = formal_borel(&g);
    let taylor = match phi.len() {
        0 => Value::Null,
        n => match taylor_match(&sol.sigma, &phi, 4.min(n - 1)) {
            Ok(d) => json!(d),
            Err(e) => json!({ "error": e.to_string() }),
        },
    };
    let (samples, table) = ray_outputs(&sol.sigma);
    let report = json!({
        "xi_max": sol.sigma.grid.xi_max,
        "h": sol.sigma.grid.h,
        "nodes": sol.sigma.grid.len(),
        "growth": sol.growth,
        "picard": sol.stats,
        "taylor_match": taylor,
        "samples": samples,
    });
    Ok(Outcome::new(report, Some(table)))
}

fn oracle_value(file: &ProblemFile, hbar: C64) -> Result<Vec<C64>> {
    let p = file.problem_spec()?;
    newton_direct(&p, hbar, &file.seed(), ORACLE_TOL)
}

fn result_entry(r: &Result<ResummationResult>, hbar: C64, oracle: Option<&Result<Vec<C64>>>) -> Value {
    match r {
        Ok(res) => {
            let mut v = json!(res);
            if let Some(o) = oracle {
                match o {
                    Ok(o) => {
                        v["oracle"] = json!(o);
                        v["deviation"] = json!(VerificationRecord::new(hbar, res.value.clone(), o.clone(), None).abs_deviation);
                    }
                    Err(e) => v["oracle"] = json!({ "error": e.to_string() }),
                }
            }
            v
        }
        Err(e) => error_entry(Some(hbar), e),
    }
}

fn resum_rows(
    prefix: &[String],
    hbars: &[C64],
    results: &[Result<ResummationResult>],
    oracles: Option<&[Result<Vec<C64>>]>,
    labelled: bool,
    rows: &mut Vec<SweepRow>,
) {
    for (j, (h, r)) in hbars.iter().zip(results).enumerate() {
        if let Ok(res) = r {
            for (i, z) in res.value.iter().enumerate() {
                let mut pre = prefix.to_vec();
                if labelled {
                    pre.push((i + 1).to_string());
                }
                let oracle = oracles.and_then(|o| o[j].as_ref().ok()).map(|o| o[i]);
                rows.push(SweepRow {
                    prefix: pre,
                    hbar: *h,
                    value: *z,
                    oracle,
                });
            }
        }
    }
}

fn cmd_resum(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    let hbars = cfg.hbars()?;
    let sector = cfg.sector()?;
    let dim = file.dimension();
    let labelled = dim > 1;
    let prefix: &[&str] = if labelled { &["i"] } else { &[] };
    let (results, oracles): (Vec<Result<ResummationResult>>, Option<Vec<Result<Vec<C64>>>>) = match file.kind {
        Kind::Implicit => {
            let p = file.problem_spec()?;
            let results = resum_implicit_solution(&p, &file.seed(), &sector, hbars, &cfg.params())?;
            let oracles = hbars.iter().map(|h| oracle_value(file, *h)).collect();
            (results, Some(oracles))
        }
        Kind::StandardForm => {
            let s = file.standard_form(cfg.order)?;
            let inside: Vec<C64> = hbars.iter().copied().filter(|h| sector.contains(*h)).collect();
            let sol = solve_borel(&s, cfg.theta, &inside, &cfg.params())?;
            let results = hbars
                .iter()
                .map(|&hbar| {
                    sector.check(hbar)?;
                    let l = laplace(&sol.sigma, hbar, &sol.growth)?;
                    Ok(ResummationResult {
                        hbar,
                        value: l.value,
                        tail_bound: l.tail_bound,
                        diagnostics: exactpert_core::laplace::ResumDiagnostics {
                            growth: sol.growth,
                            xi_max: sol.sigma.grid.xi_max,
                            h: sol.sigma.grid.h,
                            residual: None,
                            picard: Some(sol.stats),
                        },
                    })
                })
                .collect();
            (results, None)
        }
        Kind::Series => {
            let f = file.truncated_series()?;
            let grid = cfg.grid()?;
            let results = hbars.iter().map(|&h| resum_series(&f, &sector, h, &grid)).collect();
            (results, None)
        }
        Kind::Matrix => return cmd_eigen(file, cfg),
    };
    let entries: Vec<Value> = hbars
        .iter()
        .enumerate()
        .map(|(j, h)| result_entry(&results[j], *h, oracles.as_ref().map(|o| &o[j])))
        .collect();
    let mut rows = Vec::new();
    resum_rows(&[], hbars, &results, oracles.as_deref(), labelled, &mut rows);
    let code = first_code(results.iter().filter_map(|r| r.as_ref().err()));
    Ok(Outcome::new(json!({ "results": entries }), Some(sweep_table(prefix, &rows))).with_code(code))
}

fn cmd_check(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    let hbars = cfg.hbars()?;
    let sector = cfg.sector()?;
    let mut records = Vec::new();
    let mut failures: Vec<Error> = Vec::new();
    match file.kind {
        Kind::Implicit => {
            let p = file.problem_spec()?;
            let results = resum_implicit_solution(&p, &file.seed(), &sector, hbars, &cfg.params())?;
            for (h, r) in hbars.iter().zip(results) {
                match r.and_then(|res| {
                    let o = oracle_value(file, *h)?;
                    let resid = implicit_residual(&p, *h, &o).ok();
                    Ok(VerificationRecord::new(*h, res.value, o, resid))
                }) {
                    Ok(rec) => records.push(rec),
                    Err(e) => failures.push(e),
                }
            }
        }
        Kind::Matrix => {
            let fam = file.matrix_family()?;
            let per_eig = eigen_resum(&fam, &sector, hbars, &cfg.params(), cfg.gap_tol)?;
            for (j, h) in hbars.iter().enumerate() {
                let value: Result<Vec<C64>> = per_eig
                    .iter()
                    .map(|(_, rs)| rs[j].as_ref().map(|r| r.value[0]).map_err(|e| e.clone()))
                    .collect();
                match value.and_then(|v| Ok(VerificationRecord::new(*h, v, eig_direct(&fam, *h)?.0, None))) {
                    Ok(rec) => records.push(rec),
                    Err(e) => failures.push(e),
                }
            }
        }
        _ => {
            return Err(Error::InvalidInput(
                "check needs an implicit or matrix problem (the oracle solves F directly)".into(),
            ))
        }
    }
    let report = VerificationReport::new(records, CHECK_TOL);
    let mut rows = Vec::new();
    for r in &report.records {
        for (i, (v, o)) in r.value.iter().zip(&r.oracle).enumerate() {
            rows.push(SweepRow {
                prefix: if r.value.len() > 1 { vec![(i + 1).to_string()] } else { vec![] },
                hbar: r.hbar,
                value: *v,
                oracle: Some(*o),
            });
        }
    }
    let labelled = report.records.iter().any(|r| r.value.len() > 1);
    let table = sweep_table(if labelled { &["i"] } else { &[] }, &rows);
    let code = if !failures.is_empty() {
        first_code(&failures)
    } else if report.passed {
        0
    } else {
        Error::Oracle(String::new()).exit_code()
    };
    let failures: Vec<Value> = failures.iter().map(|e| error_entry(None, e)).collect();
    Ok(Outcome::new(json!({ "report": report, "failures": failures }), Some(table)).with_code(code))
}

fn cmd_majorant(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    let (s, _) = standard_form_of(file, cfg)?;
    let (a, b) = certify_constants(&s, 1.0);
    let m = majorant_sequence(a, b, s.dim, cfg.order);
    let g = g_recursion(&s, cfg.order)?;
    let check = majorant_check(&g, &m);
    let fit = majorant_growth_fit(&m);
    let mut table = Table::new(&["n", "g_norm", "majorant", "bound"]);
    let norms = g.norms();
    let mut fact = 1.0;
    for (n, mn) in m.values.iter().enumerate() {
        if n >= 2 {
            fact *= (n - 1) as f64;
        }
        let gn = norms.get(n).copied().unwrap_or(0.0);
        table.rows.push(vec![n.to_string(), num(gn), num(*mn), num(mn * fact)]);
    }
    let report = json!({
        "A": a,
        "B": b,
        "majorant": m,
        "check": check,
        "growth_fit": fit,
        "series": g.coeffs(),
    });
    Ok(Outcome::new(report, Some(table)))
}

fn cmd_matrix(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    let fam = file.matrix_family()?;
    let dec = recursive_block_diagonalize(&fam, cfg.order, cfg.gap_tol)?;
    let residuals: Vec<Value> = cfg
        .hbar
        .iter()
        .map(|h| match similarity_residual(&dec, &fam, *h) {
            Ok(r) => json!({ "hbar": h, "residual": r }),
            Err(e) => error_entry(Some(*h), &e),
        })
        .collect();
    let series = |v: &[CMat]| json!(v.iter().map(matrix_json).collect::<Vec<_>>());
    let report = json!({
        "blocks": dec.blocks,
        "tree": dec.tree,
        "off_block_zero": dec.off_block_zero(),
        "lambda": series(&dec.lambda),
        "p": series(&dec.p),
        "s": series(&dec.s),
        "t": series(&dec.t),
        "similarity_residual": residuals,
    });
    let mut table = Table::new(&["n", "i", "re", "im"]);
    for (n, l) in dec.lambda.iter().enumerate() {
        for i in 0..l.nrows() {
            table.rows.push(vec![n.to_string(), (i + 1).to_string(), num(l[(i, i)].re), num(l[(i, i)].im)]);
        }
    }
    Ok(Outcome::new(report, Some(table)))
}

fn eigen_entries(
    fam: &MatrixFamily,
    cfg: &Config,
    hbars: &[C64],
    prefix: &[String],
    rows: &mut Vec<SweepRow>,
) -> Result<(Vec<Value>, i32)> {
    let per_eig = eigen_resum(fam, &cfg.sector()?, hbars, &cfg.params(), cfg.gap_tol)?;
    let oracles: Vec<Result<Vec<C64>>> = hbars.iter().map(|h| eig_direct(fam, *h).map(|r| r.0)).collect();
    let mut code = 0;
    let mut entries = Vec::new();
    for (i, (leading, results)) in per_eig.iter().enumerate() {
        let mut list = Vec::new();
        for (j, (h, r)) in hbars.iter().zip(results).enumerate() {
            let o = oracles[j].as_ref().map(|o| vec![o[i]]).map_err(|e| e.clone());
            list.push(result_entry(r, *h, Some(&o)));
            match r {
                Ok(res) => {
                    let mut pre = prefix.to_vec();
                    pre.push((i + 1).to_string());
                    rows.push(SweepRow {
                        prefix: pre,
                        hbar: *h,
                        value: res.value[0],
                        oracle: o.ok().map(|o| o[0]),
                    });
                }
                Err(e) if code == 0 => code = e.exit_code(),
                Err(_) => {}
            }
        }
        entries.push(json!({ "leading": leading, "results": list }));
    }
    Ok((entries, code))
}

fn cmd_eigen(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    let fam = file.matrix_family()?;
    let hbars = cfg.hbars()?;
    let mut rows = Vec::new();
    let (entries, code) = eigen_entries(&fam, cfg, hbars, &[], &mut rows)?;
    let table = sweep_table(&["i"], &rows);
    Ok(Outcome::new(json!({ "eigenvalues": entries }), Some(table)).with_code(code))
}

fn cmd_sweep(file: &ProblemFile, cfg: &Config) -> Result<Outcome> {
    let hbars = cfg.hbars()?;
    if file.kind == Kind::Matrix {
        let fam = file.matrix_family()?;
        let mut rows = Vec::new();
        let (entries, code) = eigen_entries(&fam, cfg, hbars, &[], &mut rows)?;
        return Ok(Outcome::new(json!({ "points": [{ "eigenvalues": entries }] }), Some(sweep_table(&["i"], &rows))).with_code(code));
    }
    if file.kind != Kind::Implicit {
        return Err(Error::InvalidInput("sweep needs an implicit or matrix problem".into()));
    }
    let sector = cfg.sector()?;
    let params = cfg.params();
    let grid = file.sweep.as_ref().and_then(|s| s.x_grid.clone());
    let points: Vec<(Option<f64>, exactpert_core::formal::ProblemSpec, Vec<C64>)> = match &grid {
        Some(g) => g
            .iter()
            .map(|pt| {
                let seed = pt.seed.as_ref().map(|s| s.iter().map(|z| problem::cx(*z)).collect()).unwrap_or_else(|| file.seed());
                Ok((Some(pt.x), file.problem_spec_at(pt)?, seed))
            })
            .collect::<Result<_>>()?,
        None => vec![(None, file.problem_spec()?, file.seed())],
    };
    // independent tasks; results are collected in input order
    let outcomes: Vec<Result<(Vec<Result<ResummationResult>>, Vec<Result<Vec<C64>>>)>> = points
        .par_iter()
        .map(|(_, p, seed)| {
            let results = resum_implicit_solution(p, seed, &sector, hbars, &params)?;
            let oracles = hbars.iter().map(|h| newton_direct(p, *h, seed, ORACLE_TOL)).collect();
            Ok((results, oracles))
        })
        .collect();
    let labelled = file.dimension() > 1;
    let mut prefix_names: Vec<&str> = Vec::new();
    if grid.is_some() {
        prefix_names.push("x");
    }
    if labelled {
        prefix_names.push("i");
    }
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut code = 0;
    for ((x, _, _), out) in points.iter().zip(&outcomes) {
        match out {
            Ok((results, oracles)) => {
                let list: Vec<Value> = hbars
                    .iter()
                    .enumerate()
                    .map(|(j, h)| result_entry(&results[j], *h, Some(&oracles[j])))
                    .collect();
                let prefix: Vec<String> = x.iter().map(|v| num(*v)).collect();
                resum_rows(&prefix, hbars, results, Some(oracles), labelled, &mut rows);
                if code == 0 {
                    code = first_code(results.iter().filter_map(|r| r.as_ref().err()));
                }
                entries.push(json!({ "x": x, "results": list }));
            }
            Err(e) => {
                if code == 0 {
                    code = e.exit_code();
                }
                entries.push(json!({ "x": x, "error": e.to_string(), "exit_code": e.exit_code() }));
            }
        }
    }
    Ok(Outcome::new(json!({ "points": entries }), Some(sweep_table(&prefix_names, &rows))).with_code(code))
}

fn command_name(c: &Command) -> (&'static str, &Args) {
    match c {
        Command::Formal(a) => ("formal", a),
        Command::StandardForm(a) => ("standard-form", a),
        Command::Borel(a) => ("borel", a),
        Command::Resum(a) => ("resum", a),
        Command::Check(a) => ("check", a),
        Command::Majorant(a) => ("majorant", a),
        Command::Matrix(a) => ("matrix", a),
        Command::Eigen(a) => ("eigen", a),
        Command::Sweep(a) => ("sweep", a),
    }
}

fn execute(command: &Command) -> Result<i32> {
    let (name, args) = command_name(command);
    let file = problem::parse_problem(&args.problem)?;
    let cfg = Config::resolve(args, &file)?;
    let outcome = match command {
        Command::Formal(_) => cmd_formal(&file, &cfg),
        Command::StandardForm(_) => cmd_standard_form(&file, &cfg),
        Command::Borel(_) => cmd_borel(&file, &cfg),
        Command::Resum(_) => cmd_resum(&file, &cfg),
        Command::Check(_) => cmd_check(&file, &cfg),
        Command::Majorant(_) => cmd_majorant(&file, &cfg),
        Command::Matrix(_) => cmd_matrix(&file, &cfg),
        Command::Eigen(_) => cmd_eigen(&file, &cfg),
        Command::Sweep(_) => cmd_sweep(&file, &cfg),
    }?;
    let mut report = json!({
        "command": name,
        "problem": { "kind": file.kind, "dim": file.dimension() },
        "config": cfg,
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut report, outcome.report) {
        dst.extend(src);
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => std::fs::write(path, text + "\n")
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
        None if !args.quiet => println!("{text}"),
        None => {}
    }
    if let (Some(path), Some(table)) = (&args.csv, &outcome.table) {
        table.write(path)?;
    }
    Ok(outcome.code)
}

fn thread_pool() -> std::result::Result<Option<rayon::ThreadPool>, String> {
    let Ok(v) = std::env::var("EXACTPERT_THREADS") else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("EXACTPERT_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("EXACTPERT_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| e.to_string())
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code: 0 on success, 2 for domain and input errors, 3 for numeric
/// non-convergence.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let result = match &pool {
        Some(p) => p.install(|| execute(&cli.command)),
        None => execute(&cli.command),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
