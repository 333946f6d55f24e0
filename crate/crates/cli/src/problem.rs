//! JSON problem files.
//!
//! Complex numbers are `[re, im]` pairs, equation and component indices are
//! 1-based, and rational Borel parts are coefficient lists in ascending
//! powers of the Borel variable.

use std::collections::BTreeMap;
use std::path::Path;

use exactpert_core::borel::{CoefficientFunction, POLE_RADIUS};
use exactpert_core::formal::{ProblemSpec, StandardFormProblem};
use exactpert_core::hbar::{BorelTerm, HbarFunction};
use exactpert_core::laplace::SectorSpec;
use exactpert_core::linalg::CMat;
use exactpert_core::matrix::MatrixFamily;
use exactpert_core::poly::Rational;
use exactpert_core::series::{MultiIndex, TruncatedSeries};
use exactpert_core::{Error, Result, C64};
use serde::{Deserialize, Serialize};

pub type Cx = [f64; 2];

pub fn cx(z: Cx) -> C64 {
    C64::new(z[0], z[1])
}

pub fn to_cx(z: C64) -> Cx {
    [z.re, z.im]
}

fn is_zero(z: &Cx) -> bool {
    z[0] == 0.0 && z[1] == 0.0
}

fn is_zero_u32(n: &u32) -> bool {
    *n == 0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Implicit,
    StandardForm,
    Matrix,
    Series,
}

/// Coefficient of `hbar^k z^m` in equation `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffEntry {
    pub k: usize,
    pub m: Vec<u32>,
    pub i: usize,
    pub v: Cx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalEntry {
    pub num: Vec<Cx>,
    pub den: Vec<Cx>,
}

/// `constant + L[I^integrations (num/den)]` attached to one coefficient.
///
/// Implicit and standard-form files address the coefficient with `m` and
/// `i`; matrix files with `row` and `col` (1-based, order zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BorelEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub constant: Cx,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rational: Option<RationalEntry>,
    #[serde(default, skip_serializing_if = "is_zero_u32")]
    pub integrations: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorEntry {
    pub theta: f64,
    #[serde(rename = "R")]
    pub radius: f64,
}

/// Ray length: a number, or `"auto"` to size it from the target `hbar`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XiMax {
    Fixed(f64),
    Auto(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_max: Option<XiMax>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRange {
    pub from: f64,
    pub to: f64,
    pub count: usize,
}

/// One parameter point `x` with its own coefficient table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XPoint {
    pub x: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coeffs: Vec<CoeffEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub borel: Vec<BorelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Vec<Cx>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<Vec<Cx>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_range: Option<LogRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<Vec<XPoint>>,
}

impl SweepSpec {
    /// Explicit values first, then the log-spaced range (real, positive).
    pub fn hbar_values(&self) -> Vec<C64> {
        let mut out: Vec<C64> = self.hbar.iter().flatten().map(|z| cx(*z)).collect();
        if let Some(r) = self.log_range {
            let (a, b) = (r.from.ln(), r.to.ln());
            for j in 0..r.count {
                let v = if j == 0 {
                    r.from
                } else if j + 1 == r.count {
                    r.to
                } else {
                    (a + (b - a) * j as f64 / (r.count - 1) as f64).exp()
                };
                out.push(C64::new(v, 0.0));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coeffs: Vec<CoeffEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub borel: Vec<BorelEntry>,
    /// Matrix kind: `orders[k][row][col]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orders: Vec<Vec<Vec<Cx>>>,
    /// Series kind: `series[n][i]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<Vec<Cx>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Vec<Cx>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<SectorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numerics: Option<Numerics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn parse_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        message: message.into(),
    }
}

/// Reads, parses and validates a problem file.
pub fn parse_problem(path: &Path) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<ProblemFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        parse_err(
            path,
            format!("{inner} (line {}, column {})", inner.line(), inner.column()),
        )
    })?;
    file.validate()?;
    Ok(file)
}

pub fn to_json(file: &ProblemFile) -> String {
    serde_json::to_string_pretty(file).expect("problem files serialize")
}

impl ProblemFile {
    pub fn sector_spec(&self) -> Result<SectorSpec> {
        let s = self.sector.unwrap_or(SectorEntry {
            theta: 0.0,
            radius: 1.0,
        });
        SectorSpec::new(s.theta, s.radius)
    }

    pub fn theta(&self) -> f64 {
        self.sector.map(|s| s.theta).unwrap_or(0.0)
    }

    /// Dimension of the unknown: `dim`, or the width of the series rows.
    pub fn dimension(&self) -> usize {
        match self.kind {
            Kind::Matrix => self.size.unwrap_or(0),
            Kind::Series => self
                .dim
                .unwrap_or_else(|| self.series.first().map(|r| r.len()).unwrap_or(0)),
            _ => self.dim.unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let theta = self.theta();
        if let Some(s) = self.sector {
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                return Err(parse_err("sector.R", format!("must be positive, got {}", s.radius)));
            }
            if !s.theta.is_finite() {
                return Err(parse_err("sector.theta", "must be finite"));
            }
        }
        if let Some(n) = &self.numerics {
            validate_numerics(n)?;
        }
        match self.kind {
            Kind::Implicit | Kind::StandardForm => {
                let dim = match self.dim {
                    Some(d) if d >= 1 => d,
                    Some(_) => return Err(parse_err("dim", "must be at least 1")),
                    None => return Err(parse_err("dim", "missing field")),
                };
                if self.coeffs.is_empty() && self.borel.is_empty() {
                    return Err(parse_err("coeffs", "no coefficients given"));
                }
                validate_table(&self.coeffs, &self.borel, dim, theta, "")?;
                if self.kind == Kind::Implicit {
                    match &self.seed {
                        Some(s) if s.len() == dim => {}
                        Some(s) => {
                            return Err(parse_err(
                                "seed",
                                format!("has {} entries, expected {dim}", s.len()),
                            ))
                        }
                        None => return Err(parse_err("seed", "missing field")),
                    }
                }
                if let Some(grid) = self.sweep.as_ref().and_then(|s| s.x_grid.as_ref()) {
                    for (j, pt) in grid.iter().enumerate() {
                        let base = format!("sweep.x_grid[{j}].");
                        validate_table(&pt.coeffs, &pt.borel, dim, theta, &base)?;
                        if let Some(s) = &pt.seed {
                            if s.len() != dim {
                                return Err(parse_err(
                                    format!("{base}seed"),
                                    format!("has {} entries, expected {dim}", s.len()),
                                ));
                            }
                        }
                    }
                }
            }
            Kind::Matrix => {
                let n = match self.size {
                    Some(n) if n >= 1 => n,
                    Some(_) => return Err(parse_err("size", "must be at least 1")),
                    None => return Err(parse_err("size", "missing field")),
                };
                if self.orders.is_empty() {
                    return Err(parse_err("orders", "no matrix orders given"));
                }
                for (k, a) in self.orders.iter().enumerate() {
                    if a.len() != n {
                        return Err(parse_err(
                            format!("orders[{k}]"),
                            format!("has {} rows, expected {n}", a.len()),
                        ));
                    }
                    for (r, row) in a.iter().enumerate() {
                        if row.len() != n {
                            return Err(parse_err(
                                format!("orders[{k}][{r}]"),
                                format!("has {} columns, expected {n}", row.len()),
                            ));
                        }
                    }
                }
                for (j, b) in self.borel.iter().enumerate() {
                    let path = format!("borel[{j}]");
                    if b.m.is_some() || b.i.is_some() {
                        return Err(parse_err(&path, "matrix entries are addressed by row and col"));
                    }
                    for (name, v) in [("row", b.row), ("col", b.col)] {
                        match v {
                            Some(x) if (1..=n).contains(&x) => {}
                            Some(x) => {
                                return Err(parse_err(
                                    format!("{path}.{name}"),
                                    format!("{x} out of range 1..={n}"),
                                ))
                            }
                            None => return Err(parse_err(format!("{path}.{name}"), "missing field")),
                        }
                    }
                    validate_rational(b, theta, &path)?;
                }
            }
            Kind::Series => {
                if self.series.is_empty() {
                    return Err(parse_err("series", "no coefficients given"));
                }
                let d = self.dimension();
                if d == 0 {
                    return Err(parse_err("dim", "must be at least 1"));
                }
                for (n, row) in self.series.iter().enumerate() {
                    if row.len() != d {
                        return Err(parse_err(
                            format!("series[{n}]"),
                            format!("has {} entries, expected {d}", row.len()),
                        ));
                    }
                }
            }
        }
        if let Some(sw) = &self.sweep {
            if let Some(r) = sw.log_range {
                if !(r.from > 0.0 && r.to > 0.0) || r.count == 0 {
                    return Err(parse_err(
                        "sweep.log_range",
                        "needs positive endpoints and a positive count",
                    ));
                }
            }
            let sector = self.sector_spec()?;
            for (j, h) in sw.hbar_values().into_iter().enumerate() {
                sector.check(h).map_err(|e| Error::Stage {
                    path: format!("sweep.hbar[{j}]"),
                    source: Box::new(e),
                })?;
            }
        }
        Ok(())
    }

    fn build_spec(&self, coeffs: &[CoeffEntry], borel: &[BorelEntry]) -> Result<ProblemSpec> {
        let dim = self.dimension();
        let mut p = ProblemSpec::new(dim)?;
        for e in coeffs {
            p.insert(e.k, MultiIndex::new(e.m.clone()), e.i - 1, cx(e.v))?;
        }
        for b in borel {
            let m = MultiIndex::new(b.m.clone().unwrap_or_default());
            let i = b.i.unwrap_or(1) - 1;
            if !is_zero(&b.constant) {
                p.insert(0, m.clone(), i, cx(b.constant))?;
            }
            if let Some(term) = borel_term(b)? {
                p.insert_borel(m, i, term)?;
            }
        }
        Ok(p)
    }

    /// The implicit equation of the base problem.
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        self.expect(Kind::Implicit)?;
        self.build_spec(&self.coeffs, &self.borel)
    }

    /// The implicit equation at one sweep point.
    pub fn problem_spec_at(&self, pt: &XPoint) -> Result<ProblemSpec> {
        self.expect(Kind::Implicit)?;
        self.build_spec(&pt.coeffs, &pt.borel)
    }

    pub fn seed(&self) -> Vec<C64> {
        self.seed.iter().flatten().map(|z| cx(*z)).collect()
    }

    /// The standard form `w = hbar G(hbar, w)`; Borel entries are expanded
    /// formally through `order`.
    pub fn standard_form(&self, order: usize) -> Result<StandardFormProblem> {
        self.expect(Kind::StandardForm)?;
        let dim = self.dimension();
        let mut entries: BTreeMap<(MultiIndex, usize), HbarFunction> = BTreeMap::new();
        let mut polys: BTreeMap<(MultiIndex, usize), Vec<C64>> = BTreeMap::new();
        for e in &self.coeffs {
            let p = polys.entry((MultiIndex::new(e.m.clone()), e.i - 1)).or_default();
            if p.len() <= e.k {
                p.resize(e.k + 1, C64::new(0.0, 0.0));
            }
            p[e.k] += cx(e.v);
        }
        for b in &self.borel {
            let key = (MultiIndex::new(b.m.clone().unwrap_or_default()), b.i.unwrap_or(1) - 1);
            let p = polys.entry(key).or_default();
            if p.is_empty() {
                p.push(C64::new(0.0, 0.0));
            }
            p[0] += cx(b.constant);
        }
        for (key, p) in polys {
            entries.insert(key, HbarFunction::from_poly(p));
        }
        for b in &self.borel {
            if let Some(term) = borel_term(b)? {
                let key = (MultiIndex::new(b.m.clone().unwrap_or_default()), b.i.unwrap_or(1) - 1);
                entries
                    .get_mut(&key)
                    .expect("entry created above")
                    .add_term(term);
            }
        }
        StandardFormProblem::from_functions(dim, &entries, order)
    }

    pub fn matrix_family(&self) -> Result<MatrixFamily> {
        self.expect(Kind::Matrix)?;
        let n = self.dimension();
        let orders = self
            .orders
            .iter()
            .map(|a| CMat::from_fn(n, n, |r, c| cx(a[r][c])))
            .collect();
        let mut fam = MatrixFamily::new(orders)?;
        for b in &self.borel {
            let (r, c) = (b.row.unwrap_or(1) - 1, b.col.unwrap_or(1) - 1);
            let constant = fam.orders[0][(r, c)] + cx(b.constant);
            let f = match &b.rational {
                Some(rat) => {
                    if b.integrations != 0 {
                        return Err(Error::InvalidInput(
                            "matrix Borel parts do not support integrations".into(),
                        ));
                    }
                    CoefficientFunction::rational(constant, rational(rat)?, self.theta())?
                }
                None => CoefficientFunction::constant(constant),
            };
            fam = fam.with_borel_part(r, c, f)?;
        }
        Ok(fam)
    }

    pub fn truncated_series(&self) -> Result<TruncatedSeries> {
        self.expect(Kind::Series)?;
        TruncatedSeries::new(
            self.series
                .iter()
                .map(|row| row.iter().map(|z| cx(*z)).collect())
                .collect(),
        )
    }

    fn expect(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidInput(format!(
                "expected a {kind:?} problem, file declares {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

fn rational(r: &RationalEntry) -> Result<Rational> {
    Rational::new(
        r.num.iter().map(|z| cx(*z)).collect(),
        r.den.iter().map(|z| cx(*z)).collect(),
    )
}

fn borel_term(b: &BorelEntry) -> Result<Option<BorelTerm>> {
    Ok(match &b.rational {
        Some(r) => Some(BorelTerm {
            rational: rational(r)?,
            integrations: b.integrations,
        }),
        None => None,
    })
}

fn validate_numerics(n: &Numerics) -> Result<()> {
    let positive = |name: &str, v: Option<f64>| -> Result<()> {
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(parse_err(
                format!("numerics.{name}"),
                format!("must be positive, got {x}"),
            )),
            _ => Ok(()),
        }
    };
    positive("h", n.h)?;
    positive("tol", n.tol)?;
    positive("gap_tol", n.gap_tol)?;
    match &n.xi_max {
        Some(XiMax::Fixed(x)) => positive("xi_max", Some(*x))?,
        Some(XiMax::Auto(s)) if s != "auto" => {
            return Err(parse_err("numerics.xi_max", format!("expected a number or \"auto\", got {s:?}")))
        }
        _ => {}
    }
    if n.n_max == Some(0) {
        return Err(parse_err("numerics.n_max", "must be positive"));
    }
    Ok(())
}

fn validate_index(m: &[u32], i: usize, dim: usize, path: &str) -> Result<()> {
    if m.len() != dim {
        return Err(parse_err(
            format!("{path}.m"),
            format!("has {} parts, expected {dim}", m.len()),
        ));
    }
    if !(1..=dim).contains(&i) {
        return Err(parse_err(format!("{path}.i"), format!("{i} out of range 1..={dim}")));
    }
    Ok(())
}

fn validate_rational(b: &BorelEntry, theta: f64, path: &str) -> Result<()> {
    if let Some(r) = &b.rational {
        if r.num.is_empty() {
            return Err(parse_err(format!("{path}.rational.num"), "is empty"));
        }
        match r.den.first() {
            None => return Err(parse_err(format!("{path}.rational.den"), "is empty")),
            Some(d) if is_zero(d) => {
                return Err(parse_err(
                    format!("{path}.rational.den"),
                    "denominator vanishes at xi = 0",
                ))
            }
            _ => {}
        }
        rational(r)?
            .check_ray(theta, POLE_RADIUS)
            .map_err(|e| Error::Stage {
                path: format!("{path}.rational"),
                source: Box::new(e),
            })?;
    }
    Ok(())
}

fn validate_table(
    coeffs: &[CoeffEntry],
    borel: &[BorelEntry],
    dim: usize,
    theta: f64,
    base: &str,
) -> Result<()> {
    for (j, e) in coeffs.iter().enumerate() {
        validate_index(&e.m, e.i, dim, &format!("{base}coeffs[{j}]"))?;
    }
    for (j, b) in borel.iter().enumerate() {
        let path = format!("{base}borel[{j}]");
        if b.row.is_some() || b.col.is_some() {
            return Err(parse_err(&path, "equation entries are addressed by m and i"));
        }
        let m = b
            .m
            .as_ref()
            .ok_or_else(|| parse_err(format!("{path}.m"), "missing field"))?;
        let i = b.i.ok_or_else(|| parse_err(format!("{path}.i"), "missing field"))?;
        validate_index(m, i, dim, &path)?;
        validate_rational(b, theta, &path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CATALAN: &str = r#"{"kind":"implicit","dim":1,
        "coeffs":[{"k":0,"m":[1],"i":1,"v":[1,0]},{"k":0,"m":[0],"i":1,"v":[-1,0]},{"k":1,"m":[2],"i":1,"v":[-1,0]}],
        "seed":[[1,0]]}"#;

    #[test]
    fn minimal_implicit_file() {
        let f = parse_str(CATALAN).unwrap();
        let p = f.problem_spec().unwrap();
        assert_eq!(p, ProblemSpec::scalar(&[(0, 1, 1.0), (0, 0, -1.0), (1, 2, -1.0)]));
        assert_eq!(f.seed(), vec![C64::new(1.0, 0.0)]);
    }

    #[test]
    fn schema_violation_reports_path() {
        let bad = CATALAN.replace("\"v\":[-1,0]}]", "\"v\":[-1]}]");
        match parse_str(&bad) {
            Err(Error::Parse { path, message }) => {
                assert_eq!(path, "coeffs[2].v");
                assert!(message.contains("line"));
            }
            other => panic!("{other:?}"),
        }
        let bad = CATALAN.replace("\"i\":1,\"v\":[1,0]", "\"i\":2,\"v\":[1,0]");
        assert!(matches!(parse_str(&bad), Err(Error::Parse { path, .. }) if path == "coeffs[0].i"));
    }

    #[test]
    fn pole_on_the_ray_is_rejected() {
        let text = r#"{"kind":"implicit","dim":1,
            "coeffs":[{"k":0,"m":[1],"i":1,"v":[1,0]}],
            "borel":[{"m":[0],"i":1,"rational":{"num":[[1,0]],"den":[[0.05,0],[-1,0]]}}],
            "seed":[[0,0]]}"#;
        let err = parse_str(text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        match err {
            Error::Stage { path, source } => {
                assert_eq!(path, "borel[0].rational");
                match *source {
                    Error::PoleNearRay { location, .. } => assert!((location.re - 0.05).abs() < 1e-12),
                    other => panic!("{other:?}"),
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn matrix_file() {
        let text = r#"{"kind":"matrix","size":2,
            "orders":[[[[0,0],[0,0]],[[0,0],[1,0]]],[[[0,0],[1,0]],[[1,0],[0,0]]]]}"#;
        let f = parse_str(text).unwrap();
        let fam = f.matrix_family().unwrap();
        assert_eq!(fam.orders.len(), 2);
        assert_eq!(fam.orders[1][(0, 1)], C64::new(1.0, 0.0));
        let again = parse_str(&to_json(&f)).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn sweep_outside_sector_is_a_domain_error() {
        let text = CATALAN.replace(
            "\"seed\"",
            "\"sector\":{\"theta\":0,\"R\":0.2},\"sweep\":{\"hbar\":[[0.5,0]]},\"seed\"",
        );
        let err = parse_str(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("sweep.hbar[0]"));
    }

    #[test]
    fn log_range_endpoints() {
        let s = SweepSpec {
            log_range: Some(LogRange {
                from: 1e-3,
                to: 1e-1,
                count: 3,
            }),
            ..Default::default()
        };
        let v = s.hbar_values();
        assert!((v[1].re - 1e-2).abs() < 1e-15 && (v[2].re - 1e-1).abs() < 1e-15);
    }
}
