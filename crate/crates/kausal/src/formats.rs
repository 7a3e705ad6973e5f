//! JSON input files.
//!
//! Weights and costs may be written as JSON numbers or as strings holding a
//! decimal or a fraction (`"1/3"`). Numbers are kept as their literal text, so
//! exact mode sees `0.1` as `1/10` rather than the nearest double.

use std::path::Path;
use std::sync::Arc;

use kausal_core::bridge::{EndpointMarginals, GridMeasure};
use kausal_core::gaussian_lab::{GaussianPathModel, IncrementModel};
use kausal_core::path_space::{Coupling, FilteredPathSpace, PathMeasure};
use kausal_core::scalar::{parse_rational, Rational, Scalar};
use kausal_core::transport_solver::CostMatrix;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(path.display(), e))
}

/// Literal text of a numeric entry.
fn literal(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.trim().to_string()),
        _ => None,
    }
}

fn parse_exact(v: &Value, what: &str) -> Result<Rational, String> {
    literal(v).and_then(|t| parse_rational(&t)).ok_or_else(|| format!("{what}: {v} is not a number or fraction"))
}

/// Entries of a weight list in the requested arithmetic.
pub trait Weight: Scalar {
    fn parse(v: &Value, what: &str) -> Result<Self, String>;
}

impl Weight for f64 {
    fn parse(v: &Value, what: &str) -> Result<Self, String> {
        parse_exact(v, what).map(|r| Scalar::to_f64(&r))
    }
}

impl Weight for Rational {
    fn parse(v: &Value, what: &str) -> Result<Self, String> {
        parse_exact(v, what)
    }
}

fn parse_weights<S: Weight>(values: &[Value], what: &str) -> Result<Vec<S>, String> {
    values.iter().enumerate().map(|(i, v)| S::parse(v, &format!("{what}[{i}]"))).collect()
}

/// A filtered path space, optionally with a measure on it.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    #[serde(default)]
    pub steps: Option<usize>,
    pub alphabets: Vec<usize>,
    /// `"coordinate"` (default), `"degenerate"`, `"trivial"`, or explicit
    /// atoms (lists of path indices) for each time `1..=T`.
    #[serde(default)]
    pub filtration: Option<Value>,
    #[serde(default)]
    pub weights: Option<Vec<Value>>,
}

impl MeasureFile {
    pub fn space(&self) -> Result<Arc<FilteredPathSpace>, String> {
        if let Some(steps) = self.steps {
            if steps != self.alphabets.len() {
                return Err(format!("steps is {steps} but {} alphabets are given", self.alphabets.len()));
            }
        }
        let a = &self.alphabets;
        let space = match &self.filtration {
            None => FilteredPathSpace::coordinate(a),
            Some(Value::String(name)) => match name.as_str() {
                "coordinate" => FilteredPathSpace::coordinate(a),
                "degenerate" => FilteredPathSpace::degenerate(a),
                "trivial" => FilteredPathSpace::trivial_until_end(a),
                other => return Err(format!("unknown filtration {other:?}")),
            },
            Some(v) => {
                let parts: Vec<Vec<Vec<usize>>> =
                    serde_json::from_value(v.clone()).map_err(|e| format!("filtration: {e}"))?;
                FilteredPathSpace::with_partitions(a, &parts)
            }
        };
        space.map(Arc::new).map_err(|e| e.to_string())
    }

    pub fn measure<S: Weight>(&self) -> Result<PathMeasure<S>, String> {
        let space = self.space()?;
        let values = self.weights.as_ref().ok_or("measure file has no weights")?;
        PathMeasure::new(space, parse_weights(values, "weights")?).map_err(|e| e.to_string())
    }
}

pub fn load_measure<S: Weight>(path: &Path) -> CliResult<PathMeasure<S>> {
    let file: MeasureFile = read_json(path)?;
    file.measure().map_err(|e| CliError::invalid(path.display(), e))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingFile {
    /// Path of a measure file (relative to this file) or an inline space.
    pub first: Value,
    pub second: Value,
    /// One row per path of the first space.
    pub weights: Vec<Vec<Value>>,
}

fn resolve_space(r: &Value, file: &Path, field: &str) -> CliResult<Arc<FilteredPathSpace>> {
    let ctx = format!("{}: {field}", file.display());
    match r {
        Value::String(rel) => {
            let path = file.parent().unwrap_or(Path::new(".")).join(rel);
            let m: MeasureFile = read_json(&path)?;
            m.space().map_err(|e| CliError::invalid(path.display(), e))
        }
        v => {
            let m: MeasureFile = serde_json::from_value(v.clone()).map_err(|e| CliError::invalid(&ctx, e))?;
            m.space().map_err(|e| CliError::invalid(&ctx, e))
        }
    }
}

pub fn load_coupling<S: Weight>(path: &Path) -> CliResult<Coupling<S>> {
    let file: CouplingFile = read_json(path)?;
    let first = resolve_space(&file.first, path, "first")?;
    let second = resolve_space(&file.second, path, "second")?;
    let ctx = || path.display().to_string();
    if file.weights.len() != first.len() || file.weights.iter().any(|r| r.len() != second.len()) {
        return Err(CliError::invalid(ctx(), format!("weights must be a {}x{} matrix", first.len(), second.len())));
    }
    let flat: Vec<Value> = file.weights.into_iter().flatten().collect();
    let w = parse_weights::<S>(&flat, "weights").map_err(|e| CliError::invalid(ctx(), e))?;
    Coupling::new(first, second, w).map_err(|e| CliError::invalid(ctx(), e))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFile {
    /// Rows indexed by paths of the first space; `"inf"` forbids a pair.
    pub cost: Vec<Vec<Value>>,
}

fn cost_entry(v: &Value) -> Option<f64> {
    if let Value::String(s) = v {
        if matches!(s.trim(), "inf" | "+inf" | "infinity" | "Infinity") {
            return Some(f64::INFINITY);
        }
    }
    literal(v).and_then(|t| parse_rational(&t)).map(|r| Scalar::to_f64(&r))
}

pub fn load_cost(path: &Path) -> CliResult<CostMatrix> {
    let file: CostFile = read_json(path)?;
    let ctx = || path.display().to_string();
    let rows = file.cost.len();
    let cols = file.cost.first().map_or(0, Vec::len);
    if file.cost.iter().any(|r| r.len() != cols) {
        return Err(CliError::invalid(ctx(), "cost rows have different lengths"));
    }
    let mut entries = Vec::with_capacity(rows * cols);
    for (i, row) in file.cost.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            entries.push(
                cost_entry(v).ok_or_else(|| CliError::invalid(ctx(), format!("cost[{i}][{j}]: {v} is not a cost")))?,
            );
        }
    }
    CostMatrix::new(rows, cols, entries).map_err(|e| CliError::invalid(ctx(), e))
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(rename = "N")]
    pub steps: usize,
    /// Defaults to `1/N`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "one", rename = "d")]
    pub dim: usize,
    #[serde(default)]
    pub increment_model: IncrementKind,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum IncrementKind {
    #[default]
    Gaussian,
    Rademacher,
}

impl ModelFile {
    pub fn model(&self) -> Result<GaussianPathModel, String> {
        let inc = match self.increment_model {
            IncrementKind::Gaussian => IncrementModel::Gaussian,
            IncrementKind::Rademacher => IncrementModel::Rademacher,
        };
        let dt = self.dt.unwrap_or(1.0 / self.steps.max(1) as f64);
        GaussianPathModel::new(self.steps, dt, self.dim, inc).map_err(|e| e.to_string())
    }
}

pub fn load_model(path: &Path) -> CliResult<GaussianPathModel> {
    let file: ModelFile = read_json(path)?;
    file.model().map_err(|e| CliError::invalid(path.display(), e))
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardNormalSpec {
    pub count: usize,
    /// Grid covers `[−range, range]`.
    pub range: f64,
}

/// A finitely supported law on `ℝ^d`, either listed or generated.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    /// Numbers for `d = 1`, coordinate lists otherwise.
    #[serde(default)]
    pub points: Option<Vec<Value>>,
    #[serde(default)]
    pub weights: Option<Vec<Value>>,
    #[serde(default)]
    pub standard_normal: Option<StandardNormalSpec>,
    /// Side of the terminal cells; defaults to the grid spacing.
    #[serde(default)]
    pub cell: Option<f64>,
}

impl GridFile {
    pub fn grid(&self) -> Result<GridMeasure, String> {
        match (&self.points, &self.weights, &self.standard_normal) {
            (None, None, Some(sn)) => {
                GridMeasure::discretized_standard_normal(sn.count, sn.range).map_err(|e| e.to_string())
            }
            (Some(points), Some(weights), None) => {
                if points.len() != weights.len() {
                    return Err(format!("{} points but {} weights", points.len(), weights.len()));
                }
                let coord = |v: &Value, i: usize| {
                    <f64 as Weight>::parse(v, &format!("points[{i}]")).and_then(|x| {
                        if x.is_finite() {
                            Ok(x)
                        } else {
                            Err(format!("points[{i}] is not finite"))
                        }
                    })
                };
                let coords: Vec<Vec<f64>> = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| match p {
                        Value::Array(v) => v.iter().map(|x| coord(x, i)).collect(),
                        x => coord(x, i).map(|x| vec![x]),
                    })
                    .collect::<Result<_, _>>()?;
                let dim = coords.first().map_or(0, Vec::len);
                if coords.iter().any(|c| c.len() != dim) {
                    return Err("points have different dimensions".into());
                }
                let w = parse_weights::<f64>(weights, "weights")?;
                GridMeasure::new(dim, coords.concat(), w).map_err(|e| e.to_string())
            }
            _ => Err("give either points and weights, or standard_normal".into()),
        }
    }
}

pub fn load_grid(path: &Path) -> CliResult<(GridMeasure, Option<f64>)> {
    let file: GridFile = read_json(path)?;
    let grid = file.grid().map_err(|e| CliError::invalid(path.display(), e))?;
    Ok((grid, file.cell))
}

/// Endpoint laws for the bridge; the terminal file's `cell` sets the cell width.
pub fn load_marginals(q1: &Path, q0: Option<&Path>) -> CliResult<EndpointMarginals> {
    let (target, cell) = load_grid(q1)?;
    let result = match q0 {
        Some(p) => {
            let (start, _) = load_grid(p)?;
            EndpointMarginals::new(start, target, cell)
        }
        None => EndpointMarginals::from_origin(target, cell),
    };
    result.map_err(|e| CliError::invalid(q1.display(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn number_literals_are_exact() {
        let r = <Rational as Weight>::parse(&serde_json::from_str::<Value>("0.1").unwrap(), "w").unwrap();
        assert_eq!(r, Rational::from_ratio(1, 10));
        let r = <Rational as Weight>::parse(&json!("2/6"), "w").unwrap();
        assert_eq!(r, Rational::from_ratio(1, 3));
        assert!(<f64 as Weight>::parse(&json!(true), "w").is_err());
    }

    #[test]
    fn measure_file_round() {
        let f: MeasureFile = serde_json::from_value(json!({
            "steps": 2, "alphabets": [1, 2], "weights": ["1/2", 0.5]
        }))
        .unwrap();
        let m = f.measure::<Rational>().unwrap();
        assert_eq!(m.weights(), &[Rational::from_ratio(1, 2), Rational::from_ratio(1, 2)]);
        let bad: MeasureFile = serde_json::from_value(json!({"steps": 3, "alphabets": [1, 2]})).unwrap();
        assert!(bad.space().is_err());
        assert!(serde_json::from_value::<MeasureFile>(json!({"alphabets": [2], "colour": 1})).is_err());
    }

    #[test]
    fn explicit_partitions() {
        let f: MeasureFile = serde_json::from_value(json!({
            "alphabets": [2, 2], "filtration": [[[0, 1, 2, 3]], [[0], [1], [2], [3]]]
        }))
        .unwrap();
        let sp = f.space().unwrap();
        assert_eq!(sp.atom_count(1), 1);
        assert_eq!(sp.atom_count(2), 4);
    }

    #[test]
    fn costs_accept_infinity() {
        assert_eq!(cost_entry(&json!("inf")), Some(f64::INFINITY));
        assert_eq!(cost_entry(&json!("3/2")), Some(1.5));
        assert_eq!(cost_entry(&json!("x")), None);
    }

    #[test]
    fn grid_forms() {
        let g: GridFile =
            serde_json::from_value(json!({"points": [[0.0, 1.0], [1.0, 0.0]], "weights": [0.5, 0.5]})).unwrap();
        assert_eq!(g.grid().unwrap().dim(), 2);
        let g: GridFile = serde_json::from_value(json!({"standard_normal": {"count": 33, "range": 4.0}})).unwrap();
        assert_eq!(g.grid().unwrap().len(), 33);
        let g: GridFile = serde_json::from_value(json!({"points": [1.0]})).unwrap();
        assert!(g.grid().is_err());
    }

    #[test]
    fn model_defaults() {
        let m: ModelFile = serde_json::from_value(json!({"N": 4})).unwrap();
        let model = m.model().unwrap();
        assert_eq!((model.steps(), model.dim(), model.dt()), (4, 1, 0.25));
        let m: ModelFile = serde_json::from_value(json!({"N": 4, "dt": 0.5})).unwrap();
        assert!(m.model().is_err());
    }
}
