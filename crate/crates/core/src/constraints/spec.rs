use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-point tolerance below which a negative score counts as a violation.
pub const TOL_VIOLATION: f64 = 1e-6;

/// Input-dependent bound `a(x)` / `b(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundExpr {
    Constant {
        value: f64,
    },
    /// `k x + c`
    Affine {
        k: f64,
        c: f64,
    },
    /// `scale * ln(k x + c) + shift`
    LogAffine {
        k: f64,
        c: f64,
        scale: f64,
        shift: f64,
    },
}

impl BoundExpr {
    pub fn eval(&self, x: f64) -> Result<f64> {
        match *self {
            BoundExpr::Constant { value } => Ok(value),
            BoundExpr::Affine { k, c } => Ok(k * x + c),
            BoundExpr::LogAffine { k, c, scale, shift } => {
                let arg = k * x + c;
                if arg <= 0.0 {
                    return Err(Error::Domain(format!(
                        "log bound argument {arg} <= 0 at x = {x}"
                    )));
                }
                Ok(scale * arg.ln() + shift)
            }
        }
    }
}

/// Which knowledge rule a constraint encodes. Every rule is turned into a
/// per-point score `min(0, s + m)` that is zero exactly when the rule holds
/// within margin `m`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// `min(0, m - |y - target|)`
    ConditionalValue { target: f64, margin: f64 },
    /// `min(0, y - a(x) + m)`
    LowerBound { bound: BoundExpr, margin: f64 },
    /// `min(0, b(x) - y + m)`
    UpperBound { bound: BoundExpr, margin: f64 },
    /// `min(0, (b - a)/2 - |y - (a + b)/2| + m)`: zero exactly on `[a, b]`.
    Band {
        lower: BoundExpr,
        upper: BoundExpr,
        margin: f64,
    },
    /// `min(0, +-y' + m)` with `y'` from first differences along the grid.
    Monotone { increasing: bool, margin: f64 },
    /// `min(0, +-y'' + m)` with `y''` from second differences.
    Curvature { convex: bool, margin: f64 },
}

impl ConstraintKind {
    pub fn margin(&self) -> f64 {
        match *self {
            ConstraintKind::ConditionalValue { margin, .. }
            | ConstraintKind::LowerBound { margin, .. }
            | ConstraintKind::UpperBound { margin, .. }
            | ConstraintKind::Band { margin, .. }
            | ConstraintKind::Monotone { margin, .. }
            | ConstraintKind::Curvature { margin, .. } => margin,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ConstraintKind::ConditionalValue { .. } => "conditional_value",
            ConstraintKind::LowerBound { .. } => "lower_bound",
            ConstraintKind::UpperBound { .. } => "upper_bound",
            ConstraintKind::Band { .. } => "band",
            ConstraintKind::Monotone { .. } => "monotone",
            ConstraintKind::Curvature { .. } => "curvature",
        }
    }

    /// Minimum grid size the score needs.
    pub fn min_points(&self) -> usize {
        match self {
            ConstraintKind::Monotone { .. } => 2,
            ConstraintKind::Curvature { .. } => 3,
            _ => 1,
        }
    }

    pub fn is_derivative(&self) -> bool {
        self.min_points() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Points { points: Vec<f64> },
    Uniform { lo: f64, hi: f64, count: usize },
}

impl Grid {
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Self {
        Grid::Uniform { lo, hi, count }
    }

    pub fn points(&self) -> Vec<f64> {
        match self {
            Grid::Points { points } => points.clone(),
            Grid::Uniform { lo, hi, count } => linspace(*lo, *hi, *count),
        }
    }
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        lo + step * i as f64
                    }
                })
                .collect()
        }
    }
}

/// How `y'` is obtained for derivative constraints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Differences of predictions at consecutive grid points.
    #[default]
    FiniteDifference,
    /// Exact input derivative of the network (monotone only).
    InputGradient,
}

/// One knowledge function with its evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstraint", into = "RawConstraint")]
pub struct ConstraintSpec {
    pub name: String,
    pub kind: ConstraintKind,
    pub grid: Grid,
    /// Inputs outside `[x_a, x_b]` are ignored.
    pub region: Option<(f64, f64)>,
    /// Composite weight `s_i`.
    pub weight: f64,
    /// Allowed violation probability for the probabilistic hard check.
    pub epsilon: f64,
    pub derivative: DerivativeMode,
}

impl ConstraintSpec {
    pub fn new(name: impl Into<String>, kind: ConstraintKind, grid: Grid) -> Self {
        Self {
            name: name.into(),
            kind,
            grid,
            region: None,
            weight: 1.0,
            epsilon: 0.0,
            derivative: DerivativeMode::FiniteDifference,
        }
    }

    pub fn with_region(mut self, lo: f64, hi: f64) -> Self {
        self.region = Some((lo, hi));
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("constraint '{}': {m}", self.name)));
        let margin = self.kind.margin();
        if !(margin >= 0.0) || !margin.is_finite() {
            return bad(format!("margin {margin} must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return bad(format!("weight {} must be >= 0", self.weight));
        }
        if let Some((a, b)) = self.region {
            if !(a <= b) {
                return bad(format!("region [{a}, {b}] is not ordered"));
            }
        }
        if let Grid::Uniform { lo, hi, count } = self.grid {
            if !(lo <= hi) {
                return bad(format!("grid range [{lo}, {hi}] is not ordered"));
            }
            if count == 0 {
                return bad("grid is empty".into());
            }
        }
        let points = self.grid.points();
        if points.is_empty() {
            return bad("grid is empty".into());
        }
        if points.iter().any(|p| !p.is_finite()) {
            return bad("grid has non-finite points".into());
        }
        if self.kind.is_derivative() {
            if points.windows(2).any(|w| !(w[0] < w[1])) {
                return bad("derivative constraints need a strictly increasing grid".into());
            }
            let active = self.active_mask(&points).iter().filter(|&&a| a).count();
            if active < self.kind.min_points() {
                return Err(Error::Contract(format!(
                    "constraint '{}' needs >= {} grid points in its region, has {active}",
                    self.name,
                    self.kind.min_points()
                )));
            }
        }
        if self.derivative == DerivativeMode::InputGradient
            && !matches!(self.kind, ConstraintKind::Monotone { .. })
        {
            return bad("input_gradient derivatives are only supported for monotone".into());
        }
        // Bounds must be evaluable everywhere on the grid.
        for &x in &points {
            match &self.kind {
                ConstraintKind::LowerBound { bound, .. }
                | ConstraintKind::UpperBound { bound, .. } => {
                    bound.eval(x)?;
                }
                ConstraintKind::Band { lower, upper, .. } => {
                    let (a, b) = (lower.eval(x)?, upper.eval(x)?);
                    if a > b {
                        return bad(format!("band lower {a} above upper {b} at x = {x}"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn in_region(&self, x: f64) -> bool {
        self.region.is_none_or(|(a, b)| a <= x && x <= b)
    }

    pub(crate) fn active_mask(&self, xs: &[f64]) -> Vec<bool> {
        xs.iter().map(|&x| self.in_region(x)).collect()
    }

    pub fn grid_points(&self) -> Vec<f64> {
        self.grid.points()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    ConditionalValue,
    LowerBound,
    UpperBound,
    Band,
    Monotone,
    Curvature,
}

/// Wire form: `{name, kind, params, grid, region, weight, epsilon, derivative}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    #[serde(default)]
    name: String,
    kind: KindTag,
    #[serde(default)]
    params: serde_json::Value,
    grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<[f64; 2]>,
    #[serde(default = "one")]
    weight: f64,
    #[serde(default)]
    epsilon: f64,
    #[serde(default)]
    derivative: DerivativeMode,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValueParams {
    target: f64,
    #[serde(default)]
    margin: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundParams {
    bound: BoundExpr,
    #[serde(default)]
    margin: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandParams {
    lower: BoundExpr,
    upper: BoundExpr,
    #[serde(default)]
    margin: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonotoneParams {
    #[serde(default = "yes")]
    increasing: bool,
    #[serde(default)]
    margin: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurvatureParams {
    #[serde(default = "yes")]
    convex: bool,
    #[serde(default)]
    margin: f64,
}

fn yes() -> bool {
    true
}

impl TryFrom<RawConstraint> for ConstraintSpec {
    type Error = Error;

    fn try_from(raw: RawConstraint) -> Result<Self> {
        let params = if raw.params.is_null() {
            serde_json::Value::Object(Default::default())
        } else {
            raw.params
        };
        let p = |e: serde_json::Error| Error::Config(format!("constraint params: {e}"));
        let kind = match raw.kind {
            KindTag::ConditionalValue => {
                let v: ValueParams = serde_json::from_value(params).map_err(p)?;
                ConstraintKind::ConditionalValue {
                    target: v.target,
                    margin: v.margin,
                }
            }
            KindTag::LowerBound => {
                let v: BoundParams = serde_json::from_value(params).map_err(p)?;
                ConstraintKind::LowerBound {
                    bound: v.bound,
                    margin: v.margin,
                }
            }
            KindTag::UpperBound => {
                let v: BoundParams = serde_json::from_value(params).map_err(p)?;
                ConstraintKind::UpperBound {
                    bound: v.bound,
                    margin: v.margin,
                }
            }
            KindTag::Band => {
                let v: BandParams = serde_json::from_value(params).map_err(p)?;
                ConstraintKind::Band {
                    lower: v.lower,
                    upper: v.upper,
                    margin: v.margin,
                }
            }
            KindTag::Monotone => {
                let v: MonotoneParams = serde_json::from_value(params).map_err(p)?;
                ConstraintKind::Monotone {
                    increasing: v.increasing,
                    margin: v.margin,
                }
            }
            KindTag::Curvature => {
                let v: CurvatureParams = serde_json::from_value(params).map_err(p)?;
                ConstraintKind::Curvature {
                    convex: v.convex,
                    margin: v.margin,
                }
            }
        };
        let spec = ConstraintSpec {
            name: if raw.name.is_empty() {
                kind.tag().to_string()
            } else {
                raw.name
            },
            kind,
            grid: raw.grid,
            region: raw.region.map(|[a, b]| (a, b)),
            weight: raw.weight,
            epsilon: raw.epsilon,
            derivative: raw.derivative,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ConstraintSpec> for RawConstraint {
    fn from(spec: ConstraintSpec) -> Self {
        let to =
            |v: std::result::Result<serde_json::Value, serde_json::Error>| v.expect("plain data");
        let (kind, params) = match spec.kind {
            ConstraintKind::ConditionalValue { target, margin } => (
                KindTag::ConditionalValue,
                to(serde_json::to_value(ValueParams { target, margin })),
            ),
            ConstraintKind::LowerBound { bound, margin } => (
                KindTag::LowerBound,
                to(serde_json::to_value(BoundParams { bound, margin })),
            ),
            ConstraintKind::UpperBound { bound, margin } => (
                KindTag::UpperBound,
                to(serde_json::to_value(BoundParams { bound, margin })),
            ),
            ConstraintKind::Band {
                lower,
                upper,
                margin,
            } => (
                KindTag::Band,
                to(serde_json::to_value(BandParams {
                    lower,
                    upper,
                    margin,
                })),
            ),
            ConstraintKind::Monotone { increasing, margin } => (
                KindTag::Monotone,
                to(serde_json::to_value(MonotoneParams { increasing, margin })),
            ),
            ConstraintKind::Curvature { convex, margin } => (
                KindTag::Curvature,
                to(serde_json::to_value(CurvatureParams { convex, margin })),
            ),
        };
        RawConstraint {
            name: spec.name,
            kind,
            params,
            grid: spec.grid,
            region: spec.region.map(|(a, b)| [a, b]),
            weight: spec.weight,
            epsilon: spec.epsilon,
            derivative: spec.derivative,
        }
    }
}
