//! Datasets, min-max scaling, CSV I/O and the two simulation generators.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::constraints::{linspace, BoundExpr, ConstraintKind, ConstraintSpec, Grid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(max > min) {
            return Err(Error::Domain(format!(
                "min-max scaling needs max > min, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    /// Fits to the observed range; constant columns are rejected.
    pub fn fit(values: &[f64]) -> Result<Self> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(min, max)
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

pub fn minmax_scale(values: &[f64], min: f64, max: f64) -> Result<Vec<f64>> {
    let s = Scaler::new(min, max)?;
    Ok(values.iter().map(|&v| s.scale(v)).collect())
}

pub fn minmax_inverse(values: &[f64], min: f64, max: f64) -> Result<Vec<f64>> {
    let s = Scaler::new(min, max)?;
    Ok(values.iter().map(|&v| s.inverse(v)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Input column names, one per column of `x`.
    pub inputs: Vec<String>,
    pub target: String,
    /// `n x d`
    pub x: Tensor,
    /// `n x 1`
    pub y: Tensor,
    pub split: Split,
    /// Scalers applied so far, keyed by column name.
    pub scalers: BTreeMap<String, Scaler>,
}

impl Dataset {
    pub fn new(
        inputs: Vec<String>,
        target: String,
        x: Tensor,
        y: Tensor,
        split: Split,
    ) -> Result<Self> {
        if x.shape().len() != 2 || x.cols() != inputs.len() {
            return Err(Error::Shape(format!(
                "x {:?} does not match {} input columns",
                x.shape(),
                inputs.len()
            )));
        }
        if y.shape() != [x.rows(), 1] {
            return Err(Error::Shape(format!(
                "y {:?} does not match {} rows",
                y.shape(),
                x.rows()
            )));
        }
        Ok(Self {
            inputs,
            target,
            x,
            y,
            split,
            scalers: BTreeMap::new(),
        })
    }

    /// Single-input dataset.
    pub fn from_columns(xs: Vec<f64>, ys: Vec<f64>, split: Split) -> Result<Self> {
        Self::new(
            vec!["x".into()],
            "y".into(),
            Tensor::column(xs)?,
            Tensor::column(ys)?,
            split,
        )
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let d = self.x.cols();
        self.x.data().iter().skip(j).step_by(d).copied().collect()
    }

    /// Fits one scaler per column (inputs and target) on this dataset.
    pub fn fit_scalers(&self) -> Result<BTreeMap<String, Scaler>> {
        let mut out = BTreeMap::new();
        for (j, name) in self.inputs.iter().enumerate() {
            out.insert(name.clone(), Scaler::fit(&self.column(j))?);
        }
        out.insert(self.target.clone(), Scaler::fit(self.y.data())?);
        Ok(out)
    }

    /// Applies the given scalers to every column they name.
    pub fn scaled(&self, scalers: &BTreeMap<String, Scaler>) -> Result<Self> {
        let mut out = self.clone();
        let d = self.x.cols();
        for (j, name) in self.inputs.iter().enumerate() {
            if let Some(s) = scalers.get(name) {
                for v in out.x.data_mut().iter_mut().skip(j).step_by(d) {
                    *v = s.scale(*v);
                }
                out.scalers.insert(name.clone(), *s);
            }
        }
        if let Some(s) = scalers.get(&self.target) {
            for v in out.y.data_mut() {
                *v = s.scale(*v);
            }
            out.scalers.insert(self.target.clone(), *s);
        }
        Ok(out)
    }
}

/// `(atan(20x - 10) - atan(-10)) / 3`
pub fn sim2_truth(x: f64) -> f64 {
    ((20.0 * x - 10.0).atan() - (-10.0f64).atan()) / 3.0
}

pub const SIM2_UPPER: BoundExpr = BoundExpr::LogAffine {
    k: 25.0,
    c: 1.0,
    scale: 1.0 / 3.0,
    shift: 0.05,
};

/// `ln(25x + 1) / 3 + 0.05`
pub fn sim2_upper_bound(x: f64) -> Result<f64> {
    SIM2_UPPER.eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimId {
    Sim1,
    Sim2,
}

pub const SIM1_DEFAULT_X: [f64; 6] = [-1.0, -0.6, -0.2, 0.2, 0.6, 1.0];
/// Polynomial coefficients (constant term first) for the default Sim-1 target.
pub const SIM1_DEFAULT_TARGET: [f64; 4] = [2.75, 4.0, 0.0, -2.0];

/// Simulation settings. Unset fields take the per-simulation defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub sim: Option<SimId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    /// Overrides the Sim-1 training inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim1_x: Option<Vec<f64>>,
    /// Sim-1 target polynomial, constant term first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim1_target: Option<Vec<f64>>,
    /// Number of constraint grid points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
}

/// [`SimSpec`] with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSim {
    pub sim: SimId,
    pub train_range: [f64; 2],
    pub test_range: [f64; 2],
    pub train_size: usize,
    pub test_size: usize,
    pub noise_std: f64,
    pub sim1_x: Vec<f64>,
    pub sim1_target: Vec<f64>,
    pub grid_size: usize,
}

impl SimSpec {
    pub fn sim1() -> Self {
        Self {
            sim: Some(SimId::Sim1),
            ..Self::default()
        }
    }

    pub fn sim2() -> Self {
        Self {
            sim: Some(SimId::Sim2),
            ..Self::default()
        }
    }

    pub fn resolve(&self) -> Result<ResolvedSim> {
        let sim = self
            .sim
            .ok_or_else(|| Error::Config("simulation id missing".into()))?;
        let r = match sim {
            SimId::Sim1 => {
                let sim1_x = self
                    .sim1_x
                    .clone()
                    .unwrap_or_else(|| SIM1_DEFAULT_X.to_vec());
                ResolvedSim {
                    sim,
                    train_range: self.train_range.unwrap_or([-1.0, 1.0]),
                    test_range: self.test_range.unwrap_or([-1.2, 1.2]),
                    train_size: self.train_size.unwrap_or(sim1_x.len()),
                    test_size: self.test_size.unwrap_or(200),
                    noise_std: self.noise_std.unwrap_or(0.0),
                    sim1_x,
                    sim1_target: self
                        .sim1_target
                        .clone()
                        .unwrap_or_else(|| SIM1_DEFAULT_TARGET.to_vec()),
                    grid_size: self.grid_size.unwrap_or(50),
                }
            }
            SimId::Sim2 => ResolvedSim {
                sim,
                train_range: self.train_range.unwrap_or([0.1, 0.65]),
                test_range: self.test_range.unwrap_or([0.08, 1.0]),
                train_size: self.train_size.unwrap_or(40),
                test_size: self.test_size.unwrap_or(200),
                noise_std: self.noise_std.unwrap_or(0.05),
                sim1_x: Vec::new(),
                sim1_target: Vec::new(),
                grid_size: self.grid_size.unwrap_or(200),
            },
        };
        r.validate()?;
        Ok(r)
    }
}

impl ResolvedSim {
    fn validate(&self) -> Result<()> {
        for (name, [a, b]) in [
            ("train_range", self.train_range),
            ("test_range", self.test_range),
        ] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::Config(format!("{name} [{a}, {b}] is not ordered")));
            }
        }
        if self.train_size < 1 || self.test_size < 1 {
            return Err(Error::Config("sample sizes must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std {} must be >= 0",
                self.noise_std
            )));
        }
        if self.sim == SimId::Sim1 {
            if self.sim1_x.len() != self.train_size {
                return Err(Error::Config(format!(
                    "sim1 has {} fixed inputs but train_size {}",
                    self.sim1_x.len(),
                    self.train_size
                )));
            }
            if self.sim1_target.is_empty() {
                return Err(Error::Config(
                    "sim1_target needs at least one coefficient".into(),
                ));
            }
        }
        let min_grid = if self.sim == SimId::Sim2 { 2 } else { 1 };
        if self.grid_size < min_grid {
            return Err(Error::Config(format!("grid_size must be >= {min_grid}")));
        }
        Ok(())
    }

    pub fn sim1_truth(&self, x: f64) -> f64 {
        self.sim1_target
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c)
    }

    pub fn truth(&self, x: f64) -> f64 {
        match self.sim {
            SimId::Sim1 => self.sim1_truth(x),
            SimId::Sim2 => sim2_truth(x),
        }
    }

    /// The knowledge constraints attached to this simulation.
    pub fn constraints(&self) -> Vec<ConstraintSpec> {
        match self.sim {
            SimId::Sim1 => {
                let band = ConstraintKind::Band {
                    lower: BoundExpr::Constant { value: 2.5 },
                    upper: BoundExpr::Constant { value: 3.0 },
                    margin: 0.0,
                };
                vec![
                    ConstraintSpec::new("band", band, Grid::uniform(-0.3, 0.3, self.grid_size))
                        .with_region(-0.3, 0.3),
                ]
            }
            SimId::Sim2 => {
                let [lo, hi] = self.test_range;
                let grid = Grid::uniform(lo, hi, self.grid_size);
                vec![
                    ConstraintSpec::new(
                        "lower",
                        ConstraintKind::LowerBound {
                            bound: BoundExpr::Constant { value: 0.0 },
                            margin: 0.0,
                        },
                        grid.clone(),
                    ),
                    ConstraintSpec::new(
                        "upper",
                        ConstraintKind::UpperBound {
                            bound: SIM2_UPPER,
                            margin: 0.0,
                        },
                        grid.clone(),
                    ),
                    ConstraintSpec::new(
                        "monotone",
                        ConstraintKind::Monotone {
                            increasing: true,
                            margin: 0.0,
                        },
                        grid,
                    ),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub train: Dataset,
    pub test: Dataset,
    pub constraints: Vec<ConstraintSpec>,
}

/// Draws the training and test sets for a simulation. A pure function of
/// `(spec, rng state)`.
pub fn generate<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SimData> {
    let r = spec.resolve()?;
    let noise = Normal::new(0.0, r.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let train_x: Vec<f64> = match r.sim {
        SimId::Sim1 => r.sim1_x.clone(),
        SimId::Sim2 => {
            let [a, b] = r.train_range;
            if a == b {
                vec![a; r.train_size]
            } else {
                let u = Uniform::new_inclusive(a, b).map_err(|e| Error::Config(e.to_string()))?;
                (0..r.train_size).map(|_| u.sample(rng)).collect()
            }
        }
    };
    let train_y = train_x
        .iter()
        .map(|&x| {
            r.truth(x)
                + if r.noise_std > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                }
        })
        .collect();
    let [lo, hi] = r.test_range;
    let test_x = linspace(lo, hi, r.test_size);
    let test_y = test_x.iter().map(|&x| r.truth(x)).collect();
    Ok(SimData {
        train: Dataset::from_columns(train_x, train_y, Split::Train)?,
        test: Dataset::from_columns(test_x, test_y, Split::Test)?,
        constraints: r.constraints(),
    })
}

/// Columns to read from a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub inputs: Vec<String>,
    pub target: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            inputs: vec!["x".into()],
            target: "y".into(),
        }
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a header-plus-rows CSV. Lines starting with `#` are skipped.
pub fn load_csv(path: &Path, schema: &CsvSchema, split: Split) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, split)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema, split: Split) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(e.position().map_or(1, |p| p.line()), e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(parse_err(1, "empty file: no header row"));
    }
    let header_line = rdr.position().line().saturating_sub(1).max(1);
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(header_line, format!("missing column '{name}'")))
    };
    let cols: Vec<usize> = schema
        .inputs
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;
    let target = find(&schema.target)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let cell = |j: usize| -> Result<f64> {
            let raw = &rec[j];
            let v: f64 = raw.parse().map_err(|_| {
                parse_err(
                    line,
                    format!("non-numeric cell '{raw}' in '{}'", &headers[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite cell '{raw}'")));
            }
            Ok(v)
        };
        for &j in &cols {
            xs.push(cell(j)?);
        }
        ys.push(cell(target)?);
    }
    if ys.is_empty() {
        return Err(parse_err(header_line, "no data rows"));
    }
    let n = ys.len();
    Dataset::new(
        schema.inputs.clone(),
        schema.target.clone(),
        Tensor::matrix(n, schema.inputs.len(), xs)?,
        Tensor::column(ys)?,
        split,
    )
}

/// 17 significant digits: lossless for 64-bit reals.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `dataset` as CSV, optionally preceded by `# comment` lines.
pub fn save_csv(dataset: &Dataset, path: &Path, comments: &[String]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(dataset, &mut buf, comments)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn write_csv<W: std::io::Write>(
    dataset: &Dataset,
    mut out: W,
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = dataset.inputs.clone();
    header.push(dataset.target.clone());
    w.write_record(&header).map_err(csv_io)?;
    let d = dataset.x.cols();
    for (i, y) in dataset.y.data().iter().enumerate() {
        let mut row: Vec<String> = dataset.x.data()[i * d..(i + 1) * d]
            .iter()
            .map(|&v| format_f64(v))
            .collect();
        row.push(format_f64(*y));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

pub fn save_scalers(scalers: &BTreeMap<String, Scaler>, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(scalers)? + "\n")?;
    Ok(())
}

pub fn load_scalers(path: &Path) -> Result<BTreeMap<String, Scaler>> {
    let map: BTreeMap<String, Scaler> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for s in map.values() {
        Scaler::new(s.min, s.max)?;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scaler_examples() {
        assert_eq!(
            minmax_scale(&[5.0, 0.0, 10.0], 0.0, 10.0).unwrap(),
            vec![0.5, 0.0, 1.0]
        );
        assert!(matches!(
            minmax_scale(&[1.0], 1.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(Scaler::fit(&[2.0, 2.0]).is_err());
    }

    #[test]
    fn scaler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..1000).map(|_| rng.random_range(-50.0..50.0)).collect();
        let s = Scaler::fit(&vals).unwrap();
        let back =
            minmax_inverse(&minmax_scale(&vals, s.min, s.max).unwrap(), s.min, s.max).unwrap();
        let err = vals
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");
    }

    #[test]
    fn sim2_functions() {
        assert!((sim2_truth(0.5) - 0.49038).abs() < 1e-5);
        assert!((sim2_truth(0.5) - 10f64.atan() / 3.0).abs() < 1e-15);
        assert_eq!(sim2_truth(0.0), 0.0);
        assert!((sim2_upper_bound(0.0).unwrap() - 0.05).abs() < 1e-15);
        assert!((sim2_upper_bound(0.5).unwrap() - 0.91757).abs() < 1e-5);
        assert!(sim2_upper_bound(-0.05).is_err());
        let g = linspace(0.08, 1.0, 1000);
        for w in g.windows(2) {
            assert!(sim2_truth(w[1]) > sim2_truth(w[0]));
        }
        for &x in &g {
            assert!(sim2_upper_bound(x).unwrap() > sim2_truth(x), "x = {x}");
        }
    }

    #[test]
    fn sim2_generation() {
        let d = generate(&SimSpec::sim2(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(d.test.len(), 200);
        let tx = d.test.column(0);
        assert_eq!(tx[0], 0.08);
        assert_eq!(tx[199], 1.0);
        assert_eq!(d.train.len(), 40);
        assert!(d.train.column(0).iter().all(|&x| (0.1..=0.65).contains(&x)));
        assert_eq!(d.constraints.len(), 3);
        for c in &d.constraints {
            c.validate().unwrap();
        }
        let again = generate(&SimSpec::sim2(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(d, again);

        let quiet = SimSpec {
            noise_std: Some(0.0),
            ..SimSpec::sim2()
        };
        let d = generate(&quiet, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (x, y) in d.train.column(0).iter().zip(d.train.y.data()) {
            assert_eq!(*y, sim2_truth(*x));
        }
    }

    #[test]
    fn sim1_generation() {
        let d = generate(&SimSpec::sim1(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(d.train.column(0), SIM1_DEFAULT_X.to_vec());
        assert_eq!(d.constraints.len(), 1);
        assert_eq!(d.constraints[0].grid_points().len(), 50);
        let bad = SimSpec {
            train_range: Some([1.0, -1.0]),
            ..SimSpec::sim1()
        };
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = Dataset::from_columns(
            vec![0.1, 1.0 / 3.0, -2.5e-17],
            vec![std::f64::consts::PI, 1e300, -0.0],
            Split::Train,
        )
        .unwrap();
        save_csv(&ds, &path, &["config_hash: abc".into()]).unwrap();
        let back = load_csv(&path, &CsvSchema::default(), Split::Train).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
    }

    #[test]
    fn csv_fixture_and_errors() {
        let schema = CsvSchema {
            inputs: vec!["a".into(), "b".into()],
            target: "t".into(),
        };
        let ok = "a,b,t\n1,2,3\n4,5,6\n-1,0.5,1e-3\n";
        let ds = read_csv(ok.as_bytes(), &schema, Split::Test).unwrap();
        assert_eq!(
            ds.x,
            Tensor::matrix(3, 2, vec![1.0, 2.0, 4.0, 5.0, -1.0, 0.5]).unwrap()
        );
        assert_eq!(ds.y, Tensor::column(vec![3.0, 6.0, 1e-3]).unwrap());

        let line_of = |text: &str| match read_csv(text.as_bytes(), &schema, Split::Test) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        };
        line_of("");
        assert_eq!(line_of("a,b\n1,2\n"), 1);
        assert_eq!(line_of("a,b,t\n1,2,3\n4,x,6\n"), 3);
        assert_eq!(line_of("a,b,t\n1,2,3\n4,5\n"), 3);
        line_of("a,b,t\n");
    }

    #[test]
    fn scaled_dataset_and_sidecar() {
        let ds =
            Dataset::from_columns(vec![0.0, 5.0, 10.0], vec![1.0, 2.0, 3.0], Split::Train).unwrap();
        let scalers = ds.fit_scalers().unwrap();
        let s = ds.scaled(&scalers).unwrap();
        assert_eq!(s.x.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(s.y.data(), &[0.0, 0.5, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scalers.json");
        save_scalers(&scalers, &p).unwrap();
        assert_eq!(load_scalers(&p).unwrap(), scalers);
    }

    proptest! {
        #[test]
        fn scaled_targets_in_unit_interval(ys in prop::collection::vec(-100.0f64..100.0, 2..50)) {
            prop_assume!(ys.iter().any(|&v| v != ys[0]));
            let s = Scaler::fit(&ys).unwrap();
            for &y in &ys {
                let v = s.scale(y);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!((s.inverse(v) - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
