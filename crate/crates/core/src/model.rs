//! Data model: observations, datasets, step functions and the fitted
//! quantile-coefficient process.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("singular design: column {column}{} is linearly dependent on earlier columns", name_suffix(.name))]
    SingularDesign {
        column: usize,
        name: Option<String>,
    },
    #[error("tau {tau} outside the evaluable range [0, {tau_end})")]
    TauOutOfRange { tau: f64, tau_end: f64 },
    #[error("observation index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("invalid construction: {0}")]
    Invalid(String),
}

fn name_suffix(name: &Option<String>) -> String {
    match name {
        Some(n) => format!(" ({n})"),
        None => String::new(),
    }
}

/// One subject: follow-up value, event indicator and covariate row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Observation<F: Scalar> {
    /// Follow-up value, on whatever scale the model is fitted (may be negative).
    pub x: F,
    /// True when the follow-up value is an observed event, false when censored.
    pub delta: bool,
    /// Covariate row with a leading constant 1.
    pub z: Vec<F>,
}

/// Raw ingestion record before the intercept column is prepended.
#[derive(Debug, Clone)]
pub struct RawRow<F: Scalar> {
    pub time: F,
    pub status: u8,
    pub covariates: Vec<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<F: Scalar> {
    observations: Vec<Observation<F>>,
    p: usize,
    x_scale: F,
}

/// Dataset parsed from CSV together with the covariate names from the header.
#[derive(Debug, Clone)]
pub struct LoadedCsv<F: Scalar> {
    pub dataset: Dataset<F>,
    /// Names of the design columns, starting with the implicit intercept.
    pub column_names: Vec<String>,
}

impl<F: Scalar> Dataset<F> {
    /// Build a dataset from ingestion rows, prepending the intercept column.
    pub fn from_rows(rows: &[RawRow<F>]) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Invalid("empty dataset".into()));
        }
        let arity = rows[0].covariates.len();
        let mut observations = Vec::with_capacity(rows.len());
        for (k, row) in rows.iter().enumerate() {
            if row.covariates.len() != arity {
                return Err(DataError::MalformedRow {
                    row: k + 1,
                    reason: format!(
                        "expected {} covariates, found {}",
                        arity,
                        row.covariates.len()
                    ),
                });
            }
            if !row.time.is_finite() {
                return Err(DataError::MalformedRow {
                    row: k + 1,
                    reason: "time is not finite".into(),
                });
            }
            if row.status > 1 {
                return Err(DataError::MalformedRow {
                    row: k + 1,
                    reason: format!("status must be 0 or 1, found {}", row.status),
                });
            }
            if row.covariates.iter().any(|c| !c.is_finite()) {
                return Err(DataError::MalformedRow {
                    row: k + 1,
                    reason: "non-finite covariate".into(),
                });
            }
            let mut z = Vec::with_capacity(arity + 1);
            z.push(F::one());
            z.extend_from_slice(&row.covariates);
            observations.push(Observation {
                x: row.time,
                delta: row.status == 1,
                z,
            });
        }
        Self::from_observations(observations)
    }

    /// Build from parallel vectors; `z` rows must already carry the leading 1.
    pub fn from_parts(x: Vec<F>, delta: Vec<bool>, z: Vec<Vec<F>>) -> Result<Self, DataError> {
        if x.len() != delta.len() || x.len() != z.len() {
            return Err(DataError::Invalid("length mismatch".into()));
        }
        let observations = x
            .into_iter()
            .zip(delta)
            .zip(z)
            .map(|((x, delta), z)| Observation { x, delta, z })
            .collect();
        Self::from_observations(observations)
    }

    fn from_observations(observations: Vec<Observation<F>>) -> Result<Self, DataError> {
        if observations.is_empty() {
            return Err(DataError::Invalid("empty dataset".into()));
        }
        let p = observations[0].z.len();
        if p == 0 {
            return Err(DataError::Invalid("empty covariate rows".into()));
        }
        for (k, obs) in observations.iter().enumerate() {
            if obs.z.len() != p {
                return Err(DataError::MalformedRow {
                    row: k + 1,
                    reason: "inconsistent covariate arity".into(),
                });
            }
            if obs.z[0] != F::one() {
                return Err(DataError::MalformedRow {
                    row: k + 1,
                    reason: "leading covariate entry must be exactly 1".into(),
                });
            }
            if !obs.x.is_finite() {
                return Err(DataError::MalformedRow {
                    row: k + 1,
                    reason: "time is not finite".into(),
                });
            }
        }
        let x_scale = observations
            .iter()
            .map(|o| o.x.abs())
            .fold(F::one(), F::max);
        let ds = Dataset {
            observations,
            p,
            x_scale,
        };
        ds.check_rank()?;
        Ok(ds)
    }

    /// Left-looking Cholesky on the Gram matrix; the first vanishing pivot
    /// names the design column that is dependent on its predecessors.
    fn check_rank(&self) -> Result<(), DataError> {
        let p = self.p;
        if self.n() < p {
            return Err(DataError::SingularDesign {
                column: p - 1,
                name: None,
            });
        }
        let mut gram = vec![vec![F::zero(); p]; p];
        for obs in &self.observations {
            for i in 0..p {
                for j in 0..p {
                    gram[i][j] += obs.z[i] * obs.z[j];
                }
            }
        }
        let mut l = vec![vec![F::zero(); p]; p];
        for k in 0..p {
            let mut d = gram[k][k];
            for j in 0..k {
                d = d - l[k][j] * l[k][j];
            }
            if d <= F::real(1e-10) * gram[k][k].max(F::one()) {
                return Err(DataError::SingularDesign {
                    column: k,
                    name: None,
                });
            }
            l[k][k] = d.sqrt();
            for i in k + 1..p {
                let mut s = gram[i][k];
                for j in 0..k {
                    s = s - l[i][j] * l[k][j];
                }
                l[i][k] = s / l[k][k];
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn obs(&self, i: usize) -> &Observation<F> {
        &self.observations[i]
    }

    pub fn x(&self, i: usize) -> F {
        self.observations[i].x
    }

    pub fn delta(&self, i: usize) -> bool {
        self.observations[i].delta
    }

    pub fn z(&self, i: usize) -> &[F] {
        &self.observations[i].z
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation<F>> {
        self.observations.iter()
    }

    /// Largest absolute follow-up value, floored at one; used for relative
    /// activity tolerances.
    pub fn x_scale(&self) -> F {
        self.x_scale
    }

    /// Apply the natural logarithm to every follow-up value.
    pub fn log_time(&self) -> Result<Self, DataError> {
        let mut observations = self.observations.clone();
        for (k, obs) in observations.iter_mut().enumerate() {
            if obs.x <= F::zero() {
                return Err(DataError::MalformedRow {
                    row: k + 1,
                    reason: "log transform requires strictly positive times".into(),
                });
            }
            obs.x = obs.x.ln();
        }
        Self::from_observations(observations)
    }
}

/// Read a dataset from CSV with a mandatory `time,status,...` header.
pub fn read_csv<F: Scalar, R: Read>(reader: R) -> Result<LoadedCsv<F>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::MalformedRow {
            row: 0,
            reason: format!("cannot read header: {e}"),
        })?
        .clone();
    if headers.len() < 2 {
        return Err(DataError::MalformedRow {
            row: 0,
            reason: "header must contain at least time,status".into(),
        });
    }
    let h0 = headers.get(0).unwrap_or("").to_ascii_lowercase();
    let h1 = headers.get(1).unwrap_or("").to_ascii_lowercase();
    if h0 != "time" || h1 != "status" {
        return Err(DataError::MalformedRow {
            row: 0,
            reason: format!("header must start with time,status (found {h0},{h1})"),
        });
    }
    let mut column_names = vec!["(intercept)".to_string()];
    column_names.extend(headers.iter().skip(2).map(|s| s.to_string()));

    let mut rows: Vec<RawRow<F>> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::MalformedRow {
            row: k + 1,
            reason: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(DataError::MalformedRow {
                row: k + 1,
                reason: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let parse = |field: &str, what: &str| -> Result<f64, DataError> {
            field.parse::<f64>().map_err(|_| DataError::MalformedRow {
                row: k + 1,
                reason: format!("non-numeric {what}: {field:?}"),
            })
        };
        let time = parse(record.get(0).unwrap(), "time")?;
        let status_f = parse(record.get(1).unwrap(), "status")?;
        let status = if status_f == 0.0 {
            0u8
        } else if status_f == 1.0 {
            1u8
        } else {
            return Err(DataError::MalformedRow {
                row: k + 1,
                reason: format!("status must be 0 or 1, found {status_f}"),
            });
        };
        let mut covariates = Vec::with_capacity(headers.len() - 2);
        for j in 2..headers.len() {
            covariates.push(F::real(parse(record.get(j).unwrap(), "covariate")?));
        }
        rows.push(RawRow {
            time: F::real(time),
            status,
            covariates,
        });
    }
    let dataset = Dataset::from_rows(&rows).map_err(|e| match e {
        DataError::SingularDesign { column, .. } => DataError::SingularDesign {
            column,
            name: column_names.get(column).cloned(),
        },
        other => other,
    })?;
    Ok(LoadedCsv {
        dataset,
        column_names,
    })
}

/// Right-continuous step function with left-hand limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StepFunction<F: Scalar> {
    initial_value: F,
    jump_points: Vec<F>,
    values: Vec<F>,
}

impl<F: Scalar> StepFunction<F> {
    pub fn new(initial_value: F, jump_points: Vec<F>, values: Vec<F>) -> Result<Self, DataError> {
        if jump_points.len() != values.len() {
            return Err(DataError::Invalid(
                "jump point and value counts differ".into(),
            ));
        }
        if jump_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid(
                "jump points must be strictly increasing".into(),
            ));
        }
        Ok(StepFunction {
            initial_value,
            jump_points,
            values,
        })
    }

    pub fn constant(value: F) -> Self {
        StepFunction {
            initial_value: value,
            jump_points: vec![],
            values: vec![],
        }
    }

    /// Value at `t`, taking the right-hand value at a jump point.
    pub fn eval(&self, t: F) -> F {
        let k = self.jump_points.partition_point(|&jp| jp <= t);
        if k == 0 {
            self.initial_value
        } else {
            self.values[k - 1]
        }
    }

    pub fn initial_value(&self) -> F {
        self.initial_value
    }

    pub fn jump_points(&self) -> &[F] {
        &self.jump_points
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// Final value, i.e. the total mass for a distribution function.
    pub fn last_value(&self) -> F {
        self.values.last().copied().unwrap_or(self.initial_value)
    }

    /// Jump sizes paired with their locations.
    pub fn jumps(&self) -> Vec<(F, F)> {
        let mut prev = self.initial_value;
        self.jump_points
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| {
                let inc = v - prev;
                prev = v;
                (t, inc)
            })
            .collect()
    }
}

/// Continuous piecewise-linear function on `[knots[0], knots. last]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PiecewiseLinear<F: Scalar> {
    pub knots: Vec<F>,
    pub values: Vec<F>,
}

impl<F: Scalar> PiecewiseLinear<F> {
    pub fn eval(&self, t: F) -> F {
        let m = self.knots.len();
        if m == 0 {
            return F::zero();
        }
        if t <= self.knots[0] {
            return self.values[0];
        }
        if t >= self.knots[m - 1] {
            return self.values[m - 1];
        }
        let k = self.knots.partition_point(|&x| x <= t) - 1;
        let (x0, x1) = (self.knots[k], self.knots[k + 1]);
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        if x1 == x0 {
            return self.values[k + 1];
        }
        y0 + (y1 - y0) * (t - x0) / (x1 - x0)
    }
}

/// Uniqueness classification of a fitted segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentFlag {
    /// Unique vertex whose interpolated basis contains events only.
    UniqueUncensoredS,
    /// Unique vertex whose basis mixes events and censored subjects.
    UniqueMixedS,
    /// Degenerate dual with a feasible zero-cost direction.
    Nonunique,
}

impl SegmentFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentFlag::UniqueUncensoredS => "unique_uncensored",
            SegmentFlag::UniqueMixedS => "unique_mixed",
            SegmentFlag::Nonunique => "nonunique",
        }
    }
}

/// Per-segment record of the interpolated basis, split weights and dual
/// multipliers, as needed to replay the estimating-equation bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SegmentTrace<F: Scalar> {
    /// Interpolated basis (the p-member set), ascending by index.
    pub basis: Vec<usize>,
    /// Split weights at segment start, aligned with `basis`.
    pub w: Vec<F>,
    /// Dual multipliers for the uncensored basis members.
    pub gamma: Vec<(usize, F)>,
    /// Interpolated observations outside the basis with their side weights.
    pub extra_interpolated: Vec<(usize, F)>,
    /// Locally constant right-hand-side vector of the round.
    pub h_hat: Vec<F>,
    /// Relative breakpoint that ended the segment.
    pub lambda_b: F,
}

/// Piecewise-constant cadlag map from cumulative probability to the fitted
/// coefficient vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct QuantileProcess<F: Scalar> {
    breakpoints: Vec<F>,
    coefficients: Vec<Vec<F>>,
    tau_end: F,
    flags: Vec<SegmentFlag>,
    weight_trace: Vec<SegmentTrace<F>>,
    p: usize,
}

impl<F: Scalar> QuantileProcess<F> {
    /// Assemble a process from raw parts (no trace, segments flagged unique).
    pub fn from_parts(
        breakpoints: Vec<F>,
        coefficients: Vec<Vec<F>>,
        tau_end: F,
    ) -> Result<Self, DataError> {
        let flags = vec![SegmentFlag::UniqueUncensoredS; coefficients.len()];
        Self::assemble(breakpoints, coefficients, tau_end, flags, vec![])
    }

    pub(crate) fn assemble(
        breakpoints: Vec<F>,
        coefficients: Vec<Vec<F>>,
        tau_end: F,
        flags: Vec<SegmentFlag>,
        weight_trace: Vec<SegmentTrace<F>>,
    ) -> Result<Self, DataError> {
        if breakpoints.is_empty() || breakpoints.len() != coefficients.len() {
            return Err(DataError::Invalid(
                "breakpoints and coefficients must be non-empty and aligned".into(),
            ));
        }
        if flags.len() != coefficients.len() {
            return Err(DataError::Invalid("flags misaligned".into()));
        }
        if breakpoints[0] != F::zero() {
            return Err(DataError::Invalid("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        let last = *breakpoints.last().unwrap();
        if tau_end <= last || tau_end > F::one() {
            return Err(DataError::Invalid(
                "tau_end must exceed the last breakpoint and stay at most 1".into(),
            ));
        }
        let p = coefficients[0].len();
        if coefficients.iter().any(|c| c.len() != p) {
            return Err(DataError::Invalid("ragged coefficient vectors".into()));
        }
        Ok(QuantileProcess {
            breakpoints,
            coefficients,
            tau_end,
            flags,
            weight_trace,
            p,
        })
    }

    pub fn evaluate(&self, tau: F) -> Result<&[F], DataError> {
        Ok(&self.coefficients[self.segment_index(tau)?])
    }

    /// Index of the segment containing `tau`.
    pub fn segment_index(&self, tau: F) -> Result<usize, DataError> {
        if !(tau >= F::zero() && tau < self.tau_end) {
            return Err(DataError::TauOutOfRange {
                tau: tau.as_f64(),
                tau_end: self.tau_end.as_f64(),
            });
        }
        Ok(self.breakpoints.partition_point(|&bp| bp <= tau) - 1)
    }

    pub fn breakpoints(&self) -> &[F] {
        &self.breakpoints
    }

    pub fn coefficients(&self) -> &[Vec<F>] {
        &self.coefficients
    }

    pub fn tau_end(&self) -> F {
        self.tau_end
    }

    pub fn flags(&self) -> &[SegmentFlag] {
        &self.flags
    }

    pub fn weight_trace(&self) -> &[SegmentTrace<F>] {
        &self.weight_trace
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn segment_count(&self) -> usize {
        self.coefficients.len()
    }

    /// Start and end probability of segment `k`.
    pub fn segment_bounds(&self, k: usize) -> (F, F) {
        let start = self.breakpoints[k];
        let end = if k + 1 < self.breakpoints.len() {
            self.breakpoints[k + 1]
        } else {
            self.tau_end
        };
        (start, end)
    }

    /// Largest probability below which every fitted segment is unique;
    /// equals `tau_end` when no segment is flagged nonunique.
    pub fn tau_unique(&self) -> F {
        for (k, flag) in self.flags.iter().enumerate() {
            if *flag == SegmentFlag::Nonunique {
                return self.breakpoints[k];
            }
        }
        self.tau_end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(time: f64, status: u8, covs: &[f64]) -> RawRow<f64> {
        RawRow {
            time,
            status,
            covariates: covs.to_vec(),
        }
    }

    #[test]
    fn from_rows_intercept_only() {
        let ds = Dataset::from_rows(&[raw(1.0, 1, &[]), raw(2.0, 1, &[])]).unwrap();
        assert_eq!(ds.p(), 1);
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.z(0), &[1.0]);
        assert_eq!(ds.z(1), &[1.0]);
    }

    #[test]
    fn from_rows_direct_mapping() {
        let ds =
            Dataset::from_rows(&[raw(1.0, 1, &[0.5]), raw(2.0, 0, &[0.7]), raw(3.0, 1, &[0.7])])
                .unwrap();
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.n(), 3);
        assert_eq!(
            ds.iter().map(|o| o.delta).collect::<Vec<_>>(),
            vec![true, false, true]
        );
        assert_eq!(ds.z(1), &[1.0, 0.7]);
    }

    #[test]
    fn from_rows_constant_covariate_is_singular() {
        let err = Dataset::from_rows(&[raw(1.0, 1, &[3.0]), raw(2.0, 1, &[3.0])]).unwrap_err();
        match err {
            DataError::SingularDesign { column, .. } => assert_eq!(column, 1),
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_and_names() {
        let data = "time,status,age\n1.0,1,0.5\n2.0,0,0.7\n3.0,1,0.9\n";
        let loaded = read_csv::<f64, _>(data.as_bytes()).unwrap();
        assert_eq!(loaded.dataset.n(), 3);
        assert_eq!(loaded.column_names, vec!["(intercept)", "age"]);
    }

    #[test]
    fn csv_rejects_bad_status() {
        let data = "time,status\n1.0,2\n";
        assert!(matches!(
            read_csv::<f64, _>(data.as_bytes()),
            Err(DataError::MalformedRow { .. })
        ));
    }

    #[test]
    fn csv_names_singular_column() {
        let data = "time,status,flat\n1.0,1,3.0\n2.0,1,3.0\n";
        match read_csv::<f64, _>(data.as_bytes()) {
            Err(DataError::SingularDesign { name, .. }) => {
                assert_eq!(name.as_deref(), Some("flat"));
            }
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    fn toy_process() -> QuantileProcess<f64> {
        QuantileProcess::from_parts(
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0],
            vec![vec![1.0], vec![2.0], vec![3.0]],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_takes_right_value_at_breakpoint() {
        let p = toy_process();
        assert_eq!(p.evaluate(1.0 / 3.0).unwrap(), &[2.0]);
    }

    #[test]
    fn evaluate_interior() {
        let p = toy_process();
        assert_eq!(p.evaluate(0.2).unwrap(), &[1.0]);
    }

    #[test]
    fn evaluate_out_of_range() {
        let p = QuantileProcess::from_parts(
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0],
            vec![vec![1.0], vec![2.0], vec![3.0]],
            0.95,
        )
        .unwrap();
        assert!(matches!(
            p.evaluate(0.99),
            Err(DataError::TauOutOfRange { .. })
        ));
        assert!(matches!(
            p.evaluate(-0.1),
            Err(DataError::TauOutOfRange { .. })
        ));
    }

    #[test]
    fn step_function_right_continuous() {
        let f = StepFunction::new(0.0, vec![1.0, 2.0], vec![0.5, 1.0]).unwrap();
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(1.0), 0.5);
        assert_eq!(f.eval(1.5), 0.5);
        assert_eq!(f.eval(2.0), 1.0);
        assert_eq!(f.jumps(), vec![(1.0, 0.5), (2.0, 0.5)]);
    }

    #[test]
    fn piecewise_linear_eval() {
        let f: PiecewiseLinear<f64> = PiecewiseLinear {
            knots: vec![0.0, 1.0, 2.0],
            values: vec![0.0, 1.0, 1.0],
        };
        assert!((f.eval(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(f.eval(1.5), 1.0);
        assert_eq!(f.eval(5.0), 1.0);
    }
}
