//! Problem data and solver plumbing: the sensing matrix, the sparse ground
//! truth, observations, annealing schedules, and per-run results.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major M x N measurement matrix with cached column energies.
///
/// Dense storage is kept even for mostly-zero ensembles so that every solver
/// shares one O(MN) code path.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    m: usize,
    n: usize,
    entries: Vec<f64>,
    col_norms_sq: Vec<f64>,
}

impl SensingMatrix {
    /// Builds a matrix from `m * n` row-major entries. All entries must be
    /// finite.
    pub fn from_rows(m: usize, n: usize, entries: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyDimension { what: "row count" });
        }
        if n == 0 {
            return Err(Error::EmptyDimension { what: "column count" });
        }
        if entries.len() != m * n {
            return Err(Error::DimensionMismatch {
                rows: m,
                cols: n,
                got: entries.len(),
            });
        }
        if let Some(pos) = entries.iter().position(|e| !e.is_finite()) {
            return Err(Error::InvalidConfig {
                what: format!("matrix entry {pos} is not finite"),
            });
        }
        let mut col_norms_sq = vec![0.0; n];
        for row in entries.chunks_exact(n) {
            for (c, e) in col_norms_sq.iter_mut().zip(row) {
                *c += e * e;
            }
        }
        Ok(Self {
            m,
            n,
            entries,
            col_norms_sq,
        })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    /// Undersampling ratio alpha = M/N.
    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn entry(&self, mu: usize, i: usize) -> f64 {
        self.entries[mu * self.n + i]
    }

    pub fn row(&self, mu: usize) -> &[f64] {
        &self.entries[mu * self.n..(mu + 1) * self.n]
    }

    /// Row-major flat view of all entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Cached per-column squared norms, fixed at construction.
    pub fn col_norms_sq(&self) -> &[f64] {
        &self.col_norms_sq
    }

    /// y = F x
    pub fn mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self
            .entries
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(f, xi)| f * xi).sum())
            .collect())
    }

    /// w = F^T z
    pub fn mul_t(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.m {
            return Err(Error::LengthMismatch {
                expected: self.m,
                got: z.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        for (row, zmu) in self.entries.chunks_exact(self.n).zip(z) {
            for (o, f) in out.iter_mut().zip(row) {
                *o += f * zmu;
            }
        }
        Ok(out)
    }
}

/// Ground-truth signal stored dense, with the nonzero support cached.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    values: Vec<f64>,
    support: Vec<usize>,
}

impl SparseSignal {
    /// Wraps a dense vector; the support is exactly the set of entries that
    /// compare unequal to zero.
    pub fn from_dense(values: Vec<f64>) -> Self {
        let support = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        Self { values, support }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Indices of nonzero entries, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn nnz(&self) -> usize {
        self.support.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One reconstruction problem: matrix, ground truth, exact observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub matrix: SensingMatrix,
    pub truth: SparseSignal,
    pub y: Vec<f64>,
    pub seed: u64,
    /// Free-form experiment bookkeeping; not serialized.
    pub tags: BTreeMap<String, String>,
}

/// Observations must reproduce F x0 to this absolute tolerance per entry.
pub const OBSERVATION_TOL: f64 = 1e-10;

impl ProblemInstance {
    /// Validates shapes and that `y` equals `F x0` entrywise before packaging.
    pub fn new(
        matrix: SensingMatrix,
        truth: SparseSignal,
        y: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if truth.len() != matrix.cols() {
            return Err(Error::LengthMismatch {
                expected: matrix.cols(),
                got: truth.len(),
            });
        }
        if y.len() != matrix.rows() {
            return Err(Error::LengthMismatch {
                expected: matrix.rows(),
                got: y.len(),
            });
        }
        let fx = matrix.mul(truth.values())?;
        let mut worst = (0usize, 0.0f64);
        for (mu, (a, b)) in y.iter().zip(&fx).enumerate() {
            let dev = (a - b).abs();
            if !(dev <= worst.1) {
                worst = (mu, dev);
            }
        }
        if !(worst.1 < OBSERVATION_TOL) {
            return Err(Error::ObservationMismatch {
                index: worst.0,
                max_dev: worst.1,
            });
        }
        Ok(Self {
            matrix,
            truth,
            y,
            seed,
            tags: BTreeMap::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.cols()
    }

    pub fn m(&self) -> usize {
        self.matrix.rows()
    }

    /// Compact JSON with the ground truth stored as sparse [index, value]
    /// pairs. Finite doubles survive a round trip bit for bit.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&InstanceWire::from(self))?)
    }

    /// Like [`Self::to_json`] but indented for human inspection.
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceWire::from(self))?)
    }

    /// Parses and fully revalidates an instance, including the observation
    /// consistency check.
    pub fn from_json(text: &str) -> Result<Self> {
        let wire: InstanceWire = serde_json::from_str(text)?;
        let matrix = SensingMatrix::from_rows(wire.m, wire.n, wire.matrix)?;
        let mut dense = vec![0.0; wire.n];
        for &(i, v) in &wire.x0 {
            if i >= wire.n {
                return Err(Error::InvalidConfig {
                    what: format!("x0 index {i} out of range for n = {}", wire.n),
                });
            }
            if dense[i] != 0.0 {
                return Err(Error::InvalidConfig {
                    what: format!("x0 index {i} appears twice"),
                });
            }
            dense[i] = v;
        }
        ProblemInstance::new(matrix, SparseSignal::from_dense(dense), wire.y, wire.seed)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceWire {
    m: usize,
    n: usize,
    seed: u64,
    matrix: Vec<f64>,
    x0: Vec<(usize, f64)>,
    y: Vec<f64>,
}

impl From<&ProblemInstance> for InstanceWire {
    fn from(p: &ProblemInstance) -> Self {
        Self {
            m: p.m(),
            n: p.n(),
            seed: p.seed,
            matrix: p.matrix.entries().to_vec(),
            x0: p
                .truth
                .support()
                .iter()
                .map(|&i| (i, p.truth.values()[i]))
                .collect(),
            y: p.y.clone(),
        }
    }
}

/// Which update rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverVariant {
    /// Plain thresholded least-squares refitting.
    Naive,
    /// Convex blend of the previous iterate and the naive update with a
    /// fixed weight gamma >= 0.
    PartialConstant { gamma: f64 },
    /// Blend weight recomputed each step from the active-set fraction; the
    /// residual is rescaled by 1/(1 + gamma).
    PartialStepDependent,
    /// Same step-dependent gamma applied with the opposite sign: residual
    /// rescaled by 1/(1 - gamma). Can genuinely diverge; guarded.
    AmpExternal,
    /// Onsager-corrected residual recursion (approximate message passing).
    Amp,
}

impl fmt::Display for SolverVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SolverVariant::Naive => "naive",
            SolverVariant::PartialConstant { .. } => "partial-constant",
            SolverVariant::PartialStepDependent => "partial-step-dependent",
            SolverVariant::AmpExternal => "amp-external",
            SolverVariant::Amp => "amp",
        };
        f.write_str(name)
    }
}

/// Starting value for the annealed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdInit {
    /// max_i |(F^T y)_i|: the initial dead zone swallows every coordinate,
    /// making the first step well defined regardless of problem scaling.
    Auto,
    Fixed(f64),
}

/// Exponential decay of the threshold toward a floor:
/// k(t) = max(k0 * decay^t, k_floor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub k0: ThresholdInit,
    pub decay: f64,
    pub k_floor: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            k0: ThresholdInit::Auto,
            decay: 0.999,
            k_floor: 1e-9,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        // decay = 1 is allowed as a diagnostic no-anneal mode.
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig {
                what: format!("decay must lie in (0, 1], got {}", self.decay),
            });
        }
        if !(self.k_floor >= 0.0 && self.k_floor.is_finite()) {
            return Err(Error::InvalidConfig {
                what: format!("k_floor must be a finite nonnegative value, got {}", self.k_floor),
            });
        }
        if let ThresholdInit::Fixed(k0) = self.k0 {
            if !(k0 > 0.0 && k0.is_finite()) {
                return Err(Error::InvalidConfig {
                    what: format!("fixed k0 must be a finite positive value, got {k0}"),
                });
            }
        }
        Ok(())
    }

    /// Resolves the starting threshold against a concrete instance.
    pub fn resolve_k0(&self, instance: &ProblemInstance) -> Result<f64> {
        match self.k0 {
            ThresholdInit::Fixed(k0) => Ok(k0),
            ThresholdInit::Auto => {
                let w = instance.matrix.mul_t(&instance.y)?;
                Ok(w.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
            }
        }
    }

    /// Closed-form threshold after `t` decay applications.
    pub fn k_at(&self, k0: f64, t: usize) -> f64 {
        (k0 * self.decay.powi(t as i32)).max(self.k_floor)
    }
}

/// Everything a single run needs besides the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: SolverVariant,
    pub anneal: AnnealSchedule,
    pub max_steps: usize,
    /// Per-entry MSE below which the final iterate counts as a successful
    /// reconstruction.
    pub mse_success_threshold: f64,
    /// Once the threshold sits at its floor, stop when consecutive iterates
    /// differ by less than this in the max norm.
    pub fixed_point_tol: f64,
}

impl SolverConfig {
    pub fn new(variant: SolverVariant) -> Self {
        Self {
            variant,
            anneal: AnnealSchedule::default(),
            max_steps: 2000,
            mse_success_threshold: 1e-3,
            fixed_point_tol: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.anneal.validate()?;
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig {
                what: "max_steps must be at least 1".into(),
            });
        }
        if !(self.mse_success_threshold > 0.0) {
            return Err(Error::InvalidConfig {
                what: format!(
                    "mse_success_threshold must be positive, got {}",
                    self.mse_success_threshold
                ),
            });
        }
        if !(self.fixed_point_tol >= 0.0) {
            return Err(Error::InvalidConfig {
                what: format!("fixed_point_tol must be nonnegative, got {}", self.fixed_point_tol),
            });
        }
        if let SolverVariant::PartialConstant { gamma } = self.variant {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::NegativeGamma { gamma });
            }
        }
        Ok(())
    }
}

/// Mutable state threaded through a run. Single-owner; distinct runs may
/// share a read-only instance.
#[derive(Debug, Clone)]
pub struct IterateState {
    /// Current iterate x^(t).
    pub x: Vec<f64>,
    /// One-step history x^(t-1), kept for the Onsager term's lag.
    pub x_prev: Vec<f64>,
    /// Residual y - F x for the x stored above.
    pub z: Vec<f64>,
    /// Rescaled residual from the latest step (equals z for the naive rule).
    pub z_hat: Vec<f64>,
    /// One-step history of z_hat.
    pub z_hat_prev: Vec<f64>,
    /// Threshold the next step will use.
    pub k_current: f64,
    /// Number of completed steps.
    pub step: usize,
}

impl IterateState {
    /// Cold start: x = 0, so the residual is exactly y; rescaled residual
    /// history starts at zero.
    pub fn initial(instance: &ProblemInstance, k0: f64) -> Self {
        let n = instance.n();
        let m = instance.m();
        Self {
            x: vec![0.0; n],
            x_prev: vec![0.0; n],
            z: instance.y.clone(),
            z_hat: vec![0.0; m],
            z_hat_prev: vec![0.0; m],
            k_current: k0,
            step: 0,
        }
    }
}

/// Outcome of one full annealed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: SolverVariant,
    pub seed: u64,
    pub x_final: Vec<f64>,
    /// Per-entry MSE against the ground truth after each step.
    pub mse_trace: Vec<f64>,
    /// Threshold value after each step's decay.
    pub k_trace: Vec<f64>,
    /// Per-step gamma for variants that use one; empty otherwise.
    pub gamma_trace: Vec<f64>,
    pub steps_taken: usize,
    /// True iff the final MSE is below the configured success threshold.
    pub success: bool,
    pub residual_norm_final: f64,
    /// Coordinates skipped across the run because their column carried no
    /// energy.
    pub degenerate_updates: usize,
    /// Present when the run aborted (divergence or a step error).
    pub failure: Option<String>,
}

impl RunResult {
    /// Summary JSON without the full solution vector.
    pub fn to_summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Wire<'a> {
            variant: String,
            seed: u64,
            steps: usize,
            success: bool,
            mse_trace: &'a [f64],
            k_trace: &'a [f64],
            gamma_trace: &'a [f64],
            residual_norm_final: f64,
        }
        Ok(serde_json::to_string(&Wire {
            variant: self.variant.to_string(),
            seed: self.seed,
            steps: self.steps_taken,
            success: self.success,
            mse_trace: &self.mse_trace,
            k_trace: &self.k_trace,
            gamma_trace: &self.gamma_trace,
            residual_norm_final: self.residual_norm_final,
        })?)
    }
}

/// Mean squared difference per entry: (1/N) sum_i (a_i - b_i)^2.
pub fn mse_per_entry(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyDimension { what: "vector length" });
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Constraint violation z = y - F x.
pub fn residual(instance: &ProblemInstance, x: &[f64]) -> Result<Vec<f64>> {
    let fx = instance.matrix.mul(x)?;
    Ok(instance.y.iter().zip(&fx).map(|(y, f)| y - f).collect())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn linf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}
