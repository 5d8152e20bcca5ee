//! Experiment drivers: success-rate sweeps over the (alpha, rho) plane,
//! shared-instance convergence comparisons, and the CSV emission both feed.
//!
//! Every cell and trial is seeded through the keyed counter generator, so
//! results are independent of evaluation order and bit-reproducible for a
//! given base seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gen::{make_instance, GenSpec, KeyedRng, MatrixKind};
use crate::model::{mse_per_entry, SolverConfig, SolverVariant};
use crate::phase::ThresholdPoint;
use crate::solvers::run;
use crate::{Error, Result};

/// Success-rate sweep over a grid of (alpha, rho) cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGridSpec {
    pub n: usize,
    /// Measurement ratios, each strictly inside (0, 1).
    pub alpha_grid: Vec<f64>,
    /// Densities in [0, 1); rho = 0 cells run the zero-signal problem.
    pub rho_grid: Vec<f64>,
    pub trials: usize,
    pub solver: SolverConfig,
    pub matrix: MatrixKind,
    pub base_seed: u64,
}

impl PhaseGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig {
                what: "n must be at least 1".into(),
            });
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig {
                what: "trials must be at least 1".into(),
            });
        }
        if self.alpha_grid.is_empty() || self.rho_grid.is_empty() {
            return Err(Error::InvalidConfig {
                what: "alpha and rho grids must be nonempty".into(),
            });
        }
        for &a in &self.alpha_grid {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidConfig {
                    what: format!("alpha grid values must lie in (0, 1), got {a}"),
                });
            }
        }
        for &r in &self.rho_grid {
            if !(r >= 0.0 && r < 1.0) {
                return Err(Error::InvalidConfig {
                    what: format!("rho grid values must lie in [0, 1), got {r}"),
                });
            }
        }
        self.solver.validate()
    }
}

/// Aggregated outcome of one (alpha, rho) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseCell {
    pub alpha: f64,
    pub rho: f64,
    /// Realized measurement count round(alpha * n).
    pub m: usize,
    /// Realized nonzero count round(rho * n).
    pub k: usize,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub mean_steps: f64,
}

/// Inclusive arithmetic grid; the end point is kept when the step lands on
/// it up to roundoff.
pub fn grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !(step > 0.0) || min > max {
        return out;
    }
    let mut i = 0usize;
    loop {
        let v = min + step * i as f64;
        if v > max + step * 1e-9 {
            break;
        }
        out.push(v.min(max));
        i += 1;
    }
    out
}

fn cell_seed(base_seed: u64, m: usize, k: usize, trial: usize) -> u64 {
    let packed = ((m as u64) << 32) | (k as u64 & 0xffff_ffff);
    KeyedRng::new(base_seed, "cell").word(packed, trial as u64)
}

/// Runs the full grid. Cells are independent and evaluated in parallel;
/// within a cell, run failures (divergence, guard trips) count as
/// non-successes rather than aborting the sweep.
pub fn phase_sweep(spec: &PhaseGridSpec) -> Result<Vec<PhaseCell>> {
    spec.validate()?;
    let cells: Vec<(f64, f64)> = spec
        .alpha_grid
        .iter()
        .flat_map(|&a| spec.rho_grid.iter().map(move |&r| (a, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(alpha, rho)| run_cell(spec, alpha, rho))
        .collect()
}

fn run_cell(spec: &PhaseGridSpec, alpha: f64, rho: f64) -> Result<PhaseCell> {
    let n = spec.n;
    let m = ((alpha * n as f64).round() as usize).max(1);
    let k = (rho * n as f64).round() as usize;
    let mut successes = 0;
    let mut total_steps = 0usize;
    for trial in 0..spec.trials {
        let gen_spec = GenSpec {
            n,
            m,
            k_nonzeros: k,
            matrix_kind: spec.matrix,
            seed: cell_seed(spec.base_seed, m, k, trial),
        };
        let instance = make_instance(&gen_spec)?;
        match run(&instance, &spec.solver) {
            Ok(r) => {
                if r.success {
                    successes += 1;
                }
                total_steps += r.steps_taken;
            }
            Err(_) => {
                // A run that cannot even step is a failed trial; the step
                // budget is charged in full so mean_steps stays comparable.
                total_steps += spec.solver.max_steps;
            }
        }
    }
    Ok(PhaseCell {
        alpha,
        rho,
        m,
        k,
        trials: spec.trials,
        successes,
        rate: successes as f64 / spec.trials as f64,
        mean_steps: total_steps as f64 / spec.trials as f64,
    })
}

/// Convergence-speed comparison: every listed variant runs on the same
/// seeded instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub n: usize,
    pub m: usize,
    pub k_nonzeros: usize,
    pub trials: usize,
    pub variants: Vec<SolverVariant>,
    /// Threshold schedule shared by all variants; the comparison protocol
    /// uses decay 0.95.
    pub anneal: crate::model::AnnealSchedule,
    pub max_steps: usize,
    pub matrix: MatrixKind,
    pub base_seed: u64,
}

impl ConvergenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig {
                what: "trials must be at least 1".into(),
            });
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig {
                what: "variant list must be nonempty".into(),
            });
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig {
                what: "max_steps must be at least 1".into(),
            });
        }
        let gen_spec = GenSpec {
            n: self.n,
            m: self.m,
            k_nonzeros: self.k_nonzeros,
            matrix_kind: self.matrix,
            seed: 0,
        };
        gen_spec.validate().map_err(|e| Error::InvalidConfig {
            what: e.to_string(),
        })?;
        self.anneal.validate()
    }

    fn solver_config(&self, variant: SolverVariant) -> SolverConfig {
        let mut config = SolverConfig::new(variant);
        config.anneal = self.anneal;
        config.max_steps = self.max_steps;
        config
    }
}

/// Per-variant MSE traces, aligned to `max_steps` entries per trial.
/// Early-stopped runs are padded with their final value so pointwise means
/// stay defined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverTrace {
    pub variant: SolverVariant,
    pub mean_mse: Vec<f64>,
    pub per_trial_mse: Vec<Vec<f64>>,
}

impl SolverTrace {
    /// First step (1-based) at which the mean trace is at or below the
    /// threshold.
    pub fn mean_crossing(&self, threshold: f64) -> Option<usize> {
        self.mean_mse
            .iter()
            .position(|&v| v <= threshold)
            .map(|i| i + 1)
    }

    /// First crossing step per trial.
    pub fn trial_crossings(&self, threshold: f64) -> Vec<Option<usize>> {
        self.per_trial_mse
            .iter()
            .map(|t| t.iter().position(|&v| v <= threshold).map(|i| i + 1))
            .collect()
    }

    /// Median over per-trial first crossings, with trials that never cross
    /// treated as unbounded. None when the median itself is unbounded.
    pub fn median_crossing(&self, threshold: f64) -> Option<f64> {
        let mut steps: Vec<f64> = self
            .trial_crossings(threshold)
            .into_iter()
            .map(|c| c.map_or(f64::INFINITY, |s| s as f64))
            .collect();
        steps.sort_by(|a, b| a.partial_cmp(b).expect("no NaN steps"));
        let mid = steps.len() / 2;
        let median = if steps.len() % 2 == 1 {
            steps[mid]
        } else {
            0.5 * (steps[mid - 1] + steps[mid])
        };
        median.is_finite().then_some(median)
    }
}

fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    KeyedRng::new(base_seed, "trial").word(trial as u64, 0)
}

/// Runs every variant over the shared instance set and returns one trace
/// per variant, in the order listed.
pub fn convergence_compare(spec: &ConvergenceSpec) -> Result<Vec<SolverTrace>> {
    spec.validate()?;
    let instances: Vec<_> = (0..spec.trials)
        .map(|t| {
            make_instance(&GenSpec {
                n: spec.n,
                m: spec.m,
                k_nonzeros: spec.k_nonzeros,
                matrix_kind: spec.matrix,
                seed: trial_seed(spec.base_seed, t),
            })
        })
        .collect::<Result<_>>()?;

    spec.variants
        .iter()
        .map(|&variant| {
            let config = spec.solver_config(variant);
            let per_trial_mse: Vec<Vec<f64>> = instances
                .par_iter()
                .map(|instance| {
                    let initial =
                        mse_per_entry(&vec![0.0; instance.n()], instance.truth.values())
                            .expect("matching lengths");
                    let trace = match run(instance, &config) {
                        Ok(r) => r.mse_trace,
                        Err(_) => Vec::new(),
                    };
                    let pad = trace.last().copied().unwrap_or(initial);
                    let mut t = trace;
                    t.resize(spec.max_steps, pad);
                    t
                })
                .collect();
            let mut mean_mse = vec![0.0; spec.max_steps];
            for trace in &per_trial_mse {
                for (acc, v) in mean_mse.iter_mut().zip(trace) {
                    *acc += v;
                }
            }
            for v in &mut mean_mse {
                *v /= spec.trials as f64;
            }
            Ok(SolverTrace {
                variant,
                mean_mse,
                per_trial_mse,
            })
        })
        .collect()
}

/// 12-significant-digit float formatting shared by all CSV output.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.11e}")
}

/// Phase-diagram CSV. The success threshold defines the diagram, so it is
/// echoed as a comment line above the header.
pub fn phase_csv(cells: &[PhaseCell], mse_success_threshold: f64) -> String {
    let mut out = format!(
        "# mse_success_threshold={}\nalpha,rho,m,k,trials,successes,rate,mean_steps\n",
        fmt_float(mse_success_threshold)
    );
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_float(c.alpha),
            fmt_float(c.rho),
            c.m,
            c.k,
            c.trials,
            c.successes,
            fmt_float(c.rate),
            fmt_float(c.mean_steps)
        ));
    }
    out
}

/// One `mse_<variant>` column per trace (kebab-case names flattened to
/// underscores); repeated variants get a numeric suffix to keep headers
/// unique.
pub fn convergence_csv(traces: &[SolverTrace]) -> String {
    let mut names = Vec::new();
    for t in traces {
        let base = format!("mse_{}", t.variant.to_string().replace('-', "_"));
        let dup = names
            .iter()
            .filter(|n: &&String| **n == base || n.starts_with(&format!("{base}_")))
            .count();
        names.push(if dup == 0 {
            base
        } else {
            format!("{base}_{}", dup + 1)
        });
    }
    let mut out = String::from("step");
    for name in &names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let steps = traces.iter().map(|t| t.mean_mse.len()).max().unwrap_or(0);
    for s in 0..steps {
        out.push_str(&(s + 1).to_string());
        for t in traces {
            out.push(',');
            out.push_str(&fmt_float(t.mean_mse[s.min(t.mean_mse.len() - 1)]));
        }
        out.push('\n');
    }
    out
}

pub fn threshold_csv(points: &[ThresholdPoint]) -> String {
    let mut out = String::from("alpha,rho_c,z_star\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_float(p.alpha),
            fmt_float(p.rho_c),
            fmt_float(p.z_star)
        ));
    }
    out
}

/// Fast subset of the invariant suite, suitable for a smoke check on a new
/// build. Returns (check name, passed) pairs.
pub fn selftest() -> Vec<(&'static str, bool)> {
    use crate::model::{SensingMatrix, SolverVariant, SparseSignal};
    use crate::oracle::{l1_min_enum, l1_min_lp};
    use crate::phase::{amp_threshold_rho, gauss_upper_tail, replica_threshold_alpha};
    use crate::shrinkage::{soft_threshold, soft_threshold_deriv};

    let mut checks: Vec<(&'static str, bool)> = Vec::new();

    let rng = KeyedRng::new(17, "selftest");
    let mut shrink_ok = true;
    for i in 0..1000u64 {
        let u = 8.0 * rng.gauss(i, 0);
        let k = rng.unit(i, 2);
        let s = soft_threshold(u, k).unwrap();
        let odd = soft_threshold(-u, k).unwrap();
        shrink_ok &= odd == -s;
        shrink_ok &= s.abs() <= u.abs() + 1e-9;
        shrink_ok &= s == u.signum() * (u.abs() - k).max(0.0);
        let g = rng.unit(i, 3);
        let lhs = soft_threshold(u, k * (1.0 + g)).unwrap() / (1.0 + g);
        let rhs = soft_threshold(u / (1.0 + g), k).unwrap();
        shrink_ok &= (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0);
        shrink_ok &= (s == 0.0) == (soft_threshold_deriv(u, k).unwrap() == 0.0);
    }
    checks.push(("shrinkage identities (1000 cases)", shrink_ok));

    let h_ok = gauss_upper_tail(0.0) == 0.5
        && (gauss_upper_tail(1.3) + gauss_upper_tail(-1.3) - 1.0).abs() < 1e-14
        && gauss_upper_tail(2.0) < gauss_upper_tail(1.0);
    checks.push(("gaussian tail identities", h_ok));

    let amp = amp_threshold_rho(0.5);
    checks.push((
        "amp threshold reference at alpha = 0.5",
        amp.as_ref()
            .map(|p| (p.rho_c - 0.19284483309074035).abs() < 1e-9)
            .unwrap_or(false),
    ));

    let equivalence_ok = match (&amp, replica_threshold_alpha(0.1)) {
        (Ok(_), Ok(rep)) => amp_threshold_rho(rep.alpha)
            .map(|p| (p.rho_c - 0.1).abs() < 1e-6)
            .unwrap_or(false),
        _ => false,
    };
    checks.push(("threshold characterizations agree at rho = 0.1", equivalence_ok));

    let spec = GenSpec {
        n: 12,
        m: 6,
        k_nonzeros: 2,
        matrix_kind: MatrixKind::DenseGauss,
        seed: 7,
    };
    let det_ok = match (make_instance(&spec), make_instance(&spec)) {
        (Ok(a), Ok(b)) => a.to_json().ok() == b.to_json().ok() && a.to_json().is_ok(),
        _ => false,
    };
    checks.push(("instance generation determinism", det_ok));

    let oracle_ok = make_instance(&spec)
        .ok()
        .and_then(|inst| {
            let lp = l1_min_lp(&inst).ok()?;
            let en = l1_min_enum(&inst).ok()?;
            Some((lp.objective - en.objective).abs() <= 1e-9)
        })
        .unwrap_or(false);
    checks.push(("lp and enumeration oracles agree", oracle_ok));

    let solver_ok = (|| {
        let mut e = vec![0.0; 36];
        for i in 0..6 {
            e[i * 6 + i] = 1.0;
        }
        let f = SensingMatrix::from_rows(6, 6, e).ok()?;
        let mut x = vec![0.0; 6];
        x[2] = 1.2;
        let y = x.clone();
        let inst =
            crate::model::ProblemInstance::new(f, SparseSignal::from_dense(x), y, 0).ok()?;
        let mut config = SolverConfig::new(SolverVariant::Amp);
        config.anneal.decay = 0.5;
        config.max_steps = 300;
        Some(run(&inst, &config).ok()?.success)
    })()
    .unwrap_or(false);
    checks.push(("identity-matrix reconstruction", solver_ok));

    let sweep_spec = PhaseGridSpec {
        n: 30,
        alpha_grid: vec![0.5],
        rho_grid: vec![0.0],
        trials: 3,
        solver: {
            let mut c = SolverConfig::new(SolverVariant::PartialConstant { gamma: 1.0 });
            c.anneal.decay = 0.9;
            c.max_steps = 100;
            c
        },
        matrix: MatrixKind::DenseGauss,
        base_seed: 5,
    };
    let sweep_ok = match (phase_sweep(&sweep_spec), phase_sweep(&sweep_spec)) {
        (Ok(a), Ok(b)) => {
            a == b && a.len() == 1 && a[0].rate == 1.0 && phase_csv(&a, 1e-3) == phase_csv(&b, 1e-3)
        }
        _ => false,
    };
    checks.push(("zero-density sweep deterministic and trivially successful", sweep_ok));

    checks
}
