//! Iterative thresholding solvers behind a single step-function interface,
//! plus the annealed driver that runs them to completion.
//!
//! Every step consumes the state produced by the previous step and returns
//! fresh vectors; it never mutates its inputs. All variants share the same
//! general-matrix normalization: the threshold argument for coordinate i is
//! (F^T r)_i / c_i + x_i with c_i the column's squared norm, which reduces to
//! the classical unit-column form when c_i = 1.

use crate::model::{
    linf_diff, l2_norm, mse_per_entry, residual, IterateState, ProblemInstance, RunResult,
    SolverConfig, SolverVariant,
};
use crate::shrinkage::{soft, soft_deriv};
use crate::{Error, Result};

/// Columns with squared norm below this carry no usable signal; their
/// coordinates are held at zero and counted as degenerate.
pub const DEGENERATE_COL_ENERGY: f64 = 1e-12;

/// Residual rescale denominators smaller than this abort the step.
pub const RESCALE_GUARD: f64 = 1e-9;

/// A per-entry MSE beyond this aborts the run as divergent.
pub const DIVERGENCE_MSE: f64 = 1e6;

/// Vectors produced by one solver step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x_new: Vec<f64>,
    /// Plain residual y - F x at the incoming iterate.
    pub z_new: Vec<f64>,
    /// Rescaled (or Onsager-corrected) residual; equals `z_new` for rules
    /// that do not rescale.
    pub z_hat_new: Vec<f64>,
    /// The blend/rescale weight this step used, when the rule has one.
    pub gamma_used: Option<f64>,
    /// Coordinates skipped because their column is degenerate.
    pub degenerate_cols: usize,
}

fn check_k(k: f64) -> Result<()> {
    if k >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeThreshold { k })
    }
}

/// Per-coordinate least-squares refit followed by thresholding:
/// x_new[i] = eta((F^T z)_i + c_i x_i; k) / c_i.
pub fn step_naive(state: &IterateState, instance: &ProblemInstance, k: f64) -> Result<StepOutcome> {
    check_k(k)?;
    let z = residual(instance, &state.x)?;
    let w = instance.matrix.mul_t(&z)?;
    let cols = instance.matrix.col_norms_sq();
    let mut degenerate_cols = 0;
    let mut x_new = vec![0.0; state.x.len()];
    for (i, (&c, xi)) in cols.iter().zip(&state.x).enumerate() {
        if c < DEGENERATE_COL_ENERGY {
            degenerate_cols += 1;
            continue;
        }
        x_new[i] = soft(w[i] + c * xi, k) / c;
    }
    Ok(StepOutcome {
        x_new,
        z_hat_new: z.clone(),
        z_new: z,
        gamma_used: None,
        degenerate_cols,
    })
}

/// Convex blend of the previous iterate and the naive update:
/// x_new = (gamma x_old + naive(x_old)) / (1 + gamma). A fixed point of the
/// naive rule is a fixed point of this rule for every gamma.
pub fn step_partial_constant(
    state: &IterateState,
    instance: &ProblemInstance,
    k: f64,
    gamma: f64,
) -> Result<StepOutcome> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::NegativeGamma { gamma });
    }
    let base = step_naive(state, instance, k)?;
    let cols = instance.matrix.col_norms_sq();
    let x_new = base
        .x_new
        .iter()
        .zip(&state.x)
        .zip(cols)
        .map(|((nv, xi), c)| {
            if *c < DEGENERATE_COL_ENERGY {
                0.0
            } else {
                (gamma * xi + nv) / (1.0 + gamma)
            }
        })
        .collect();
    Ok(StepOutcome {
        x_new,
        gamma_used: Some(gamma),
        ..base
    })
}

/// Active-set fraction of the current state:
/// gamma = (1/M) sum_i eta'((F^T z)_i / c_i + x_i; k).
///
/// Reads `state.z`, so the caller must have refreshed it for the current x.
/// Degenerate columns are excluded from the sum.
pub fn gamma_step_dependent(
    state: &IterateState,
    instance: &ProblemInstance,
    k: f64,
) -> Result<f64> {
    check_k(k)?;
    let w = instance.matrix.mul_t(&state.z)?;
    Ok(active_fraction(&w, &state.x, instance, k))
}

fn active_fraction(w: &[f64], x: &[f64], instance: &ProblemInstance, k: f64) -> f64 {
    let mut s = 0.0;
    for ((&c, wi), xi) in instance.matrix.col_norms_sq().iter().zip(w).zip(x) {
        if c < DEGENERATE_COL_ENERGY {
            continue;
        }
        s += soft_deriv(wi / c + xi, k);
    }
    s / instance.m() as f64
}

fn rescaled_step(
    state: &IterateState,
    instance: &ProblemInstance,
    k: f64,
    external: bool,
) -> Result<StepOutcome> {
    check_k(k)?;
    let z = residual(instance, &state.x)?;
    let w = instance.matrix.mul_t(&z)?;
    let gamma = active_fraction(&w, &state.x, instance, k);
    let denom = if external { 1.0 - gamma } else { 1.0 + gamma };
    if denom.abs() < RESCALE_GUARD {
        return Err(Error::RescaleDivergence {
            op: if external { '-' } else { '+' },
            denom,
            step: state.step + 1,
        });
    }
    let cols = instance.matrix.col_norms_sq();
    let mut degenerate_cols = 0;
    let mut x_new = vec![0.0; state.x.len()];
    for (i, (&c, xi)) in cols.iter().zip(&state.x).enumerate() {
        if c < DEGENERATE_COL_ENERGY {
            degenerate_cols += 1;
            continue;
        }
        x_new[i] = soft(w[i] / (c * denom) + xi, k);
    }
    let z_hat_new = z.iter().map(|v| v / denom).collect();
    Ok(StepOutcome {
        x_new,
        z_new: z,
        z_hat_new,
        gamma_used: Some(gamma),
        degenerate_cols,
    })
}

/// Step-dependent blend applied through the rescaled residual
/// z_hat = z / (1 + gamma); x_new[i] = eta((F^T z_hat)_i / c_i + x_i; k).
pub fn step_map_gamma(
    state: &IterateState,
    instance: &ProblemInstance,
    k: f64,
) -> Result<StepOutcome> {
    rescaled_step(state, instance, k, false)
}

/// Same rescaling with the opposite sign, z_hat = z / (1 - gamma). The
/// denominator can genuinely vanish; the guard turns that into an error the
/// driver records as a failed run.
pub fn step_amp_external(
    state: &IterateState,
    instance: &ProblemInstance,
    k: f64,
) -> Result<StepOutcome> {
    rescaled_step(state, instance, k, true)
}

/// Onsager-corrected residual recursion:
/// z_hat^(t) = (y - F x^(t-1)) + z_hat^(t-1) * (1/M) sum_j eta'((F^T z_hat^(t-1))_j / c_j + x_j^(t-2); k),
/// x^(t)[i] = eta((F^T z_hat^(t))_i / c_i + x^(t-1)_i; k).
///
/// Expects `state.z_hat` to hold z_hat^(t-1) and `state.x_prev` to hold
/// x^(t-2), both zero vectors on a cold start.
pub fn step_amp(state: &IterateState, instance: &ProblemInstance, k: f64) -> Result<StepOutcome> {
    check_k(k)?;
    let z = residual(instance, &state.x)?;
    let v = instance.matrix.mul_t(&state.z_hat)?;
    let onsager = active_fraction(&v, &state.x_prev, instance, k);
    let z_hat_new: Vec<f64> = z
        .iter()
        .zip(&state.z_hat)
        .map(|(zv, zh)| zv + onsager * zh)
        .collect();
    let w_hat = instance.matrix.mul_t(&z_hat_new)?;
    let cols = instance.matrix.col_norms_sq();
    let mut degenerate_cols = 0;
    let mut x_new = vec![0.0; state.x.len()];
    for (i, (&c, xi)) in cols.iter().zip(&state.x).enumerate() {
        if c < DEGENERATE_COL_ENERGY {
            degenerate_cols += 1;
            continue;
        }
        x_new[i] = soft(w_hat[i] / c + xi, k);
    }
    Ok(StepOutcome {
        x_new,
        z_new: z,
        z_hat_new,
        gamma_used: Some(onsager),
        degenerate_cols,
    })
}

fn dispatch(
    variant: SolverVariant,
    state: &IterateState,
    instance: &ProblemInstance,
    k: f64,
) -> Result<StepOutcome> {
    match variant {
        SolverVariant::Naive => step_naive(state, instance, k),
        SolverVariant::PartialConstant { gamma } => {
            step_partial_constant(state, instance, k, gamma)
        }
        SolverVariant::PartialStepDependent => step_map_gamma(state, instance, k),
        SolverVariant::AmpExternal => step_amp_external(state, instance, k),
        SolverVariant::Amp => step_amp(state, instance, k),
    }
}

/// Runs the configured variant from the cold start with the annealed
/// threshold until the step budget is exhausted, the schedule bottoms out at
/// a fixed point, or the iteration diverges.
///
/// Degenerate data never panics: step failures and MSE blowups are recorded
/// on the result and the run stops early. `k_trace[t]` holds the threshold
/// after the step-t decay, so the first entry is k0 * decay.
pub fn run(instance: &ProblemInstance, config: &SolverConfig) -> Result<RunResult> {
    config.validate()?;
    let k0 = config.anneal.resolve_k0(instance)?;
    let mut state = IterateState::initial(instance, k0);
    let truth = instance.truth.values();

    let mut mse_trace = Vec::with_capacity(config.max_steps.min(1 << 20));
    let mut k_trace = Vec::with_capacity(mse_trace.capacity());
    let mut gamma_trace = Vec::new();
    let mut degenerate_updates = 0;
    let mut failure = None;
    let mut k = k0;

    for t in 1..=config.max_steps {
        let outcome = match dispatch(config.variant, &state, instance, k) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        std::mem::swap(&mut state.x_prev, &mut state.x);
        state.x = outcome.x_new;
        state.z = outcome.z_new;
        std::mem::swap(&mut state.z_hat_prev, &mut state.z_hat);
        state.z_hat = outcome.z_hat_new;
        state.step = t;
        degenerate_updates += outcome.degenerate_cols;
        if let Some(g) = outcome.gamma_used {
            gamma_trace.push(g);
        }

        k = (k * config.anneal.decay).max(config.anneal.k_floor);
        state.k_current = k;
        let mse = mse_per_entry(&state.x, truth)?;
        mse_trace.push(mse);
        k_trace.push(k);

        if !mse.is_finite() || mse > DIVERGENCE_MSE {
            failure = Some(format!("diverged: per-entry mse {mse:.3e} after step {t}"));
            break;
        }
        if k <= config.anneal.k_floor * (1.0 + 1e-12)
            && linf_diff(&state.x, &state.x_prev) < config.fixed_point_tol
        {
            break;
        }
    }

    let final_mse = mse_per_entry(&state.x, truth)?;
    let residual_norm_final = l2_norm(&residual(instance, &state.x)?);
    Ok(RunResult {
        variant: config.variant,
        seed: instance.seed,
        steps_taken: state.step,
        success: final_mse < config.mse_success_threshold,
        x_final: state.x,
        mse_trace,
        k_trace,
        gamma_trace,
        residual_norm_final,
        degenerate_updates,
        failure,
    })
}
