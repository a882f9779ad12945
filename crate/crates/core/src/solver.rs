//! Per-image undistortion by gradient descent on the source control points.
//!
//! The 32 free parameters are the source coordinates in pixels. Gradients
//! flow loss -> sampled image (losses) -> sampling grid (sampler backward)
//! -> sources (the linear grid map `M`).

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::grid::SamplingGrid;
use crate::image::{ImageBuffer, LabelMap, NUM_CLASSES};
use crate::losses::{
    grid_loss, reconstruction_loss_against, semantic_ce_loss, LossComponents, MsSsimConfig,
    MsSsimReference, DEFAULT_LAMBDA_GRID, DEFAULT_LAMBDA_SEMANTIC,
};
use crate::sampler::{bilinear_sample, bilinear_sample_backward, nearest_sample, one_hot};
use crate::tps::{ControlPointSet, GridJacobian, Point, TpsSystem};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates and timestep; starts at zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(mismatch(params.len(), grads.len()));
    }
    if state.m.len() != params.len() {
        if state.t != 0 {
            return Err(mismatch(params.len(), state.m.len()));
        }
        *state = AdamState::new(params.len());
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Base learning rate; the applied step is scaled by image size, see
    /// [`SolverConfig::step_size`].
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Early stop when the best loss improves by less than `rel_tol`
    /// (relative) over this many iterations.
    pub window: usize,
    pub rel_tol: f64,
    pub use_reconstruction: bool,
    pub use_grid: bool,
    pub use_semantic: bool,
    pub lambda_grid: f64,
    pub lambda_semantic: f64,
    pub ms_ssim: MsSsimConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            window: 50,
            rel_tol: 1e-6,
            use_reconstruction: true,
            use_grid: false,
            use_semantic: false,
            lambda_grid: DEFAULT_LAMBDA_GRID,
            lambda_semantic: DEFAULT_LAMBDA_SEMANTIC,
            ms_ssim: MsSsimConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.use_reconstruction || self.use_grid || self.use_semantic) {
            return Err(Error::NoLossEnabled);
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Adam step in pixels for a `W x H` image: the base rate times
    /// `256 * diag / diag(256x256)`, i.e. 0.256 px at 256x256 for 1e-3.
    pub fn step_size(&self, dims: (usize, usize)) -> f64 {
        let diag = (dims.0 as f64).hypot(dims.1 as f64);
        self.learning_rate * 256.0 * diag / (256f64 * 2f64.sqrt())
    }

    fn adam(&self, dims: (usize, usize)) -> AdamConfig {
        AdamConfig {
            learning_rate: self.step_size(dims),
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Inputs to one undistortion. Which ones are required depends on the
/// enabled losses.
#[derive(Clone, Copy, Debug)]
pub struct UndistortInputs<'a> {
    pub distorted: &'a ImageBuffer,
    pub reference: Option<&'a ImageBuffer>,
    pub truth_grid: Option<&'a SamplingGrid>,
    pub distorted_labels: Option<&'a LabelMap>,
    pub reference_labels: Option<&'a LabelMap>,
}

impl<'a> UndistortInputs<'a> {
    pub fn new(distorted: &'a ImageBuffer) -> Self {
        Self {
            distorted,
            reference: None,
            truth_grid: None,
            distorted_labels: None,
            reference_labels: None,
        }
    }
}

/// The starting point of every solve: sources on the targets (identity warp).
pub fn init_identity(targets: &ControlPointSet) -> ControlPointSet {
    targets.clone()
}

struct SemanticTerm<'a> {
    onehot: ImageBuffer,
    reference: &'a LabelMap,
}

/// The joint loss as a function of the source control points.
pub struct JointObjective<'a> {
    distorted: &'a ImageBuffer,
    jacobian: GridJacobian,
    targets: ControlPointSet,
    reconstruction: Option<MsSsimReference>,
    truth_grid: Option<&'a SamplingGrid>,
    semantic: Option<SemanticTerm<'a>>,
    lambda_grid: f64,
    lambda_semantic: f64,
}

/// Loss value, its parts, and the gradient with respect to each source.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub components: LossComponents,
    pub grid: SamplingGrid,
    pub gradient: Vec<Point>,
}

fn check_dims(what: &str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(mismatch(
            format!("{what} {}x{}", expected.0, expected.1),
            format!("{}x{}", found.0, found.1),
        ));
    }
    Ok(())
}

impl<'a> JointObjective<'a> {
    pub fn new(inputs: UndistortInputs<'a>, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = inputs.distorted.dims();
        let reconstruction = if cfg.use_reconstruction {
            let reference = inputs.reference.ok_or(Error::MissingInput("reconstruction"))?;
            check_dims("reference", dims, reference.dims())?;
            inputs.distorted.check_same_shape(reference)?;
            Some(MsSsimReference::new(reference, &cfg.ms_ssim)?)
        } else {
            None
        };
        let truth_grid = if cfg.use_grid {
            let truth = inputs.truth_grid.ok_or(Error::MissingInput("grid"))?;
            check_dims("truth grid", dims, truth.dims())?;
            Some(truth)
        } else {
            None
        };
        let semantic = if cfg.use_semantic {
            let distorted = inputs.distorted_labels.ok_or(Error::MissingInput("semantic"))?;
            let reference = inputs.reference_labels.ok_or(Error::MissingInput("semantic"))?;
            check_dims("distorted labels", dims, distorted.dims())?;
            check_dims("reference labels", dims, reference.dims())?;
            Some(SemanticTerm {
                onehot: one_hot(distorted, NUM_CLASSES)?,
                reference,
            })
        } else {
            None
        };
        let targets = ControlPointSet::make_target_grid(dims.0, dims.1);
        let jacobian = TpsSystem::new(targets.clone())?.grid_jacobian(dims)?;
        Ok(Self {
            distorted: inputs.distorted,
            jacobian,
            targets,
            reconstruction,
            truth_grid,
            semantic,
            lambda_grid: cfg.lambda_grid,
            lambda_semantic: cfg.lambda_semantic,
        })
    }

    pub fn targets(&self) -> &ControlPointSet {
        &self.targets
    }

    pub fn jacobian(&self) -> &GridJacobian {
        &self.jacobian
    }

    pub fn evaluate(&self, sources: &ControlPointSet) -> Result<Evaluation> {
        let grid = self.jacobian.apply(sources)?;
        let mut grad_grid = vec![[0.0; 2]; grid.len()];
        let mut components = LossComponents::default();
        let mut accumulate = |g: Vec<Point>, scale: f64| {
            for (acc, v) in grad_grid.iter_mut().zip(g) {
                acc[0] += scale * v[0];
                acc[1] += scale * v[1];
            }
        };

        if let Some(reference) = &self.reconstruction {
            let warped = bilinear_sample(self.distorted, &grid);
            let (value, g_img) = reconstruction_loss_against(reference, &warped)?;
            components.reconstruction = Some(value);
            accumulate(bilinear_sample_backward(self.distorted, &grid, &g_img)?, 1.0);
        }
        if let Some(truth) = self.truth_grid {
            let (value, g) = grid_loss(&grid, truth)?;
            components.grid = Some(value);
            accumulate(g, self.lambda_grid);
        }
        if let Some(sem) = &self.semantic {
            let probs = bilinear_sample(&sem.onehot, &grid);
            let (value, g_probs) = semantic_ce_loss(&probs, sem.reference)?;
            components.semantic = Some(value);
            accumulate(
                bilinear_sample_backward(&sem.onehot, &grid, &g_probs)?,
                self.lambda_semantic,
            );
        }

        let gradient = self.jacobian.backprop(&grad_grid)?;
        Ok(Evaluation {
            loss: components.joint(self.lambda_grid, self.lambda_semantic),
            components,
            grid,
            gradient,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub sources: ControlPointSet,
    /// Joint loss at `sources`.
    pub loss: f64,
    pub components: LossComponents,
    /// Number of loss evaluations performed, warm-up included.
    pub iterations: usize,
    /// Evaluations spent on the dense-terms-only warm-up.
    pub warmup_iterations: usize,
    /// Joint loss at every iterate of the final phase, in order.
    pub loss_history: Vec<f64>,
    /// True when the early-stop criterion fired before `max_iters`.
    pub converged: bool,
    pub image: ImageBuffer,
    pub labels: Option<LabelMap>,
    pub grid: SamplingGrid,
}

impl SolveResult {
    /// Running minimum of the loss history.
    pub fn best_history(&self) -> Vec<f64> {
        self.loss_history
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }
}

fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

fn unflatten(params: &[f64]) -> Result<ControlPointSet> {
    ControlPointSet::new(params.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// Estimates the source control points that undistort `inputs.distorted`
/// and returns the best iterate with its grid and warped outputs.
///
/// When the semantic term is combined with a dense term (reconstruction or
/// grid), the solve first runs on the dense terms alone and then continues on
/// the full joint loss from that point with fresh Adam moments. Both phases
/// share the `max_iters` budget.
pub fn undistort_solve(inputs: UndistortInputs<'_>, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let start = ControlPointSet::make_target_grid(inputs.distorted.dims().0, inputs.distorted.dims().1);
    let mut start = init_identity(&start);
    let mut budget = cfg.max_iters;
    let mut warmup_iterations = 0;
    if cfg.use_semantic && (cfg.use_reconstruction || cfg.use_grid) {
        let dense_cfg = SolverConfig {
            use_semantic: false,
            ..cfg.clone()
        };
        let dense = JointObjective::new(inputs, &dense_cfg)?;
        let run = descend(&dense, start, cfg, budget / 2)?;
        warmup_iterations = run.history.len();
        budget -= warmup_iterations;
        start = run.best_sources;
    }
    let objective = JointObjective::new(inputs, cfg)?;
    let run = descend(&objective, start, cfg, budget.max(1))?;

    let eval = run.best_eval;
    let image = bilinear_sample(inputs.distorted, &eval.grid);
    let labels = inputs.distorted_labels.map(|l| nearest_sample(l, &eval.grid));
    Ok(SolveResult {
        sources: run.best_sources,
        loss: eval.loss,
        components: eval.components,
        iterations: warmup_iterations + run.history.len(),
        warmup_iterations,
        loss_history: run.history,
        converged: run.converged,
        image,
        labels,
        grid: eval.grid,
    })
}

struct Descent {
    history: Vec<f64>,
    best_sources: ControlPointSet,
    best_eval: Evaluation,
    converged: bool,
}

/// Adam from `start` for at most `max_iters` evaluations, tracking the best iterate.
fn descend(
    objective: &JointObjective<'_>,
    start: ControlPointSet,
    cfg: &SolverConfig,
    max_iters: usize,
) -> Result<Descent> {
    let adam = cfg.adam(objective.jacobian().dims());
    let mut params = flatten(start.points());
    let mut state = AdamState::new(params.len());
    let mut history = Vec::with_capacity(max_iters);
    let mut best: Option<(Vec<f64>, Evaluation)> = None;
    let mut best_history = Vec::with_capacity(max_iters);
    let mut converged = false;

    for iteration in 0..max_iters {
        let eval = objective.evaluate(&unflatten(&params)?)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                detail: format!("{:?}", eval.components),
            });
        }
        history.push(eval.loss);
        let grads = flatten(&eval.gradient);
        if best.as_ref().is_none_or(|(_, b)| eval.loss < b.loss) {
            best = Some((params.clone(), eval));
        }
        let best_loss = best.as_ref().map_or(f64::INFINITY, |b| b.1.loss);
        best_history.push(best_loss);

        if iteration >= cfg.window {
            let before = best_history[iteration - cfg.window];
            if (before - best_loss) / before.abs().max(1e-12) < cfg.rel_tol {
                converged = true;
                break;
            }
        }
        if iteration + 1 < max_iters {
            adam_step(&mut params, &grads, &mut state, &adam)?;
        }
    }

    let (params, best_eval) = best.ok_or(Error::Domain("max_iters must be at least 1".into()))?;
    Ok(Descent {
        history,
        best_sources: unflatten(&params)?,
        best_eval,
        converged,
    })
}
