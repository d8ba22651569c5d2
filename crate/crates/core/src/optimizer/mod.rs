//! Entropy-based correspondence optimization over a cohort of surfaces.
//!
//! Particles start from a single seed per shape and are split 1 -> 2 -> ... -> N.
//! After each split the covariance regularizer starts large and decays, so the
//! new particles spread before the log-determinant stiffens; the final level
//! is then driven to convergence.

mod objective;

use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SurfaceIndex;
use crate::particles::{ParticleSystem, Vec3};
use crate::procrustes::generalized_procrustes;

pub use objective::{bandwidths, evaluate, evaluate_with_gradient, EvalContext, ObjectiveTerms, Preconditioner};

const MAX_HALVINGS: usize = 10;
const STEP_GROWTH: f64 = 2.0;
const MIN_SCALE: f64 = 1e-9;
const MAX_SCALE: f64 = 1.0;
const MAX_STEP: f64 = 1.0;
/// Tangential gradients below this fraction of the full gradient count as zero.
const TANGENT_EPS: f64 = 1e-10;
const CONVERGENCE_WINDOW: usize = 50;
const SPLIT_OFFSET: f64 = 0.1;
/// Initial multiplier on the covariance regularizer; decays geometrically to 1
/// over the first `iterations_per_split` steps of each level.
const EPSILON_ANNEAL: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerParams {
    pub target_particles: usize,
    pub iterations_per_split: usize,
    pub max_iterations_final: usize,
    /// Weight of the correspondence entropy against the sampling entropy.
    pub relative_weight: f64,
    /// Largest particle move per step, in units of the particle's bandwidth.
    pub initial_step: f64,
    pub convergence_tol: f64,
    pub seed: u64,
    pub procrustes_interval: usize,
    pub procrustes_scaling: bool,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            target_particles: 128,
            iterations_per_split: 100,
            max_iterations_final: 2000,
            relative_weight: 1.0,
            initial_step: 0.5,
            convergence_tol: 1e-6,
            seed: 42,
            procrustes_interval: 10,
            procrustes_scaling: false,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.target_particles == 0 || !self.target_particles.is_power_of_two() {
            return bad("target_particles must be a power of two");
        }
        if !(self.relative_weight > 0.0 && self.relative_weight.is_finite()) {
            return bad("relative_weight must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be positive");
        }
        if self.procrustes_interval == 0 {
            return bad("procrustes_interval must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum InitCondition {
    /// Every shape starts from one seed particle and is split up to `N`.
    Origin,
    /// New shapes start from the template's mean shape; template shapes stay fixed.
    WarmStart(ParticleSystem),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub particles: usize,
    pub alpha: f64,
    pub total: f64,
    pub correspondence: f64,
    pub sampling: f64,
    pub max_move: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub before: ObjectiveTerms,
    pub after: ObjectiveTerms,
    pub max_move: f64,
    pub accepted: bool,
    pub halvings: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    /// Free shapes only, in surface order.
    pub system: ParticleSystem,
    pub log: Vec<LogEntry>,
    pub converged: bool,
}

impl OptimizationResult {
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.log)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Projected-gradient optimizer state. Frozen shapes precede free ones.
pub struct Optimizer<'a> {
    surfaces: &'a [SurfaceIndex],
    shapes: Vec<Vec<Vec3>>,
    faces: Vec<Vec<usize>>,
    n_frozen: usize,
    ctx: EvalContext,
    params: OptimizerParams,
    /// Global step multiplier, adapted by backtracking.
    step_scale: f64,
    iteration: usize,
}

impl<'a> Optimizer<'a> {
    /// Free shape `i` lives on `surfaces[i]`; its particles are projected first.
    pub fn new(
        surfaces: &'a [SurfaceIndex],
        frozen: Vec<Vec<Vec3>>,
        free: Vec<Vec<Vec3>>,
        params: OptimizerParams,
    ) -> Result<Self> {
        if free.len() != surfaces.len() {
            return Err(Error::Dimension(format!(
                "{} particle sets for {} surfaces",
                free.len(),
                surfaces.len()
            )));
        }
        let n_frozen = frozen.len();
        let mut shapes = frozen;
        let mut faces = Vec::with_capacity(free.len());
        for (pts, surf) in free.into_iter().zip(surfaces) {
            let (p, f) = project_all(surf, &pts);
            shapes.push(p);
            faces.push(f);
        }
        if let Some(first) = shapes.first() {
            if shapes.iter().any(|s| s.len() != first.len()) {
                return Err(Error::Dimension("particle counts differ between shapes".into()));
            }
        }
        let ctx = EvalContext::new(&shapes, n_frozen, true, params.procrustes_scaling);
        Ok(Optimizer {
            surfaces,
            shapes,
            faces,
            n_frozen,
            ctx,
            step_scale: params.initial_step.min(1.0),
            params,
            iteration: 0,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.shapes.first().map_or(0, Vec::len)
    }

    pub fn free_shapes(&self) -> &[Vec<Vec3>] {
        &self.shapes[self.n_frozen..]
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Objective under a context refreshed at the current configuration.
    pub fn objective(&self, alpha: f64) -> ObjectiveTerms {
        let mut ctx = self.ctx.clone();
        ctx.refresh_alignment(&self.shapes, self.params.procrustes_scaling);
        ctx.refresh_bandwidths(self.free_shapes());
        ctx.refresh_epsilon(&self.shapes);
        evaluate(&self.shapes, &ctx, alpha)
    }

    /// Sets the regularizer multiplier used from the next step on.
    pub fn set_epsilon_boost(&mut self, boost: f64) {
        self.ctx.epsilon_boost = boost.max(1.0);
    }

    /// One descent iteration with backtracking. Bandwidths and the covariance
    /// regularizer are refreshed every step, the alignment every
    /// `procrustes_interval` steps.
    pub fn step(&mut self, alpha: f64) -> StepReport {
        let it = self.iteration;
        self.iteration += 1;
        if it % self.params.procrustes_interval == 0 {
            self.ctx.refresh_alignment(&self.shapes, self.params.procrustes_scaling);
        }
        self.ctx.refresh_bandwidths(&self.shapes[self.n_frozen..]);
        self.ctx.refresh_epsilon(&self.shapes);

        let (before, grad) = evaluate_with_gradient(&self.shapes, &self.ctx, alpha);
        let mut report = StepReport {
            before,
            after: before,
            max_move: 0.0,
            accepted: false,
            halvings: 0,
        };
        if self.n_particles() < 2 {
            return report;
        }

        let moves = self.descent_moves(&grad, alpha);

        let mut scale = self.step_scale;
        for h in 0..=MAX_HALVINGS {
            let trial: Vec<(Vec<Vec3>, Vec<usize>)> = moves
                .par_iter()
                .enumerate()
                .map(|(f, mv)| {
                    let sigma = &self.ctx.bandwidths[f];
                    let moved: Vec<Vec3> = self.shapes[self.n_frozen + f]
                        .iter()
                        .zip(mv)
                        .zip(sigma)
                        .map(|((p, m), s)| {
                            // at most one bandwidth of travel per particle
                            let m = m * scale;
                            let len = m.norm();
                            if len > s * MAX_STEP {
                                p + m * (s * MAX_STEP / len)
                            } else {
                                p + m
                            }
                        })
                        .collect();
                    project_all(&self.surfaces[f], &moved)
                })
                .collect();
            let mut candidate = self.shapes[..self.n_frozen].to_vec();
            candidate.extend(trial.iter().map(|(p, _)| p.clone()));
            let after = evaluate(&candidate, &self.ctx, alpha);
            if after.total <= before.total {
                report.max_move = candidate[self.n_frozen..]
                    .iter()
                    .zip(&self.shapes[self.n_frozen..])
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).norm()))
                    .fold(0.0, f64::max);
                report.after = after;
                report.accepted = true;
                report.halvings = h;
                self.shapes = candidate;
                self.faces = trial.into_iter().map(|(_, f)| f).collect();
                break;
            }
            scale *= 0.5;
        }
        // a rejection below round-off says nothing about the step length
        self.step_scale = if !report.accepted {
            MAX_SCALE
        } else if report.halvings == 0 {
            (scale * STEP_GROWTH).min(MAX_SCALE)
        } else {
            scale.max(MIN_SCALE)
        };
        report
    }

    /// Tangential Newton directions under the curvature model of
    /// [`Preconditioner`].
    fn descent_moves(&self, grad: &[Vec<Vec3>], alpha: f64) -> Vec<Vec<Vec3>> {
        let pre = Preconditioner::new(&self.shapes, &self.ctx, alpha);
        grad.par_iter()
            .enumerate()
            .map(|(f, g)| {
                let surf = &self.surfaces[f];
                let sigma = &self.ctx.bandwidths[f];
                let normals: Vec<Vec3> = self.faces[f].iter().map(|&face| surf.normal(face)).collect();
                // drop tangential components that are round-off of a normal gradient
                let g: Vec<Vec3> = g
                    .iter()
                    .zip(&normals)
                    .map(|(g, n)| {
                        let t = g - n * g.dot(n);
                        if t.norm() > TANGENT_EPS * g.norm() {
                            *g
                        } else {
                            n * g.dot(n)
                        }
                    })
                    .collect();
                let d = pre.tangent_step(self.n_frozen + f, &g, &normals, &self.ctx.transforms[self.n_frozen + f], sigma);
                if d.iter().any(|v| !v.norm().is_finite()) {
                    return vec![Vec3::zeros(); d.len()];
                }
                d
            })
            .collect()
    }

    /// Doubles the particle count: particle `k` becomes `2k` and `2k + 1`,
    /// offset in opposite directions along a shared random tangent.
    pub fn split(&mut self, rng: &mut ChaCha8Rng) {
        assert_eq!(self.n_frozen, 0, "frozen shapes cannot be split");
        let n = self.n_particles();
        let dirs: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                )
            })
            .collect();
        let new_n = 2 * n;
        let next: Vec<(Vec<Vec3>, Vec<usize>)> = self
            .shapes
            .par_iter()
            .zip(&self.faces)
            .zip(self.surfaces)
            .map(|((pts, faces), surf)| {
                let offset = SPLIT_OFFSET * (surf.area() / new_n as f64).sqrt();
                let mut out = Vec::with_capacity(new_n);
                for ((p, &face), v) in pts.iter().zip(faces).zip(&dirs) {
                    let t = tangent(v, &surf.normal(face)) * offset;
                    out.push(p - t);
                    out.push(p + t);
                }
                project_all(surf, &out)
            })
            .collect();
        self.shapes = next.iter().map(|(p, _)| p.clone()).collect();
        self.faces = next.into_iter().map(|(_, f)| f).collect();
        self.ctx = EvalContext::new(&self.shapes, 0, true, self.params.procrustes_scaling);
        self.step_scale = self.params.initial_step.min(1.0);
    }
}

fn tangent(v: &Vec3, n: &Vec3) -> Vec3 {
    let t = v - n * v.dot(n);
    if t.norm() > 1e-8 * v.norm().max(1e-300) {
        return t.normalize();
    }
    let axis = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    n.cross(&axis).normalize()
}

fn project_all(surf: &SurfaceIndex, pts: &[Vec3]) -> (Vec<Vec3>, Vec<usize>) {
    pts.iter()
        .map(|p| {
            let hit = surf.closest_point(p);
            (hit.point, hit.face)
        })
        .unzip()
}

/// Fixed direction, off every coordinate plane, along which the seed is taken.
const SEED_DIRECTION: [f64; 3] = [-0.8, -0.5, -0.33];

/// Surface point nearest to a point far out from the centroid along
/// [`SEED_DIRECTION`]. A generic direction keeps the seed off symmetry axes,
/// so the first splits break symmetry the same way on every shape.
fn seed_point(surf: &SurfaceIndex) -> Vec3 {
    let u = Vec3::from(SEED_DIRECTION).normalize();
    surf.closest_point(&(surf.centroid() + u * (2.0 * surf.diagonal()))).point
}

fn default_ids(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("shape{i}")).collect()
}

fn anneal(t: f64) -> f64 {
    EPSILON_ANNEAL.powf(1.0 - t.clamp(0.0, 1.0))
}

fn check_convergence(history: &[f64], tol: f64) -> bool {
    if history.len() < CONVERGENCE_WINDOW {
        return false;
    }
    history[history.len() - CONVERGENCE_WINDOW..].iter().all(|&d| d <= tol)
}

fn log_entry(it: usize, particles: usize, alpha: f64, r: &StepReport) -> LogEntry {
    LogEntry {
        iteration: it,
        particles,
        alpha,
        total: r.after.total,
        correspondence: r.after.correspondence,
        sampling: r.after.sampling,
        max_move: r.max_move,
        accepted: r.accepted,
    }
}

/// Runs at constant `alpha` until the convergence window is met or the budget is spent.
fn run_to_convergence(opt: &mut Optimizer, alpha: f64, budget: usize, log: &mut Vec<LogEntry>) -> bool {
    let mut history = Vec::new();
    for _ in 0..budget {
        let r = opt.step(alpha);
        log.push(log_entry(opt.iteration() - 1, opt.n_particles(), alpha, &r));
        history.push((r.before.total - r.after.total) / r.before.total.abs().max(1.0));
        if check_convergence(&history, opt.params.convergence_tol) {
            return true;
        }
    }
    false
}

/// Optimizes one particle system per surface.
pub fn optimize(surfaces: &[SurfaceIndex], init: InitCondition, params: &OptimizerParams) -> Result<OptimizationResult> {
    match init {
        InitCondition::WarmStart(template) => warmstart_optimize(surfaces, &template, params),
        InitCondition::Origin => origin_optimize(surfaces, params),
    }
}

fn origin_optimize(surfaces: &[SurfaceIndex], params: &OptimizerParams) -> Result<OptimizationResult> {
    params.validate()?;
    if surfaces.is_empty() {
        return Err(Error::InvalidArgument("no surfaces to optimize".into()));
    }
    let seeds: Vec<Vec<Vec3>> = surfaces.iter().map(|s| vec![seed_point(s)]).collect();
    let mut opt = Optimizer::new(surfaces, Vec::new(), seeds, params.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut log = Vec::new();
    let alpha_max = params.relative_weight;

    while opt.n_particles() < params.target_particles {
        opt.split(&mut rng);
        for i in 0..params.iterations_per_split {
            let t = (i + 1) as f64 / params.iterations_per_split as f64;
            opt.set_epsilon_boost(anneal(t));
            let r = opt.step(alpha_max);
            log.push(log_entry(opt.iteration() - 1, opt.n_particles(), alpha_max, &r));
        }
    }
    let converged = if params.target_particles >= 2 {
        run_to_convergence(&mut opt, alpha_max, params.max_iterations_final, &mut log)
    } else {
        true
    };
    if !converged {
        warn!("optimization stopped after {} iterations without converging", opt.iteration());
    }
    Ok(OptimizationResult {
        system: ParticleSystem::new(default_ids(surfaces.len()), opt.free_shapes().to_vec())?,
        log,
        converged,
    })
}

/// Procrustes mean of the template, posed in the frame of the template member
/// whose own particles lie closest to each new surface (smallest summed squared
/// projection distance, first member on ties).
fn warm_start_init(surfaces: &[SurfaceIndex], template: &ParticleSystem, scaling: bool) -> Vec<Vec<Vec3>> {
    let gpa = generalized_procrustes(&template.particles, scaling, 100, 1e-12);
    surfaces
        .par_iter()
        .map(|surf| {
            let cost = |c: &[Vec3]| c.iter().map(|p| surf.closest_point(p).distance.powi(2)).sum::<f64>();
            let mut best = 0;
            let mut best_cost = f64::INFINITY;
            for (j, member) in template.particles.iter().enumerate() {
                let v = cost(member);
                if v < best_cost {
                    best = j;
                    best_cost = v;
                }
            }
            let t = &gpa.transforms[best];
            let inv_rot = t.rotation.transpose();
            gpa.mean
                .iter()
                .map(|m| inv_rot * (m - t.target_centroid) / t.scale + t.source_centroid)
                .collect()
        })
        .collect()
}

/// Optimizes new shapes against a fixed template cohort.
pub fn warmstart_optimize(
    surfaces: &[SurfaceIndex],
    template: &ParticleSystem,
    params: &OptimizerParams,
) -> Result<OptimizationResult> {
    params.validate()?;
    if template.n_particles() != params.target_particles {
        return Err(Error::InvalidArgument(format!(
            "template has {} particles, parameters ask for {}",
            template.n_particles(),
            params.target_particles
        )));
    }
    if template.n_shapes() == 0 {
        return Err(Error::InvalidArgument("empty template".into()));
    }
    let init = warm_start_init(surfaces, template, params.procrustes_scaling);
    let mut opt = Optimizer::new(surfaces, template.particles.clone(), init, params.clone())?;
    let mut log = Vec::new();
    if params.target_particles >= 2 {
        for i in 0..params.iterations_per_split {
            opt.set_epsilon_boost(anneal((i + 1) as f64 / params.iterations_per_split as f64));
            let r = opt.step(params.relative_weight);
            log.push(log_entry(opt.iteration() - 1, opt.n_particles(), params.relative_weight, &r));
        }
    }
    let converged = if params.target_particles >= 2 {
        run_to_convergence(&mut opt, params.relative_weight, params.max_iterations_final, &mut log)
    } else {
        true
    };
    if !converged {
        warn!("warm start stopped after {} iterations without converging", opt.iteration());
    }
    Ok(OptimizationResult {
        system: ParticleSystem::new(default_ids(surfaces.len()), opt.free_shapes().to_vec())?,
        log,
        converged,
    })
}

/// Objective of `system` with a context built at its current configuration.
pub fn objective(system: &ParticleSystem, params: &OptimizerParams) -> Result<ObjectiveTerms> {
    if system.n_particles() < 2 {
        return Err(Error::InvalidArgument("objective needs at least 2 particles per shape".into()));
    }
    let ctx = EvalContext::new(&system.particles, 0, true, params.procrustes_scaling);
    Ok(evaluate(&system.particles, &ctx, params.relative_weight))
}

/// One descent iteration on `system` (all shapes free) at full correspondence weight.
pub fn step(
    system: &ParticleSystem,
    surfaces: &[SurfaceIndex],
    params: &OptimizerParams,
) -> Result<(ParticleSystem, StepReport)> {
    let mut opt = Optimizer::new(surfaces, Vec::new(), system.particles.clone(), params.clone())?;
    let report = opt.step(params.relative_weight);
    let out = ParticleSystem::new(system.shape_ids.clone(), opt.free_shapes().to_vec())?;
    Ok((out, report))
}

#[cfg(test)]
mod tests;
