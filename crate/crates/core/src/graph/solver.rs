use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::factor::{robust_weight, FactorKind, VarId, VariableKind};
use super::sparse::SkylineMatrix;
use super::{poses_for, Estimates, FactorGraph};
use crate::error::{Error, Result};
use crate::geometry::{RigidPose, Twist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Dense below 50 variables, skyline above.
    Auto,
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmParams {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_scale: f64,
    pub cost_tol: f64,
    pub solver: LinearSolver,
    pub compute_marginals: bool,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            lambda_init: 1e-4,
            lambda_scale: 10.0,
            cost_tol: 1e-10,
            solver: LinearSolver::Auto,
            compute_marginals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginals: Option<BTreeMap<VarId, Matrix6<f64>>>,
}

/// Robot poses in insertion order, then landmarks, so the odometry chain
/// stays banded and the landmark rows form the only long edges.
fn ordering(graph: &FactorGraph) -> (Vec<VarId>, BTreeMap<VarId, usize>) {
    let mut order: Vec<VarId> = graph.variables().iter().filter(|v| v.kind == VariableKind::RobotPose).map(|v| v.id).collect();
    order.extend(graph.variables().iter().filter(|v| v.kind == VariableKind::LandmarkPose).map(|v| v.id));
    let position = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    (order, position)
}

enum System {
    Dense(DMatrix<f64>),
    Skyline(SkylineMatrix),
}

impl System {
    fn add_block(&mut self, bi: usize, bj: usize, block: &Matrix6<f64>) {
        match self {
            System::Dense(m) => {
                for r in 0..6 {
                    for c in 0..6 {
                        m[(6 * bi + r, 6 * bj + c)] += block[(r, c)];
                        if bi != bj {
                            m[(6 * bj + c, 6 * bi + r)] += block[(r, c)];
                        }
                    }
                }
            }
            System::Skyline(m) => {
                for r in 0..6 {
                    for c in 0..6 {
                        let (i, j) = (6 * bi + r, 6 * bj + c);
                        if bi != bj || j <= i {
                            m.add(i, j, block[(r, c)]);
                        }
                    }
                }
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        match self {
            System::Dense(m) => m.diagonal().iter().copied().collect(),
            System::Skyline(m) => m.diagonal(),
        }
    }

    fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            match self {
                System::Dense(m) => m[(i, i)] += v,
                System::Skyline(m) => m.add(i, i, *v),
            }
        }
    }
}

enum Factored {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Skyline(super::sparse::SkylineCholesky),
}

impl Factored {
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Factored::Dense(c) => c.solve(b),
            Factored::Skyline(c) => c.solve(b),
        }
    }
}

fn factor_system(sys: System) -> Result<Factored> {
    match sys {
        System::Dense(m) => {
            let n = m.nrows();
            let scale = m.diagonal().abs().max().max(1e-300);
            let c = m.cholesky().ok_or(Error::SingularInformation)?;
            // nalgebra accepts tiny pivots; treat them as rank deficiency.
            let l = c.l_dirty();
            if (0..n).any(|i| !(l[(i, i)] * l[(i, i)] > 1e-13 * scale)) {
                return Err(Error::SingularInformation);
            }
            Ok(Factored::Dense(c))
        }
        System::Skyline(m) => Ok(Factored::Skyline(m.cholesky()?)),
    }
}

struct Normal {
    system: System,
    gradient: DVector<f64>,
}

fn use_dense(solver: LinearSolver, n: usize) -> bool {
    match solver {
        LinearSolver::Dense => true,
        LinearSolver::Sparse => false,
        LinearSolver::Auto => n < 50,
    }
}

/// Gauss–Newton normal equations with IRLS weights at `values`.
fn build_normal(graph: &FactorGraph, values: &Estimates, position: &BTreeMap<VarId, usize>, dense: bool) -> Result<Normal> {
    let n = position.len();
    let linearized: Vec<(Vec<usize>, Vector6<f64>, Vec<Matrix6<f64>>)> = graph
        .factors()
        .par_iter()
        .map(|f| {
            let lin = f.linearize(&poses_for(f, values)?)?;
            let w = f.huber.map_or(1.0, |k| robust_weight(k, lin.residual.norm())).sqrt();
            let blocks = f.variables.iter().map(|id| position[id]).collect();
            Ok((blocks, lin.residual * w, lin.jacobians.into_iter().map(|j| j * w).collect()))
        })
        .collect::<Result<_>>()?;

    let mut system = if dense {
        System::Dense(DMatrix::zeros(6 * n, 6 * n))
    } else {
        let mut first_block: Vec<usize> = (0..n).collect();
        for (blocks, _, _) in &linearized {
            let lo = *blocks.iter().min().unwrap();
            for &b in blocks {
                first_block[b] = first_block[b].min(lo);
            }
        }
        System::Skyline(SkylineMatrix::new((0..6 * n).map(|i| 6 * first_block[i / 6]).collect()))
    };
    let mut gradient = DVector::zeros(6 * n);
    for (blocks, r, jacobians) in &linearized {
        for (a, ja) in blocks.iter().zip(jacobians) {
            let g = ja.transpose() * r;
            for k in 0..6 {
                gradient[6 * a + k] += g[k];
            }
            for (b, jb) in blocks.iter().zip(jacobians) {
                if a >= b {
                    system.add_block(*a, *b, &(ja.transpose() * jb));
                }
            }
        }
    }
    Ok(Normal { system, gradient })
}

fn retract(values: &Estimates, order: &[VarId], step: &DVector<f64>) -> Estimates {
    let mut out = values.clone();
    for (b, id) in order.iter().enumerate() {
        let xi = Twist::from_vector(&Vector6::from_iterator(step.rows(6 * b, 6).iter().copied()));
        let pose = out.get_mut(id).expect("ordering covers every variable");
        *pose = RigidPose::exp(&xi).compose(pose);
    }
    out
}

fn check_gauge(graph: &FactorGraph) -> Result<()> {
    if !graph.factors().iter().any(|f| matches!(f.kind, FactorKind::Prior | FactorKind::External3dgs)) {
        return Err(Error::GaugeFreedom);
    }
    Ok(())
}

/// Levenberg–Marquardt from `init`. Accepted steps never increase the robust
/// cost; a singular undamped system at the start is reported as gauge freedom.
pub fn solve_lm(graph: &FactorGraph, init: &Estimates, params: &LmParams) -> Result<(Estimates, SolveReport)> {
    check_gauge(graph)?;
    let (order, position) = ordering(graph);
    for id in &order {
        if !init.contains_key(id) {
            return Err(Error::UnknownVariable(*id));
        }
    }
    let dense = use_dense(params.solver, order.len());
    let mut values: Estimates = order.iter().map(|id| (*id, init[id])).collect();
    let mut cost = graph.cost(&values)?;
    let initial_cost = cost;

    let probe = build_normal(graph, &values, &position, dense)?;
    factor_system(probe.system).map_err(|_| Error::GaugeFreedom)?;

    let mut lambda = params.lambda_init;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iters {
        iterations += 1;
        if cost < 1e-24 {
            converged = true;
            break;
        }
        let normal = build_normal(graph, &values, &position, dense)?;
        let diag: Vec<f64> = normal.system.diagonal().iter().map(|d| d.max(1e-9)).collect();
        let rhs = -&normal.gradient;
        let mut system = Some(normal.system);
        let mut accepted = None;
        while lambda < 1e16 {
            // Damp a copy so a rejected step can retry with larger λ.
            let mut damped = match system.as_ref().unwrap() {
                System::Dense(m) => System::Dense(m.clone()),
                System::Skyline(m) => System::Skyline(m.clone()),
            };
            damped.add_diagonal(&diag.iter().map(|d| d * lambda).collect::<Vec<_>>());
            if let Ok(f) = factor_system(damped) {
                let step = f.solve(&rhs);
                let candidate = retract(&values, &order, &step);
                if let Ok(c) = graph.cost(&candidate) {
                    if c <= cost {
                        accepted = Some((candidate, c));
                        lambda = (lambda / params.lambda_scale).max(1e-12);
                        break;
                    }
                }
            }
            lambda *= params.lambda_scale;
        }
        system.take();
        match accepted {
            Some((candidate, new_cost)) => {
                let decrease = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                values = candidate;
                cost = new_cost;
                if decrease < params.cost_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // No damping yields a decrease: a local minimum to machine precision.
                converged = true;
                break;
            }
        }
    }
    let marginals = if params.compute_marginals {
        let ids: Vec<VarId> = order.clone();
        let covs = marginal_covariances_with(graph, &values, &ids, dense)?;
        Some(ids.into_iter().zip(covs).collect())
    } else {
        None
    };
    if !converged {
        log::warn!("LM stopped after {iterations} iterations without converging (cost {cost:.3e})");
    }
    Ok((
        values,
        SolveReport {
            initial_cost,
            final_cost: cost,
            iterations,
            converged,
            marginals,
        },
    ))
}

fn marginal_covariances_with(graph: &FactorGraph, values: &Estimates, ids: &[VarId], dense: bool) -> Result<Vec<Matrix6<f64>>> {
    let (_, position) = ordering(graph);
    let normal = build_normal(graph, values, &position, dense)?;
    let factored = factor_system(normal.system)?;
    let n = 6 * position.len();
    ids.iter()
        .map(|id| {
            let b = *position.get(id).ok_or(Error::UnknownVariable(*id))?;
            let mut cov = Matrix6::zeros();
            for c in 0..6 {
                let mut e = DVector::zeros(n);
                e[6 * b + c] = 1.0;
                let x = factored.solve(&e);
                for r in 0..6 {
                    cov[(r, c)] = x[6 * b + r];
                }
            }
            Ok((cov + cov.transpose()) * 0.5)
        })
        .collect()
}

/// 6×6 blocks of the inverse Gauss–Newton information at `values`.
pub fn marginal_covariances(graph: &FactorGraph, values: &Estimates, ids: &[VarId], solver: LinearSolver) -> Result<Vec<Matrix6<f64>>> {
    marginal_covariances_with(graph, values, ids, use_dense(solver, graph.variables().len()))
}

pub fn marginal_covariance(graph: &FactorGraph, values: &Estimates, id: VarId) -> Result<Matrix6<f64>> {
    Ok(marginal_covariances(graph, values, &[id], LinearSolver::Auto)?[0])
}
