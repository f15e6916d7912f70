//! Pose graph over robot poses and the landmark, solved by
//! Levenberg–Marquardt with Huber-robust factors.

mod factor;
mod solver;
mod sparse;
mod text;

use std::collections::{BTreeMap, HashMap};

use nalgebra::Matrix6;

pub use factor::{robust_weight, Factor, FactorKind, GraphVariable, Linearization, VarId, VariableKind, DEFAULT_HUBER_K};
pub use solver::{marginal_covariance, marginal_covariances, solve_lm, LinearSolver, LmParams, SolveReport};
pub use sparse::{SkylineCholesky, SkylineMatrix};
pub use text::{parse_graph, read_graph, write_graph};

use crate::error::{Error, Result};
use crate::geometry::RigidPose;

pub type Estimates = BTreeMap<VarId, RigidPose>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactorGraph {
    variables: Vec<GraphVariable>,
    index: HashMap<VarId, usize>,
    factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, id: VarId, kind: VariableKind, estimate: RigidPose) -> Result<()> {
        if self.index.contains_key(&id) {
            return Err(Error::InvalidInput(format!("variable {id} already exists")));
        }
        self.index.insert(id, self.variables.len());
        self.variables.push(GraphVariable { id, kind, estimate });
        Ok(())
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<()> {
        for id in &factor.variables {
            if !self.index.contains_key(id) {
                return Err(Error::UnknownVariable(*id));
            }
        }
        if factor.kind == FactorKind::External3dgs && self.variable(factor.variables[0])?.kind != VariableKind::RobotPose {
            return Err(Error::InvalidInput("external factors attach to robot poses only".into()));
        }
        self.factors.push(factor);
        Ok(())
    }

    pub fn variables(&self) -> &[GraphVariable] {
        &self.variables
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn variable(&self, id: VarId) -> Result<&GraphVariable> {
        self.index.get(&id).map(|&i| &self.variables[i]).ok_or(Error::UnknownVariable(id))
    }

    pub fn contains(&self, id: VarId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn estimates(&self) -> Estimates {
        self.variables.iter().map(|v| (v.id, v.estimate)).collect()
    }

    /// Overwrites stored estimates for the ids present in `values`.
    pub fn set_estimates(&mut self, values: &Estimates) -> Result<()> {
        for (id, pose) in values {
            let i = *self.index.get(id).ok_or(Error::UnknownVariable(*id))?;
            self.variables[i].estimate = *pose;
        }
        Ok(())
    }

    pub fn remove_factors(&mut self, keep: impl Fn(&Factor) -> bool) {
        self.factors.retain(keep);
    }

    /// Total robustified cost at `values`.
    pub fn cost(&self, values: &Estimates) -> Result<f64> {
        let mut total = 0.0;
        for f in &self.factors {
            total += f.cost(&poses_for(f, values)?)?;
        }
        Ok(total)
    }
}

pub(crate) fn poses_for(f: &Factor, values: &Estimates) -> Result<Vec<RigidPose>> {
    f.variables.iter().map(|id| values.get(id).copied().ok_or(Error::UnknownVariable(*id))).collect()
}

/// Adds one unary factor per refined pose, with information `Σ⁻¹`. An
/// earlier external factor on the same variable is replaced.
pub fn add_external_pose_factors(graph: &mut FactorGraph, refined: &[(VarId, RigidPose, Matrix6<f64>)]) -> Result<()> {
    let mut factors = Vec::with_capacity(refined.len());
    for (id, pose, cov) in refined {
        graph.variable(*id)?;
        let info = cov.try_inverse().ok_or(Error::SingularInformation)?;
        factors.push(Factor::external(*id, *pose, (info + info.transpose()) * 0.5)?);
    }
    for f in factors {
        let id = f.variables[0];
        graph.remove_factors(|g| !(g.kind == FactorKind::External3dgs && g.variables[0] == id));
        graph.add_factor(f)?;
    }
    Ok(())
}
