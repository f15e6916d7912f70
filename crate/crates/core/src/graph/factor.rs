use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{se3_right_jacobian_inverse, RigidPose};

pub type VarId = u64;

/// Threshold in whitened units giving 95% efficiency under Gaussian noise.
pub const DEFAULT_HUBER_K: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariableKind {
    RobotPose,
    LandmarkPose,
}

impl VariableKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VariableKind::RobotPose => "robot_pose",
            VariableKind::LandmarkPose => "landmark_pose",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "robot_pose" => Some(VariableKind::RobotPose),
            "landmark_pose" => Some(VariableKind::LandmarkPose),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphVariable {
    pub id: VarId,
    pub kind: VariableKind,
    pub estimate: RigidPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    /// Unary: the variable equals the measurement.
    Prior,
    /// Binary: `measurement = A⁻¹ ∘ B`.
    Odometry,
    /// Binary robot/landmark: `measurement = X⁻¹ ∘ L`.
    LandmarkMeasurement,
    /// Unary pose from photometric refinement.
    External3dgs,
}

impl FactorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FactorKind::Prior => "prior",
            FactorKind::Odometry => "odometry",
            FactorKind::LandmarkMeasurement => "landmark_measurement",
            FactorKind::External3dgs => "external_3dgs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prior" => Some(FactorKind::Prior),
            "odometry" => Some(FactorKind::Odometry),
            "landmark_measurement" => Some(FactorKind::LandmarkMeasurement),
            "external_3dgs" => Some(FactorKind::External3dgs),
            _ => None,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            FactorKind::Prior | FactorKind::External3dgs => 1,
            FactorKind::Odometry | FactorKind::LandmarkMeasurement => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub variables: Vec<VarId>,
    pub measurement: RigidPose,
    /// 6×6 information in `[ω; v]` order.
    pub information: Matrix6<f64>,
    pub huber: Option<f64>,
    sqrt_info: Matrix6<f64>,
}

/// Whitened residual and per-variable Jacobians.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub residual: Vector6<f64>,
    pub jacobians: Vec<Matrix6<f64>>,
}

/// `W` with `WᵀW = Λ`; accepts semidefinite information so that a zero
/// matrix switches a factor off.
fn sqrt_information(info: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    if !info.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("information matrix"));
    }
    if (info - info.transpose()).abs().max() > 1e-9 * info.abs().max().max(1.0) {
        return Err(Error::InvalidInput("information matrix is not symmetric".into()));
    }
    let sym = (info + info.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.abs().max().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.min() < -1e-12 * scale {
        return Err(Error::InvalidInput("information matrix is not positive semidefinite".into()));
    }
    let d = Matrix6::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(d * eig.eigenvectors.transpose())
}

impl Factor {
    pub fn new(kind: FactorKind, variables: Vec<VarId>, measurement: RigidPose, information: Matrix6<f64>) -> Result<Self> {
        if variables.len() != kind.arity() {
            return Err(Error::InvalidInput(format!(
                "{} factor takes {} variables, got {}",
                kind.as_str(),
                kind.arity(),
                variables.len()
            )));
        }
        if variables.len() == 2 && variables[0] == variables[1] {
            return Err(Error::InvalidInput("binary factor connects a variable to itself".into()));
        }
        let sqrt_info = sqrt_information(&information)?;
        Ok(Self {
            kind,
            variables,
            measurement,
            information,
            huber: None,
            sqrt_info,
        })
    }

    pub fn prior(id: VarId, pose: RigidPose, information: Matrix6<f64>) -> Result<Self> {
        Self::new(FactorKind::Prior, vec![id], pose, information)
    }

    pub fn odometry(from: VarId, to: VarId, delta: RigidPose, information: Matrix6<f64>) -> Result<Self> {
        Self::new(FactorKind::Odometry, vec![from, to], delta, information)
    }

    pub fn landmark(robot: VarId, landmark: VarId, observation: RigidPose, information: Matrix6<f64>) -> Result<Self> {
        Self::new(FactorKind::LandmarkMeasurement, vec![robot, landmark], observation, information)
    }

    pub fn external(id: VarId, pose: RigidPose, information: Matrix6<f64>) -> Result<Self> {
        Self::new(FactorKind::External3dgs, vec![id], pose, information)
    }

    pub fn with_huber(mut self, k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::InvalidInput(format!("Huber threshold must be positive, got {k}")));
        }
        self.huber = Some(k);
        Ok(self)
    }

    /// Unwhitened residual `Log(Z⁻¹ ∘ predicted)`.
    pub fn raw_residual(&self, poses: &[RigidPose]) -> Result<Vector6<f64>> {
        Ok(self.measurement.inverse().compose(&self.predicted(poses)).log()?.to_vector())
    }

    fn predicted(&self, poses: &[RigidPose]) -> RigidPose {
        match self.kind.arity() {
            1 => poses[0],
            _ => poses[0].between(&poses[1]),
        }
    }

    /// Whitened residual with Jacobians for left perturbations
    /// `X ← exp(δ) ∘ X` of each variable, in `variables` order.
    pub fn linearize(&self, poses: &[RigidPose]) -> Result<Linearization> {
        debug_assert_eq!(poses.len(), self.variables.len());
        let error = self.measurement.inverse().compose(&self.predicted(poses));
        let xi = error.log()?;
        let jr_inv = se3_right_jacobian_inverse(&xi);
        let last = poses.last().copied().unwrap_or_default();
        let j_last = jr_inv * last.inverse().adjoint();
        let jacobians = match self.kind.arity() {
            1 => vec![self.sqrt_info * j_last],
            _ => vec![-(self.sqrt_info * j_last), self.sqrt_info * j_last],
        };
        Ok(Linearization {
            residual: self.sqrt_info * xi.to_vector(),
            jacobians,
        })
    }

    pub fn whitened_residual(&self, poses: &[RigidPose]) -> Result<Vector6<f64>> {
        Ok(self.sqrt_info * self.raw_residual(poses)?)
    }

    /// Robustified cost: `½s²` inside the Huber threshold, linear outside.
    pub fn cost(&self, poses: &[RigidPose]) -> Result<f64> {
        let s = self.whitened_residual(poses)?.norm();
        Ok(match self.huber {
            Some(k) if s > k => k * (s - 0.5 * k),
            _ => 0.5 * s * s,
        })
    }
}

/// IRLS weight of the Huber kernel.
pub fn robust_weight(k: f64, r_norm: f64) -> f64 {
    assert!(k > 0.0, "Huber threshold must be positive");
    if r_norm <= k {
        1.0
    } else {
        k / r_norm
    }
}
