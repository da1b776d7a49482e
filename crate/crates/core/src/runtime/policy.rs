use crate::motion::{CommandKind, CommandSlicer, MotionClip, PoseFrame, Proprioception, GRAVITY};
use crate::token::TokenModel;

use super::RuntimeError;

/// What a policy sees at a control tick.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub time: f64,
    pub state: &'a PoseFrame,
    /// The motion being tracked, indexed by absolute time.
    pub reference: &'a MotionClip,
}

/// Maps observations to absolute PD joint targets.
pub trait Policy: Send {
    fn act(&mut self, input: &PolicyInput) -> Result<Vec<f64>, RuntimeError>;
}

/// Targets the reference joint angles, led by `kd/kp` times the reference
/// joint velocity, which cancels the PD lag on constant-velocity motion.
#[derive(Debug, Clone, Default)]
pub struct KinematicFollower;

impl Policy for KinematicFollower {
    fn act(&mut self, input: &PolicyInput) -> Result<Vec<f64>, RuntimeError> {
        let r = input.reference.frame_at(input.time).ok_or(RuntimeError::NoReference(input.time))?;
        let sk = &input.reference.skeleton;
        Ok((0..r.joint_pos.len()).map(|j| r.joint_pos[j] + sk.pd_gains[j][1] / sk.pd_gains[j][0] * r.joint_vel[j]).collect())
    }
}

/// Always the same targets.
#[derive(Debug, Clone)]
pub struct ConstantPose(pub Vec<f64>);

impl Policy for ConstantPose {
    fn act(&mut self, _input: &PolicyInput) -> Result<Vec<f64>, RuntimeError> {
        Ok(self.0.clone())
    }
}

/// Robot-command encoder and control decoder; the action mean is an offset
/// from the default pose.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub model: TokenModel,
    slicer: CommandSlicer,
    prev_action: Vec<f64>,
}

impl NeuralPolicy {
    pub fn new(model: TokenModel, skeleton: &crate::motion::SkeletonSpec) -> Self {
        let n = model.config.action_dim;
        Self { model, slicer: CommandSlicer::new(skeleton), prev_action: vec![0.0; n] }
    }
}

impl Policy for NeuralPolicy {
    fn act(&mut self, input: &PolicyInput) -> Result<Vec<f64>, RuntimeError> {
        let cmd = self.slicer.slice(input.reference, input.time, CommandKind::Robot)?;
        let token = self.model.encode(&cmd)?;
        let proprio = Proprioception::from_frame(input.state, self.prev_action.clone(), GRAVITY);
        let a = self.model.decode_control(&token, &proprio)?;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(RuntimeError::NonFiniteAction(input.time));
        }
        self.prev_action = a.clone();
        Ok(input.reference.skeleton.default_pose.iter().zip(&a).map(|(d, x)| d + x).collect())
    }
}
