//! On-policy distillation: the student samples its own trajectories, the frozen privileged
//! teacher scores every scale, and the student minimizes reverse KL.

pub mod distill;
pub mod kl;
pub mod toy;

pub use distill::{
    distill, heldout_rkl, rollout, student_logits, teacher_logits, weights_hash, DistillConfig, DistillReport,
    DistillStepLog, Trajectory,
};
pub use kl::{reverse_kl, reverse_kl_positions, PROB_FLOOR};
pub use toy::{fit_toy, toy_teacher, ToyResult, TOY_TOKENS};
