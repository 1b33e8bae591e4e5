//! Detection metrics and protocol orchestration.

pub mod metrics;
pub mod protocol;

pub use metrics::{acer_at_apcer, det_curve, eer, mpa_eer, DetPoint};
pub use protocol::{
    fit_front_end, run_protocol, DetectorKind, EvalReport, FrontEnd, Protocol, ProtocolContext,
    RoleLog,
};
