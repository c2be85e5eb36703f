//! Counterexample-guided synthesis of formally verified certificates for
//! nonlinear dynamical models.

pub mod cegis;
pub mod certificates;
pub mod config;
pub mod domains;
pub mod expr;
pub mod learner;
pub mod models;
pub mod nnet;
pub mod suite;
pub mod verifier;

pub use cegis::{learn_only, synthesise, verify_only, CandidateText, CegisReport, Status};
pub use certificates::{CandidateExprs, CertificateKind, Role, SetAssignment};
pub use config::{CegisConfig, ConfigError, NetSpec, YamlConfig};
pub use domains::Domain;
pub use expr::{Expr, Formula, Function, Relation, Var, VectorExpr};
pub use learner::TrainConfig;
pub use models::{DynamicalModel, TimeDomain};
pub use nnet::{Activation, Network};
pub use verifier::{SolverBackend, SolverKind, Verdict};
