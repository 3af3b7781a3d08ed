use thiserror::Error;

/// Bad configuration or command-line input; exits with status 2.
#[derive(Debug, Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

/// A report was asked to combine artifacts that do not belong together.
#[derive(Debug, Error)]
#[error("provenance check failed: {0}")]
pub struct ProvenanceError(pub String);

/// Exit status for an error chain: 2 for config and validation problems,
/// 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<ProvenanceError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<rankdistil::Error>() {
            use rankdistil::Error as E;
            return match e {
                E::Parse { .. }
                | E::Validation { .. }
                | E::InvalidId(_)
                | E::Invalid(_)
                | E::Domain(_)
                | E::Dimension { .. } => 2,
                E::Query { .. } | E::NonFinite { .. } | E::Io { .. } => 1,
            };
        }
    }
    1
}
