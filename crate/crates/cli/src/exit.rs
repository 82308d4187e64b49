//! Maps failures to process exit codes.

use crate::config::ConfigError;

pub const SUCCESS: i32 = 0;
pub const FAILURE: i32 = 1;
pub const CONFIG: i32 = 2;
pub const DIVERGENCE: i32 = 3;
pub const IO: i32 = 4;

/// A run that already completed under the same configuration hash.
#[derive(Debug)]
pub struct DuplicateRun(pub String);

impl std::fmt::Display for DuplicateRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for DuplicateRun {}

pub fn code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<DuplicateRun>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<skd_core::Error>() {
            use skd_core::Error::*;
            return match e {
                Divergence { .. } => DIVERGENCE,
                InvalidInput(_)
                | ShapeMismatch { .. }
                | ClassCountMismatch { .. }
                | TapOutOfRange { .. }
                | UnknownName { .. } => CONFIG,
                MissingDataset { .. } | Io { .. } | Csv(_) | Checkpoint(_) => IO,
                UndefinedCorrelation(_) => FAILURE,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return IO;
        }
    }
    FAILURE
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn codes_follow_the_cause_chain() {
        let div = anyhow::Error::new(skd_core::Error::Divergence { epoch: 1, iteration: 3, loss: f64::NAN })
            .context("training");
        assert_eq!(code_for(&div), DIVERGENCE);
        let cfg =
            anyhow::Error::new(ConfigError { path: PathBuf::from("a.toml"), line: Some(1), message: "bad".into() });
        assert_eq!(code_for(&cfg), CONFIG);
        let io = anyhow::Error::new(std::io::Error::other("disk")).context("writing");
        assert_eq!(code_for(&io), IO);
        let missing = anyhow::Error::new(skd_core::Error::MissingDataset {
            name: "cifar10".into(),
            root: PathBuf::from("/x"),
            hint: "download".into(),
        });
        assert_eq!(code_for(&missing), IO);
        assert_eq!(code_for(&anyhow::anyhow!("other")), FAILURE);
    }
}
