use std::fmt;

/// Exit status of a subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation = 1,
    Upstream = 2,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    /// Error variant name, printed first on stderr.
    pub name: String,
    pub message: String,
}

impl CliError {
    pub fn validation(name: &str, message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Validation, name: name.into(), message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Upstream, name: "IoError".into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    fn from_debug<E: fmt::Debug + fmt::Display>(e: &E, kind: ExitKind) -> Self {
        Self { kind, name: variant_name(&format!("{e:?}")), message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.message)
    }
}

impl std::error::Error for CliError {}

/// Leading identifier of a `Debug` rendering, e.g. `RecipeViolation("..")`.
fn variant_name(debug: &str) -> String {
    debug.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect()
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<crowdseg_core::ingest::IngestError> for CliError {
    fn from(e: crowdseg_core::ingest::IngestError) -> Self {
        use crowdseg_core::ingest::IngestError;
        let kind = match &e {
            IngestError::Io { .. } | IngestError::Mask(crowdseg_core::mask::MaskError::Io(_)) => ExitKind::Upstream,
            _ => ExitKind::Validation,
        };
        Self::from_debug(&e, kind)
    }
}

impl From<crowdseg_core::mask::MaskError> for CliError {
    fn from(e: crowdseg_core::mask::MaskError) -> Self {
        let kind = match e {
            crowdseg_core::mask::MaskError::Io(_) => ExitKind::Upstream,
            _ => ExitKind::Validation,
        };
        Self::from_debug(&e, kind)
    }
}

impl From<crowdseg_core::synth::SynthError> for CliError {
    fn from(e: crowdseg_core::synth::SynthError) -> Self {
        use crowdseg_core::synth::SynthError;
        let kind = match e {
            SynthError::UpstreamTimeout { .. } | SynthError::UpstreamMalformed(_) => ExitKind::Upstream,
            _ => ExitKind::Validation,
        };
        Self::from_debug(&e, kind)
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::from_debug(&e, ExitKind::Validation)
            }
        }
    )*};
}

validation_from!(
    crowdseg_core::fusion::FusionError,
    crowdseg_core::metrics::MetricsError,
    crowdseg_core::dataset::DatasetError,
    serde_json::Error
);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_come_from_variants() {
        let e: CliError = crowdseg_core::dataset::DatasetError::RecipeViolation("synthetic".into()).into();
        assert_eq!(e.name, "RecipeViolation");
        assert_eq!(e.exit_code(), 1);
        let e: CliError = std::io::Error::other("disk").into();
        assert_eq!(e.exit_code(), 2);
    }
}
