use std::fmt;

/// Command failure, carrying the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or arguments: exit 2.
    Usage(String),
    /// Inputs that are well-formed requests but fail on the data: exit 3.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    pub fn data(e: impl fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub fn usage(e: impl fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<gatelrp::zoo::ZooError> for CliError {
    fn from(e: gatelrp::zoo::ZooError) -> Self {
        use gatelrp::zoo::ZooError;
        match e {
            ZooError::Config(_) => CliError::usage(e),
            _ => CliError::data(e),
        }
    }
}

impl From<gatelrp::pcx::PcxError> for CliError {
    fn from(e: gatelrp::pcx::PcxError) -> Self {
        use gatelrp::pcx::PcxError;
        match e {
            PcxError::TooFewRows { .. } | PcxError::Percentile(_) | PcxError::Config(_) => CliError::usage(e),
            _ => CliError::data(e),
        }
    }
}

impl From<gatelrp::perturb::PerturbError> for CliError {
    fn from(e: gatelrp::perturb::PerturbError) -> Self {
        use gatelrp::perturb::PerturbError;
        match e {
            PerturbError::UnknownMethod(_) | PerturbError::UnknownLayer(_) | PerturbError::Config(_) => {
                CliError::usage(e)
            }
            _ => CliError::data(e),
        }
    }
}

impl From<gatelrp::lrp::LrpError> for CliError {
    fn from(e: gatelrp::lrp::LrpError) -> Self {
        use gatelrp::lrp::LrpError;
        match e {
            LrpError::Config(_) => CliError::usage(e),
            _ => CliError::data(e),
        }
    }
}

impl From<gatelrp::crp::CrpError> for CliError {
    fn from(e: gatelrp::crp::CrpError) -> Self {
        use gatelrp::crp::CrpError;
        match e {
            CrpError::UnknownLayer(_) | CrpError::Channels(_) | CrpError::ZeroK => CliError::usage(e),
            CrpError::Lrp(inner) => inner.into(),
        }
    }
}

impl From<gatelrp::graph::GraphError> for CliError {
    fn from(e: gatelrp::graph::GraphError) -> Self {
        CliError::data(e)
    }
}
