use std::fmt;
use std::path::Path;

use rcdcm::dcm::DcmError;
use rcdcm::driverlib::DriverError;
use rcdcm::suite::SuiteError;

/// Failure classes; each maps to one process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Threshold,
    Usage,
    Domain,
    Numerical,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub msg: String,
}

impl CliError {
    pub fn new(kind: Kind, msg: impl Into<String>) -> Self {
        Self { kind, msg: msg.into() }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self::new(Kind::Usage, msg)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }

    pub fn code(&self) -> u8 {
        match self.kind {
            Kind::Threshold => 1,
            Kind::Usage => 2,
            Kind::Domain => 3,
            Kind::Numerical => 4,
        }
    }

    /// Prefix the message with the net or file it concerns.
    pub fn context(self, what: &str) -> Self {
        Self {
            kind: self.kind,
            msg: format!("{what}: {}", self.msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

fn dcm_kind(e: &DcmError) -> Kind {
    match e {
        DcmError::Config(_) => Kind::Usage,
        DcmError::Coverage { .. } | DcmError::Unreachable { .. } => Kind::Domain,
        DcmError::EmptyWindow | DcmError::Response(_) => Kind::Numerical,
    }
}

fn driver_kind(e: &DriverError) -> Kind {
    match e {
        DriverError::BadGrid(_) | DriverError::BadParams(_) | DriverError::Format(_) | DriverError::Netlist(_) => {
            Kind::Usage
        }
        DriverError::CapOutOfRange { .. } | DriverError::Unreachable { .. } | DriverError::Missing(_) => Kind::Domain,
        DriverError::NotSettled(_) | DriverError::Oracle(_) => Kind::Numerical,
    }
}

impl From<DcmError> for CliError {
    fn from(e: DcmError) -> Self {
        let mut msg = e.to_string();
        if let DcmError::Coverage { .. } = e {
            msg.push_str("; re-characterize the driver with a larger --c-max");
        }
        Self::new(dcm_kind(&e), msg)
    }
}

impl From<DriverError> for CliError {
    fn from(e: DriverError) -> Self {
        Self::new(driver_kind(&e), e.to_string())
    }
}

impl From<SuiteError> for CliError {
    fn from(e: SuiteError) -> Self {
        let kind = match &e {
            SuiteError::Netlist { .. } => Kind::Usage,
            SuiteError::Mor { .. } | SuiteError::Oracle { .. } | SuiteError::NoWindow { .. } => Kind::Numerical,
            SuiteError::Driver { source, .. } => driver_kind(source),
            SuiteError::Dcm { source, .. } => dcm_kind(source),
        };
        let mut msg = e.to_string();
        if let SuiteError::Dcm {
            source: DcmError::Coverage { .. },
            ..
        } = e
        {
            msg.push_str("; re-characterize the driver with a larger --c-max");
        }
        Self::new(kind, msg)
    }
}
