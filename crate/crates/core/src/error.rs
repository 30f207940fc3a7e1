use thiserror::Error;

use crate::deformfit::FitError;
use crate::flatten::FlattenError;
use crate::lasso::LassoError;
use crate::mesh::MeshError;
use crate::render::RenderError;
use crate::vdm::VdmError;
use crate::winding::WindingError;

/// Any error raised by the crate, grouped by module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Winding(#[from] WindingError),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Flatten(#[from] FlattenError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Vdm(#[from] VdmError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Coarse classification used by the command-line driver for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or inconsistent input data.
    Data,
    /// A numerical procedure failed (non-finite values, no convergence).
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Fit(e) if e.is_numerical() => ErrorClass::Numerical,
            Error::Flatten(e) if e.is_numerical() => ErrorClass::Numerical,
            Error::Vdm(VdmError::NonFinite { .. }) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
