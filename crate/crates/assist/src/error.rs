use axum::http::StatusCode;

use crate::wire::ErrorBody;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssistError {
    #[error("malformed setup: {0}")]
    MalformedSetup(String),
    #[error("predict called before setup")]
    SetupRequired,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("could not load image: {0}")]
    ImageFetch(String),
    #[error("upstream did not answer after {attempts} attempt(s): {last}")]
    UpstreamTimeout { attempts: u32, last: String },
    #[error("upstream answer rejected: {0}")]
    UpstreamMalformed(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl AssistError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::MalformedSetup(_) => "MalformedSetup",
            Self::SetupRequired => "SetupRequired",
            Self::InvalidRequest(_) => "InvalidRequest",
            Self::UnknownClass(_) => "UnknownClass",
            Self::InvalidPrompt(_) => "InvalidPrompt",
            Self::ImageFetch(_) => "ImageFetchError",
            Self::UpstreamTimeout { .. } => "UpstreamTimeout",
            Self::UpstreamMalformed(_) => "UpstreamMalformed",
            Self::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::MalformedSetup(_) | Self::InvalidRequest(_) | Self::UnknownClass(_) | Self::InvalidPrompt(_) => {
                StatusCode::BAD_REQUEST
            }
            Self::SetupRequired => StatusCode::CONFLICT,
            Self::ImageFetch(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::UpstreamTimeout { .. } => StatusCode::GATEWAY_TIMEOUT,
            Self::UpstreamMalformed(_) => StatusCode::BAD_GATEWAY,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self, request_id: Option<String>) -> ErrorBody {
        ErrorBody {
            error: self.kind().to_string(),
            message: self.to_string(),
            request_id,
        }
    }
}
