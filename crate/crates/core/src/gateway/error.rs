use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProviderErrorKind {
    SafetyRejected,
    RateLimited,
    Transient,
    Malformed,
    Unavailable,
}

impl ProviderErrorKind {
    pub const ALL: [ProviderErrorKind; 5] =
        [Self::SafetyRejected, Self::RateLimited, Self::Transient, Self::Malformed, Self::Unavailable];

    pub fn is_retryable(self) -> bool {
        matches!(self, Self::RateLimited | Self::Transient | Self::Unavailable)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SafetyRejected => "SafetyRejected",
            Self::RateLimited => "RateLimited",
            Self::Transient => "Transient",
            Self::Malformed => "Malformed",
            Self::Unavailable => "Unavailable",
        }
    }
}

/// Failure reported by an upstream provider, classified into a closed set
/// of kinds. `retryable` is derived from `kind` and cannot disagree with it.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind:?}: {detail}")]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub detail: String,
    pub retryable: bool,
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into(), retryable: kind.is_retryable() }
    }

    pub fn safety(detail: impl Into<String>) -> Self {
        Self::new(ProviderErrorKind::SafetyRejected, detail)
    }

    pub fn transient(detail: impl Into<String>) -> Self {
        Self::new(ProviderErrorKind::Transient, detail)
    }

    pub fn malformed(detail: impl Into<String>) -> Self {
        Self::new(ProviderErrorKind::Malformed, detail)
    }

    pub fn unavailable(detail: impl Into<String>) -> Self {
        Self::new(ProviderErrorKind::Unavailable, detail)
    }

    pub fn rate_limited(detail: impl Into<String>) -> Self {
        Self::new(ProviderErrorKind::RateLimited, detail)
    }
}

const SAFETY_MARKERS: [&str; 6] =
    ["content_policy_violation", "content_filter", "safety", "unsafe", "moderation", "responsible_ai_policy"];

/// True when an error or refusal body carries a content-policy marker.
pub fn mentions_safety(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    SAFETY_MARKERS.iter().any(|m| lower.contains(m))
}

/// Classifies a non-2xx HTTP response. Safety markers win over the status
/// code because providers report policy refusals as 400 or 403.
pub fn classify_status(status: u16, body: &str) -> ProviderError {
    let snippet: String = body.chars().take(200).collect();
    let detail = format!("HTTP {status}: {snippet}");
    if mentions_safety(body) {
        return ProviderError::safety(detail);
    }
    let kind = match status {
        429 => ProviderErrorKind::RateLimited,
        408 | 425 | 500 | 502 | 504 => ProviderErrorKind::Transient,
        503 => ProviderErrorKind::Unavailable,
        // Anything else, including unexpected 1xx/3xx and other 4xx/5xx,
        // means the request or response is not something a retry can fix.
        _ => ProviderErrorKind::Malformed,
    };
    ProviderError::new(kind, detail)
}

/// Transport-level failure classes the live client can hit before a
/// status line arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportFailure {
    Timeout,
    ConnectFailed,
    HostNotFound,
    ConnectionReset,
    Protocol,
}

pub fn classify_transport(failure: TransportFailure, detail: &str) -> ProviderError {
    let kind = match failure {
        TransportFailure::Timeout | TransportFailure::ConnectionReset => ProviderErrorKind::Transient,
        TransportFailure::ConnectFailed | TransportFailure::HostNotFound => ProviderErrorKind::Unavailable,
        TransportFailure::Protocol => ProviderErrorKind::Malformed,
    };
    ProviderError::new(kind, format!("{failure:?}: {detail}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retryable_follows_kind() {
        for kind in ProviderErrorKind::ALL {
            let e = ProviderError::new(kind, "x");
            assert_eq!(
                e.retryable,
                matches!(kind, ProviderErrorKind::RateLimited | ProviderErrorKind::Transient | ProviderErrorKind::Unavailable)
            );
        }
        assert!(!ProviderError::safety("x").retryable);
    }

    #[test]
    fn safety_marker_overrides_status() {
        let e = classify_status(400, r#"{"error":{"code":"content_policy_violation"}}"#);
        assert_eq!(e.kind, ProviderErrorKind::SafetyRejected);
        let e = classify_status(500, "request flagged by moderation");
        assert_eq!(e.kind, ProviderErrorKind::SafetyRejected);
    }

    #[test]
    fn status_table() {
        assert_eq!(classify_status(429, "").kind, ProviderErrorKind::RateLimited);
        assert_eq!(classify_status(503, "").kind, ProviderErrorKind::Unavailable);
        assert_eq!(classify_status(502, "").kind, ProviderErrorKind::Transient);
        assert_eq!(classify_status(404, "").kind, ProviderErrorKind::Malformed);
        assert_eq!(classify_status(501, "").kind, ProviderErrorKind::Malformed);
    }
}
