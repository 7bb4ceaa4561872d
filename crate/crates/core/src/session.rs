//! Session descriptors and the client-facing request/response bodies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::PlanError;
use crate::field::FieldElement;
use crate::identity::{Fingerprint, PublicKey};
use crate::report::TimingRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Sum,
    Average,
}

impl FromStr for Operation {
    type Err = PlanError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Operation::Sum),
            "average" => Ok(Operation::Average),
            other => Err(PlanError::UnsupportedOperation(other.to_owned())),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operation::Sum => "sum",
            Operation::Average => "average",
        })
    }
}

/// Identity and protocol endpoint of a session member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantInfo {
    pub fingerprint: Fingerprint,
    pub public_key: PublicKey,
    pub endpoint: String,
}

/// A client request resolved against the registry.
///
/// `participants` lists the contributing peers only; the gateway is kept
/// apart because it always joins without input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub group: String,
    pub operation: Operation,
    pub data_type: String,
    pub participants: Vec<ParticipantInfo>,
    pub gateway: ParticipantInfo,
    pub retry_budget: u32,
    pub attempt: u32,
    pub client: Option<String>,
}

/// Body of a compute `client_request`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientQuery {
    pub group: String,
    pub operation: String,
    pub data_type: String,
}

/// Anything a client may send.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClientCall {
    Query(ClientQuery),
    ListMetadata { list_metadata: bool },
}

/// Reduced fraction, used for averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub numerator: u64,
    pub denominator: u64,
}

impl Rational {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        assert!(denominator > 0, "zero denominator");
        let g = gcd(numerator, denominator);
        Rational {
            numerator: numerator / g,
            denominator: denominator / g,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Successful answer to a compute request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientResult {
    pub session_id: String,
    /// Stable across attempts; peers derive their seeded readings from it.
    #[serde(default)]
    pub request_id: String,
    pub operation: Operation,
    /// The field result, equal to the integer sum under the input bound.
    pub result: FieldElement,
    /// Present for averages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average: Option<Rational>,
    pub contributors: usize,
    pub attempts: u32,
    #[serde(default)]
    pub participants: Vec<Fingerprint>,
    #[serde(default)]
    pub timing: Vec<TimingRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownGroup,
    GroupTooSmall,
    UnsupportedOperation,
    SessionFailed,
    BadRequest,
    FingerprintMismatch,
    MetadataRejected,
    CapabilityMissing,
    UnknownParticipant,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
}

impl ErrorBody {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorBody {
            code,
            message: message.into(),
            attempts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogPeer {
    pub fingerprint: Fingerprint,
    pub location: String,
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogGroup {
    pub label: String,
    pub members: Vec<Fingerprint>,
}

/// What a client may learn without running a computation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub groups: Vec<CatalogGroup>,
    pub peers: Vec<CatalogPeer>,
    pub capabilities: Vec<String>,
}

impl Catalog {
    pub fn group(&self, label: &str) -> Option<&CatalogGroup> {
        self.groups.iter().find(|g| g.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClientReply {
    Result(ClientResult),
    Catalog(Catalog),
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn operation_parsing() {
        assert_eq!("sum".parse::<Operation>().unwrap(), Operation::Sum);
        assert_eq!("average".parse::<Operation>().unwrap(), Operation::Average);
        assert_eq!(
            "median".parse::<Operation>(),
            Err(PlanError::UnsupportedOperation("median".into()))
        );
    }

    #[test]
    fn client_call_shapes() {
        let q: ClientCall = serde_json::from_value(json!({
            "group": "floor2/presence_count", "operation": "sum", "data_type": "presence_count"
        }))
        .unwrap();
        assert!(matches!(q, ClientCall::Query(_)));
        let l: ClientCall = serde_json::from_value(json!({"list_metadata": true})).unwrap();
        assert_eq!(l, ClientCall::ListMetadata { list_metadata: true });
        assert!(serde_json::from_value::<ClientCall>(json!({"group": 1})).is_err());
    }

    #[test]
    fn rational_reduces() {
        assert_eq!(Rational::new(30, 3), Rational { numerator: 10, denominator: 1 });
        assert_eq!(Rational::new(7, 14), Rational { numerator: 1, denominator: 2 });
        assert_eq!(Rational::new(0, 5), Rational { numerator: 0, denominator: 1 });
    }

    #[test]
    fn replies_round_trip_through_the_untagged_enum() {
        let r = ClientResult {
            session_id: "r-a1".into(),
            request_id: "r".into(),
            operation: Operation::Average,
            result: FieldElement::new(61),
            average: Some(Rational::new(61, 3)),
            contributors: 3,
            attempts: 1,
            participants: Vec::new(),
            timing: Vec::new(),
        };
        let text = serde_json::to_string(&ClientReply::Result(r.clone())).unwrap();
        assert_eq!(serde_json::from_str::<ClientReply>(&text).unwrap(), ClientReply::Result(r));
        let c = ClientReply::Catalog(Catalog::default());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ClientReply>(&text).unwrap(), c);
    }
}
