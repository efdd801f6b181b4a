//! Process exit codes. Every API error code has its own exit status.

pub const OK: i32 = 0;
/// Errors without a dedicated code.
pub const OTHER: i32 = 1;
/// Bad command line, as reported by clap.
pub const USAGE: i32 = 2;
pub const TRANSPORT: i32 = 3;
/// Local files: identity, key, spec or payload could not be read or written.
pub const LOCAL: i32 = 4;
/// The command ran, but its outcome is not what was asked for (an instance
/// that did not complete, a ledger that does not verify).
pub const CHECK_FAILED: i32 = 5;

const FIRST_API: i32 = 10;

/// Ordered once; appending keeps existing statuses stable.
pub const API_CODES: &[&str] = &[
    "Unauthorized",
    "BadAuth",
    "BadRequest",
    "BadArguments",
    "SchemaViolation",
    "PolicyParseError",
    "BadPolicy",
    "SpecInvalid",
    "InvalidSpec",
    "NotOwner",
    "WrongInitiator",
    "BadAttestation",
    "WrongAccount",
    "NotCertifier",
    "NotAdmin",
    "NoGrants",
    "PolicyNotSatisfied",
    "UnknownProcess",
    "UnknownInstance",
    "UnknownMessage",
    "UnknownRole",
    "UnknownTask",
    "UnknownAuthority",
    "NotFound",
    "OutOfRange",
    "UnknownFixture",
    "NotEnabled",
    "RoleTaken",
    "AlreadyRegistered",
    "DuplicateDeploy",
    "DuplicateStore",
    "InstanceCompleted",
    "UnboundRoles",
    "DuplicateAuthority",
    "NoPolicy",
    "NotNotarized",
    "NotarizationFailed",
    "TamperedEnvelope",
    "AuthorityUnavailable",
    "EncryptionFailed",
    "MalformedKey",
    "LedgerRejected",
    "UnknownCall",
    "UnknownContract",
    "GatewayLivelock",
    "EmptyPlaintext",
    "StaleEpoch",
    "PolicyMismatch",
    "NoRoute",
    "UnboundVariable",
    "TypeMismatch",
    "NotParticipant",
    "LedgerError",
    "Internal",
];

pub fn for_code(code: &str) -> i32 {
    match code {
        "TransportError" => TRANSPORT,
        "LocalError" => LOCAL,
        "CheckFailed" => CHECK_FAILED,
        "UsageError" => USAGE,
        _ => API_CODES
            .iter()
            .position(|c| *c == code)
            .map_or(OTHER, |i| FIRST_API + i as i32),
    }
}
