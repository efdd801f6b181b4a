//! Multi-authority, policy-gated encryption.
//!
//! Access semantics follow ciphertext-policy ABE: a payload is readable by
//! any key whose attributes satisfy the monotone policy it was sealed under.
//! The construction is a hybrid envelope with per-attribute wrap keys. It is
//! not collusion resistant: two users can pool attribute secrets.

mod authority;
mod envelope;
mod key;
mod policy;

use thiserror::Error;

pub use authority::{
    attribute_public_from_secret, attribute_secret, AuthorityInfo, AuthorityKeys, AuthorityRegistry,
    AuthorityService, LocalAuthority, PublicParams, MIN_SEED_LEN,
};
pub use envelope::{decrypt, encrypt, CiphertextEnvelope, WrappedShare, ENVELOPE_VERSION};
pub use key::{ABKey, KeyEntry};
pub use policy::{parse_policy, Attribute, PolicySyntaxError, PolicyTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbeError {
    #[error(transparent)]
    Syntax(#[from] PolicySyntaxError),
    #[error("attribute set does not satisfy the policy")]
    PolicyNotSatisfied,
    #[error("tampered envelope: {0}")]
    TamperedEnvelope(String),
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("unknown authority `{0}`")]
    UnknownAuthority(String),
    #[error("authority `{0}` is unavailable")]
    AuthorityUnavailable(String),
    #[error("duplicate authority `{0}`")]
    DuplicateAuthority(String),
    #[error("refusing to encrypt an empty plaintext")]
    EmptyPlaintext,
    #[error("encryption failed: {0}")]
    EncryptionFailed(String),
    #[error("attribute {0} was not granted")]
    UngrantedAttribute(Attribute),
    #[error("authority `{authority}` does not govern {attribute}")]
    ForeignAttribute { authority: String, attribute: Attribute },
    #[error("authority seed has {0} bytes, at least 32 are required")]
    WeakSeed(usize),
}

#[cfg(test)]
mod tests;
