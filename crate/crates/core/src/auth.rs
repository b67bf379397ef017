//! Signed authorization tokens.
//!
//! A token binds a tenant to a set of sites, a per-request resource ceiling
//! and an expiry. The tag is HMAC-SHA256 over a canonical encoding of every
//! other field, keyed with a secret shared by the orchestrator and the sites.

use std::collections::BTreeSet;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::model::{ResourceVector, SimTime, SiteId, TenantId};

type HmacSha256 = Hmac<Sha256>;

/// Secret length in bytes.
pub const SECRET_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthToken {
    pub token_id: String,
    pub tenant: TenantId,
    pub granted_sites: BTreeSet<SiteId>,
    pub ceiling: ResourceVector,
    pub expiry: SimTime,
    /// Hex-encoded MAC over the fields above.
    pub tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("token tag does not verify")]
    BadToken,
    #[error("token expired")]
    Expired,
}

#[derive(Debug, Error)]
pub enum SecretError {
    #[error("secret must be {SECRET_LEN} bytes, got {0}")]
    Length(usize),
    #[error("secret is not valid hex: {0}")]
    Hex(#[from] hex::FromHexError),
}

/// Issues and verifies tokens under one shared secret.
#[derive(Clone)]
pub struct TokenSigner {
    key: [u8; SECRET_LEN],
}

impl std::fmt::Debug for TokenSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenSigner(..)")
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
}

impl AuthToken {
    /// Canonical byte encoding of every field except the tag.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(128);
        buf.extend_from_slice(b"airan-token-v1");
        put_str(&mut buf, &self.token_id);
        put_str(&mut buf, self.tenant.as_str());
        buf.extend_from_slice(&(self.granted_sites.len() as u32).to_be_bytes());
        for s in &self.granted_sites {
            put_str(&mut buf, s.as_str());
        }
        for c in self.ceiling.components() {
            buf.extend_from_slice(&c.to_be_bytes());
        }
        buf.extend_from_slice(&self.expiry.to_bits().to_be_bytes());
        buf
    }

    pub fn is_expired(&self, now: SimTime) -> bool {
        // NaN expiry never verifies as live.
        now.partial_cmp(&self.expiry) != Some(std::cmp::Ordering::Less)
    }
}

impl TokenSigner {
    pub fn new(key: [u8; SECRET_LEN]) -> Self {
        Self { key }
    }

    pub fn from_hex(secret: &str) -> Result<Self, SecretError> {
        let bytes = hex::decode(secret.trim())?;
        let key: [u8; SECRET_LEN] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| SecretError::Length(bytes.len()))?;
        Ok(Self::new(key))
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key).expect("HMAC accepts any key length")
    }

    pub fn sign(&self, token: &mut AuthToken) {
        let mut mac = self.mac();
        mac.update(&token.signing_bytes());
        token.tag = hex::encode(mac.finalize().into_bytes());
    }

    pub fn issue(
        &self,
        token_id: impl Into<String>,
        tenant: TenantId,
        granted_sites: BTreeSet<SiteId>,
        ceiling: ResourceVector,
        expiry: SimTime,
    ) -> AuthToken {
        let mut t = AuthToken {
            token_id: token_id.into(),
            tenant,
            granted_sites,
            ceiling,
            expiry,
            tag: String::new(),
        };
        self.sign(&mut t);
        t
    }

    /// MAC check only.
    pub fn verify_tag(&self, token: &AuthToken) -> Result<(), TokenError> {
        let tag = hex::decode(&token.tag).map_err(|_| TokenError::BadToken)?;
        let mut mac = self.mac();
        mac.update(&token.signing_bytes());
        mac.verify_slice(&tag).map_err(|_| TokenError::BadToken)
    }

    /// MAC check, then expiry at `now`.
    pub fn verify(&self, token: &AuthToken, now: SimTime) -> Result<(), TokenError> {
        self.verify_tag(token)?;
        if token.is_expired(now) {
            return Err(TokenError::Expired);
        }
        Ok(())
    }
}
