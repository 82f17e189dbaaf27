//! Password credentials and session tokens.
//!
//! Passwords are stored as `sha256(salt || password)`. A token is
//! `base64url(claims) "." hex(hmac_sha256(key, base64url(claims)))`, so the server
//! holds no session table.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::api::Role;

pub const DEFAULT_TOKEN_TTL_MS: u64 = 24 * 3600 * 1000;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("unknown user or wrong password")]
    AuthFailed,
    #[error("session token expired")]
    AuthExpired,
    #[error("missing or malformed session token")]
    InvalidToken,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub salt: String,
    pub hash: String,
}

impl Credential {
    pub fn new(password: &str) -> Self {
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        Self::with_salt(password, &salt)
    }

    pub fn with_salt(password: &str, salt: &[u8]) -> Self {
        Self { salt: hex::encode(salt), hash: hex::encode(salted_hash(salt, password)) }
    }

    pub fn verify(&self, password: &str) -> bool {
        let (Ok(salt), Ok(expected)) = (hex::decode(&self.salt), hex::decode(&self.hash)) else {
            return false;
        };
        constant_time_eq(&salted_hash(&salt, password), &expected)
    }
}

fn salted_hash(salt: &[u8], password: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(password.as_bytes());
    h.finalize().into()
}

pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClaims {
    pub worker_id: String,
    pub role: Role,
    pub expires_at_ms: u64,
}

/// Issues and checks session tokens under one key.
#[derive(Clone)]
pub struct TokenSigner {
    key: Vec<u8>,
}

impl std::fmt::Debug for TokenSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenSigner(..)")
    }
}

impl TokenSigner {
    pub fn new(key: Vec<u8>) -> Self {
        Self { key }
    }

    pub fn random() -> Self {
        let mut key = vec![0u8; 32];
        rand::thread_rng().fill_bytes(&mut key);
        Self { key }
    }

    pub fn key(&self) -> &[u8] {
        &self.key
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length")
    }

    pub fn issue(&self, claims: &TokenClaims) -> String {
        let body = URL_SAFE_NO_PAD.encode(serde_json::to_vec(claims).expect("claims serialize"));
        let mut mac = self.mac();
        mac.update(body.as_bytes());
        format!("{body}.{}", hex::encode(mac.finalize().into_bytes()))
    }

    pub fn verify(&self, token: &str, now_ms: u64) -> Result<TokenClaims, AuthError> {
        let (body, sig) = token.split_once('.').ok_or(AuthError::InvalidToken)?;
        let sig = hex::decode(sig).map_err(|_| AuthError::InvalidToken)?;
        let mut mac = self.mac();
        mac.update(body.as_bytes());
        mac.verify_slice(&sig).map_err(|_| AuthError::InvalidToken)?;
        let raw = URL_SAFE_NO_PAD.decode(body).map_err(|_| AuthError::InvalidToken)?;
        let claims: TokenClaims = serde_json::from_slice(&raw).map_err(|_| AuthError::InvalidToken)?;
        if now_ms >= claims.expires_at_ms {
            return Err(AuthError::AuthExpired);
        }
        Ok(claims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn credentials_verify_only_the_right_password() {
        let c = Credential::new("hunter2");
        assert!(c.verify("hunter2"));
        assert!(!c.verify("hunter3"));
        assert!(!c.verify(""));
        let d = Credential::new("hunter2");
        assert_ne!(c.salt, d.salt);
        assert_ne!(c.hash, d.hash);
    }

    #[test]
    fn known_salted_hash() {
        // sha256("ab" || "pw") computed independently of the helper
        let c = Credential::with_salt("pw", b"ab");
        let mut h = Sha256::new();
        h.update(b"abpw");
        assert_eq!(c.hash, hex::encode(h.finalize()));
    }

    #[test]
    fn tokens_roundtrip_and_expire() {
        let s = TokenSigner::random();
        let claims = TokenClaims { worker_id: "w1".into(), role: Role::Worker, expires_at_ms: 1000 };
        let t = s.issue(&claims);
        assert_eq!(s.verify(&t, 999).unwrap(), claims);
        assert_eq!(s.verify(&t, 1000), Err(AuthError::AuthExpired));
    }

    #[test]
    fn forged_tokens_rejected() {
        let s = TokenSigner::random();
        let t = s.issue(&TokenClaims { worker_id: "w1".into(), role: Role::Worker, expires_at_ms: u64::MAX });
        let other = TokenSigner::random();
        assert_eq!(other.verify(&t, 0), Err(AuthError::InvalidToken));
        // swap in elevated claims under the original signature
        let (_, sig) = t.split_once('.').unwrap();
        let forged_body = URL_SAFE_NO_PAD.encode(
            serde_json::to_vec(&TokenClaims { worker_id: "w1".into(), role: Role::Learner, expires_at_ms: u64::MAX }).unwrap(),
        );
        assert_eq!(s.verify(&format!("{forged_body}.{sig}"), 0), Err(AuthError::InvalidToken));
        assert_eq!(s.verify("garbage", 0), Err(AuthError::InvalidToken));
        assert_eq!(s.verify("a.zz", 0), Err(AuthError::InvalidToken));
    }
}
