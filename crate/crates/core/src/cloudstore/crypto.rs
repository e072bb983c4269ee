//! Owner key material: AEAD for sensitive tuples, PRF for search tokens.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hmac::{Hmac, Mac};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

type HmacSha256 = Hmac<Sha256>;

pub const NONCE_LEN: usize = 12;

/// Deterministic search token for one occurrence of a key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(pub [u8; 32]);

impl Token {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Protocol(format!("bad token hex: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Protocol("token must be 32 bytes".into()))?;
        Ok(Token(arr))
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Token({}..)", &self.to_hex()[..8])
    }
}

impl Serialize for Token {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Token::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// What a search token is computed over. Real values and the owner's hidden
/// padding keys never collide because the variant is part of the PRF input.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKey {
    Value(String),
    /// Padding tuples of one sensitive bin in one layout epoch.
    Padding {
        layout: String,
        epoch: u64,
        bin: usize,
    },
}

impl SearchKey {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            SearchKey::Value(v) => {
                out.push(0);
                put(out, v.as_bytes());
            }
            SearchKey::Padding { layout, epoch, bin } => {
                out.push(1);
                put(out, layout.as_bytes());
                out.extend_from_slice(&epoch.to_be_bytes());
                out.extend_from_slice(&(*bin as u64).to_be_bytes());
            }
        }
    }
}

fn put(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Secret([u8; 32]);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(..)")
    }
}

/// Owner secret. Subkeys for encryption and tokens are derived from a
/// single master key. A key may only ever be bound to one store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OwnerKey {
    master: Secret,
    enc: Secret,
    tok: Secret,
    bound_store: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    master: String,
    bound_store: Option<String>,
}

fn derive(master: &[u8; 32], label: &[u8]) -> [u8; 32] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(master).expect("hmac takes any key length");
    mac.update(label);
    mac.finalize().into_bytes().into()
}

impl OwnerKey {
    pub fn generate() -> Self {
        let mut m = [0u8; 32];
        OsRng.fill_bytes(&mut m);
        Self::from_master(m)
    }

    pub fn from_master(master: [u8; 32]) -> Self {
        OwnerKey {
            enc: Secret(derive(&master, b"panda/enc")),
            tok: Secret(derive(&master, b"panda/tok")),
            master: Secret(master),
            bound_store: None,
        }
    }

    /// Public identifier of the key, safe to write next to a store.
    pub fn fingerprint(&self) -> String {
        hex::encode(&derive(&self.master.0, b"panda/fingerprint")[..8])
    }

    pub fn bound_store(&self) -> Option<&str> {
        self.bound_store.as_deref()
    }

    /// Binds the key to `store_id`; refuses a key already bound elsewhere.
    pub fn bind(&mut self, store_id: &str) -> Result<()> {
        match &self.bound_store {
            Some(s) if s != store_id => Err(Error::Config(format!(
                "owner key is already bound to store {s}; generate a fresh key"
            ))),
            _ => {
                self.bound_store = Some(store_id.to_string());
                Ok(())
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&KeyFile {
            master: hex::encode(self.master.0),
            bound_store: self.bound_store.clone(),
        })
        .expect("key file serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: KeyFile = serde_json::from_str(text)?;
        let bytes = hex::decode(&f.master).map_err(|e| Error::Config(format!("bad key file: {e}")))?;
        let master: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Config("key must be 32 bytes".into()))?;
        let mut k = Self::from_master(master);
        k.bound_store = f.bound_store;
        Ok(k)
    }

    /// Token for the `occurrence`-th (1-based) tuple carrying `key` in
    /// `table.attr`.
    pub fn token(&self, table: &str, attr: &str, key: &SearchKey, occurrence: u64) -> Token {
        let mut buf = Vec::with_capacity(64);
        put(&mut buf, table.as_bytes());
        put(&mut buf, attr.as_bytes());
        key.encode(&mut buf);
        buf.extend_from_slice(&occurrence.to_be_bytes());
        let mut mac = <HmacSha256 as Mac>::new_from_slice(&self.tok.0).expect("hmac takes any key length");
        mac.update(&buf);
        Token(mac.finalize().into_bytes().into())
    }

    /// Encrypts with a fresh random nonce; `aad` binds the ciphertext to
    /// its table.
    pub fn encrypt(&self, plaintext: &[u8], aad: &[u8]) -> ([u8; NONCE_LEN], Vec<u8>) {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.enc.0));
        let mut nonce = [0u8; NONCE_LEN];
        OsRng.fill_bytes(&mut nonce);
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad })
            .expect("encryption cannot fail for in-memory buffers");
        (nonce, ct)
    }

    pub fn decrypt(&self, nonce: &[u8; NONCE_LEN], ciphertext: &[u8], aad: &[u8]) -> Result<Vec<u8>> {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.enc.0));
        cipher
            .decrypt(Nonce::from_slice(nonce), Payload { msg: ciphertext, aad })
            .map_err(|_| Error::Integrity("ciphertext failed authentication".into()))
    }
}

/// Hex SHA-256 helper for manifests.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
