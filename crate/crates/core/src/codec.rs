//! Encrypted file names.
//!
//! Each path segment is encrypted on its own with AES-ECB/PKCS#5 under the
//! folder secret and encoded with standard Base64 where `/` is replaced by `-`.
//! Padding `=` is kept. ECB is deterministic on purpose: the same cleartext name
//! always maps to the same shared name, so independent replicas agree on where a
//! file lives without any coordination.

use std::fmt;

use base64::alphabet::Alphabet;
use base64::engine::{DecodePaddingMode, GeneralPurpose, GeneralPurposeConfig};
use base64::Engine as _;
use thiserror::Error;

use crate::crypto::{ecb_decrypt, ecb_encrypt, CryptoError, PairKey};

const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+-";

/// Longest encoded name most filesystems accept.
pub const MAX_ENCODED_LEN: usize = 255;
/// Longest cleartext segment whose encoding stays within [`MAX_ENCODED_LEN`].
pub const MAX_NAME_LEN: usize = 175;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("not a valid encoded name")]
    MalformedEncoding,
    #[error("name does not decrypt under this key")]
    BadPadding,
    #[error("invalid file name")]
    InvalidName,
    #[error("file name longer than {MAX_NAME_LEN} bytes")]
    NameTooLong,
}

fn engine() -> GeneralPurpose {
    let alphabet = Alphabet::new(ALPHABET).expect("static alphabet is valid");
    let config = GeneralPurposeConfig::new()
        .with_encode_padding(true)
        .with_decode_padding_mode(DecodePaddingMode::RequireCanonical);
    GeneralPurpose::new(&alphabet, config)
}

pub fn encode(bytes: &[u8]) -> String {
    engine().encode(bytes)
}

pub fn decode(text: &str) -> Result<Vec<u8>, CodecError> {
    engine().decode(text).map_err(|_| CodecError::MalformedEncoding)
}

/// A shared-folder name segment in the filesystem-safe alphabet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EncodedName(String);

impl EncodedName {
    /// Accepts only canonical encodings of whole AES blocks.
    pub fn parse(text: &str) -> Result<Self, CodecError> {
        let raw = decode(text)?;
        if raw.is_empty() || raw.len() % crate::crypto::BLOCK_SIZE != 0 {
            return Err(CodecError::MalformedEncoding);
        }
        Ok(Self(text.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EncodedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn check_segment(name: &str) -> Result<(), CodecError> {
    if name.is_empty() || name == "." || name == ".." || name.contains(['/', '\\', '\0']) {
        return Err(CodecError::InvalidName);
    }
    if name.len() > MAX_NAME_LEN {
        return Err(CodecError::NameTooLong);
    }
    Ok(())
}

pub fn encrypt_name(key: &PairKey, cleartext: &str) -> Result<EncodedName, CodecError> {
    check_segment(cleartext)?;
    Ok(EncodedName(encode(&ecb_encrypt(&key.cipher(), cleartext.as_bytes()))))
}

pub fn decrypt_name(key: &PairKey, encoded: &str) -> Result<String, CodecError> {
    let raw = decode(encoded)?;
    if raw.is_empty() || raw.len() % crate::crypto::BLOCK_SIZE != 0 {
        return Err(CodecError::BadPadding);
    }
    let plain = ecb_decrypt(&key.cipher(), &raw).map_err(|e| match e {
        CryptoError::BadPadding => CodecError::BadPadding,
        _ => CodecError::MalformedEncoding,
    })?;
    let name = String::from_utf8(plain).map_err(|_| CodecError::InvalidName)?;
    check_segment(&name)?;
    Ok(name)
}

/// Encrypts a `/`-separated relative path one segment at a time.
pub fn encrypt_path(key: &PairKey, rel: &str) -> Result<String, CodecError> {
    let parts = rel
        .split('/')
        .map(|s| encrypt_name(key, s).map(|e| e.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.join("/"))
}

pub fn decrypt_path(key: &PairKey, rel: &str) -> Result<String, CodecError> {
    let parts = rel
        .split('/')
        .map(|s| decrypt_name(key, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.join("/"))
}
