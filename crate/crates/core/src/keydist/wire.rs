//! TLV layouts of the protocol messages.
//!
//! ```text
//! KeyRequest  = 0x0001 version:u8
//!               0x0002 kdkp_public (SubjectPublicKeyInfo DER)
//!               0x0003 chain { 0x0010 certificate DER }*
//!               0x0004 signature
//! KeyResponse = 0x0001 version:u8
//!               0x0005 key_package_ct
//!               0x0003 chain { 0x0010 certificate DER }*
//!               0x0004 signature
//! KeyPackage  = 0x0020 cipher_spec (UTF-8)
//!               0x0021 mac_spec (UTF-8)
//!               0x0022 key_bytes
//! ```
//!
//! A request signs `TLV(version) ‖ TLV(kdkp_public)`. A response signs
//! `SHA-256(request_name ‖ request_bytes) ‖ TLV(version) ‖ TLV(key_package_ct)`.

use der::{Decode, Encode};
use sha2::{Digest, Sha256};
use x509_cert::Certificate;

use super::KeydistError;
use crate::tlv::{TlvReader, TlvWriter};

pub const PROTOCOL_VERSION: u8 = 1;

pub const TAG_VERSION: u16 = 0x0001;
pub const TAG_KDKP_PUBLIC: u16 = 0x0002;
pub const TAG_CHAIN: u16 = 0x0003;
pub const TAG_SIGNATURE: u16 = 0x0004;
pub const TAG_KEY_PACKAGE_CT: u16 = 0x0005;
pub const TAG_CERT: u16 = 0x0010;
pub const TAG_CIPHER_SPEC: u16 = 0x0020;
pub const TAG_MAC_SPEC: u16 = 0x0021;
pub const TAG_KEY_BYTES: u16 = 0x0022;

fn malformed(e: impl std::fmt::Display) -> KeydistError {
    KeydistError::MalformedMessage(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRequest {
    pub version: u8,
    pub kdkp_public: Vec<u8>,
    pub chain: Vec<Certificate>,
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyResponse {
    pub version: u8,
    pub key_package_ct: Vec<u8>,
    pub chain: Vec<Certificate>,
    pub signature: Vec<u8>,
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPackage {
    pub cipher_spec: String,
    pub mac_spec: String,
    pub key_bytes: Vec<u8>,
}

impl std::fmt::Debug for KeyPackage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPackage")
            .field("cipher_spec", &self.cipher_spec)
            .field("mac_spec", &self.mac_spec)
            .field("key_len", &self.key_bytes.len())
            .finish()
    }
}

fn put_chain(w: &mut TlvWriter, chain: &[Certificate]) {
    w.nested(TAG_CHAIN, |c| {
        for cert in chain {
            c.put(TAG_CERT, &cert.to_der().expect("certificate encodes"));
        }
    });
}

fn read_chain(raw: &[u8]) -> Result<Vec<Certificate>, KeydistError> {
    let mut r = TlvReader::new(raw);
    let certs = r
        .repeated(TAG_CERT)
        .map_err(malformed)?
        .into_iter()
        .map(|c| Certificate::from_der(c).map_err(malformed))
        .collect::<Result<Vec<_>, _>>()?;
    r.finish().map_err(malformed)?;
    Ok(certs)
}

fn check_version(v: u8) -> Result<u8, KeydistError> {
    if v != PROTOCOL_VERSION {
        return Err(KeydistError::MalformedMessage(format!("unsupported protocol version {v}")));
    }
    Ok(v)
}

impl KeyRequest {
    pub fn signed_payload(version: u8, kdkp_public: &[u8]) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put_u8(TAG_VERSION, version).put(TAG_KDKP_PUBLIC, kdkp_public);
        w.finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put_u8(TAG_VERSION, self.version).put(TAG_KDKP_PUBLIC, &self.kdkp_public);
        put_chain(&mut w, &self.chain);
        w.put(TAG_SIGNATURE, &self.signature);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, KeydistError> {
        let mut r = TlvReader::new(bytes);
        let version = check_version(r.expect_u8(TAG_VERSION).map_err(malformed)?)?;
        let kdkp_public = r.expect(TAG_KDKP_PUBLIC).map_err(malformed)?.to_vec();
        let chain = read_chain(r.expect(TAG_CHAIN).map_err(malformed)?)?;
        let signature = r.expect(TAG_SIGNATURE).map_err(malformed)?.to_vec();
        r.finish().map_err(malformed)?;
        Ok(Self {
            version,
            kdkp_public,
            chain,
            signature,
        })
    }
}

/// `SHA-256(request_name_utf8 ‖ request_bytes)`.
pub fn request_digest(request_name: &str, request_bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(request_name.as_bytes());
    h.update(request_bytes);
    h.finalize().into()
}

impl KeyResponse {
    pub fn signed_payload(request_name: &str, request_bytes: &[u8], version: u8, key_package_ct: &[u8]) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put_u8(TAG_VERSION, version).put(TAG_KEY_PACKAGE_CT, key_package_ct);
        [&request_digest(request_name, request_bytes)[..], w.as_bytes()].concat()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put_u8(TAG_VERSION, self.version)
            .put(TAG_KEY_PACKAGE_CT, &self.key_package_ct);
        put_chain(&mut w, &self.chain);
        w.put(TAG_SIGNATURE, &self.signature);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, KeydistError> {
        let mut r = TlvReader::new(bytes);
        let version = check_version(r.expect_u8(TAG_VERSION).map_err(malformed)?)?;
        let key_package_ct = r.expect(TAG_KEY_PACKAGE_CT).map_err(malformed)?.to_vec();
        let chain = read_chain(r.expect(TAG_CHAIN).map_err(malformed)?)?;
        let signature = r.expect(TAG_SIGNATURE).map_err(malformed)?.to_vec();
        r.finish().map_err(malformed)?;
        Ok(Self {
            version,
            key_package_ct,
            chain,
            signature,
        })
    }
}

impl KeyPackage {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put_str(TAG_CIPHER_SPEC, &self.cipher_spec)
            .put_str(TAG_MAC_SPEC, &self.mac_spec)
            .put(TAG_KEY_BYTES, &self.key_bytes);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = TlvReader::new(bytes);
        let pkg = Self {
            cipher_spec: r.expect_str(TAG_CIPHER_SPEC).map_err(|e| e.to_string())?.to_owned(),
            mac_spec: r.expect_str(TAG_MAC_SPEC).map_err(|e| e.to_string())?.to_owned(),
            key_bytes: r.expect(TAG_KEY_BYTES).map_err(|e| e.to_string())?.to_vec(),
        };
        r.finish().map_err(|e| e.to_string())?;
        Ok(pkg)
    }
}
