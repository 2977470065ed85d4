//! Folder-key distribution through files in the shared folder.
//!
//! A member without the key drops a signed request `_<id>` into the shared
//! folder. Any member holding the key sees it, shows the requester identity to
//! its user and, once approved, writes `_<id>.<rid>` containing the key sealed
//! to the requester's key-distribution key pair (KDKP) and signed over a digest
//! of the request file name and bytes. The requester validates the responder,
//! installs the key and removes the request together with every response to it.
//!
//! Ids are 128-bit random values rendered as 32 lowercase hex digits.

pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rand::{CryptoRng, RngCore};
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey};
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};
use sha2::Sha256;
use thiserror::Error;

use crate::crypto::{AlgorithmSpec, PairKey};
use crate::fsutil;
use crate::identity::{ChainValidator, IdentityError, IdentityToken, ValidatedIdentity};

pub use wire::{KeyPackage, KeyRequest, KeyResponse, PROTOCOL_VERSION};

pub const KDKP_BITS: usize = 2048;
/// Orphaned protocol files older than this are removed.
pub const DEFAULT_ORPHAN_TIMEOUT_SECS: i64 = 48 * 3600;
/// A request left unanswered this long is replaced by one with a fresh id.
pub const DEFAULT_RESPONSE_WAIT_SECS: i64 = 600;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeydistError {
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("the local user denied the request")]
    ApprovalDenied,
    #[error("malformed protocol message: {0}")]
    MalformedMessage(String),
    #[error("invalid key package from {responder}: {reason}")]
    MalformedPackage { responder: String, reason: String },
    #[error("shared folder is read-only")]
    FolderReadOnly,
    #[error("i/o error: {0}")]
    Io(String),
}

fn io_err(e: io::Error) -> KeydistError {
    if fsutil::is_read_only_error(&e) {
        KeydistError::FolderReadOnly
    } else {
        KeydistError::Io(e.to_string())
    }
}

/// 128-bit identifier of a request or response file.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProtocolId(pub [u8; 16]);

pub type RequestId = ProtocolId;
pub type ResponseId = ProtocolId;

impl ProtocolId {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        Self(b)
    }

    /// `_<hex>`, the file name of a request with this id.
    pub fn request_file_name(&self) -> String {
        format!("_{self}")
    }

    /// `_<request>.<response>`.
    pub fn response_file_name(&self, response: &ResponseId) -> String {
        format!("_{self}.{response}")
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ProtocolId({self})")
    }
}

impl FromStr for ProtocolId {
    type Err = KeydistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 32 {
            return Err(KeydistError::MalformedMessage(format!("bad id {s:?}")));
        }
        let mut b = [0u8; 16];
        hex::decode_to_slice(s.to_ascii_lowercase(), &mut b)
            .map_err(|_| KeydistError::MalformedMessage(format!("bad id {s:?}")))?;
        Ok(Self(b))
    }
}

/// How a `_`-prefixed name in the shared folder is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolName {
    Request(RequestId),
    Response(RequestId, ResponseId),
}

pub fn parse_protocol_name(name: &str) -> Option<ProtocolName> {
    let rest = name.strip_prefix('_')?;
    match rest.split_once('.') {
        None => rest.parse().ok().map(ProtocolName::Request),
        Some((req, resp)) => Some(ProtocolName::Response(req.parse().ok()?, resp.parse().ok()?)),
    }
}

/// Key-distribution key pair: RSA with OAEP/SHA-256 for sealing key packages.
#[derive(Clone, PartialEq, Eq)]
pub struct Kdkp(RsaPrivateKey);

impl fmt::Debug for Kdkp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Kdkp(<private>)")
    }
}

impl Kdkp {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::generate_with_bits(KDKP_BITS, rng)
    }

    pub fn generate_with_bits<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Self {
        Self(RsaPrivateKey::new(rng, bits).expect("rsa key generation"))
    }

    pub fn public_der(&self) -> Vec<u8> {
        self.0
            .to_public_key()
            .to_public_key_der()
            .expect("public key encodes")
            .into_vec()
    }

    pub fn to_pkcs8_der(&self) -> Vec<u8> {
        self.0.to_pkcs8_der().expect("private key encodes").as_bytes().to_vec()
    }

    pub fn from_pkcs8_der(der: &[u8]) -> Result<Self, String> {
        RsaPrivateKey::from_pkcs8_der(der).map(Self).map_err(|e| e.to_string())
    }

    fn decrypt(&self, ct: &[u8]) -> Result<Vec<u8>, String> {
        self.0.decrypt(Oaep::new::<Sha256>(), ct).map_err(|e| e.to_string())
    }
}

pub fn build_request(identity: &dyn IdentityToken, kdkp_public: &[u8]) -> Result<Vec<u8>, KeydistError> {
    let payload = KeyRequest::signed_payload(PROTOCOL_VERSION, kdkp_public);
    let signature = identity.sign(&payload)?;
    Ok(KeyRequest {
        version: PROTOCOL_VERSION,
        kdkp_public: kdkp_public.to_vec(),
        chain: identity.chain()?,
        signature,
    }
    .encode())
}

/// Caches the signed request body so the token signs at most once per run.
#[derive(Debug, Default)]
pub struct RequestSigner {
    cached: Mutex<Option<(Vec<u8>, Vec<u8>)>>,
}

impl RequestSigner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn request_bytes(&self, identity: &dyn IdentityToken, kdkp_public: &[u8]) -> Result<Vec<u8>, KeydistError> {
        let mut guard = self.cached.lock().expect("request cache poisoned");
        if let Some((public, bytes)) = guard.as_ref() {
            if public == kdkp_public {
                return Ok(bytes.clone());
            }
        }
        let bytes = build_request(identity, kdkp_public)?;
        *guard = Some((kdkp_public.to_vec(), bytes.clone()));
        Ok(bytes)
    }
}

fn ensure_writable(shared: &Path) -> Result<(), KeydistError> {
    if fsutil::is_read_only_dir(shared) {
        return Err(KeydistError::FolderReadOnly);
    }
    Ok(())
}

/// Writes `_<fresh id>` into the shared folder.
pub fn place_request<R: RngCore + ?Sized>(
    shared: &Path,
    request_bytes: &[u8],
    rng: &mut R,
) -> Result<RequestId, KeydistError> {
    ensure_writable(shared)?;
    let id = ProtocolId::random(rng);
    fsutil::write_atomic(&shared.join(id.request_file_name()), request_bytes).map_err(io_err)?;
    Ok(id)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FolderScan {
    /// Requests from others, with their file bytes.
    pub inbound: Vec<(RequestId, Vec<u8>)>,
    /// Responses to requests this user placed.
    pub responses_to_mine: Vec<(RequestId, ResponseId)>,
    /// Responses without a request, and unparseable protocol files.
    pub orphans: Vec<String>,
}

/// Classifies the `_`-prefixed files directly inside `shared`.
pub fn scan_folder(shared: &Path, is_mine: &dyn Fn(&RequestId) -> bool) -> Result<FolderScan, KeydistError> {
    let mut names: Vec<String> = fs::read_dir(shared)
        .map_err(io_err)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with('_'))
        .collect();
    names.sort();
    let requests: Vec<RequestId> = names
        .iter()
        .filter_map(|n| match parse_protocol_name(n) {
            Some(ProtocolName::Request(id)) => Some(id),
            _ => None,
        })
        .collect();
    let mut scan = FolderScan::default();
    for name in names {
        match parse_protocol_name(&name) {
            Some(ProtocolName::Request(id)) => {
                if is_mine(&id) {
                    continue;
                }
                match fs::read(shared.join(&name)) {
                    Ok(bytes) if KeyRequest::decode(&bytes).is_ok() => scan.inbound.push((id, bytes)),
                    Ok(_) => scan.orphans.push(name),
                    Err(_) => {}
                }
            }
            Some(ProtocolName::Response(req, resp)) => {
                if is_mine(&req) {
                    scan.responses_to_mine.push((req, resp));
                } else if !requests.contains(&req) {
                    scan.orphans.push(name);
                }
            }
            None => scan.orphans.push(name),
        }
    }
    Ok(scan)
}

/// A request whose chain and signature checked out. Only [`verify_request`]
/// creates one, so a response can never be built for an unverified request.
#[derive(Debug, Clone)]
pub struct VerifiedRequest {
    file_name: String,
    bytes: Vec<u8>,
    request: KeyRequest,
    requester: ValidatedIdentity,
}

impl VerifiedRequest {
    pub fn requester(&self) -> &ValidatedIdentity {
        &self.requester
    }

    pub fn file_name(&self) -> &str {
        &self.file_name
    }

    pub fn request_id(&self) -> RequestId {
        match parse_protocol_name(&self.file_name) {
            Some(ProtocolName::Request(id)) => id,
            _ => unreachable!("verified requests always carry a request file name"),
        }
    }
}

pub fn verify_request(
    request_file_name: &str,
    request_bytes: &[u8],
    validator: &dyn ChainValidator,
    now: i64,
) -> Result<VerifiedRequest, KeydistError> {
    if !matches!(parse_protocol_name(request_file_name), Some(ProtocolName::Request(_))) {
        return Err(KeydistError::MalformedMessage(format!(
            "{request_file_name} is not a request file name"
        )));
    }
    let request = KeyRequest::decode(request_bytes)?;
    let requester = validator.validate(&request.chain, now)?;
    requester.verify(
        &KeyRequest::signed_payload(request.version, &request.kdkp_public),
        &request.signature,
    )?;
    RsaPublicKey::from_public_key_der(&request.kdkp_public)
        .map_err(|e| KeydistError::MalformedMessage(format!("kdkp public key: {e}")))?;
    Ok(VerifiedRequest {
        file_name: request_file_name.to_owned(),
        bytes: request_bytes.to_vec(),
        request,
        requester,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Approve,
    Deny,
}

pub fn build_response<R: RngCore + CryptoRng>(
    verified: &VerifiedRequest,
    decision: Decision,
    pair_key: &PairKey,
    identity: &dyn IdentityToken,
    rng: &mut R,
) -> Result<(ResponseId, Vec<u8>), KeydistError> {
    if decision == Decision::Deny {
        return Err(KeydistError::ApprovalDenied);
    }
    let spec = pair_key.spec();
    let package = KeyPackage {
        cipher_spec: spec.cipher_spec(),
        mac_spec: spec.mac_spec(),
        key_bytes: pair_key.secret().to_vec(),
    };
    let public = RsaPublicKey::from_public_key_der(&verified.request.kdkp_public)
        .map_err(|e| KeydistError::MalformedMessage(e.to_string()))?;
    let key_package_ct = public
        .encrypt(rng, Oaep::new::<Sha256>(), &package.encode())
        .map_err(|e| KeydistError::MalformedMessage(format!("cannot seal key package: {e}")))?;
    let payload = KeyResponse::signed_payload(&verified.file_name, &verified.bytes, PROTOCOL_VERSION, &key_package_ct);
    let signature = identity.sign(&payload)?;
    let response = KeyResponse {
        version: PROTOCOL_VERSION,
        key_package_ct,
        chain: identity.chain()?,
        signature,
    };
    Ok((ProtocolId::random(rng), response.encode()))
}

pub fn place_response(
    shared: &Path,
    request: &RequestId,
    response: &ResponseId,
    bytes: &[u8],
) -> Result<PathBuf, KeydistError> {
    ensure_writable(shared)?;
    let path = shared.join(request.response_file_name(response));
    fsutil::write_atomic(&path, bytes).map_err(io_err)?;
    Ok(path)
}

/// A key recovered from a verified response.
#[derive(Debug, Clone)]
pub struct InstalledKey {
    pub pair_key: PairKey,
    pub responder: ValidatedIdentity,
}

pub fn process_response(
    response_bytes: &[u8],
    request_file_name: &str,
    request_bytes: &[u8],
    kdkp: &Kdkp,
    validator: &dyn ChainValidator,
    now: i64,
) -> Result<InstalledKey, KeydistError> {
    let response = KeyResponse::decode(response_bytes)?;
    let responder = validator.validate(&response.chain, now)?;
    let payload = KeyResponse::signed_payload(request_file_name, request_bytes, response.version, &response.key_package_ct);
    responder.verify(&payload, &response.signature)?;
    let bad = |reason: String| KeydistError::MalformedPackage {
        responder: responder.subject.clone(),
        reason,
    };
    let plain = kdkp.decrypt(&response.key_package_ct).map_err(bad)?;
    let package = KeyPackage::decode(&plain).map_err(bad)?;
    let spec = AlgorithmSpec::parse(&package.cipher_spec, &package.mac_spec).map_err(|e| bad(e.to_string()))?;
    let pair_key = PairKey::new(package.key_bytes, spec).map_err(|e| bad(e.to_string()))?;
    Ok(InstalledKey { pair_key, responder })
}

/// Removes a request file and every response to it. Best effort.
pub fn remove_request_files(shared: &Path, request: &RequestId) -> usize {
    let mut removed = 0;
    let Ok(entries) = fs::read_dir(shared) else {
        return 0;
    };
    for entry in entries.flatten() {
        let Ok(name) = entry.file_name().into_string() else {
            continue;
        };
        let ours = match parse_protocol_name(&name) {
            Some(ProtocolName::Request(id)) | Some(ProtocolName::Response(id, _)) => id == *request,
            None => false,
        };
        if ours && fs::remove_file(entry.path()).is_ok() {
            removed += 1;
        }
    }
    removed
}

/// Tracks first sighting of each orphan in `first_seen` and deletes those older
/// than `timeout`. Entries for files that are no longer orphans are dropped.
pub fn cleanup_orphans(
    shared: &Path,
    orphans: &[String],
    first_seen: &mut BTreeMap<String, i64>,
    now: i64,
    timeout: i64,
) -> usize {
    first_seen.retain(|name, _| orphans.contains(name));
    let mut deleted = 0;
    for name in orphans {
        let seen = *first_seen.entry(name.clone()).or_insert(now);
        if now - seen > timeout {
            match fs::remove_file(shared.join(name)) {
                Ok(()) => deleted += 1,
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => {
                    log::warn!("cannot remove orphan {name}: {e}");
                    continue;
                }
            }
            first_seen.remove(name);
        }
    }
    deleted
}
