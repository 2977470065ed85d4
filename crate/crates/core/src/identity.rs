//! Signing identities and certificate trust.
//!
//! A participant signs with an RSA key held by an [`IdentityToken`] and proves
//! who they are with an X.509 chain ordered leaf first, root excluded. The
//! receiving side checks the chain against its own [`TrustStore`].
//!
//! Hardware tokens are reached through a small config file naming a provider
//! and an alias. This build ships a file-backed software token that stands in
//! for the hardware one and a throwaway CA for issuing test identities.

use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use der::oid::AssociatedOid;
use der::pem::LineEnding;
use der::{Decode, DecodePem, Encode, EncodePem};
use rand::{CryptoRng, RngCore};
use rsa::pkcs1v15::{Signature, SigningKey, VerifyingKey};
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::{RsaPrivateKey, RsaPublicKey};
use sha2::Sha256;
use spki::{ObjectIdentifier, SubjectPublicKeyInfoOwned};
use thiserror::Error;
use x509_cert::builder::{Builder, CertificateBuilder, Profile};
use x509_cert::ext::pkix::BasicConstraints;
use x509_cert::name::Name;
use x509_cert::serial_number::SerialNumber;
use x509_cert::time::{Time, Validity};
use x509_cert::Certificate;

use crate::tlv::{TlvReader, TlvWriter};

pub use x509_cert::Certificate as X509Certificate;

const SHA256_WITH_RSA: ObjectIdentifier = ObjectIdentifier::new_unwrap("1.2.840.113549.1.1.11");

/// Magic prefix of a software token file.
pub const SOFTWARE_TOKEN_MAGIC: &[u8; 4] = b"PBST";

const TAG_KEY: u16 = 0x0001;
const TAG_CERT: u16 = 0x0002;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("identity token unavailable: {0}")]
    TokenUnavailable(String),
    #[error("token refused to sign: {0}")]
    SigningRefused(String),
    #[error("untrusted certificate chain: {0}")]
    UntrustedChain(String),
    #[error("certificate chain is broken: {0}")]
    BrokenChain(String),
    #[error("certificate outside its validity period: {0}")]
    ExpiredCertificate(String),
    #[error("token configuration is missing `{0}`")]
    MissingField(&'static str),
    #[error("malformed identity data: {0}")]
    Malformed(String),
    #[error("signature verification failed")]
    BadSignature,
}

fn malformed(e: impl std::fmt::Display) -> IdentityError {
    IdentityError::Malformed(e.to_string())
}

pub trait IdentityToken: Send + Sync {
    /// Certificate chain for the signing key, leaf first, root excluded.
    fn chain(&self) -> Result<Vec<Certificate>, IdentityError>;
    /// RSA PKCS#1 v1.5 signature over SHA-256 of `data`.
    fn sign(&self, data: &[u8]) -> Result<Vec<u8>, IdentityError>;
}

/// A chain that passed validation, reduced to what callers need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedIdentity {
    pub subject: String,
    /// SHA-256 of the leaf certificate DER, lowercase hex.
    pub fingerprint: String,
    pub public_key: RsaPublicKey,
}

impl ValidatedIdentity {
    pub fn verify(&self, data: &[u8], signature: &[u8]) -> Result<(), IdentityError> {
        verify_signature(&self.public_key, data, signature)
    }
}

pub trait ChainValidator: Send + Sync {
    fn validate(&self, chain: &[Certificate], now: i64) -> Result<ValidatedIdentity, IdentityError>;
}

pub fn verify_chain(
    chain: &[Certificate],
    store: &dyn ChainValidator,
    at_time: i64,
) -> Result<ValidatedIdentity, IdentityError> {
    store.validate(chain, at_time)
}

pub fn fingerprint(cert: &Certificate) -> String {
    use sha2::Digest;
    hex::encode(Sha256::digest(cert.to_der().expect("certificate encodes")))
}

pub fn verify_signature(key: &RsaPublicKey, data: &[u8], signature: &[u8]) -> Result<(), IdentityError> {
    let sig = Signature::try_from(signature).map_err(|_| IdentityError::BadSignature)?;
    VerifyingKey::<Sha256>::new(key.clone())
        .verify(data, &sig)
        .map_err(|_| IdentityError::BadSignature)
}

pub fn public_key_of(cert: &Certificate) -> Result<RsaPublicKey, IdentityError> {
    let der = cert
        .tbs_certificate
        .subject_public_key_info
        .to_der()
        .map_err(malformed)?;
    RsaPublicKey::from_public_key_der(&der).map_err(malformed)
}

/// Common name of the certificate subject, or the full distinguished name when
/// there is none.
pub fn subject_name(cert: &Certificate) -> String {
    let dn = cert.tbs_certificate.subject.to_string();
    dn.split(',')
        .find_map(|p| p.trim().strip_prefix("CN="))
        .map(str::to_owned)
        .unwrap_or(dn)
}

fn unix(t: &Time) -> i64 {
    t.to_unix_duration().as_secs() as i64
}

fn is_ca(cert: &Certificate) -> bool {
    cert.tbs_certificate
        .extensions
        .iter()
        .flatten()
        .filter(|e| e.extn_id == BasicConstraints::OID)
        .any(|e| {
            BasicConstraints::from_der(e.extn_value.as_bytes())
                .map(|bc| bc.ca)
                .unwrap_or(false)
        })
}

fn check_signed_by(cert: &Certificate, issuer: &Certificate) -> Result<(), IdentityError> {
    if cert.signature_algorithm.oid != SHA256_WITH_RSA {
        return Err(IdentityError::UntrustedChain(format!(
            "unsupported signature algorithm {}",
            cert.signature_algorithm.oid
        )));
    }
    if cert.tbs_certificate.issuer != issuer.tbs_certificate.subject {
        return Err(IdentityError::BrokenChain("issuer name mismatch".into()));
    }
    if !is_ca(issuer) {
        return Err(IdentityError::BrokenChain(format!(
            "{} is not a certificate authority",
            subject_name(issuer)
        )));
    }
    let tbs = cert.tbs_certificate.to_der().map_err(malformed)?;
    let sig = cert
        .signature
        .as_bytes()
        .ok_or_else(|| malformed("signature has unused bits"))?;
    verify_signature(&public_key_of(issuer)?, &tbs, sig)
        .map_err(|_| IdentityError::BrokenChain(format!("bad signature on {}", subject_name(cert))))
}

fn check_validity(cert: &Certificate, now: i64) -> Result<(), IdentityError> {
    let v = &cert.tbs_certificate.validity;
    if now < unix(&v.not_before) || now > unix(&v.not_after) {
        return Err(IdentityError::ExpiredCertificate(subject_name(cert)));
    }
    Ok(())
}

/// Trust anchors for chain validation.
#[derive(Debug, Clone, Default)]
pub struct TrustStore {
    roots: Vec<Certificate>,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_root(root: Certificate) -> Self {
        Self { roots: vec![root] }
    }

    pub fn add_root(&mut self, root: Certificate) {
        if !self.roots.contains(&root) {
            self.roots.push(root);
        }
    }

    pub fn roots(&self) -> &[Certificate] {
        &self.roots
    }

    /// Loads every `.pem`, `.crt` and `.der` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, IdentityError> {
        let mut store = Self::new();
        let entries = fs::read_dir(dir).map_err(|e| IdentityError::TokenUnavailable(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        paths.sort();
        for path in paths {
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            if !matches!(ext, "pem" | "crt" | "der") {
                continue;
            }
            let bytes = fs::read(&path).map_err(malformed)?;
            store.add_root(parse_certificate(&bytes)?);
        }
        Ok(store)
    }
}

impl ChainValidator for TrustStore {
    fn validate(&self, chain: &[Certificate], now: i64) -> Result<ValidatedIdentity, IdentityError> {
        let leaf = chain
            .first()
            .ok_or_else(|| IdentityError::UntrustedChain("empty chain".into()))?;
        if self.roots.is_empty() {
            return Err(IdentityError::UntrustedChain("trust store is empty".into()));
        }
        for cert in chain {
            check_validity(cert, now)?;
        }
        for pair in chain.windows(2) {
            check_signed_by(&pair[0], &pair[1])?;
        }
        let top = chain.last().expect("non-empty");
        let anchored = self.roots.iter().any(|root| {
            root == top || (check_validity(root, now).is_ok() && check_signed_by(top, root).is_ok())
        });
        if !anchored {
            return Err(IdentityError::UntrustedChain(format!(
                "no trusted root for {}",
                subject_name(top)
            )));
        }
        Ok(ValidatedIdentity {
            subject: subject_name(leaf),
            fingerprint: fingerprint(leaf),
            public_key: public_key_of(leaf)?,
        })
    }
}

/// Accepts PEM or DER.
pub fn parse_certificate(bytes: &[u8]) -> Result<Certificate, IdentityError> {
    if bytes.starts_with(b"-----BEGIN") {
        Certificate::from_pem(bytes).map_err(malformed)
    } else {
        Certificate::from_der(bytes).map_err(malformed)
    }
}

pub fn certificate_pem(cert: &Certificate) -> String {
    cert.to_pem(LineEnding::LF).expect("certificate encodes")
}

/// File-backed signing token.
#[derive(Clone)]
pub struct SoftwareToken {
    key: RsaPrivateKey,
    chain: Vec<Certificate>,
}

impl std::fmt::Debug for SoftwareToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SoftwareToken")
            .field("subject", &self.chain.first().map(subject_name))
            .finish_non_exhaustive()
    }
}

impl SoftwareToken {
    pub fn new(key: RsaPrivateKey, chain: Vec<Certificate>) -> Self {
        Self { key, chain }
    }

    pub fn subject(&self) -> String {
        self.chain.first().map(subject_name).unwrap_or_default()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let key = self.key.to_pkcs8_der().expect("rsa key encodes");
        let mut w = TlvWriter::new();
        w.put(TAG_KEY, key.as_bytes());
        for cert in &self.chain {
            w.put(TAG_CERT, &cert.to_der().expect("certificate encodes"));
        }
        [&SOFTWARE_TOKEN_MAGIC[..], &w.finish()].concat()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        let body = bytes
            .strip_prefix(&SOFTWARE_TOKEN_MAGIC[..])
            .ok_or_else(|| malformed("not a software token"))?;
        let mut r = TlvReader::new(body);
        let key = RsaPrivateKey::from_pkcs8_der(r.expect(TAG_KEY).map_err(malformed)?).map_err(malformed)?;
        let chain = r
            .repeated(TAG_CERT)
            .map_err(malformed)?
            .into_iter()
            .map(|c| Certificate::from_der(c).map_err(malformed))
            .collect::<Result<Vec<_>, _>>()?;
        r.finish().map_err(malformed)?;
        Ok(Self { key, chain })
    }

    pub fn load(path: &Path) -> Result<Self, IdentityError> {
        let bytes = fs::read(path).map_err(|e| IdentityError::TokenUnavailable(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        crate::fsutil::write_atomic(path, &self.to_bytes())?;
        crate::fsutil::restrict_permissions(path)
    }
}

impl IdentityToken for SoftwareToken {
    fn chain(&self) -> Result<Vec<Certificate>, IdentityError> {
        Ok(self.chain.clone())
    }

    fn sign(&self, data: &[u8]) -> Result<Vec<u8>, IdentityError> {
        Ok(SigningKey::<Sha256>::new(self.key.clone()).sign(data).to_vec())
    }
}

/// Token configuration: `provider=<module path>` and `alias=<key alias>` lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenConfig {
    pub provider: String,
    pub alias: String,
}

impl TokenConfig {
    pub fn parse(text: &str) -> Result<Self, IdentityError> {
        let mut provider = None;
        let mut alias = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("bad token config line: {line}")))?;
            let v = v.trim();
            match k.trim() {
                "provider" if !v.is_empty() => provider = Some(v.to_owned()),
                "alias" if !v.is_empty() => alias = Some(v.to_owned()),
                _ => {}
            }
        }
        Ok(Self {
            provider: provider.ok_or(IdentityError::MissingField("provider"))?,
            alias: alias.ok_or(IdentityError::MissingField("alias"))?,
        })
    }

    /// Every `*.conf` file in `dir`, sorted by file name.
    pub fn discover(dir: &Path) -> Vec<(std::path::PathBuf, Result<Self, IdentityError>)> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .into_iter()
            .flatten()
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "conf"))
            .collect();
        paths.sort();
        paths.into_iter().map(|p| {
            let cfg = Self::load(&p);
            (p, cfg)
        }).collect()
    }

    pub fn load(path: &Path) -> Result<Self, IdentityError> {
        let text = fs::read_to_string(path).map_err(|e| IdentityError::TokenUnavailable(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Opens the configured token. Relative provider paths resolve against `base`.
    pub fn open(&self, base: &Path) -> Result<SoftwareToken, IdentityError> {
        let path = base.join(&self.provider);
        let bytes = fs::read(&path).map_err(|e| IdentityError::TokenUnavailable(format!("{}: {e}", path.display())))?;
        if !bytes.starts_with(SOFTWARE_TOKEN_MAGIC) {
            return Err(IdentityError::SigningRefused(format!(
                "{} is not a software token and PKCS#11 modules are not supported",
                path.display()
            )));
        }
        SoftwareToken::from_bytes(&bytes)
    }
}

/// Validity window in unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidityWindow {
    pub not_before: i64,
    pub not_after: i64,
}

impl ValidityWindow {
    /// One day in the past to twenty years ahead of the wall clock.
    pub fn standard() -> Self {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).expect("clock after 1970").as_secs() as i64;
        Self {
            not_before: now - 86_400,
            not_after: now + 20 * 365 * 86_400,
        }
    }

    fn to_x509(self) -> Result<Validity, IdentityError> {
        let t = |s: i64| {
            Time::try_from(UNIX_EPOCH + Duration::from_secs(s.max(0) as u64)).map_err(malformed)
        };
        Ok(Validity {
            not_before: t(self.not_before)?,
            not_after: t(self.not_after)?,
        })
    }
}

/// Minimal certificate authority for issuing software identities.
#[derive(Clone)]
pub struct SoftwareCa {
    key: RsaPrivateKey,
    cert: Certificate,
    /// Certificates from this CA up to, but excluding, the root.
    path: Vec<Certificate>,
}

fn serial<R: RngCore>(rng: &mut R) -> Result<SerialNumber, IdentityError> {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    bytes[0] = (bytes[0] & 0x7f) | 0x01;
    SerialNumber::new(&bytes).map_err(malformed)
}

fn name(cn: &str) -> Result<Name, IdentityError> {
    Name::from_str(&format!("CN={cn}")).map_err(malformed)
}

pub fn generate_rsa_key<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<RsaPrivateKey, IdentityError> {
    RsaPrivateKey::new(rng, bits).map_err(malformed)
}

impl SoftwareCa {
    pub fn root<R: RngCore + CryptoRng>(cn: &str, bits: usize, rng: &mut R) -> Result<Self, IdentityError> {
        let key = generate_rsa_key(bits, rng)?;
        let signer = SigningKey::<Sha256>::new(key.clone());
        let spki = SubjectPublicKeyInfoOwned::from_key(key.to_public_key()).map_err(malformed)?;
        let cert = CertificateBuilder::new(
            Profile::Root,
            serial(rng)?,
            ValidityWindow::standard().to_x509()?,
            name(cn)?,
            spki,
            &signer,
        )
        .map_err(malformed)?
        .build::<Signature>()
        .map_err(malformed)?;
        Ok(Self {
            key,
            cert,
            path: Vec::new(),
        })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    /// The CA key and its certificate path, stored in the software token format.
    pub fn to_token(&self) -> SoftwareToken {
        let chain = if self.path.is_empty() { vec![self.cert.clone()] } else { self.path.clone() };
        SoftwareToken::new(self.key.clone(), chain)
    }

    pub fn from_token(token: SoftwareToken) -> Result<Self, IdentityError> {
        let cert = token.chain.first().cloned().ok_or_else(|| malformed("CA token holds no certificate"))?;
        let path = if cert.tbs_certificate.issuer == cert.tbs_certificate.subject { Vec::new() } else { token.chain };
        Ok(Self { key: token.key, cert, path })
    }

    fn issue(
        &self,
        profile: Profile,
        subject: &RsaPublicKey,
        cn: &str,
        validity: ValidityWindow,
        rng: &mut impl RngCore,
    ) -> Result<Certificate, IdentityError> {
        let signer = SigningKey::<Sha256>::new(self.key.clone());
        let spki = SubjectPublicKeyInfoOwned::from_key(subject.clone()).map_err(malformed)?;
        CertificateBuilder::new(profile, serial(rng)?, validity.to_x509()?, name(cn)?, spki, &signer)
            .map_err(malformed)?
            .build::<Signature>()
            .map_err(malformed)
    }

    pub fn intermediate<R: RngCore + CryptoRng>(&self, cn: &str, bits: usize, rng: &mut R) -> Result<Self, IdentityError> {
        let key = generate_rsa_key(bits, rng)?;
        let profile = Profile::SubCA {
            issuer: self.cert.tbs_certificate.subject.clone(),
            path_len_constraint: None,
        };
        let cert = self.issue(profile, &key.to_public_key(), cn, ValidityWindow::standard(), rng)?;
        let mut path = vec![cert.clone()];
        path.extend(self.path.iter().cloned());
        Ok(Self { key, cert, path })
    }

    pub fn issue_token<R: RngCore + CryptoRng>(&self, cn: &str, bits: usize, rng: &mut R) -> Result<SoftwareToken, IdentityError> {
        let key = generate_rsa_key(bits, rng)?;
        self.issue_token_for(key, cn, ValidityWindow::standard(), rng)
    }

    /// Issues a leaf certificate for an existing key.
    pub fn issue_token_for(
        &self,
        key: RsaPrivateKey,
        cn: &str,
        validity: ValidityWindow,
        rng: &mut impl RngCore,
    ) -> Result<SoftwareToken, IdentityError> {
        let profile = Profile::Leaf {
            issuer: self.cert.tbs_certificate.subject.clone(),
            enable_key_agreement: false,
            enable_key_encipherment: false,
        };
        let leaf = self.issue(profile, &key.to_public_key(), cn, validity, rng)?;
        let mut chain = vec![leaf];
        chain.extend(self.path.iter().cloned());
        Ok(SoftwareToken::new(key, chain))
    }
}
