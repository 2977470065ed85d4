//! Folder keys and the protected-file format.
//!
//! A protected file is laid out as `mac ‖ iv ‖ ciphertext` with no framing.
//! The MAC is computed over `iv ‖ ciphertext` (encrypt-then-MAC) and is always
//! verified before any decryption happens. The IV is omitted in ECB mode.
//!
//! In CBC mode the IV is produced by encrypting a 16-byte nonce with the folder
//! key. The first eight nonce bytes carry the version tag of the blob the new
//! content was derived from, which lets a receiver tell a successor of its own
//! version apart from a concurrent edit. The remaining eight bytes are random.

mod block;
mod sealed;

use std::fmt;

use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zeroize::Zeroizing;

pub use block::BLOCK as BLOCK_SIZE;
pub(crate) use block::{ecb_decrypt, ecb_encrypt, Aes};
pub use sealed::{
    derive_registry_key, open_registry, open_registry_with_key, parse_registry_header, seal_registry,
    RegistryKey, SealMode, SealedHeader, DEFAULT_KDF_ITERATIONS, MIN_KDF_ITERATIONS, REGISTRY_MAGIC,
    REGISTRY_VERSION,
};

#[cfg(test)]
pub(crate) use block::DECRYPT_CALLS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unsupported algorithm: {0}")]
    UnsupportedAlgorithm(String),
    #[error("key length {actual} does not match the cipher (expected {expected})")]
    InvalidKeyLength { expected: usize, actual: usize },
    #[error("integrity check failed")]
    IntegrityFailure,
    #[error("bad padding")]
    BadPadding,
    #[error("weak key derivation parameters: {0} iterations (minimum {MIN_KDF_ITERATIONS})")]
    WeakParameters(u32),
    #[error("wrong password")]
    WrongPassword,
    #[error("unsupported registry container version")]
    UnsupportedVersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CipherMode {
    Ecb,
    Cbc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MacAlgorithm {
    HmacSha1,
    HmacSha256,
}

impl MacAlgorithm {
    pub fn output_len(self) -> usize {
        match self {
            MacAlgorithm::HmacSha1 => 20,
            MacAlgorithm::HmacSha256 => 32,
        }
    }

    fn compute(self, key: &[u8], data: &[u8]) -> Vec<u8> {
        match self {
            MacAlgorithm::HmacSha1 => {
                let mut m = Hmac::<sha1::Sha1>::new_from_slice(key).expect("hmac accepts any key length");
                m.update(data);
                m.finalize().into_bytes().to_vec()
            }
            MacAlgorithm::HmacSha256 => {
                let mut m = Hmac::<sha2::Sha256>::new_from_slice(key).expect("hmac accepts any key length");
                m.update(data);
                m.finalize().into_bytes().to_vec()
            }
        }
    }

    fn verify(self, key: &[u8], data: &[u8], tag: &[u8]) -> bool {
        match self {
            MacAlgorithm::HmacSha1 => {
                let mut m = Hmac::<sha1::Sha1>::new_from_slice(key).expect("hmac accepts any key length");
                m.update(data);
                m.verify_slice(tag).is_ok()
            }
            MacAlgorithm::HmacSha256 => {
                let mut m = Hmac::<sha2::Sha256>::new_from_slice(key).expect("hmac accepts any key length");
                m.update(data);
                m.verify_slice(tag).is_ok()
            }
        }
    }
}

/// Cipher and MAC selection for one shared folder, named with the usual
/// `Algorithm/Mode/Padding` and `HmacSHAx` strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlgorithmSpec {
    pub mode: CipherMode,
    pub mac: MacAlgorithm,
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        Self {
            mode: CipherMode::Cbc,
            mac: MacAlgorithm::HmacSha1,
        }
    }
}

impl AlgorithmSpec {
    pub const DEFAULT_KEY_LEN: usize = 32;

    pub fn parse(cipher_spec: &str, mac_spec: &str) -> Result<Self, CryptoError> {
        let unsupported = || CryptoError::UnsupportedAlgorithm(format!("{cipher_spec} / {mac_spec}"));
        let parts: Vec<&str> = cipher_spec.split('/').collect();
        let [alg, mode, padding] = parts.as_slice() else {
            return Err(unsupported());
        };
        if !alg.eq_ignore_ascii_case("AES") || !padding.eq_ignore_ascii_case("PKCS5Padding") {
            return Err(unsupported());
        }
        let mode = if mode.eq_ignore_ascii_case("CBC") {
            CipherMode::Cbc
        } else if mode.eq_ignore_ascii_case("ECB") {
            CipherMode::Ecb
        } else {
            return Err(unsupported());
        };
        let mac = if mac_spec.eq_ignore_ascii_case("HmacSHA1") {
            MacAlgorithm::HmacSha1
        } else if mac_spec.eq_ignore_ascii_case("HmacSHA256") {
            MacAlgorithm::HmacSha256
        } else {
            return Err(unsupported());
        };
        Ok(Self { mode, mac })
    }

    pub fn cipher_spec(&self) -> String {
        match self.mode {
            CipherMode::Ecb => "AES/ECB/PKCS5Padding".into(),
            CipherMode::Cbc => "AES/CBC/PKCS5Padding".into(),
        }
    }

    pub fn mac_spec(&self) -> String {
        match self.mac {
            MacAlgorithm::HmacSha1 => "HmacSHA1".into(),
            MacAlgorithm::HmacSha256 => "HmacSHA256".into(),
        }
    }

    pub fn key_len_valid(&self, len: usize) -> bool {
        matches!(len, 16 | 24 | 32)
    }

    pub fn iv_len(&self) -> usize {
        match self.mode {
            CipherMode::Ecb => 0,
            CipherMode::Cbc => BLOCK_SIZE,
        }
    }

    /// Exact size of a protected blob for a plaintext of `plaintext_len` bytes.
    pub fn protected_len(&self, plaintext_len: usize) -> usize {
        self.mac.output_len() + self.iv_len() + (plaintext_len / BLOCK_SIZE + 1) * BLOCK_SIZE
    }
}

/// The symmetric key protecting every name and file of one shared folder.
/// The same secret keys both the cipher and the MAC.
#[derive(Clone, PartialEq, Eq)]
pub struct PairKey {
    secret: Zeroizing<Vec<u8>>,
    spec: AlgorithmSpec,
}

impl fmt::Debug for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairKey")
            .field("spec", &self.spec)
            .field("secret", &"<redacted>")
            .finish()
    }
}

impl PairKey {
    pub fn new(secret: Vec<u8>, spec: AlgorithmSpec) -> Result<Self, CryptoError> {
        if !spec.key_len_valid(secret.len()) {
            return Err(CryptoError::InvalidKeyLength {
                expected: AlgorithmSpec::DEFAULT_KEY_LEN,
                actual: secret.len(),
            });
        }
        Ok(Self {
            secret: Zeroizing::new(secret),
            spec,
        })
    }

    pub fn secret(&self) -> &[u8] {
        &self.secret
    }

    pub fn spec(&self) -> AlgorithmSpec {
        self.spec
    }

    pub(crate) fn cipher(&self) -> Aes {
        Aes::new(&self.secret).expect("key length validated at construction")
    }
}

pub fn generate_pair_key<R: RngCore + CryptoRng>(spec: AlgorithmSpec, rng: &mut R) -> PairKey {
    let mut secret = vec![0u8; AlgorithmSpec::DEFAULT_KEY_LEN];
    rng.fill_bytes(&mut secret);
    PairKey::new(secret, spec).expect("default key length is valid")
}

/// Parses the algorithm strings and draws a fresh key.
pub fn generate_pair_key_for<R: RngCore + CryptoRng>(
    cipher_spec: &str,
    mac_spec: &str,
    rng: &mut R,
) -> Result<PairKey, CryptoError> {
    Ok(generate_pair_key(AlgorithmSpec::parse(cipher_spec, mac_spec)?, rng))
}

/// First eight bytes of a blob's MAC; identifies one published version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VersionTag(pub [u8; 8]);

impl VersionTag {
    pub fn of_blob(blob: &[u8]) -> Option<Self> {
        blob.get(..8).map(|b| Self(b.try_into().expect("8 bytes")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedBlob {
    pub mac: Vec<u8>,
    pub iv: Option<[u8; BLOCK_SIZE]>,
    pub ciphertext: Vec<u8>,
}

impl ProtectedBlob {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.mac.len() + BLOCK_SIZE + self.ciphertext.len());
        out.extend_from_slice(&self.mac);
        if let Some(iv) = &self.iv {
            out.extend_from_slice(iv);
        }
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn tag(&self) -> VersionTag {
        VersionTag::of_blob(&self.mac).expect("mac is at least 8 bytes")
    }
}

/// Plaintext and lineage recovered from a verified blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenedContent {
    pub plaintext: Vec<u8>,
    pub tag: VersionTag,
    pub parent: Option<VersionTag>,
}

pub fn protect_content<R: RngCore + CryptoRng>(key: &PairKey, plaintext: &[u8], rng: &mut R) -> ProtectedBlob {
    protect_content_with_parent(key, plaintext, None, rng)
}

pub fn protect_content_with_parent<R: RngCore + CryptoRng>(
    key: &PairKey,
    plaintext: &[u8],
    parent: Option<VersionTag>,
    rng: &mut R,
) -> ProtectedBlob {
    let cipher = key.cipher();
    let ciphertext = match key.spec.mode {
        CipherMode::Ecb => block::ecb_encrypt(&cipher, plaintext),
        CipherMode::Cbc => {
            let mut nonce = [0u8; BLOCK_SIZE];
            if let Some(p) = parent {
                nonce[..8].copy_from_slice(&p.0);
            }
            rng.fill_bytes(&mut nonce[8..]);
            cipher.encrypt_block(&mut nonce);
            return protect_content_with_iv(key, plaintext, nonce);
        }
    };
    finish_blob(key, None, ciphertext)
}

/// CBC protection under a caller-chosen IV. Meant for known-answer tests;
/// regular writers go through [`protect_content_with_parent`].
pub fn protect_content_with_iv(key: &PairKey, plaintext: &[u8], iv: [u8; BLOCK_SIZE]) -> ProtectedBlob {
    let ciphertext = block::cbc_encrypt(&key.cipher(), &iv, plaintext);
    finish_blob(key, Some(iv), ciphertext)
}

fn finish_blob(key: &PairKey, iv: Option<[u8; BLOCK_SIZE]>, ciphertext: Vec<u8>) -> ProtectedBlob {
    let mut authenticated = Vec::with_capacity(BLOCK_SIZE + ciphertext.len());
    if let Some(iv) = &iv {
        authenticated.extend_from_slice(iv);
    }
    authenticated.extend_from_slice(&ciphertext);
    let mac = key.spec.mac.compute(key.secret(), &authenticated);
    ProtectedBlob { mac, iv, ciphertext }
}

/// Verifies the MAC, then decrypts. Nothing is decrypted when the MAC fails.
pub fn open_content(key: &PairKey, blob: &[u8]) -> Result<OpenedContent, CryptoError> {
    let spec = key.spec;
    let mac_len = spec.mac.output_len();
    let iv_len = spec.iv_len();
    if blob.len() < mac_len + iv_len {
        return Err(CryptoError::IntegrityFailure);
    }
    let (mac, authenticated) = blob.split_at(mac_len);
    if !spec.mac.verify(key.secret(), authenticated, mac) {
        return Err(CryptoError::IntegrityFailure);
    }
    let tag = VersionTag::of_blob(mac).expect("mac is at least 8 bytes");
    let cipher = key.cipher();
    match spec.mode {
        CipherMode::Ecb => Ok(OpenedContent {
            plaintext: block::ecb_decrypt(&cipher, authenticated)?,
            tag,
            parent: None,
        }),
        CipherMode::Cbc => {
            let (iv, ciphertext) = authenticated.split_at(iv_len);
            let iv: [u8; BLOCK_SIZE] = iv.try_into().expect("iv length checked");
            let plaintext = block::cbc_decrypt(&cipher, &iv, ciphertext)?;
            let mut nonce = iv;
            cipher.decrypt_block(&mut nonce);
            let parent = (nonce[..8] != [0u8; 8]).then(|| VersionTag(nonce[..8].try_into().expect("8 bytes")));
            Ok(OpenedContent {
                plaintext,
                tag,
                parent,
            })
        }
    }
}

pub fn unprotect_content(key: &PairKey, blob: &[u8]) -> Result<Vec<u8>, CryptoError> {
    open_content(key, blob).map(|o| o.plaintext)
}

/// Checks the MAC only.
pub fn verify_content(key: &PairKey, blob: &[u8]) -> Result<VersionTag, CryptoError> {
    let spec = key.spec;
    let mac_len = spec.mac.output_len();
    if blob.len() < mac_len + spec.iv_len() {
        return Err(CryptoError::IntegrityFailure);
    }
    let (mac, authenticated) = blob.split_at(mac_len);
    if !spec.mac.verify(key.secret(), authenticated, mac) {
        return Err(CryptoError::IntegrityFailure);
    }
    Ok(VersionTag::of_blob(mac).expect("mac is at least 8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;

    fn key(spec: AlgorithmSpec) -> PairKey {
        PairKey::new((0u8..32).collect(), spec).unwrap()
    }

    #[test]
    fn spec_strings_roundtrip() {
        let s = AlgorithmSpec::parse("AES/CBC/PKCS5Padding", "HmacSHA1").unwrap();
        assert_eq!(s, AlgorithmSpec::default());
        assert_eq!(s.cipher_spec(), "AES/CBC/PKCS5Padding");
        assert_eq!(s.mac_spec(), "HmacSHA1");
        let e = AlgorithmSpec::parse("AES/ECB/PKCS5Padding", "HmacSHA256").unwrap();
        assert_eq!(e.mode, CipherMode::Ecb);
        assert_eq!(e.mac.output_len(), 32);
    }

    #[test]
    fn unsupported_specs() {
        for (c, m) in [
            ("AES/CTR/PKCS5Padding", "HmacSHA1"),
            ("AES/CBC/NoPadding", "HmacSHA1"),
            ("DES/CBC/PKCS5Padding", "HmacSHA1"),
            ("AES/CBC", "HmacSHA1"),
            ("AES/CBC/PKCS5Padding", "HmacMD5"),
        ] {
            assert!(matches!(
                AlgorithmSpec::parse(c, m),
                Err(CryptoError::UnsupportedAlgorithm(_))
            ));
        }
        let mut rng = StdRng::seed_from_u64(1);
        assert!(generate_pair_key_for("AES/CTR/PKCS5Padding", "HmacSHA1", &mut rng).is_err());
    }

    #[test]
    fn generated_keys_are_32_bytes_and_distinct() {
        let mut rng = StdRng::from_entropy();
        let k = generate_pair_key_for("AES/CBC/PKCS5Padding", "HmacSHA1", &mut rng).unwrap();
        assert_eq!(k.secret().len(), 32);
        let seen: HashSet<Vec<u8>> = (0..1000)
            .map(|_| generate_pair_key(AlgorithmSpec::default(), &mut rng).secret().to_vec())
            .collect();
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn pair_key_rejects_bad_lengths() {
        assert!(PairKey::new(vec![0; 7], AlgorithmSpec::default()).is_err());
        assert!(PairKey::new(vec![0; 16], AlgorithmSpec::default()).is_ok());
    }

    #[test]
    fn debug_redacts_secret() {
        let k = key(AlgorithmSpec::default());
        assert!(!format!("{k:?}").contains("1, 2, 3"));
    }

    #[test]
    fn empty_plaintext_blob_is_52_bytes() {
        let mut rng = StdRng::seed_from_u64(2);
        let b = protect_content(&key(AlgorithmSpec::default()), b"", &mut rng).to_bytes();
        assert_eq!(b.len(), 52);
    }

    #[test]
    fn length_arithmetic() {
        let mut rng = StdRng::seed_from_u64(3);
        for spec in [
            AlgorithmSpec::default(),
            AlgorithmSpec::parse("AES/ECB/PKCS5Padding", "HmacSHA256").unwrap(),
        ] {
            let k = key(spec);
            for n in [0usize, 1, 15, 16, 17, 31, 32, 1000] {
                let b = protect_content(&k, &vec![9u8; n], &mut rng).to_bytes();
                assert_eq!(b.len(), spec.protected_len(n));
                assert_eq!(unprotect_content(&k, &b).unwrap(), vec![9u8; n]);
            }
        }
    }

    #[test]
    fn fresh_iv_per_call() {
        let mut rng = StdRng::from_entropy();
        let k = key(AlgorithmSpec::default());
        let a = protect_content(&k, b"same", &mut rng);
        let b = protect_content(&k, b"same", &mut rng);
        assert_ne!(a, b);
        let ivs: HashSet<[u8; 16]> = (0..10_000)
            .map(|_| protect_content(&k, b"", &mut rng).iv.unwrap())
            .collect();
        assert_eq!(ivs.len(), 10_000);
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let mut rng = StdRng::seed_from_u64(4);
        let k = key(AlgorithmSpec::default());
        let blob = protect_content(&k, b"some file contents here, longer than a block", &mut rng).to_bytes();
        for _ in 0..1000 {
            let mut t = blob.clone();
            let pos = rng.gen_range(0..t.len());
            t[pos] ^= 1 << rng.gen_range(0..8);
            assert_eq!(unprotect_content(&k, &t), Err(CryptoError::IntegrityFailure));
        }
    }

    #[test]
    fn truncated_and_wrong_key() {
        let mut rng = StdRng::seed_from_u64(5);
        let k = key(AlgorithmSpec::default());
        let blob = protect_content(&k, b"x", &mut rng).to_bytes();
        for n in [0, 10, 35, 36, 51] {
            assert_eq!(unprotect_content(&k, &blob[..n]), Err(CryptoError::IntegrityFailure));
        }
        let other = generate_pair_key(AlgorithmSpec::default(), &mut rng);
        assert_eq!(unprotect_content(&other, &blob), Err(CryptoError::IntegrityFailure));
    }

    #[test]
    fn mac_failure_never_reaches_the_cipher() {
        let mut rng = StdRng::seed_from_u64(6);
        let k = key(AlgorithmSpec::default());
        let mut blob = protect_content(&k, b"payload", &mut rng).to_bytes();
        let before = DECRYPT_CALLS.with(|c| c.get());
        *blob.last_mut().unwrap() ^= 0x80;
        assert!(unprotect_content(&k, &blob).is_err());
        assert_eq!(DECRYPT_CALLS.with(|c| c.get()), before);
        *blob.last_mut().unwrap() ^= 0x80;
        unprotect_content(&k, &blob).unwrap();
        assert_eq!(DECRYPT_CALLS.with(|c| c.get()), before + 1);
    }

    #[test]
    fn lineage_travels_in_the_iv() {
        let mut rng = StdRng::seed_from_u64(7);
        let k = key(AlgorithmSpec::default());
        let first = protect_content(&k, b"v1", &mut rng);
        let opened = open_content(&k, &first.to_bytes()).unwrap();
        assert_eq!(opened.parent, None);
        assert_eq!(opened.tag, first.tag());
        let second = protect_content_with_parent(&k, b"v2", Some(first.tag()), &mut rng);
        let opened = open_content(&k, &second.to_bytes()).unwrap();
        assert_eq!(opened.parent, Some(first.tag()));
        assert_eq!(opened.plaintext, b"v2");
    }

    fn any_spec() -> impl proptest::strategy::Strategy<Value = AlgorithmSpec> {
        use proptest::prelude::*;
        prop_oneof![
            Just(("AES/CBC/PKCS5Padding", "HmacSHA1")),
            Just(("AES/CBC/PKCS5Padding", "HmacSHA256")),
            Just(("AES/ECB/PKCS5Padding", "HmacSHA1")),
            Just(("AES/ECB/PKCS5Padding", "HmacSHA256")),
        ]
        .prop_map(|(c, m)| AlgorithmSpec::parse(c, m).unwrap())
    }

    proptest::proptest! {
        #[test]
        fn blob_roundtrip_and_length(
            spec in any_spec(),
            plaintext in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..600),
            seed in proptest::prelude::any::<u64>(),
        ) {
            let k = key(spec);
            let blob = protect_content(&k, &plaintext, &mut StdRng::seed_from_u64(seed)).to_bytes();
            proptest::prop_assert_eq!(blob.len(), spec.protected_len(plaintext.len()));
            proptest::prop_assert_eq!(unprotect_content(&k, &blob).unwrap(), plaintext);
        }

        #[test]
        fn any_flipped_bit_is_rejected(
            spec in any_spec(),
            plaintext in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..200),
            at in proptest::prelude::any::<proptest::sample::Index>(),
            bit in 0u8..8,
        ) {
            let k = key(spec);
            let mut blob = protect_content(&k, &plaintext, &mut StdRng::seed_from_u64(9)).to_bytes();
            let i = at.index(blob.len());
            blob[i] ^= 1 << bit;
            proptest::prop_assert!(open_content(&k, &blob).is_err());
        }

        #[test]
        fn truncated_or_extended_blob_is_rejected(
            spec in any_spec(),
            plaintext in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..200),
            cut in 1usize..40,
        ) {
            let k = key(spec);
            let blob = protect_content(&k, &plaintext, &mut StdRng::seed_from_u64(3)).to_bytes();
            let short = &blob[..blob.len().saturating_sub(cut)];
            proptest::prop_assert!(open_content(&k, short).is_err());
            let mut long = blob.clone();
            long.extend(std::iter::repeat_n(0u8, cut));
            proptest::prop_assert!(open_content(&k, &long).is_err());
        }
    }
}
