//! Password-sealed container for the registry file.
//!
//! Layout: `"PBRG" ‖ u8 version=1 ‖ u8 mode ‖ salt[16] ‖ u32-BE iterations ‖ body ‖ mac`.
//! The body is AES-256 (ECB, or CBC with a leading IV) under the first 32 bytes
//! of PBKDF2-HMAC-SHA256; the trailing HMAC-SHA256 covers header and body under
//! the next 32 bytes.

use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use zeroize::Zeroizing;

use super::block::{self, Aes, BLOCK};
use super::CryptoError;

pub const REGISTRY_MAGIC: &[u8; 4] = b"PBRG";
pub const REGISTRY_VERSION: u8 = 1;
pub const MIN_KDF_ITERATIONS: u32 = 10_000;
pub const DEFAULT_KDF_ITERATIONS: u32 = 1 << 17;

const HEADER_LEN: usize = 4 + 1 + 1 + 16 + 4;
const MAC_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SealMode {
    Ecb = 0,
    Cbc = 1,
}

pub struct RegistryKey {
    cipher_key: Zeroizing<[u8; 32]>,
    mac_key: Zeroizing<[u8; 32]>,
    salt: [u8; 16],
    iterations: u32,
}

impl std::fmt::Debug for RegistryKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistryKey")
            .field("salt", &hex::encode(self.salt))
            .field("iterations", &self.iterations)
            .finish_non_exhaustive()
    }
}

impl RegistryKey {
    pub fn salt(&self) -> [u8; 16] {
        self.salt
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    /// Raw derived key material (cipher key then MAC key); exposed for tests.
    pub fn material(&self) -> Vec<u8> {
        [self.cipher_key.as_slice(), self.mac_key.as_slice()].concat()
    }
}

pub fn derive_registry_key(password: &str, salt: [u8; 16], iterations: u32) -> Result<RegistryKey, CryptoError> {
    if iterations < MIN_KDF_ITERATIONS {
        return Err(CryptoError::WeakParameters(iterations));
    }
    let mut out = Zeroizing::new([0u8; 64]);
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), &salt, iterations, out.as_mut_slice());
    let mut cipher_key = Zeroizing::new([0u8; 32]);
    let mut mac_key = Zeroizing::new([0u8; 32]);
    cipher_key.copy_from_slice(&out[..32]);
    mac_key.copy_from_slice(&out[32..]);
    Ok(RegistryKey {
        cipher_key,
        mac_key,
        salt,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SealedHeader {
    pub mode: SealMode,
    pub salt: [u8; 16],
    pub iterations: u32,
}

pub fn parse_registry_header(sealed: &[u8]) -> Result<SealedHeader, CryptoError> {
    if sealed.len() < HEADER_LEN || &sealed[..4] != REGISTRY_MAGIC || sealed[4] != REGISTRY_VERSION {
        return Err(CryptoError::UnsupportedVersion);
    }
    let mode = match sealed[5] {
        0 => SealMode::Ecb,
        1 => SealMode::Cbc,
        _ => return Err(CryptoError::UnsupportedVersion),
    };
    Ok(SealedHeader {
        mode,
        salt: sealed[6..22].try_into().expect("16 bytes"),
        iterations: u32::from_be_bytes(sealed[22..26].try_into().expect("4 bytes")),
    })
}

fn mac(key: &RegistryKey, data: &[u8]) -> Hmac<Sha256> {
    let mut m = Hmac::<Sha256>::new_from_slice(key.mac_key.as_slice()).expect("any key length");
    m.update(data);
    m
}

pub fn seal_registry<R: RngCore + CryptoRng>(key: &RegistryKey, mode: SealMode, body: &[u8], rng: &mut R) -> Vec<u8> {
    let cipher = Aes::new(key.cipher_key.as_slice()).expect("32-byte key");
    let mut out = Vec::with_capacity(HEADER_LEN + BLOCK + body.len() + BLOCK + MAC_LEN);
    out.extend_from_slice(REGISTRY_MAGIC);
    out.push(REGISTRY_VERSION);
    out.push(mode as u8);
    out.extend_from_slice(&key.salt);
    out.extend_from_slice(&key.iterations.to_be_bytes());
    match mode {
        SealMode::Ecb => out.extend_from_slice(&block::ecb_encrypt(&cipher, body)),
        SealMode::Cbc => {
            let mut iv = [0u8; BLOCK];
            rng.fill_bytes(&mut iv);
            out.extend_from_slice(&iv);
            out.extend_from_slice(&block::cbc_encrypt(&cipher, &iv, body));
        }
    }
    let tag = mac(key, &out).finalize().into_bytes();
    out.extend_from_slice(&tag);
    out
}

/// Derives the key from the header parameters and opens the container.
/// The derived key is returned so the caller can re-seal without another KDF run.
pub fn open_registry(password: &str, sealed: &[u8]) -> Result<(Vec<u8>, RegistryKey, SealMode), CryptoError> {
    let header = parse_registry_header(sealed)?;
    let key = derive_registry_key(password, header.salt, header.iterations)?;
    let body = open_registry_with_key(&key, sealed)?;
    Ok((body, key, header.mode))
}

pub fn open_registry_with_key(key: &RegistryKey, sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let header = parse_registry_header(sealed)?;
    if sealed.len() < HEADER_LEN + MAC_LEN {
        return Err(CryptoError::WrongPassword);
    }
    let (authenticated, tag) = sealed.split_at(sealed.len() - MAC_LEN);
    if mac(key, authenticated).verify_slice(tag).is_err() {
        return Err(CryptoError::WrongPassword);
    }
    let cipher = Aes::new(key.cipher_key.as_slice()).expect("32-byte key");
    let body = &authenticated[HEADER_LEN..];
    let plain = match header.mode {
        SealMode::Ecb => block::ecb_decrypt(&cipher, body),
        SealMode::Cbc => {
            if body.len() < BLOCK {
                return Err(CryptoError::WrongPassword);
            }
            let (iv, ct) = body.split_at(BLOCK);
            block::cbc_decrypt(&cipher, iv.try_into().expect("16 bytes"), ct)
        }
    };
    plain.map_err(|_| CryptoError::WrongPassword)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    const ITER: u32 = MIN_KDF_ITERATIONS;

    #[test]
    fn kdf_is_deterministic_and_salted() {
        let a = derive_registry_key("pw", [1; 16], ITER).unwrap();
        let b = derive_registry_key("pw", [1; 16], ITER).unwrap();
        let c = derive_registry_key("pw", [2; 16], ITER).unwrap();
        assert_eq!(a.material(), b.material());
        assert_ne!(a.material(), c.material());
    }

    #[test]
    fn kdf_floor() {
        assert_eq!(
            derive_registry_key("pw", [0; 16], 9_999).unwrap_err(),
            CryptoError::WeakParameters(9_999)
        );
    }

    #[test]
    fn seal_open_roundtrip_both_modes() {
        let mut rng = StdRng::seed_from_u64(1);
        let key = derive_registry_key("secret", [9; 16], ITER).unwrap();
        for mode in [SealMode::Ecb, SealMode::Cbc] {
            for body in [&b""[..], b"x", &[5u8; 100]] {
                let sealed = seal_registry(&key, mode, body, &mut rng);
                let (opened, _, m) = open_registry("secret", &sealed).unwrap();
                assert_eq!(opened, body);
                assert_eq!(m, mode);
            }
        }
    }

    #[test]
    fn wrong_password_and_corrupt_header() {
        let mut rng = StdRng::seed_from_u64(2);
        let key = derive_registry_key("secret", [9; 16], ITER).unwrap();
        let sealed = seal_registry(&key, SealMode::Ecb, b"data", &mut rng);
        assert_eq!(open_registry("nope", &sealed).unwrap_err(), CryptoError::WrongPassword);
        let mut bad = sealed.clone();
        bad[0] = b'X';
        assert_eq!(open_registry("secret", &bad).unwrap_err(), CryptoError::UnsupportedVersion);
        let mut bad = sealed.clone();
        bad[4] = 2;
        assert_eq!(open_registry("secret", &bad).unwrap_err(), CryptoError::UnsupportedVersion);
        let mut bad = sealed;
        let n = bad.len();
        bad[n - 40] ^= 1;
        assert_eq!(open_registry("secret", &bad).unwrap_err(), CryptoError::WrongPassword);
    }
}
