//! AES in ECB and CBC modes with PKCS#5 padding.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};

use super::CryptoError;

pub const BLOCK: usize = 16;

#[cfg(test)]
thread_local! {
    pub(crate) static DECRYPT_CALLS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

pub(crate) enum Aes {
    K128(aes::Aes128),
    K192(aes::Aes192),
    K256(aes::Aes256),
}

impl Aes {
    pub fn new(key: &[u8]) -> Result<Self, CryptoError> {
        Ok(match key.len() {
            16 => Aes::K128(aes::Aes128::new(GenericArray::from_slice(key))),
            24 => Aes::K192(aes::Aes192::new(GenericArray::from_slice(key))),
            32 => Aes::K256(aes::Aes256::new(GenericArray::from_slice(key))),
            n => {
                return Err(CryptoError::InvalidKeyLength {
                    expected: 32,
                    actual: n,
                })
            }
        })
    }

    pub fn encrypt_block(&self, block: &mut [u8]) {
        let b = GenericArray::from_mut_slice(block);
        match self {
            Aes::K128(c) => c.encrypt_block(b),
            Aes::K192(c) => c.encrypt_block(b),
            Aes::K256(c) => c.encrypt_block(b),
        }
    }

    pub fn decrypt_block(&self, block: &mut [u8]) {
        let b = GenericArray::from_mut_slice(block);
        match self {
            Aes::K128(c) => c.decrypt_block(b),
            Aes::K192(c) => c.decrypt_block(b),
            Aes::K256(c) => c.decrypt_block(b),
        }
    }
}

pub fn pad(data: &[u8]) -> Vec<u8> {
    let n = BLOCK - data.len() % BLOCK;
    let mut out = Vec::with_capacity(data.len() + n);
    out.extend_from_slice(data);
    out.resize(data.len() + n, n as u8);
    out
}

pub fn unpad(mut data: Vec<u8>) -> Result<Vec<u8>, CryptoError> {
    let n = *data.last().ok_or(CryptoError::BadPadding)? as usize;
    if n == 0 || n > BLOCK || n > data.len() {
        return Err(CryptoError::BadPadding);
    }
    if data[data.len() - n..].iter().any(|&b| b as usize != n) {
        return Err(CryptoError::BadPadding);
    }
    data.truncate(data.len() - n);
    Ok(data)
}

pub fn ecb_encrypt(cipher: &Aes, plaintext: &[u8]) -> Vec<u8> {
    let mut buf = pad(plaintext);
    for block in buf.chunks_exact_mut(BLOCK) {
        cipher.encrypt_block(block);
    }
    buf
}

pub fn ecb_decrypt(cipher: &Aes, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    #[cfg(test)]
    DECRYPT_CALLS.with(|c| c.set(c.get() + 1));
    if ciphertext.is_empty() || !ciphertext.len().is_multiple_of(BLOCK) {
        return Err(CryptoError::BadPadding);
    }
    let mut buf = ciphertext.to_vec();
    for block in buf.chunks_exact_mut(BLOCK) {
        cipher.decrypt_block(block);
    }
    unpad(buf)
}

pub fn cbc_encrypt(cipher: &Aes, iv: &[u8; BLOCK], plaintext: &[u8]) -> Vec<u8> {
    let mut buf = pad(plaintext);
    let mut prev = *iv;
    for block in buf.chunks_exact_mut(BLOCK) {
        for (b, p) in block.iter_mut().zip(prev.iter()) {
            *b ^= p;
        }
        cipher.encrypt_block(block);
        prev.copy_from_slice(block);
    }
    buf
}

pub fn cbc_decrypt(cipher: &Aes, iv: &[u8; BLOCK], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    #[cfg(test)]
    DECRYPT_CALLS.with(|c| c.set(c.get() + 1));
    if ciphertext.is_empty() || !ciphertext.len().is_multiple_of(BLOCK) {
        return Err(CryptoError::BadPadding);
    }
    let mut buf = ciphertext.to_vec();
    let mut prev = *iv;
    for block in buf.chunks_exact_mut(BLOCK) {
        let mut saved = [0u8; BLOCK];
        saved.copy_from_slice(block);
        cipher.decrypt_block(block);
        for (b, p) in block.iter_mut().zip(prev.iter()) {
            *b ^= p;
        }
        prev = saved;
    }
    unpad(buf)
}
