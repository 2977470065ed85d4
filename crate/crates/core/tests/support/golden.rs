//! Known-answer checks against vectors produced by `vectors/oracle.py`, an
//! independent implementation on top of pyca/cryptography and hashlib.

use protbox::codec;
use protbox::crypto::{
    derive_registry_key, open_registry, protect_content, protect_content_with_iv, seal_registry, AlgorithmSpec,
    PairKey, SealMode,
};
use rand::{CryptoRng, RngCore};
use serde_json::Value;

const VECTORS: &str = include_str!("../vectors/golden.json");

/// Yields a fixed byte sequence; used to pin IVs drawn from an RNG.
struct FixedRng(Vec<u8>, usize);

impl RngCore for FixedRng {
    fn next_u32(&mut self) -> u32 {
        let mut b = [0; 4];
        self.fill_bytes(&mut b);
        u32::from_le_bytes(b)
    }
    fn next_u64(&mut self) -> u64 {
        let mut b = [0; 8];
        self.fill_bytes(&mut b);
        u64::from_le_bytes(b)
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for d in dest {
            *d = self.0[self.1 % self.0.len()];
            self.1 += 1;
        }
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

impl CryptoRng for FixedRng {}

fn seq(range: std::ops::Range<u8>) -> Vec<u8> {
    range.collect()
}

pub fn check_all() -> Vec<(&'static str, bool)> {
    let v: Value = serde_json::from_str(VECTORS).expect("vectors parse");
    let s = |k: &str| v[k].as_str().expect("vector present").to_owned();
    let cbc_sha1 = AlgorithmSpec::parse("AES/CBC/PKCS5Padding", "HmacSHA1").unwrap();
    let ecb_sha256 = AlgorithmSpec::parse("AES/ECB/PKCS5Padding", "HmacSHA256").unwrap();
    let zero = PairKey::new(vec![0; 32], cbc_sha1).unwrap();
    let seq_key = PairKey::new(seq(0..32), cbc_sha1).unwrap();
    let seq_ecb = PairKey::new(seq(0..32), ecb_sha256).unwrap();
    let name = |k: &PairKey, t: &str| codec::encrypt_name(k, t).unwrap().to_string();

    let mut out = vec![
        ("b64_00", codec::encode(&[0]) == s("b64_00")),
        ("b64_ffffff", codec::encode(&[0xff; 3]) == s("b64_ffffff")),
        ("name_zero_key_a", name(&zero, "a") == s("name_zero_key_a")),
        ("name_seq_key_report", name(&seq_key, "report.docx") == s("name_seq_key_report")),
        ("name_seq_key_16", name(&seq_key, "abcdefghijklmnop") == s("name_seq_key_16")),
        ("name_seq_key_utf8", name(&seq_key, "relatório ç.txt") == s("name_seq_key_utf8")),
        (
            "name_decrypts",
            codec::decrypt_name(&seq_key, &s("name_seq_key_utf8")).as_deref() == Ok("relatório ç.txt"),
        ),
    ];

    let kdf = derive_registry_key("correct horse battery staple", seq(0..16).try_into().unwrap(), 10_000).unwrap();
    out.push(("pbkdf2_sha256_10000_64", hex::encode(kdf.material()) == s("pbkdf2_sha256_10000_64")));

    let hello = protect_content_with_iv(&seq_key, b"hello protected world", seq(100..116).try_into().unwrap());
    out.push(("blob_cbc_sha1_hello", hex::encode(hello.to_bytes()) == s("blob_cbc_sha1_hello")));
    let empty = protect_content_with_iv(&seq_key, b"", [0; 16]).to_bytes();
    out.push(("blob_cbc_sha1_empty", hex::encode(&empty) == s("blob_cbc_sha1_empty") && empty.len() == 52));
    let ecb = protect_content(&seq_ecb, b"hello protected world", &mut FixedRng(vec![0], 0));
    out.push(("blob_ecb_sha256_hello", hex::encode(ecb.to_bytes()) == s("blob_ecb_sha256_hello")));
    let opened = hex::decode(s("blob_cbc_sha1_hello"))
        .ok()
        .and_then(|b| protbox::crypto::unprotect_content(&seq_key, &b).ok());
    out.push(("blob_opens", opened.as_deref() == Some(&b"hello protected world"[..])));

    let body = b"registry body bytes for the golden test";
    let rk = derive_registry_key("hunter2-registry", seq(100..116).try_into().unwrap(), 10_000).unwrap();
    let ecb = seal_registry(&rk, SealMode::Ecb, body, &mut FixedRng(vec![0], 0));
    out.push(("registry_ecb", hex::encode(ecb) == s("registry_ecb")));
    let cbc = seal_registry(&rk, SealMode::Cbc, body, &mut FixedRng(seq(200..216), 0));
    out.push(("registry_cbc", hex::encode(cbc) == s("registry_cbc")));
    let reopened = open_registry("hunter2-registry", &hex::decode(s("registry_cbc")).unwrap()).map(|(b, _, _)| b);
    out.push(("registry_opens", reopened.as_deref() == Ok(&body[..])));
    out
}
