#!/usr/bin/env python3
"""Generates golden vectors with an implementation independent of the Rust code.

Uses pyca/cryptography for AES and hashlib/hmac from the Python stdlib.
Run from this directory: python3 oracle.py > golden.json
"""
import base64
import hashlib
import hmac
import json
import struct

from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes


def pkcs7(data):
    p = padding.PKCS7(128).padder()
    return p.update(data) + p.finalize()


def aes_ecb(key, data):
    e = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return e.update(pkcs7(data)) + e.finalize()


def aes_cbc(key, iv, data):
    e = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
    return e.update(pkcs7(data)) + e.finalize()


def mod_b64(data):
    return base64.b64encode(data).decode().replace("/", "-")


def name(key, text):
    return mod_b64(aes_ecb(key, text.encode("utf-8")))


def blob(key, mode, mac, plaintext, iv=None):
    if mode == "CBC":
        body = iv + aes_cbc(key, iv, plaintext)
    else:
        body = aes_ecb(key, plaintext)
    digest = hashlib.sha1 if mac == "HmacSHA1" else hashlib.sha256
    return hmac.new(key, body, digest).digest() + body


def sealed_registry(password, salt, iterations, mode, body, iv=None):
    dk = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, iterations, 64)
    cipher_key, mac_key = dk[:32], dk[32:]
    header = b"PBRG" + bytes([1, mode]) + salt + struct.pack(">I", iterations)
    if mode == 0:
        enc = aes_ecb(cipher_key, body)
    else:
        enc = iv + aes_cbc(cipher_key, iv, body)
    tag = hmac.new(mac_key, header + enc, hashlib.sha256).digest()
    return header + enc + tag


zero_key = bytes(32)
seq_key = bytes(range(32))
out = {
    "b64_00": mod_b64(b"\x00"),
    "b64_ffffff": mod_b64(b"\xff\xff\xff"),
    "name_zero_key_a": name(zero_key, "a"),
    "name_seq_key_report": name(seq_key, "report.docx"),
    "name_seq_key_16": name(seq_key, "abcdefghijklmnop"),
    "name_seq_key_utf8": name(seq_key, "relatório ç.txt"),
    "pbkdf2_sha256_10000_64": hashlib.pbkdf2_hmac(
        "sha256", b"correct horse battery staple", bytes(range(16)), 10000, 64
    ).hex(),
    "blob_cbc_sha1_hello": blob(
        seq_key, "CBC", "HmacSHA1", b"hello protected world", bytes(range(100, 116))
    ).hex(),
    "blob_cbc_sha1_empty": blob(seq_key, "CBC", "HmacSHA1", b"", bytes(16)).hex(),
    "blob_ecb_sha256_hello": blob(seq_key, "ECB", "HmacSHA256", b"hello protected world").hex(),
    "registry_ecb": sealed_registry(
        "hunter2-registry", bytes(range(100, 116)), 10000, 0, b"registry body bytes for the golden test"
    ).hex(),
    "registry_cbc": sealed_registry(
        "hunter2-registry", bytes(range(100, 116)), 10000, 1, b"registry body bytes for the golden test",
        bytes(range(200, 216)),
    ).hex(),
}
print(json.dumps(out, indent=2, sort_keys=True))
