//! Deterministic tag-length-value encoding shared by the registry file and the
//! key distribution messages.
//!
//! Every field is `tag: u16-BE ‖ length: u32-BE ‖ value`. Composite values are
//! themselves sequences of fields. Readers are strict: fields must appear in the
//! order the schema lists them and trailing bytes are rejected.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TlvError {
    #[error("truncated field")]
    Truncated,
    #[error("expected tag {expected:#06x}, found {found:#06x}")]
    UnexpectedTag { expected: u16, found: u16 },
    #[error("missing field {0:#06x}")]
    Missing(u16),
    #[error("trailing bytes after last field")]
    TrailingBytes,
    #[error("field {0:#06x} has an invalid value")]
    BadValue(u16),
}

#[derive(Debug, Default, Clone)]
pub struct TlvWriter {
    buf: Vec<u8>,
}

impl TlvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, tag: u16, value: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(&tag.to_be_bytes());
        self.buf
            .extend_from_slice(&(value.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(value);
        self
    }

    pub fn put_u8(&mut self, tag: u16, v: u8) -> &mut Self {
        self.put(tag, &[v])
    }

    pub fn put_bool(&mut self, tag: u16, v: bool) -> &mut Self {
        self.put_u8(tag, v as u8)
    }

    pub fn put_u32(&mut self, tag: u16, v: u32) -> &mut Self {
        self.put(tag, &v.to_be_bytes())
    }

    pub fn put_u64(&mut self, tag: u16, v: u64) -> &mut Self {
        self.put(tag, &v.to_be_bytes())
    }

    pub fn put_i64(&mut self, tag: u16, v: i64) -> &mut Self {
        self.put(tag, &v.to_be_bytes())
    }

    pub fn put_str(&mut self, tag: u16, v: &str) -> &mut Self {
        self.put(tag, v.as_bytes())
    }

    /// Writes a nested field whose value is built by `f`.
    pub fn nested(&mut self, tag: u16, f: impl FnOnce(&mut TlvWriter)) -> &mut Self {
        let mut inner = TlvWriter::new();
        f(&mut inner);
        self.put(tag, &inner.buf)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct TlvReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> TlvReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    pub fn peek_tag(&self) -> Option<u16> {
        let rest = &self.data[self.pos..];
        (rest.len() >= 2).then(|| u16::from_be_bytes([rest[0], rest[1]]))
    }

    /// Reads the next field, whatever its tag.
    pub fn next_field(&mut self) -> Result<Option<(u16, &'a [u8])>, TlvError> {
        if self.is_empty() {
            return Ok(None);
        }
        let rest = &self.data[self.pos..];
        if rest.len() < 6 {
            return Err(TlvError::Truncated);
        }
        let tag = u16::from_be_bytes([rest[0], rest[1]]);
        let len = u32::from_be_bytes([rest[2], rest[3], rest[4], rest[5]]) as usize;
        if rest.len() - 6 < len {
            return Err(TlvError::Truncated);
        }
        self.pos += 6 + len;
        Ok(Some((tag, &rest[6..6 + len])))
    }

    pub fn expect(&mut self, tag: u16) -> Result<&'a [u8], TlvError> {
        match self.next_field()? {
            Some((t, v)) if t == tag => Ok(v),
            Some((t, _)) => Err(TlvError::UnexpectedTag {
                expected: tag,
                found: t,
            }),
            None => Err(TlvError::Missing(tag)),
        }
    }

    /// Reads the field if the next tag matches, otherwise leaves the reader untouched.
    pub fn optional(&mut self, tag: u16) -> Result<Option<&'a [u8]>, TlvError> {
        if self.peek_tag() == Some(tag) {
            self.expect(tag).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Reads consecutive fields with `tag`.
    pub fn repeated(&mut self, tag: u16) -> Result<Vec<&'a [u8]>, TlvError> {
        let mut out = Vec::new();
        while let Some(v) = self.optional(tag)? {
            out.push(v);
        }
        Ok(out)
    }

    pub fn expect_u8(&mut self, tag: u16) -> Result<u8, TlvError> {
        as_u8(tag, self.expect(tag)?)
    }

    pub fn expect_bool(&mut self, tag: u16) -> Result<bool, TlvError> {
        match self.expect_u8(tag)? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(TlvError::BadValue(tag)),
        }
    }

    pub fn expect_u32(&mut self, tag: u16) -> Result<u32, TlvError> {
        let v = self.expect(tag)?;
        Ok(u32::from_be_bytes(
            v.try_into().map_err(|_| TlvError::BadValue(tag))?,
        ))
    }

    pub fn expect_u64(&mut self, tag: u16) -> Result<u64, TlvError> {
        as_u64(tag, self.expect(tag)?)
    }

    pub fn expect_i64(&mut self, tag: u16) -> Result<i64, TlvError> {
        Ok(as_u64(tag, self.expect(tag)?)? as i64)
    }

    pub fn expect_str(&mut self, tag: u16) -> Result<&'a str, TlvError> {
        std::str::from_utf8(self.expect(tag)?).map_err(|_| TlvError::BadValue(tag))
    }

    pub fn finish(self) -> Result<(), TlvError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(TlvError::TrailingBytes)
        }
    }
}

pub fn as_u8(tag: u16, v: &[u8]) -> Result<u8, TlvError> {
    match v {
        [b] => Ok(*b),
        _ => Err(TlvError::BadValue(tag)),
    }
}

pub fn as_u64(tag: u16, v: &[u8]) -> Result<u64, TlvError> {
    Ok(u64::from_be_bytes(
        v.try_into().map_err(|_| TlvError::BadValue(tag))?,
    ))
}
