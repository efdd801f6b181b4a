//! Deterministic length-prefixed binary encoding.
//!
//! Every structure that is hashed, signed or persisted goes through this
//! module. Integers are big-endian, byte strings and text are prefixed with a
//! `u32` length, and maps are always emitted in sorted key order so that equal
//! values produce equal bytes.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    UnexpectedEnd(usize),
    #[error("{0} trailing bytes after record")]
    TrailingBytes(usize),
    #[error("invalid utf-8 at offset {0}")]
    InvalidUtf8(usize),
    #[error("invalid tag {tag} for {what}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("invalid {0}")]
    Invalid(&'static str),
    #[error("missing field `{0}`")]
    MissingField(String),
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    /// Fixed-width bytes, no length prefix.
    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        let len = u32::try_from(v.len()).expect("field exceeds 4 GiB");
        self.u32(len);
        self.raw(v)
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn str_list<S: AsRef<str>>(&mut self, items: &[S]) -> &mut Self {
        self.u32(items.len() as u32);
        for item in items {
            self.str(item.as_ref());
        }
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEnd(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.raw(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.raw(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::InvalidTag { what: "bool", tag }),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.raw(len)
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let at = self.pos;
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::InvalidUtf8(at))
    }

    pub fn str_list(&mut self) -> Result<Vec<String>, DecodeError> {
        let n = self.u32()? as usize;
        // Each entry needs at least its 4-byte prefix; reject absurd counts early.
        if n > self.remaining() / 4 {
            return Err(DecodeError::UnexpectedEnd(self.pos));
        }
        (0..n).map(|_| self.str()).collect()
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

/// A sorted map of named, individually encoded arguments.
///
/// Contract calls and event payloads are both carried in this form; the map
/// is encoded as a count followed by `(name, value)` pairs in key order.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct NamedArgs(BTreeMap<String, Vec<u8>>);

impl NamedArgs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_raw(&mut self, name: &str, value: Vec<u8>) {
        self.0.insert(name.to_owned(), value);
    }

    pub fn with_str(mut self, name: &str, value: &str) -> Self {
        self.insert_raw(name, value.as_bytes().to_vec());
        self
    }

    pub fn with_bytes(mut self, name: &str, value: &[u8]) -> Self {
        self.insert_raw(name, value.to_vec());
        self
    }

    pub fn with_u64(mut self, name: &str, value: u64) -> Self {
        self.insert_raw(name, value.to_be_bytes().to_vec());
        self
    }

    pub fn with_list<S: AsRef<str>>(mut self, name: &str, items: &[S]) -> Self {
        let mut enc = Encoder::new();
        enc.str_list(items);
        self.insert_raw(name, enc.finish());
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn raw(&self, name: &str) -> Result<&[u8], DecodeError> {
        self.0
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| DecodeError::MissingField(name.to_owned()))
    }

    pub fn str(&self, name: &str) -> Result<String, DecodeError> {
        String::from_utf8(self.raw(name)?.to_vec()).map_err(|_| DecodeError::InvalidUtf8(0))
    }

    pub fn u64(&self, name: &str) -> Result<u64, DecodeError> {
        let raw: [u8; 8] = self
            .raw(name)?
            .try_into()
            .map_err(|_| DecodeError::Invalid("u64 argument"))?;
        Ok(u64::from_be_bytes(raw))
    }

    pub fn list(&self, name: &str) -> Result<Vec<String>, DecodeError> {
        let mut dec = Decoder::new(self.raw(name)?);
        let out = dec.str_list()?;
        dec.finish()?;
        Ok(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.0.len() as u32);
        for (k, v) in &self.0 {
            enc.str(k).bytes(v);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = dec.u32()? as usize;
        let mut map = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..n {
            let k = dec.str()?;
            let v = dec.bytes()?.to_vec();
            // Canonical form requires strictly increasing keys.
            if last.as_ref().is_some_and(|prev| prev >= &k) {
                return Err(DecodeError::Invalid("argument order"));
            }
            last = Some(k.clone());
            map.insert(k, v);
        }
        Ok(Self(map))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let out = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(out)
    }

    /// Renders every value as text, falling back to hex for non-UTF-8 values.
    pub fn to_text_map(&self) -> BTreeMap<String, String> {
        self.0
            .iter()
            .map(|(k, v)| {
                let text = match std::str::from_utf8(v) {
                    Ok(s) if !s.chars().any(char::is_control) => s.to_owned(),
                    _ => format!("0x{}", hex::encode(v)),
                };
                (k.clone(), text)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn named_args_are_sorted_on_the_wire() {
        let a = NamedArgs::new().with_str("b", "2").with_str("a", "1");
        let b = NamedArgs::new().with_str("a", "1").with_str("b", "2");
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn unsorted_keys_are_rejected() {
        let mut enc = Encoder::new();
        enc.u32(2).str("b").bytes(b"x").str("a").bytes(b"y");
        assert_eq!(
            NamedArgs::from_bytes(&enc.finish()),
            Err(DecodeError::Invalid("argument order"))
        );
    }

    #[test]
    fn truncated_input_reports_offset() {
        let mut dec = Decoder::new(&[0, 0, 0, 5, b'a']);
        assert_eq!(dec.bytes(), Err(DecodeError::UnexpectedEnd(4)));
    }

    proptest! {
        #[test]
        fn named_args_round_trip(entries in proptest::collection::btree_map("[a-z_]{1,8}", proptest::collection::vec(any::<u8>(), 0..32), 0..8)) {
            let mut args = NamedArgs::new();
            for (k, v) in &entries {
                args.insert_raw(k, v.clone());
            }
            let back = NamedArgs::from_bytes(&args.to_bytes()).unwrap();
            prop_assert_eq!(back, args);
        }
    }
}
