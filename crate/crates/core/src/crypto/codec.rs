//! Tag-length-value encoding.
//!
//! Every field is written as a 2-byte big-endian tag, a 4-byte big-endian
//! value length and the raw value bytes. Tags must be strictly increasing
//! inside a record, which makes the encoding canonical: one record, one byte
//! string.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("field tag {tag} does not follow tag {previous}")]
    NonCanonicalOrder { previous: u16, tag: u16 },
    #[error("value of field {tag} is {len} bytes, over the 4-byte length limit")]
    ValueTooLong { tag: u16, len: usize },
    #[error("input truncated at offset {offset}")]
    Truncated { offset: usize },
}

/// An ordered list of `(tag, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct CanonicalRecord {
    pub fields: Vec<(u16, Vec<u8>)>,
}

impl CanonicalRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fields(fields: Vec<(u16, Vec<u8>)>) -> Self {
        Self { fields }
    }

    pub fn push(&mut self, tag: u16, value: impl Into<Vec<u8>>) -> &mut Self {
        self.fields.push((tag, value.into()));
        self
    }

    pub fn get(&self, tag: u16) -> Option<&[u8]> {
        self.fields
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, v)| v.as_slice())
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(self.fields.iter().map(|(_, v)| v.len() + 6).sum());
        let mut previous: Option<u16> = None;
        for (tag, value) in &self.fields {
            if let Some(previous) = previous {
                if *tag <= previous {
                    return Err(CodecError::NonCanonicalOrder { previous, tag: *tag });
                }
            }
            let len = u32::try_from(value.len())
                .map_err(|_| CodecError::ValueTooLong { tag: *tag, len: value.len() })?;
            out.extend_from_slice(&tag.to_be_bytes());
            out.extend_from_slice(&len.to_be_bytes());
            out.extend_from_slice(value);
            previous = Some(*tag);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut fields = Vec::new();
        let mut offset = 0usize;
        let mut previous: Option<u16> = None;
        while offset < bytes.len() {
            if bytes.len() - offset < 6 {
                return Err(CodecError::Truncated { offset });
            }
            let tag = u16::from_be_bytes([bytes[offset], bytes[offset + 1]]);
            let len = u32::from_be_bytes([
                bytes[offset + 2],
                bytes[offset + 3],
                bytes[offset + 4],
                bytes[offset + 5],
            ]) as usize;
            if let Some(previous) = previous {
                if tag <= previous {
                    return Err(CodecError::NonCanonicalOrder { previous, tag });
                }
            }
            let start = offset + 6;
            let end = start
                .checked_add(len)
                .filter(|end| *end <= bytes.len())
                .ok_or(CodecError::Truncated { offset: start })?;
            fields.push((tag, bytes[start..end].to_vec()));
            previous = Some(tag);
            offset = end;
        }
        Ok(Self { fields })
    }
}

/// Streaming writer used by the in-crate types. Tags are constants chosen by
/// the type, so an out-of-order tag is a programming error and panics.
#[derive(Debug, Default)]
pub struct TlvWriter {
    out: Vec<u8>,
    last: Option<u16>,
}

impl TlvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, tag: u16, value: &[u8]) -> Self {
        if let Some(last) = self.last {
            assert!(tag > last, "tlv tag {tag} written after {last}");
        }
        let len = u32::try_from(value.len()).expect("tlv value longer than u32::MAX");
        self.out.extend_from_slice(&tag.to_be_bytes());
        self.out.extend_from_slice(&len.to_be_bytes());
        self.out.extend_from_slice(value);
        self.last = Some(tag);
        self
    }

    pub fn str(self, tag: u16, value: &str) -> Self {
        self.bytes(tag, value.as_bytes())
    }

    pub fn u64(self, tag: u16, value: u64) -> Self {
        self.bytes(tag, &value.to_be_bytes())
    }

    pub fn u8(self, tag: u16, value: u8) -> Self {
        self.bytes(tag, &[value])
    }

    pub fn opt(self, tag: u16, value: Option<&[u8]>) -> Self {
        match value {
            Some(v) => self.bytes(tag, v),
            None => self,
        }
    }

    pub fn list<I, T>(self, tag: u16, items: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        let encoded = encode_list(items);
        self.bytes(tag, &encoded)
    }

    pub fn finish(self) -> Vec<u8> {
        self.out
    }
}

/// Length-prefixed list: 4-byte item count, then each item as a 4-byte
/// length followed by its bytes.
pub fn encode_list<I, T>(items: I) -> Vec<u8>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    let mut body = Vec::new();
    let mut count: u32 = 0;
    for item in items {
        let item = item.as_ref();
        body.extend_from_slice(&(item.len() as u32).to_be_bytes());
        body.extend_from_slice(item);
        count += 1;
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&count.to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_list(bytes: &[u8]) -> Result<Vec<Vec<u8>>, CodecError> {
    let read_u32 = |at: usize| -> Result<usize, CodecError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or(CodecError::Truncated { offset: at })
    };
    let count = read_u32(0)?;
    let mut offset = 4;
    let mut items = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = read_u32(offset)?;
        offset += 4;
        let item = bytes
            .get(offset..offset + len)
            .ok_or(CodecError::Truncated { offset })?;
        items.push(item.to_vec());
        offset += len;
    }
    if offset != bytes.len() {
        return Err(CodecError::Truncated { offset });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_record_encodes_to_nothing() {
        assert_eq!(CanonicalRecord::new().encode().unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn single_field_layout() {
        let mut r = CanonicalRecord::new();
        r.push(1, b"AB".to_vec());
        assert_eq!(
            r.encode().unwrap(),
            vec![0x00, 0x01, 0x00, 0x00, 0x00, 0x02, 0x41, 0x42]
        );
    }

    #[test]
    fn rejects_non_increasing_tags() {
        let r = CanonicalRecord::from_fields(vec![(2, vec![]), (2, vec![1])]);
        assert_eq!(
            r.encode(),
            Err(CodecError::NonCanonicalOrder { previous: 2, tag: 2 })
        );
        let r = CanonicalRecord::from_fields(vec![(5, vec![]), (3, vec![])]);
        assert!(matches!(r.encode(), Err(CodecError::NonCanonicalOrder { .. })));
    }

    #[test]
    fn decode_rejects_truncation_and_disorder() {
        assert!(matches!(
            CanonicalRecord::decode(&[0, 1, 0, 0, 0, 5, 1]),
            Err(CodecError::Truncated { .. })
        ));
        assert!(matches!(
            CanonicalRecord::decode(&[0, 1, 0]),
            Err(CodecError::Truncated { .. })
        ));
        let bytes = [0, 2, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0];
        assert!(matches!(
            CanonicalRecord::decode(&bytes),
            Err(CodecError::NonCanonicalOrder { .. })
        ));
    }

    #[test]
    fn list_round_trip() {
        let items = vec![b"".to_vec(), b"abc".to_vec(), vec![0u8; 300]];
        assert_eq!(decode_list(&encode_list(&items)).unwrap(), items);
        assert!(decode_list(&[0, 0, 0, 1, 0, 0, 0, 9]).is_err());
    }

    fn record_strategy() -> impl Strategy<Value = CanonicalRecord> {
        proptest::collection::btree_map(any::<u16>(), proptest::collection::vec(any::<u8>(), 0..24), 0..12)
            .prop_map(|m| CanonicalRecord::from_fields(m.into_iter().collect()))
    }

    proptest! {
        #[test]
        fn encode_decode_encode_is_identity(r in record_strategy()) {
            let bytes = r.encode().unwrap();
            let back = CanonicalRecord::decode(&bytes).unwrap();
            prop_assert_eq!(&back, &r);
            prop_assert_eq!(back.encode().unwrap(), bytes);
        }

        #[test]
        fn distinct_records_encode_differently(a in record_strategy(), b in record_strategy()) {
            prop_assume!(a != b);
            prop_assert_ne!(a.encode().unwrap(), b.encode().unwrap());
        }

        #[test]
        fn writer_matches_record_encoding(r in record_strategy()) {
            let mut w = TlvWriter::new();
            for (tag, value) in &r.fields {
                w = w.bytes(*tag, value);
            }
            prop_assert_eq!(w.finish(), r.encode().unwrap());
        }
    }
}
