//! Little-endian tensor record container (`ARMR`).
//!
//! Layout: magic `ARMR`, `u32` version (1), `u32` record count, then per
//! record: `u32` name length, UTF-8 name, `u8` dtype tag, `u8` rank, `rank`
//! × `u32` dims, raw little-endian element data.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ARMR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum BlobData {
    I8(Vec<i8>),
    I32(Vec<i32>),
    F32(Vec<f32>),
}

impl BlobData {
    pub fn tag(&self) -> u8 {
        match self {
            BlobData::I8(_) => 0,
            BlobData::I32(_) => 1,
            BlobData::F32(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BlobData::I8(v) => v.len(),
            BlobData::I32(v) => v.len(),
            BlobData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: BlobData,
}

impl BlobRecord {
    pub fn new(name: impl Into<String>, dims: &[usize], data: BlobData) -> Self {
        BlobRecord {
            name: name.into(),
            dims: dims.iter().map(|d| *d as u32).collect(),
            data,
        }
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|d| *d as usize).collect()
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            BlobData::F32(v) => Ok(v),
            _ => Err(Error::format("blob", format!("record {} is not f32", self.name))),
        }
    }

    pub fn as_i8(&self) -> Result<&[i8]> {
        match &self.data {
            BlobData::I8(v) => Ok(v),
            _ => Err(Error::format("blob", format!("record {} is not int8", self.name))),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match &self.data {
            BlobData::I32(v) => Ok(v),
            _ => Err(Error::format("blob", format!("record {} is not int32", self.name))),
        }
    }
}

pub fn encode(records: &[BlobRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.data.tag());
        out.push(r.dims.len() as u8);
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &r.data {
            BlobData::I8(v) => out.extend(v.iter().map(|x| *x as u8)),
            BlobData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

/// Cursor over a little-endian byte buffer.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::format(self.what, format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::format(
                self.what,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<BlobRecord>> {
    let mut r = Reader::new(bytes, "weight blob");
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format("weight blob", format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::format("weight blob", format!("record name: {e}")))?
            .to_string();
        let tag = r.u8()?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d as usize))
            .ok_or_else(|| Error::format("weight blob", format!("record {name}: dims overflow")))?;
        let data = match tag {
            0 => BlobData::I8(r.take(n)?.iter().map(|b| *b as i8).collect()),
            1 => BlobData::I32(
                r.take(n.checked_mul(4).ok_or_else(|| Error::format("weight blob", "size overflow"))?)?
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            2 => BlobData::F32(
                r.take(n.checked_mul(4).ok_or_else(|| Error::format("weight blob", "size overflow"))?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            t => {
                return Err(Error::format(
                    "weight blob",
                    format!("record {name}: unknown dtype tag {t}"),
                ))
            }
        };
        records.push(BlobRecord { name, dims, data });
    }
    if !r.is_done() {
        return Err(Error::format("weight blob", "trailing bytes after last record"));
    }
    Ok(records)
}

pub(crate) fn find<'a>(records: &'a [BlobRecord], name: &str) -> Result<&'a BlobRecord> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::format("weight blob", format!("missing record {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_blob_is_header_only() {
        let bytes = encode(&[]);
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"ARMR");
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn rejects_corruption() {
        let rec = BlobRecord::new("w", &[2], BlobData::I32(vec![1, -1]));
        let bytes = encode(&[rec]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    fn data_strategy() -> impl Strategy<Value = (Vec<u32>, BlobData)> {
        prop::collection::vec(1u32..4, 0..4).prop_flat_map(|dims| {
            let n: usize = dims.iter().map(|d| *d as usize).product();
            prop_oneof![
                prop::collection::vec(any::<i8>(), n).prop_map(BlobData::I8),
                prop::collection::vec(any::<i32>(), n).prop_map(BlobData::I32),
                prop::collection::vec(any::<u32>(), n)
                    .prop_map(|v| BlobData::F32(v.into_iter().map(f32::from_bits).collect())),
            ]
            .prop_map(move |d| (dims.clone(), d))
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(recs in prop::collection::vec(("[a-z.0-9]{0,12}", data_strategy()), 0..5)) {
            let records: Vec<BlobRecord> = recs
                .into_iter()
                .map(|(name, (dims, data))| BlobRecord { name, dims, data })
                .collect();
            let bytes = encode(&records);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
