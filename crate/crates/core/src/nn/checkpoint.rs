//! Checkpoint container: magic "NVC1", format version, key-value
//! metadata, little-endian f64 tensor records, and a trailing CRC-32 over
//! the payload. Round trips are bit-exact.

use super::params::ParamStore;
use super::NnError;

const MAGIC: &[u8; 4] = b"NVC1";
const VERSION: u32 = 1;

/// CRC-32 (IEEE 802.3, reflected) lookup table.
const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 { 0xEDB8_8320 ^ (crc >> 1) } else { crc >> 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

const CRC_TABLE: [u32; 256] = crc_table();

fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in data {
        crc = CRC_TABLE[((crc ^ byte as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

/// Tensors plus metadata recovered from a checkpoint.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub params: ParamStore,
    pub metadata: Vec<(String, String)>,
}

impl LoadedCheckpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Serializes all tensors (in insertion order) and metadata.
pub fn save_checkpoint(store: &ParamStore, metadata: &[(String, String)]) -> Vec<u8> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&VERSION.to_le_bytes());
    payload.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    for (k, v) in metadata {
        payload.extend_from_slice(&(k.len() as u32).to_le_bytes());
        payload.extend_from_slice(k.as_bytes());
        payload.extend_from_slice(&(v.len() as u32).to_le_bytes());
        payload.extend_from_slice(v.as_bytes());
    }
    payload.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for tensor in store.iter() {
        payload.extend_from_slice(&(tensor.name.len() as u32).to_le_bytes());
        payload.extend_from_slice(tensor.name.as_bytes());
        payload.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for &d in &tensor.shape {
            payload.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &tensor.values {
            payload.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(4 + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32(&payload).to_le_bytes());
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        // Running past the end means the file was cut short.
        if self.pos + n > self.data.len() {
            return Err(NnError::ChecksumFail);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, NnError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| NnError::ChecksumFail)
    }
}

/// Parses a checkpoint, verifying magic, version, and checksum.
pub fn load_checkpoint(bytes: &[u8]) -> Result<LoadedCheckpoint, NnError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(NnError::BadMagic);
    }
    let payload = &bytes[4..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32(payload) != stored {
        return Err(NnError::ChecksumFail);
    }

    let mut r = Reader { data: payload, pos: 0 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::VersionMismatch(version));
    }
    let meta_count = r.u32()? as usize;
    let mut metadata = Vec::with_capacity(meta_count);
    for _ in 0..meta_count {
        let k = r.string()?;
        let v = r.string()?;
        metadata.push((k, v));
    }
    let tensor_count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..tensor_count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_bits(r.u64()?));
        }
        params.add(name, shape, values)?;
    }
    Ok(LoadedCheckpoint { params, metadata })
}
