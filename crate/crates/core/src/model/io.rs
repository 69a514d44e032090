//! Weight file: a text header followed by a little-endian `f64` blob.
//!
//! ```text
//! XATTR-WEIGHTS 1
//! n_enc_layers 2
//! ...                       (every ModelConfig field, one per line)
//! tensors <count>
//! <name> <rows> <cols>      (one line per tensor, blob order)
//! blob_offset <20-digit byte offset>
//! end
//! <blob>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::config::ModelConfig;
use super::weights::{layout, WeightSet};

const MAGIC: &str = "XATTR-WEIGHTS";
const FORMAT_VERSION: u32 = 1;
const OFFSET_DIGITS: usize = 20;

pub fn encode_weights(weights: &WeightSet) -> Vec<u8> {
    let c = &weights.config;
    let specs = layout(c);
    let mut header = format!("{MAGIC} {FORMAT_VERSION}\n");
    for (key, value) in [
        ("n_enc_layers", c.n_enc_layers as u64),
        ("n_dec_layers", c.n_dec_layers as u64),
        ("n_heads", c.n_heads as u64),
        ("d_model", c.d_model as u64),
        ("d_ff", c.d_ff as u64),
        ("max_len", c.max_len as u64),
        ("vocab_size", c.vocab_size as u64),
        ("seed", c.seed),
    ] {
        header.push_str(&format!("{key} {value}\n"));
    }
    header.push_str(&format!("tensors {}\n", specs.len()));
    for s in &specs {
        header.push_str(&format!("{} {} {}\n", s.name, s.rows, s.cols));
    }
    let tail = "end\n";
    let offset = header.len() + "blob_offset ".len() + OFFSET_DIGITS + 1 + tail.len();
    header.push_str(&format!("blob_offset {offset:0width$}\n{tail}", width = OFFSET_DIGITS));
    debug_assert_eq!(header.len(), offset);

    let mut bytes = header.into_bytes();
    for s in &specs {
        let m = weights.get(&s.name).expect("layout tensor present");
        for v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightSet> {
    let malformed = |m: String| Error::MalformedHeader(m);
    let end_marker = b"\nend\n";
    let header_end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .map(|p| p + end_marker.len())
        .ok_or_else(|| malformed("no `end` line".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| malformed("header is not UTF-8".into()))?;
    let mut lines = header.lines();

    let first = lines.next().unwrap_or_default();
    let mut magic = first.split_whitespace();
    if magic.next() != Some(MAGIC) {
        return Err(malformed(format!("bad magic line {first:?}")));
    }
    let version: u32 = magic
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("missing format version".into()))?;
    if version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported format version {version}")));
    }

    fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<u64> {
        let malformed = |m: String| Error::MalformedHeader(m);
        let line = lines.next().ok_or_else(|| malformed(format!("missing {key}")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(malformed(format!("expected {key}, found {line:?}")));
        }
        parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(format!("bad value for {key}: {line:?}")))
    }
    let config = ModelConfig {
        n_enc_layers: field(&mut lines, "n_enc_layers")? as usize,
        n_dec_layers: field(&mut lines, "n_dec_layers")? as usize,
        n_heads: field(&mut lines, "n_heads")? as usize,
        d_model: field(&mut lines, "d_model")? as usize,
        d_ff: field(&mut lines, "d_ff")? as usize,
        max_len: field(&mut lines, "max_len")? as usize,
        vocab_size: field(&mut lines, "vocab_size")? as usize,
        seed: field(&mut lines, "seed")?,
    };
    let count = field(&mut lines, "tensors")? as usize;

    let mut listed = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| malformed("tensor list ends early".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, rows, cols] = parts[..] else {
            return Err(malformed(format!("bad tensor line {line:?}")));
        };
        let rows: usize = rows.parse().map_err(|_| malformed(format!("bad rows in {line:?}")))?;
        let cols: usize = cols.parse().map_err(|_| malformed(format!("bad cols in {line:?}")))?;
        listed.push((name.to_string(), rows, cols));
    }
    let offset = field(&mut lines, "blob_offset")? as usize;
    if lines.next() != Some("end") {
        return Err(malformed("missing `end` after blob_offset".into()));
    }
    if offset != header_end {
        return Err(malformed(format!("blob_offset {offset} but header ends at {header_end}")));
    }

    config.validate().map_err(|e| malformed(e.to_string()))?;
    let specs = layout(&config);
    if specs.len() != listed.len() {
        return Err(Error::ShapeMismatch(format!(
            "config implies {} tensors, header lists {}",
            specs.len(),
            listed.len()
        )));
    }
    for (spec, (name, rows, cols)) in specs.iter().zip(&listed) {
        if &spec.name != name || spec.rows != *rows || spec.cols != *cols {
            return Err(Error::ShapeMismatch(format!(
                "header lists {name} {rows}x{cols}, config wants {} {}x{}",
                spec.name, spec.rows, spec.cols
            )));
        }
    }

    let expected: usize = listed.iter().map(|(_, r, c)| r * c * 8).sum();
    let blob = &bytes[offset..];
    if blob.len() < expected {
        return Err(Error::TruncatedBlob {
            expected,
            found: blob.len(),
        });
    }
    if blob.len() > expected {
        return Err(malformed(format!("{} trailing bytes after blob", blob.len() - expected)));
    }

    let mut tensors = BTreeMap::new();
    let mut chunks = blob.chunks_exact(8);
    for (name, rows, cols) in listed {
        let data: Vec<f64> = chunks
            .by_ref()
            .take(rows * cols)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.insert(name, Matrix::new(rows, cols, data)?);
    }
    WeightSet::from_tensors(config, tensors)
}

pub fn save_weights(weights: &WeightSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WeightSet {
        let cfg = ModelConfig {
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 8,
            max_len: 8,
            seed: 5,
            ..ModelConfig::default()
        };
        WeightSet::init_random(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = small();
        let back = decode_weights(&encode_weights(&w)).unwrap();
        assert_eq!(back, w);
        for ((_, a), (_, b)) in w.iter().zip(back.iter()) {
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncated_blob_detected() {
        let bytes = encode_weights(&small());
        let err = decode_weights(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::TruncatedBlob { .. }), "{err}");
        assert!(err.to_string().contains("truncated blob"));
    }

    #[test]
    fn mismatched_header_config_detected() {
        let mut cfg = ModelConfig::default();
        cfg.d_model = 32;
        cfg.n_heads = 2;
        cfg.n_enc_layers = 1;
        cfg.n_dec_layers = 1;
        let bytes = encode_weights(&WeightSet::init_random(&cfg).unwrap());
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let patched = text.replacen("d_model 32\n", "d_model 16\n", 1);
        // Same byte length keeps blob_offset valid.
        assert_eq!(patched.len(), text.len());
        let err = decode_weights(patched.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
    }

    #[test]
    fn malformed_header_detected() {
        let mut bytes = encode_weights(&small());
        bytes[0] = b'Y';
        assert!(matches!(decode_weights(&bytes), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_weights(b"garbage"), Err(Error::MalformedHeader(_))));
    }
}
