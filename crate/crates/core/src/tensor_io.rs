//! The `.reba` tensor bundle container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "REBABNDL"                 8 bytes magic
//! H                          u32 header length
//! header                     H bytes of UTF-8 JSON
//! attentions                 I*J*m*m f32, layer-major, head-major, row-major
//! hidden states              m*d f32, row-major
//! ```
//!
//! Nothing may follow the hidden states.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RebaError, Result};

pub const MAGIC: &[u8; 8] = b"REBABNDL";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: &str = "f32";

/// Entries above the diagonal may deviate from zero by at most this much.
pub const CAUSAL_TOLERANCE: f64 = 1e-6;
/// Attention rows must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub version: u32,
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub base_len: usize,
    pub repetitions: usize,
    /// Set when the repeated sequence was cut short (`seq_len < repetitions * base_len`)
    /// or does not follow the repetition alignment.
    #[serde(default)]
    pub truncated: bool,
    pub token_ids: Vec<u32>,
    pub dtype: String,
    #[serde(default)]
    pub model_tag: String,
    #[serde(default)]
    pub notes: String,
}

impl BundleHeader {
    /// Header for an untruncated `repetitions`-fold bundle over `token_ids`.
    pub fn new(
        layers: usize,
        heads: usize,
        hidden: usize,
        base_len: usize,
        repetitions: usize,
        token_ids: Vec<u32>,
    ) -> Self {
        BundleHeader {
            version: FORMAT_VERSION,
            layers,
            heads,
            seq_len: token_ids.len(),
            hidden,
            base_len,
            repetitions,
            truncated: false,
            token_ids,
            dtype: DTYPE_F32.to_string(),
            model_tag: String::new(),
            notes: String::new(),
        }
    }
}

/// All per-layer, per-head causal attention matrices of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    layers: usize,
    heads: usize,
    seq_len: usize,
    data: Vec<f32>,
}

impl AttentionStack {
    pub fn new(layers: usize, heads: usize, seq_len: usize, data: Vec<f32>) -> Result<Self> {
        let expected = layers
            .checked_mul(heads)
            .and_then(|x| x.checked_mul(seq_len))
            .and_then(|x| x.checked_mul(seq_len))
            .ok_or_else(|| RebaError::validation("attention stack dimensions overflow"))?;
        if data.len() != expected {
            return Err(RebaError::validation(format!(
                "attention stack holds {} values, expected {layers}x{heads}x{seq_len}x{seq_len} = {expected}",
                data.len()
            )));
        }
        Ok(AttentionStack {
            layers,
            heads,
            seq_len,
            data,
        })
    }

    pub fn zeros(layers: usize, heads: usize, seq_len: usize) -> Self {
        AttentionStack {
            layers,
            heads,
            seq_len,
            data: vec![0.0; layers * heads * seq_len * seq_len],
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn is_empty(&self) -> bool {
        self.layers == 0 || self.heads == 0
    }

    fn offset(&self, layer: usize, head: usize) -> usize {
        assert!(
            layer < self.layers && head < self.heads,
            "matrix ({layer}, {head}) out of range"
        );
        (layer * self.heads + head) * self.seq_len * self.seq_len
    }

    /// Row-major `m x m` matrix for a (0-based) layer and head.
    pub fn matrix(&self, layer: usize, head: usize) -> &[f32] {
        let start = self.offset(layer, head);
        &self.data[start..start + self.seq_len * self.seq_len]
    }

    pub fn matrix_mut(&mut self, layer: usize, head: usize) -> &mut [f32] {
        let start = self.offset(layer, head);
        let len = self.seq_len * self.seq_len;
        &mut self.data[start..start + len]
    }

    pub fn get(&self, layer: usize, head: usize, row: usize, col: usize) -> f32 {
        self.matrix(layer, head)[row * self.seq_len + col]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Final-layer token states, one row per sequence position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl HiddenStates {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let expected = rows
            .checked_mul(dim)
            .ok_or_else(|| RebaError::validation("hidden state dimensions overflow"))?;
        if data.len() != expected {
            return Err(RebaError::validation(format!(
                "hidden states hold {} values, expected {rows}x{dim} = {expected}",
                data.len()
            )));
        }
        Ok(HiddenStates { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(RebaError::validation("hidden state rows have unequal lengths"));
        }
        HiddenStates::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// 0-based row.
    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [f32] {
        let dim = self.dim;
        &mut self.data[index * dim..(index + 1) * dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    pub header: BundleHeader,
    pub attentions: AttentionStack,
    pub hidden: HiddenStates,
}

impl TensorBundle {
    pub fn base_len(&self) -> usize {
        self.header.base_len
    }

    pub fn repetitions(&self) -> usize {
        self.header.repetitions
    }

    pub fn seq_len(&self) -> usize {
        self.header.seq_len
    }

    pub fn dim(&self) -> usize {
        self.header.hidden
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_bundle(self)
    }
}

/// Where in a bundle a violation was found. All indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Header,
    Token {
        index: usize,
    },
    AttentionEntry {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
    },
    AttentionRow {
        layer: usize,
        head: usize,
        row: usize,
    },
    HiddenEntry {
        row: usize,
        col: usize,
    },
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Location::Header => write!(f, "header"),
            Location::Token { index } => write!(f, "token_ids[{index}]"),
            Location::AttentionEntry { layer, head, row, col } => {
                write!(f, "attention layer {layer} head {head} [{row}][{col}]")
            }
            Location::AttentionRow { layer, head, row } => {
                write!(f, "attention layer {layer} head {head} row {row}")
            }
            Location::HiddenEntry { row, col } => write!(f, "hidden [{row}][{col}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    UnsupportedVersion,
    UnsupportedDtype,
    ZeroDimension,
    TokenCount,
    RepetitionLength,
    RepetitionAlignment,
    AttentionShape,
    HiddenShape,
    NonFinite,
    NonCausal,
    RowSum,
    OutOfRange,
}

impl ViolationKind {
    pub fn describe(self) -> &'static str {
        match self {
            ViolationKind::UnsupportedVersion => "unsupported version",
            ViolationKind::UnsupportedDtype => "unsupported dtype",
            ViolationKind::ZeroDimension => "zero dimension",
            ViolationKind::TokenCount => "token count mismatch",
            ViolationKind::RepetitionLength => "repetition length mismatch",
            ViolationKind::RepetitionAlignment => "repetition alignment",
            ViolationKind::AttentionShape => "attention shape mismatch",
            ViolationKind::HiddenShape => "hidden shape mismatch",
            ViolationKind::NonFinite => "non-finite value",
            ViolationKind::NonCausal => "non-causal attention",
            ViolationKind::RowSum => "attention row sum",
            ViolationKind::OutOfRange => "attention out of range",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: Location,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind.describe(), self.location, self.detail)
    }
}

/// Checks every header, attention and hidden-state invariant and returns all
/// violations found. An empty list means the bundle is valid.
pub fn validate_bundle(bundle: &TensorBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    let h = &bundle.header;
    let mut push = |kind, location, detail: String| out.push(Violation { kind, location, detail });

    if h.version != FORMAT_VERSION {
        push(
            ViolationKind::UnsupportedVersion,
            Location::Header,
            format!("version {}", h.version),
        );
    }
    if h.dtype != DTYPE_F32 {
        push(
            ViolationKind::UnsupportedDtype,
            Location::Header,
            format!("dtype {:?}", h.dtype),
        );
    }
    for (name, value) in [
        ("layers", h.layers),
        ("heads", h.heads),
        ("seq_len", h.seq_len),
        ("hidden", h.hidden),
        ("base_len", h.base_len),
        ("repetitions", h.repetitions),
    ] {
        if value == 0 {
            push(ViolationKind::ZeroDimension, Location::Header, format!("{name} is 0"));
        }
    }
    if h.token_ids.len() != h.seq_len {
        push(
            ViolationKind::TokenCount,
            Location::Header,
            format!("{} token ids for seq_len {}", h.token_ids.len(), h.seq_len),
        );
    }

    let full_len = h.base_len.checked_mul(h.repetitions);
    if h.truncated {
        if h.seq_len < h.base_len || full_len.is_none_or(|full| h.seq_len > full) {
            push(
                ViolationKind::RepetitionLength,
                Location::Header,
                format!(
                    "truncated seq_len {} outside [{}, {}x{}]",
                    h.seq_len, h.base_len, h.repetitions, h.base_len
                ),
            );
        }
    } else if full_len != Some(h.seq_len) {
        push(
            ViolationKind::RepetitionLength,
            Location::Header,
            format!("seq_len {} != {} x {}", h.seq_len, h.repetitions, h.base_len),
        );
    } else if h.base_len > 0 {
        if let Some(index) = (0..h.token_ids.len()).find(|&i| h.token_ids[i] != h.token_ids[i % h.base_len]) {
            push(
                ViolationKind::RepetitionAlignment,
                Location::Token { index },
                format!(
                    "token {} differs from token_ids[{}] = {}",
                    h.token_ids[index],
                    index % h.base_len,
                    h.token_ids[index % h.base_len]
                ),
            );
        }
    }

    let att = &bundle.attentions;
    let att_shape_ok = (att.layers, att.heads, att.seq_len) == (h.layers, h.heads, h.seq_len);
    if !att_shape_ok {
        push(
            ViolationKind::AttentionShape,
            Location::Header,
            format!(
                "attention stack is {}x{}x{m}x{m}, header declares {}x{}x{n}x{n}",
                att.layers,
                att.heads,
                h.layers,
                h.heads,
                m = att.seq_len,
                n = h.seq_len
            ),
        );
    }
    let hid = &bundle.hidden;
    if (hid.rows, hid.dim) != (h.seq_len, h.hidden) {
        push(
            ViolationKind::HiddenShape,
            Location::Header,
            format!(
                "hidden states are {}x{}, header declares {}x{}",
                hid.rows, hid.dim, h.seq_len, h.hidden
            ),
        );
    }

    // Content checks run on the arrays' own shapes, so they stay in bounds
    // even when the header disagrees.
    let m = att.seq_len;
    for layer in 0..att.layers {
        for head in 0..att.heads {
            let mat = att.matrix(layer, head);
            for row in 0..m {
                let values = &mat[row * m..(row + 1) * m];
                let mut finite = true;
                for (col, &v) in values.iter().enumerate() {
                    let location = Location::AttentionEntry { layer, head, row, col };
                    if !v.is_finite() {
                        finite = false;
                        push(ViolationKind::NonFinite, location, format!("value {v}"));
                        continue;
                    }
                    let v = f64::from(v);
                    if col > row && v.abs() > CAUSAL_TOLERANCE {
                        push(
                            ViolationKind::NonCausal,
                            location,
                            format!("value {v} above the diagonal"),
                        );
                    } else if !(0.0..=1.0 + CAUSAL_TOLERANCE).contains(&v) {
                        push(ViolationKind::OutOfRange, location, format!("value {v} outside [0, 1]"));
                    }
                }
                if finite {
                    let sum: f64 = values.iter().map(|&v| f64::from(v)).sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        push(
                            ViolationKind::RowSum,
                            Location::AttentionRow { layer, head, row },
                            format!("row sums to {sum}"),
                        );
                    }
                }
            }
        }
    }

    for row in 0..hid.rows {
        for (col, &v) in hid.row(row).iter().enumerate() {
            if !v.is_finite() {
                push(
                    ViolationKind::NonFinite,
                    Location::HiddenEntry { row, col },
                    format!("value {v}"),
                );
            }
        }
    }

    out
}

fn ensure_valid(bundle: &TensorBundle) -> Result<()> {
    match validate_bundle(bundle).into_iter().next() {
        None => Ok(()),
        Some(first) => Err(RebaError::Validation(first.to_string())),
    }
}

/// Serializes a valid bundle and returns the number of bytes written. An
/// invalid bundle is rejected before anything reaches the sink.
pub fn write_bundle<W: Write>(bundle: &TensorBundle, sink: W) -> Result<u64> {
    ensure_valid(bundle)?;
    let header = serde_json::to_vec(&bundle.header)?;
    let header_len = u32::try_from(header.len()).map_err(|_| RebaError::validation("header larger than 4 GiB"))?;

    let mut sink = BufWriter::new(sink);
    sink.write_all(MAGIC)?;
    sink.write_all(&header_len.to_le_bytes())?;
    sink.write_all(&header)?;
    for v in bundle.attentions.as_slice().iter().chain(bundle.hidden.as_slice()) {
        sink.write_all(&v.to_le_bytes())?;
    }
    sink.flush()?;

    let payload = 4 * (bundle.attentions.as_slice().len() + bundle.hidden.as_slice().len());
    Ok((MAGIC.len() + 4 + header.len() + payload) as u64)
}

fn read_f32s<R: Read>(source: &mut R, count: usize, what: &str) -> Result<Vec<f32>> {
    let bytes = count
        .checked_mul(4)
        .ok_or_else(|| RebaError::format(format!("{what} payload size overflows")))?;
    let mut buf = Vec::new();
    source.take(bytes as u64).read_to_end(&mut buf)?;
    if buf.len() != bytes {
        return Err(RebaError::format(format!(
            "{what} payload truncated: expected {bytes} bytes, found {}",
            buf.len()
        )));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_bundle<R: Read>(source: R) -> Result<TensorBundle> {
    let mut source = BufReader::new(source);

    let mut magic = [0u8; 8];
    source
        .read_exact(&mut magic)
        .map_err(|_| RebaError::format("file shorter than the magic bytes"))?;
    if &magic != MAGIC {
        return Err(RebaError::format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }

    let mut len_bytes = [0u8; 4];
    source
        .read_exact(&mut len_bytes)
        .map_err(|_| RebaError::format("missing header length"))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = Vec::new();
    (&mut source).take(header_len as u64).read_to_end(&mut header_bytes)?;
    if header_bytes.len() != header_len {
        return Err(RebaError::format(format!(
            "header truncated: expected {header_len} bytes, found {}",
            header_bytes.len()
        )));
    }
    let header: BundleHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| RebaError::format(format!("invalid header JSON: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(RebaError::format(format!(
            "unsupported bundle version {}",
            header.version
        )));
    }
    if header.dtype != DTYPE_F32 {
        return Err(RebaError::format(format!("unsupported dtype {:?}", header.dtype)));
    }

    let att_count = header
        .layers
        .checked_mul(header.heads)
        .and_then(|x| x.checked_mul(header.seq_len))
        .and_then(|x| x.checked_mul(header.seq_len))
        .ok_or_else(|| RebaError::format("declared attention size overflows"))?;
    let hid_count = header
        .seq_len
        .checked_mul(header.hidden)
        .ok_or_else(|| RebaError::format("declared hidden size overflows"))?;

    let att = read_f32s(&mut source, att_count, "attention")?;
    let hid = read_f32s(&mut source, hid_count, "hidden state")?;
    let mut rest = [0u8; 1];
    if source.read(&mut rest)? != 0 {
        return Err(RebaError::format("trailing bytes after the declared payload"));
    }

    let bundle = TensorBundle {
        attentions: AttentionStack::new(header.layers, header.heads, header.seq_len, att)?,
        hidden: HiddenStates::new(header.seq_len, header.hidden, hid)?,
        header,
    };
    ensure_valid(&bundle)?;
    Ok(bundle)
}

pub fn write_bundle_file(bundle: &TensorBundle, path: impl AsRef<Path>) -> Result<u64> {
    // Validate first so an invalid bundle never creates the file.
    ensure_valid(bundle)?;
    write_bundle(bundle, File::create(path)?)
}

pub fn read_bundle_file(path: impl AsRef<Path>) -> Result<TensorBundle> {
    read_bundle(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smallest() -> TensorBundle {
        TensorBundle {
            header: BundleHeader::new(1, 1, 1, 1, 1, vec![0]),
            attentions: AttentionStack::new(1, 1, 1, vec![1.0]).unwrap(),
            hidden: HiddenStates::new(1, 1, vec![0.5]).unwrap(),
        }
    }

    /// Two-layer stack of uniform causal attention over `tokens` repeated twice.
    fn uniform(tokens: &[u32]) -> TensorBundle {
        let n = tokens.len();
        let m = 2 * n;
        let ids: Vec<u32> = tokens.iter().chain(tokens).copied().collect();
        let mut att = AttentionStack::zeros(2, 1, m);
        for layer in 0..2 {
            let mat = att.matrix_mut(layer, 0);
            for i in 0..m {
                for j in 0..=i {
                    mat[i * m + j] = 1.0 / (i + 1) as f32;
                }
            }
        }
        TensorBundle {
            header: BundleHeader::new(2, 1, 3, n, 2, ids),
            attentions: att,
            hidden: HiddenStates::new(m, 3, (0..m * 3).map(|x| x as f32 * 0.25).collect()).unwrap(),
        }
    }

    #[test]
    fn smallest_bundle_layout() {
        let mut buf = Vec::new();
        let written = write_bundle(&smallest(), &mut buf).unwrap();
        assert_eq!(written as usize, buf.len());
        assert_eq!(&buf[..8], MAGIC);
        let h = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        assert_eq!(buf.len(), 12 + h + 4 + 4);
        let tail = &buf[12 + h..];
        assert_eq!(f32::from_le_bytes(tail[..4].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(tail[4..].try_into().unwrap()), 0.5);
    }

    #[test]
    fn round_trip() {
        let bundle = uniform(&[4, 9, 2]);
        let mut buf = Vec::new();
        write_bundle(&bundle, &mut buf).unwrap();
        assert_eq!(read_bundle(buf.as_slice()).unwrap(), bundle);
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_bundle(&smallest(), &mut buf).unwrap();
        buf[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(read_bundle(buf.as_slice()), Err(RebaError::Format(_))));
    }

    #[test]
    fn trailing_and_short_payloads_are_format_errors() {
        let mut buf = Vec::new();
        write_bundle(&smallest(), &mut buf).unwrap();
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_bundle(long.as_slice()), Err(RebaError::Format(_))));
        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_bundle(short), Err(RebaError::Format(_))));
    }

    #[test]
    fn corrupted_upper_triangle_is_rejected() {
        let bundle = uniform(&[1, 2]);
        let mut buf = Vec::new();
        write_bundle(&bundle, &mut buf).unwrap();
        let h = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        // entry [0][1] of the first matrix
        let at = 12 + h + 4;
        buf[at..at + 4].copy_from_slice(&0.5f32.to_le_bytes());
        match read_bundle(buf.as_slice()) {
            Err(RebaError::Validation(msg)) => assert!(msg.contains("non-causal attention"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn one_violation_per_bad_row() {
        let mut bundle = uniform(&[1, 2, 3]);
        let m = bundle.seq_len();
        // Scale every row of layer 1 to sum to 0.9.
        for v in bundle.attentions.matrix_mut(1, 0) {
            *v *= 0.9;
        }
        let violations = validate_bundle(&bundle);
        assert_eq!(violations.len(), m);
        assert!(violations.iter().all(|v| v.kind == ViolationKind::RowSum));
        for (row, v) in violations.iter().enumerate() {
            assert_eq!(v.location, Location::AttentionRow { layer: 1, head: 0, row });
        }
    }

    #[test]
    fn repetition_alignment() {
        let mut bundle = uniform(&[5, 6, 7]);
        bundle.header.token_ids[3] = 8;
        let violations = validate_bundle(&bundle);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].kind, ViolationKind::RepetitionAlignment);
        assert_eq!(violations[0].location, Location::Token { index: 3 });

        // Truncated bundles skip the alignment check.
        bundle.header.truncated = true;
        assert!(validate_bundle(&bundle).is_empty());
    }

    #[test]
    fn truncated_length_bounds() {
        let mut bundle = uniform(&[5, 6, 7]);
        bundle.header.truncated = true;
        bundle.header.repetitions = 1;
        let violations = validate_bundle(&bundle);
        assert_eq!(violations[0].kind, ViolationKind::RepetitionLength);
    }

    #[test]
    fn header_and_array_shape_mismatch() {
        let mut bundle = smallest();
        bundle.header.hidden = 2;
        let kinds: Vec<_> = validate_bundle(&bundle).iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::HiddenShape]);
    }

    #[test]
    fn non_finite_values() {
        let mut bundle = smallest();
        bundle.hidden.as_mut_slice()[0] = f32::NAN;
        bundle.attentions.as_mut_slice()[0] = f32::INFINITY;
        let kinds: Vec<_> = validate_bundle(&bundle).iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::NonFinite, ViolationKind::NonFinite]);
    }

    #[test]
    fn invalid_bundle_writes_nothing() {
        let mut bundle = smallest();
        bundle.attentions.as_mut_slice()[0] = 0.5;
        let mut buf = Vec::new();
        assert!(matches!(write_bundle(&bundle, &mut buf), Err(RebaError::Validation(_))));
        assert!(buf.is_empty());
    }
}
