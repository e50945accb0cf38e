//! `.awd` container: a single little-endian file holding a prepared dataset.
//!
//! Layout, in order:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"AWD1"` |
//! | header length `H` | `u32` |
//! | header | `H` bytes of UTF-8 JSON `{"schema": .., "normalization": ..}` |
//! | `N`, `C`, `W` | `u64`, `u32`, `u32` |
//! | windows | `N·C·W` × `f32`, row-major `[N, C, W]` |
//! | labels | `N` × `i32` |
//! | split tags | `N` × `u8` (0 = train, 1 = test) |
//! | recording count `R` | `u32` |
//! | recording ids | `R` × (`u32` byte length, UTF-8 bytes) |
//! | provenance | `N` × (`u32` recording index, `u64` start sample) |
//!
//! Nothing may follow the provenance table.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetSchema, NormalizationRecord, Provenance, Split, WindowedDataset};
use crate::tensor::Tensor;

pub const AWD_MAGIC: &[u8; 4] = b"AWD1";

#[derive(Serialize, Deserialize)]
struct Header {
    schema: DatasetSchema,
    normalization: Option<NormalizationRecord>,
}

fn fmt_err(msg: impl Into<String>) -> DataError {
    DataError::Format(msg.into())
}

pub fn to_bytes(ds: &WindowedDataset) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        schema: ds.schema().clone(),
        normalization: ds.normalization().cloned(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(64 + header.len() + ds.windows().len() * 4 + ds.len() * 17);
    // Writes into a Vec cannot fail.
    let w = &mut out;
    w.write_all(AWD_MAGIC).unwrap();
    w.write_u32::<LE>(header.len() as u32).unwrap();
    w.write_all(&header).unwrap();
    w.write_u64::<LE>(ds.len() as u64).unwrap();
    w.write_u32::<LE>(ds.num_channels() as u32).unwrap();
    w.write_u32::<LE>(ds.window_len() as u32).unwrap();
    for &v in ds.windows().data() {
        w.write_f32::<LE>(v).unwrap();
    }
    for &l in ds.labels() {
        w.write_i32::<LE>(l as i32).unwrap();
    }
    for &s in ds.split_tags() {
        w.write_u8(match s {
            Split::Train => 0,
            Split::Test => 1,
        })
        .unwrap();
    }
    w.write_u32::<LE>(ds.recordings().len() as u32).unwrap();
    for id in ds.recordings() {
        w.write_u32::<LE>(id.len() as u32).unwrap();
        w.write_all(id.as_bytes()).unwrap();
    }
    for p in ds.provenance() {
        w.write_u32::<LE>(p.recording).unwrap();
        w.write_u64::<LE>(p.start).unwrap();
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<WindowedDataset, DataError> {
    let mut r = Cursor::new(bytes);
    let truncated = |_| fmt_err("file is truncated");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt_err("not an AWD file"))?;
    if &magic != AWD_MAGIC {
        return Err(fmt_err("not an AWD file (bad magic)"));
    }
    let header_len = r.read_u32::<LE>().map_err(truncated)? as usize;
    let remaining = bytes.len() - r.position() as usize;
    if header_len > remaining {
        return Err(fmt_err("header length exceeds file size"));
    }
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(truncated)?;
    let header: Header =
        serde_json::from_slice(&header).map_err(|e| fmt_err(format!("bad header: {e}")))?;
    let n = r.read_u64::<LE>().map_err(truncated)?;
    let c = r.read_u32::<LE>().map_err(truncated)? as usize;
    let w = r.read_u32::<LE>().map_err(truncated)? as usize;
    if c != header.schema.num_channels() || w != header.schema.window_length {
        return Err(fmt_err(format!(
            "window dims [{c}, {w}] disagree with the schema [{}, {}]",
            header.schema.num_channels(),
            header.schema.window_length
        )));
    }
    let remaining = (bytes.len() - r.position() as usize) as u64;
    let per_window = (c * w * 4 + 4 + 1 + 12) as u64;
    if n.checked_mul(per_window).is_none_or(|need| need > remaining) {
        return Err(fmt_err("file is truncated"));
    }
    let n = n as usize;
    let mut windows = vec![0f32; n * c * w];
    r.read_f32_into::<LE>(&mut windows).map_err(truncated)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let l = r.read_i32::<LE>().map_err(truncated)?;
        labels.push(u32::try_from(l).map_err(|_| fmt_err(format!("negative label {l}")))?);
    }
    let mut split = Vec::with_capacity(n);
    for _ in 0..n {
        split.push(match r.read_u8().map_err(truncated)? {
            0 => Split::Train,
            1 => Split::Test,
            t => return Err(fmt_err(format!("unknown split tag {t}"))),
        });
    }
    let r_count = r.read_u32::<LE>().map_err(truncated)? as usize;
    let mut recordings = Vec::with_capacity(r_count.min(1 << 16));
    for _ in 0..r_count {
        let len = r.read_u32::<LE>().map_err(truncated)? as usize;
        if len > bytes.len() - r.position() as usize {
            return Err(fmt_err("file is truncated"));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(truncated)?;
        recordings.push(String::from_utf8(buf).map_err(|_| fmt_err("recording id is not UTF-8"))?);
    }
    let mut provenance = Vec::with_capacity(n);
    for _ in 0..n {
        provenance.push(Provenance {
            recording: r.read_u32::<LE>().map_err(truncated)?,
            start: r.read_u64::<LE>().map_err(truncated)?,
        });
    }
    if (r.position() as usize) != bytes.len() {
        return Err(fmt_err("trailing bytes after provenance table"));
    }
    WindowedDataset::from_parts(
        header.schema,
        Tensor::new(vec![n, c, w], windows)?,
        labels,
        split,
        recordings,
        provenance,
        header.normalization,
    )
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub fn write_awd(ds: &WindowedDataset, path: &Path) -> Result<(), DataError> {
    let io = |e: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let tmp = path.with_extension("awd.tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&to_bytes(ds)).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_awd(path: &Path) -> Result<WindowedDataset, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    from_bytes(&bytes)
}
