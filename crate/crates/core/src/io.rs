//! Little-endian file formats.
//!
//! * Vector files (`.fvecs`): per record a `u32` dimension followed by that
//!   many `f32` values. Every record must share the first record's
//!   dimension.
//! * Id-list files: per record a `u32` length `k` followed by `k` `u64` ids,
//!   with `k` uniform across records.
//! * Graph files:
//!
//! ```text
//! magic "OLKG" | version u32 | n u64 | k u32 | metric u8
//! n x { id u64 | len u32 | len x (neighbor u64 | dist f32 | lambda u32) }
//! id_bound u64 | dim u32 | n x dim x f32        (vectors, record order)
//! crc32 u32                                     (over all preceding bytes)
//! ```
//!
//! `n` counts live vertices only; removed ids are simply absent. Reverse
//! lists are not stored, they are rebuilt from the forward lists on load.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Edge, OrthoGraph, VertexId};
use crate::metric::Metric;

pub const GRAPH_MAGIC: &[u8; 4] = b"OLKG";
pub const GRAPH_VERSION: u32 = 1;

/// Reads as many bytes as are available into `buf`, returning the count.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn read_vecs(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path)?;
    read_vecs_from(BufReader::new(file))
}

/// Streams vector records from `r`.
///
/// A file that ends inside its first record is reported as truncated; one
/// that ends inside a later record as a size mismatch against the record
/// size.
pub fn read_vecs_from<R: Read>(mut r: R) -> Result<Dataset> {
    let mut head = [0u8; 4];
    match read_full(&mut r, &mut head)? {
        0 => return Ok(Dataset::new(0)),
        4 => {}
        got => return Err(Error::Truncated(format!("{got}-byte file has no complete header"))),
    }
    let dim = u32::from_le_bytes(head) as usize;
    if dim == 0 {
        return Err(Error::Malformed("record 0 declares dimension 0".into()));
    }
    let record = 4 + 4 * dim as u64;
    let mut data = Dataset::new(dim);
    let mut body = vec![0u8; 4 * dim];
    let mut row = vec![0f32; dim];
    let mut index = 0usize;
    loop {
        if index > 0 {
            match read_full(&mut r, &mut head)? {
                0 => break,
                4 => {}
                got => {
                    return Err(Error::SizeMismatch {
                        size: index as u64 * record + got as u64,
                        record,
                    })
                }
            }
            let found = u32::from_le_bytes(head) as usize;
            if found != dim {
                return Err(Error::InconsistentDimension {
                    record: index,
                    expected: dim,
                    found,
                });
            }
        }
        let got = read_full(&mut r, &mut body)?;
        if got != body.len() {
            let size = index as u64 * record + 4 + got as u64;
            return Err(if index == 0 {
                Error::Truncated(format!(
                    "first record needs {record} bytes, file has {size}"
                ))
            } else {
                Error::SizeMismatch { size, record }
            });
        }
        for (x, chunk) in row.iter_mut().zip(body.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        data.push(&row)?;
        index += 1;
    }
    Ok(data)
}

pub fn write_vecs(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vecs_to(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn write_vecs_to<W: Write>(w: &mut W, data: &Dataset) -> Result<()> {
    for row in data.rows() {
        w.write_u32::<LE>(row.len() as u32)?;
        for &x in row {
            w.write_f32::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn read_ids(path: impl AsRef<Path>) -> Result<Vec<Vec<u64>>> {
    read_ids_from(BufReader::new(File::open(path)?))
}

pub fn read_ids_from<R: Read>(mut r: R) -> Result<Vec<Vec<u64>>> {
    let mut out: Vec<Vec<u64>> = Vec::new();
    let mut head = [0u8; 4];
    loop {
        match read_full(&mut r, &mut head)? {
            0 => break,
            4 => {}
            _ => {
                return Err(Error::Truncated(format!(
                    "id list record {} has a partial header",
                    out.len()
                )))
            }
        }
        let k = u32::from_le_bytes(head) as usize;
        if let Some(first) = out.first() {
            if first.len() != k {
                return Err(Error::InconsistentDimension {
                    record: out.len(),
                    expected: first.len(),
                    found: k,
                });
            }
        }
        let mut ids = vec![0u64; k];
        r.read_u64_into::<LE>(&mut ids).map_err(|e| {
            if e.kind() == ErrorKind::UnexpectedEof {
                Error::Truncated(format!("id list record {} is incomplete", out.len()))
            } else {
                e.into()
            }
        })?;
        out.push(ids);
    }
    Ok(out)
}

pub fn write_ids<L: AsRef<[u64]>>(path: impl AsRef<Path>, lists: &[L]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ids_to(&mut w, lists)?;
    w.flush()?;
    Ok(())
}

pub fn write_ids_to<W: Write, L: AsRef<[u64]>>(w: &mut W, lists: &[L]) -> Result<()> {
    let k = lists.first().map(|l| l.as_ref().len()).unwrap_or(0);
    for (i, l) in lists.iter().enumerate() {
        let l = l.as_ref();
        if l.len() != k {
            return Err(Error::InconsistentDimension {
                record: i,
                expected: k,
                found: l.len(),
            });
        }
        w.write_u32::<LE>(k as u32)?;
        for &id in l {
            w.write_u64::<LE>(id)?;
        }
    }
    Ok(())
}

/// Serializes `g` to bytes, checksum included.
pub fn encode_graph(g: &OrthoGraph) -> Vec<u8> {
    let live: Vec<VertexId> = g.live_ids().collect();
    let mut buf = Vec::with_capacity(serialized_size(g));
    buf.extend_from_slice(GRAPH_MAGIC);
    // Writes into a Vec cannot fail.
    buf.write_u32::<LE>(GRAPH_VERSION).unwrap();
    buf.write_u64::<LE>(live.len() as u64).unwrap();
    buf.write_u32::<LE>(g.k() as u32).unwrap();
    buf.write_u8(g.metric().tag()).unwrap();
    for &v in &live {
        let list = g.neighbors(v);
        buf.write_u64::<LE>(v as u64).unwrap();
        buf.write_u32::<LE>(list.len() as u32).unwrap();
        for e in list {
            buf.write_u64::<LE>(e.neighbor as u64).unwrap();
            buf.write_f32::<LE>(e.dist).unwrap();
            buf.write_u32::<LE>(e.lambda).unwrap();
        }
    }
    buf.write_u64::<LE>(g.id_bound() as u64).unwrap();
    buf.write_u32::<LE>(g.dim() as u32).unwrap();
    for &v in &live {
        for &x in g.vector(v) {
            buf.write_f32::<LE>(x).unwrap();
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LE>(crc).unwrap();
    buf
}

/// Size in bytes of the encoding of `g`.
pub fn serialized_size(g: &OrthoGraph) -> usize {
    let live: Vec<VertexId> = g.live_ids().collect();
    let edges: usize = live.iter().map(|&v| g.neighbors(v).len()).sum();
    4 + 4 + 8 + 4 + 1 + live.len() * (8 + 4) + edges * 16 + 8 + 4 + live.len() * g.dim() * 4 + 4
}

/// Decodes and verifies a graph; any consistency violation is an error.
pub fn decode_graph(bytes: &[u8]) -> Result<OrthoGraph> {
    let g = decode_graph_unverified(bytes)?;
    if let Some(v) = g.check_consistency().first() {
        return Err(Error::Malformed(format!("inconsistent graph: {v}")));
    }
    Ok(g)
}

/// Decodes a graph after checking framing and checksum only, leaving
/// [`OrthoGraph::check_consistency`] to the caller.
pub fn decode_graph_unverified(bytes: &[u8]) -> Result<OrthoGraph> {
    if bytes.len() < 4 || &bytes[..4] != GRAPH_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated("graph header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != GRAPH_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < 4 + 4 + 8 + 4 + 1 + 8 + 4 + 4 {
        return Err(Error::Truncated("graph header".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let truncated = |_| Error::Truncated("graph payload".into());
    let mut r = &payload[8..];
    let n = r.read_u64::<LE>().map_err(truncated)? as usize;
    let k = r.read_u32::<LE>().map_err(truncated)? as usize;
    let tag = r.read_u8().map_err(truncated)?;
    let metric =
        Metric::from_tag(tag).ok_or_else(|| Error::Malformed(format!("unknown metric tag {tag}")))?;

    let mut records: Vec<(VertexId, Vec<Edge>)> = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let id = r.read_u64::<LE>().map_err(truncated)?;
        let len = r.read_u32::<LE>().map_err(truncated)? as usize;
        if len > k {
            return Err(Error::Malformed(format!(
                "vertex {id} lists {len} neighbors, k = {k}"
            )));
        }
        let mut list = Vec::with_capacity(k);
        for _ in 0..len {
            let neighbor = r.read_u64::<LE>().map_err(truncated)?;
            let dist = r.read_f32::<LE>().map_err(truncated)?;
            let lambda = r.read_u32::<LE>().map_err(truncated)?;
            list.push(Edge {
                neighbor: to_vertex(neighbor)?,
                dist,
                lambda,
            });
        }
        records.push((to_vertex(id)?, list));
    }
    let id_bound = r.read_u64::<LE>().map_err(truncated)? as usize;
    let dim = r.read_u32::<LE>().map_err(truncated)? as usize;
    if dim == 0 {
        return Err(Error::Malformed("dimension 0".into()));
    }
    if records.iter().any(|(id, _)| *id as usize >= id_bound) {
        return Err(Error::Malformed("vertex id beyond id bound".into()));
    }
    if r.len() != n * dim * 4 {
        return Err(Error::Malformed(format!(
            "vector section holds {} bytes, expected {}",
            r.len(),
            n * dim * 4
        )));
    }

    let mut flat = vec![0f32; id_bound * dim];
    let mut alive = vec![false; id_bound];
    let mut lists = vec![Vec::new(); id_bound];
    for (id, list) in records {
        let i = id as usize;
        if alive[i] {
            return Err(Error::Malformed(format!("vertex {id} appears twice")));
        }
        alive[i] = true;
        r.read_f32_into::<LE>(&mut flat[i * dim..(i + 1) * dim])
            .map_err(truncated)?;
        lists[i] = list;
    }
    let data = Dataset::from_flat(dim, flat)?;
    OrthoGraph::from_parts(k, metric, data, alive, lists)
}

fn to_vertex(id: u64) -> Result<VertexId> {
    VertexId::try_from(id).map_err(|_| Error::Malformed(format!("vertex id {id} out of range")))
}

/// Writes `g` atomically: the file is replaced only once fully written.
pub fn save_graph(g: &OrthoGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_graph(g);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<OrthoGraph> {
    decode_graph(&std::fs::read(path)?)
}

pub fn load_graph_unverified(path: impl AsRef<Path>) -> Result<OrthoGraph> {
    decode_graph_unverified(&std::fs::read(path)?)
}
