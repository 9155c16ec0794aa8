//! The `.snet` binary container.
//!
//! Little-endian throughout. Header: magic `SNET`, u16 version, u8 kind
//! (0 dataset, 1 noise), u32 record count. Each record: u32 id length and
//! UTF-8 id, u8 domain tag, f32 lat/lon/depth, f32 label[6], u16 station
//! count, u16 window length T, then per station f32 azimuth, f32 distance,
//! f32 scalars[20], f32 p_win[6T], f32 s_win[6T].
//!
//! Bit 7 of the domain tag marks normalized records. Noise records have one
//! "station" whose block is just the raw samples `f32[3T]` (Z, N, E) with
//! `T` the record length, and store the sample rate in `label[0]`.

use crate::features::{EventRecord, StationFeatures, CHANNELS, N_SCALARS};
use crate::psdr::{NoiseLibrary, NoiseParams};
use crate::Domain;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SNET";
pub const VERSION: u16 = 1;
pub const KIND_DATASET: u8 = 0;
pub const KIND_NOISE: u8 = 1;
pub const MIN_STATIONS: usize = 5;
const NORMALIZED_BIT: u8 = 0x80;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("file truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn header(kind: u8, n: usize) -> Result<Writer, ContainerError> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u8(kind);
    w.u32(u32::try_from(n).map_err(|_| ContainerError::Invariant("too many records".into()))?);
    Ok(w)
}

fn record_head(
    w: &mut Writer,
    id: &str,
    tag: u8,
    geo: [f32; 3],
    label: &[f32; 6],
    n: usize,
    t: usize,
) -> Result<(), ContainerError> {
    let n = u16::try_from(n).map_err(|_| ContainerError::Invariant(format!("{id}: too many stations")))?;
    let t = u16::try_from(t).map_err(|_| ContainerError::Invariant(format!("{id}: window too long")))?;
    w.u32(id.len() as u32);
    w.0.extend_from_slice(id.as_bytes());
    w.u8(tag);
    w.f32s(&geo);
    w.f32s(label);
    w.u16(n);
    w.u16(t);
    Ok(())
}

pub fn encode_dataset(records: &[EventRecord]) -> Result<Vec<u8>, ContainerError> {
    let mut w = header(KIND_DATASET, records.len())?;
    for r in records {
        r.check(MIN_STATIONS).map_err(ContainerError::Invariant)?;
        let tag = r.domain.tag() | if r.normalized { NORMALIZED_BIT } else { 0 };
        record_head(
            &mut w,
            &r.id,
            tag,
            [r.lat, r.lon, r.depth],
            &r.label,
            r.stations.len(),
            r.window,
        )?;
        for st in &r.stations {
            w.f32s(&[st.azimuth, st.dist]);
            w.f32s(&st.scalars);
            w.f32s(&st.p_win);
            w.f32s(&st.s_win);
        }
    }
    Ok(w.0)
}

pub fn encode_noise(lib: &NoiseLibrary) -> Result<Vec<u8>, ContainerError> {
    let mut w = header(KIND_NOISE, lib.records.len())?;
    for (k, rec) in lib.records.iter().enumerate() {
        let t = rec[0].len();
        if rec.iter().any(|c| c.len() != t) {
            return Err(ContainerError::Invariant(format!(
                "noise record {k}: ragged components"
            )));
        }
        let label = [lib.rate as f32, 0.0, 0.0, 0.0, 0.0, 0.0];
        record_head(&mut w, &format!("noise-{k:04}"), 0, [0.0; 3], &label, 1, t)?;
        for c in rec {
            let v: Vec<f32> = c.iter().map(|&x| x as f32).collect();
            w.f32s(&v);
        }
    }
    Ok(w.0)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.buf.len() - self.pos < n {
            return Err(ContainerError::Truncated { offset: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ContainerError> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

struct Head {
    id: String,
    tag: u8,
    geo: [f32; 3],
    label: [f32; 6],
    n: usize,
    t: usize,
}

fn read_header(r: &mut Reader, kind: u8) -> Result<usize, ContainerError> {
    if r.buf.len() < 4 || &r.buf[..4] != MAGIC {
        return Err(ContainerError::Format("bad magic".into()));
    }
    r.pos = 4;
    let version = r.u16()?;
    if version != VERSION {
        return Err(ContainerError::Format(format!("unsupported version {version}")));
    }
    let k = r.u8()?;
    if k != kind {
        return Err(ContainerError::Format(format!(
            "expected record kind {kind}, found {k}"
        )));
    }
    Ok(r.u32()? as usize)
}

fn read_head(r: &mut Reader) -> Result<Head, ContainerError> {
    let len = r.u32()? as usize;
    let id = std::str::from_utf8(r.take(len)?)
        .map_err(|_| ContainerError::Format("record id is not UTF-8".into()))?
        .to_string();
    let tag = r.u8()?;
    let geo = r.f32s(3)?;
    let label = r.f32s(6)?;
    let n = r.u16()? as usize;
    let t = r.u16()? as usize;
    Ok(Head {
        id,
        tag,
        geo: [geo[0], geo[1], geo[2]],
        label: label.try_into().unwrap(),
        n,
        t,
    })
}

pub fn decode_dataset(buf: &[u8]) -> Result<Vec<EventRecord>, ContainerError> {
    let mut r = Reader { buf, pos: 0 };
    let n = read_header(&mut r, KIND_DATASET)?;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let h = read_head(&mut r)?;
        let domain = Domain::from_tag(h.tag & !NORMALIZED_BIT)
            .ok_or_else(|| ContainerError::Format(format!("{}: unknown domain tag {}", h.id, h.tag)))?;
        let mut stations = Vec::with_capacity(h.n);
        for _ in 0..h.n {
            let head = r.f32s(2 + N_SCALARS)?;
            let p_win = r.f32s(CHANNELS * h.t)?;
            let s_win = r.f32s(CHANNELS * h.t)?;
            stations.push(StationFeatures {
                azimuth: head[0],
                dist: head[1],
                scalars: head[2..].try_into().unwrap(),
                p_win,
                s_win,
            });
        }
        let rec = EventRecord {
            id: h.id,
            domain,
            normalized: h.tag & NORMALIZED_BIT != 0,
            lat: h.geo[0],
            lon: h.geo[1],
            depth: h.geo[2],
            label: h.label,
            window: h.t,
            stations,
        };
        rec.check(MIN_STATIONS).map_err(ContainerError::Invariant)?;
        out.push(rec);
    }
    if r.pos != buf.len() {
        return Err(ContainerError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

pub fn decode_noise(buf: &[u8]) -> Result<NoiseLibrary, ContainerError> {
    let mut r = Reader { buf, pos: 0 };
    let n = read_header(&mut r, KIND_NOISE)?;
    let mut records = Vec::with_capacity(n.min(1 << 12));
    let mut rate = 0.0;
    for _ in 0..n {
        let h = read_head(&mut r)?;
        if h.n != 1 {
            return Err(ContainerError::Format(format!(
                "{}: noise record with {} blocks",
                h.id, h.n
            )));
        }
        rate = h.label[0] as f64;
        let mut rec: [Vec<f64>; 3] = Default::default();
        for c in rec.iter_mut() {
            *c = r.f32s(h.t)?.into_iter().map(f64::from).collect();
        }
        if rec.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ContainerError::Invariant(format!("{}: non-finite noise sample", h.id)));
        }
        records.push(rec);
    }
    if records.is_empty() || !(rate > 0.0) {
        return Err(ContainerError::Invariant("empty noise library".into()));
    }
    let len = records[0][0].len();
    Ok(NoiseLibrary {
        params: NoiseParams {
            n_records: records.len(),
            duration_s: len as f64 / rate,
            rate,
            ..NoiseParams::default()
        },
        records,
        rate,
    })
}

pub fn write_dataset(path: &Path, records: &[EventRecord]) -> Result<(), ContainerError> {
    std::fs::write(path, encode_dataset(records)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<EventRecord>, ContainerError> {
    decode_dataset(&std::fs::read(path)?)
}

pub fn write_noise(path: &Path, lib: &NoiseLibrary) -> Result<(), ContainerError> {
    std::fs::write(path, encode_noise(lib)?)?;
    Ok(())
}

pub fn read_noise(path: &Path) -> Result<NoiseLibrary, ContainerError> {
    decode_noise(&std::fs::read(path)?)
}
