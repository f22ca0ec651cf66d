//! Binary packed-dataset file: magic, a length-prefixed JSON header, then
//! fixed-size records of little-endian fields.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Modality, PackedSample, Segment};
use crate::corpus::Style;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MRPTPACK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedHeader {
    pub context: usize,
    pub vocab_hash: String,
    pub num_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: Option<String>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_sample(sample: &PackedSample, out: &mut Vec<u8>) {
    for &id in &sample.ids {
        put_u32(out, id);
    }
    for &p in &sample.position_ids {
        put_u32(out, p);
    }
    for &s in &sample.segment_ids {
        put_u32(out, s);
    }
    out.extend_from_slice(&sample.loss_mask);
    out.extend(sample.modality.iter().map(|m| m.as_u8()));
    put_u32(out, sample.pad_len as u32);
    put_u32(out, sample.segments.len() as u32);
    for seg in &sample.segments {
        for v in [
            seg.start,
            seg.len,
            seg.instance as usize,
            seg.doc_span.start,
            seg.doc_span.end,
            seg.sig_span.start,
            seg.sig_span.end,
            seg.code_span.start,
            seg.code_span.end,
        ] {
            put_u32(out, v as u32);
        }
        out.push(match seg.style {
            Style::Pangu => 0,
            Style::Pycodegpt => 1,
        });
    }
}

pub fn write_packed(path: &Path, header: &PackedHeader, samples: &[PackedSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header_json = serde_json::to_vec(header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for sample in samples {
        if sample.len() != header.context {
            return Err(Error::Data(format!(
                "sample of length {} in a file with context {}",
                sample.len(),
                header.context
            )));
        }
        encode_sample(sample, &mut buf);
    }
    out.write_all(&buf).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("truncated packed dataset".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn read_packed(path: &Path) -> Result<(PackedHeader, Vec<PackedSample>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Data(format!("{} is not a packed dataset", path.display())));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported packed dataset version {version}")));
    }
    let header_len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: PackedHeader = serde_json::from_slice(cur.take(header_len)?)?;
    let l = header.context;
    let mut samples = Vec::with_capacity(header.num_samples);
    for _ in 0..header.num_samples {
        let ids = cur.u32s(l)?;
        let position_ids = cur.u32s(l)?;
        let segment_ids = cur.u32s(l)?;
        let loss_mask = cur.take(l)?.to_vec();
        let modality = cur
            .take(l)?
            .iter()
            .map(|b| Modality::from_u8(*b))
            .collect::<Result<Vec<_>>>()?;
        let pad_len = cur.u32()? as usize;
        let nseg = cur.u32()? as usize;
        let mut segments = Vec::with_capacity(nseg);
        for _ in 0..nseg {
            let v: Vec<usize> = cur.u32s(9)?.into_iter().map(|x| x as usize).collect();
            let style = match cur.take(1)?[0] {
                0 => Style::Pangu,
                1 => Style::Pycodegpt,
                other => return Err(Error::Data(format!("bad style byte {other}"))),
            };
            segments.push(Segment {
                start: v[0],
                len: v[1],
                instance: v[2] as u32,
                doc_span: v[3]..v[4],
                sig_span: v[5]..v[6],
                code_span: v[7]..v[8],
                style,
            });
        }
        samples.push(PackedSample {
            ids,
            position_ids,
            segment_ids,
            loss_mask,
            modality,
            pad_len,
            segments,
        });
    }
    Ok((header, samples))
}
