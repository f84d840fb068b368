//! On-disk sketch format.
//!
//! ```text
//! "RSDS"            magic
//! u32 LE            format version
//! u64 LE            header length in bytes
//! header            UTF-8 text: layout keys, then one canonical plan per block
//! payload           per block, per (stage, shift), f_i pairs of f64 LE (re, im)
//! u64 LE            CRC-64/XZ of header and payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use num_complex::Complex64;

use crate::blocks::{BlockLayout, BlockedSketch};
use crate::error::{Error, Result};
use crate::params::StagePlan;
use crate::sketch::{Sketch, SketchKind};

pub const MAGIC: &[u8; 4] = b"RSDS";
pub const VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const BLOCK_MARK: &str = "--- block ";

fn header_text(s: &BlockedSketch) -> String {
    let l = &s.layout;
    let mut out = format!(
        "n_db={}\nblock_count={}\nblock_len={}\noverlap={}\n",
        l.n_db, l.block_count, l.block_len, l.overlap
    );
    for (b, sk) in s.sketches.iter().enumerate() {
        out.push_str(&format!("{BLOCK_MARK}{b}\n"));
        out.push_str(&sk.plan.to_canonical_text());
    }
    out
}

pub fn encode(s: &BlockedSketch) -> Vec<u8> {
    let header = header_text(s);
    let samples: usize = s.sketches.iter().map(Sketch::sample_count).sum();
    let mut body = Vec::with_capacity(header.len() + 16 * samples);
    body.extend_from_slice(header.as_bytes());
    for sk in &s.sketches {
        for c in sk.branches().iter().flatten() {
            body.extend_from_slice(&c.re.to_le_bytes());
            body.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(body.len() + 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&CRC64.checksum(&body).to_le_bytes());
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len());
    match end {
        Some(end) => {
            let out = &bytes[*at..end];
            *at = end;
            Ok(out)
        }
        None => Err(Error::Format(format!("file truncated while reading {what}"))),
    }
}

fn u64_at(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

fn parse_header(text: &str) -> Result<(BlockLayout, Vec<StagePlan>)> {
    let mut parts = text.split(BLOCK_MARK);
    let top = parts.next().unwrap_or_default();
    let mut keys = std::collections::BTreeMap::new();
    for line in top.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
        let v: usize =
            v.parse().map_err(|_| Error::Format(format!("bad value for {k}: {v:?}")))?;
        keys.insert(k, v);
    }
    let get = |k: &str| {
        keys.get(k).copied().ok_or_else(|| Error::Format(format!("header is missing {k:?}")))
    };
    let n_db = get("n_db")?;
    let block_count = get("block_count")?;
    let block_len = get("block_len")?;
    let overlap = get("overlap")?;
    let layout = BlockLayout::new(n_db, overlap + 1, block_count)
        .map_err(|e| Error::Format(format!("bad block layout: {e}")))?;
    if layout.block_len != block_len {
        return Err(Error::Format("block length disagrees with the layout".into()));
    }
    let mut plans = Vec::with_capacity(block_count);
    for (b, part) in parts.enumerate() {
        let (index, body) = part.split_once('\n').unwrap_or((part, ""));
        if index.trim().parse::<usize>().ok() != Some(b) {
            return Err(Error::Format(format!("block {b} is out of order")));
        }
        plans.push(StagePlan::from_canonical_text(body)?);
    }
    if plans.len() != block_count {
        return Err(Error::Format(format!(
            "header lists {} plans for {block_count} blocks",
            plans.len()
        )));
    }
    Ok((layout, plans))
}

pub fn decode(bytes: &[u8]) -> Result<BlockedSketch> {
    let mut at = 0;
    if take(bytes, &mut at, 4, "magic")? != MAGIC {
        return Err(Error::Format("not a sketch file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let header_len = u64_at(take(bytes, &mut at, 8, "header length")?);
    if bytes.len() < at + 8 {
        return Err(Error::Format("file truncated".into()));
    }
    let body = &bytes[at..bytes.len() - 8];
    let stored = u64_at(&bytes[bytes.len() - 8..]);
    let computed = CRC64.checksum(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let header_len = usize::try_from(header_len)
        .ok()
        .filter(|&h| h <= body.len())
        .ok_or_else(|| Error::Format("header length exceeds file".into()))?;
    let text = std::str::from_utf8(&body[..header_len])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let (layout, plans) = parse_header(text)?;

    let mut at = header_len;
    let mut sketches = Vec::with_capacity(plans.len());
    for plan in plans {
        let mut branches = Vec::with_capacity(plan.d * plan.b_shifts);
        for &f in &plan.stage_lengths {
            for _ in 0..plan.b_shifts {
                let raw = take(body, &mut at, 16 * f, "payload")?;
                branches.push(
                    raw.chunks_exact(16)
                        .map(|c| {
                            Complex64::new(
                                f64::from_le_bytes(c[..8].try_into().unwrap()),
                                f64::from_le_bytes(c[8..].try_into().unwrap()),
                            )
                        })
                        .collect(),
                );
            }
        }
        sketches.push(
            Sketch::from_branches(plan, SketchKind::Database, branches)
                .map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    if at != body.len() {
        return Err(Error::Format(format!("{} trailing payload bytes", body.len() - at)));
    }
    Ok(BlockedSketch { layout, sketches })
}

pub fn save(s: &BlockedSketch, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(s))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BlockedSketch> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::sketch_blocks;
    use crate::params::{PlanConfig, ProblemDims};
    use crate::signal::Signal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> BlockedSketch {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Signal::random_binary(3000, &mut rng);
        let dims = ProblemDims::exact(3000, 60).unwrap();
        sketch_blocks(&x, &dims, &PlanConfig::default(), 5, 2).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let bytes = encode(&s);
        assert_eq!(&bytes[..4], MAGIC);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn every_corrupted_payload_byte_is_caught() {
        let bytes = encode(&sample());
        let header_len = u64_at(&bytes[8..16]) as usize;
        let start = 16 + header_len;
        for i in (start..bytes.len() - 8).step_by(97) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(matches!(decode(&bad), Err(Error::Checksum { .. })), "byte {i}");
        }
    }

    #[test]
    fn malformed_files_rejected() {
        let bytes = encode(&sample());
        assert!(matches!(decode(b"RSD"), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
