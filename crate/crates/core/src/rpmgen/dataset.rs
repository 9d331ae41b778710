//! Binary dataset container plus a human-readable sidecar.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! header   "RPMD1" | u32 version | u64 count | u16 height | u16 width | u8 N | u8 M
//! record   u64 seed | N x u8 rule id | u8 answer index
//!          16 x (4 x u8 attributes | height*width x u8 pixels)   8 context, then 8 candidates
//!          u32 CRC32 of the record bytes above
//! ```
//!
//! The sidecar `<file>.txt` holds one line per instance: seed, rule spec,
//! answer index.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::attributes::{AttributeVector, RuleSpec, NUM_ATTRIBUTES, NUM_RULES};
use super::oracle::NUM_CANDIDATES;
use super::render::{Panel, PANEL_PIXELS, PANEL_SIDE};
use super::{ProblemInstance, NUM_CONTEXT};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 5] = b"RPMD1";
pub const DATASET_VERSION: u32 = 1;

const HEADER_LEN: usize = 5 + 4 + 8 + 2 + 2 + 1 + 1;
const PANEL_LEN: usize = NUM_ATTRIBUTES + PANEL_PIXELS;
const RECORD_BODY: usize = 8 + NUM_ATTRIBUTES + 1 + (NUM_CONTEXT + NUM_CANDIDATES) * PANEL_LEN;
const RECORD_LEN: usize = RECORD_BODY + 4;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

fn encode(instances: &[ProblemInstance]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + instances.len() * RECORD_LEN);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(instances.len() as u64).to_le_bytes());
    out.extend_from_slice(&(PANEL_SIDE as u16).to_le_bytes());
    out.extend_from_slice(&(PANEL_SIDE as u16).to_le_bytes());
    out.push(NUM_ATTRIBUTES as u8);
    out.push(NUM_RULES as u8);
    for inst in instances {
        if inst.context.len() != NUM_CONTEXT
            || inst.candidates.len() != NUM_CANDIDATES
            || inst.answer_index >= NUM_CANDIDATES
        {
            return Err(Error::invalid(format!("instance {} is malformed", inst.seed)));
        }
        let start = out.len();
        out.extend_from_slice(&inst.seed.to_le_bytes());
        out.extend_from_slice(&inst.rule_spec.ids());
        out.push(inst.answer_index as u8);
        for panel in inst.context.iter().chain(&inst.candidates) {
            let a = panel.attributes;
            if panel.pixels.len() != PANEL_PIXELS {
                return Err(Error::invalid(format!("instance {}: panel has wrong pixel count", inst.seed)));
            }
            out.extend_from_slice(&[a.number, a.shape_type, a.size, a.shade]);
            out.extend_from_slice(&panel.pixels);
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

fn sidecar(instances: &[ProblemInstance]) -> String {
    let mut s = String::from("# seed\trules\tanswer_index\n");
    for inst in instances {
        let _ = writeln!(s, "{}\t{}\t{}", inst.seed, inst.rule_spec, inst.answer_index);
    }
    s
}

/// Writes `bytes` via a temporary sibling so a failed write leaves nothing behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_dataset(instances: &[ProblemInstance], path: &Path) -> Result<()> {
    let bytes = encode(instances)?;
    write_atomic(path, &bytes)?;
    let side = sidecar_path(path);
    if let Err(e) = write_atomic(&side, sidecar(instances).as_bytes()) {
        let _ = fs::remove_file(path);
        return Err(e);
    }
    Ok(())
}

fn decode(bytes: &[u8], path: &Path) -> Result<Vec<ProblemInstance>> {
    let corrupt = |offset: usize, reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(bytes.len(), "truncated header".into()));
    }
    if &bytes[..5] != DATASET_MAGIC {
        return Err(corrupt(0, "bad magic".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(corrupt(5, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let (h, w) = (u16_at(17) as usize, u16_at(19) as usize);
    let (n, m) = (bytes[21] as usize, bytes[22] as usize);
    if h != PANEL_SIDE || w != PANEL_SIDE || n != NUM_ATTRIBUTES || m != NUM_RULES {
        return Err(corrupt(17, format!("unsupported geometry {h}x{w}, N={n}, M={m}")));
    }
    let expected = (count as u128) * RECORD_LEN as u128 + HEADER_LEN as u128;
    if (bytes.len() as u128) < expected {
        let complete = (bytes.len() - HEADER_LEN) / RECORD_LEN;
        return Err(corrupt(
            HEADER_LEN + complete * RECORD_LEN,
            format!("truncated: header promises {count} instances, file holds {complete}"),
        ));
    }
    if (bytes.len() as u128) > expected {
        return Err(corrupt(expected as usize, "trailing bytes after last record".into()));
    }
    let mut instances = Vec::with_capacity(count as usize);
    for k in 0..count as usize {
        let base = HEADER_LEN + k * RECORD_LEN;
        let rec = &bytes[base..base + RECORD_BODY];
        let stored = u32::from_le_bytes(bytes[base + RECORD_BODY..base + RECORD_LEN].try_into().unwrap());
        if crc32fast::hash(rec) != stored {
            return Err(corrupt(base, format!("checksum mismatch in instance {k}")));
        }
        let seed = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let ids: [u8; NUM_ATTRIBUTES] = rec[8..8 + NUM_ATTRIBUTES].try_into().unwrap();
        let rule_spec = RuleSpec::from_ids(ids).map_err(|e| corrupt(base + 8, e.to_string()))?;
        let answer_index = rec[8 + NUM_ATTRIBUTES] as usize;
        if answer_index >= NUM_CANDIDATES {
            return Err(corrupt(base + 12, format!("answer index {answer_index} out of range")));
        }
        let mut panels = Vec::with_capacity(NUM_CONTEXT + NUM_CANDIDATES);
        for p in 0..NUM_CONTEXT + NUM_CANDIDATES {
            let off = 8 + NUM_ATTRIBUTES + 1 + p * PANEL_LEN;
            let a = &rec[off..off + NUM_ATTRIBUTES];
            let attributes =
                AttributeVector::new(a[0], a[1], a[2], a[3]).map_err(|e| corrupt(base + off, e.to_string()))?;
            panels.push(Panel {
                attributes,
                pixels: rec[off + NUM_ATTRIBUTES..off + PANEL_LEN].to_vec(),
            });
        }
        let candidates = panels.split_off(NUM_CONTEXT);
        instances.push(ProblemInstance {
            context: panels,
            candidates,
            answer_index,
            rule_spec,
            seed,
        });
    }
    Ok(instances)
}

pub fn read_dataset(path: &Path) -> Result<Vec<ProblemInstance>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
