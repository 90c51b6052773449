//! Binary frame archive, one file per recording, plus the JSON-lines corpus
//! manifest.
//!
//! Archive layout (all integers little-endian):
//!   magic          8 bytes  "EEGFRAMS"
//!   version        u32      1
//!   recording_id   u32 length + UTF-8 bytes
//!   label          u8       1 = normal, 0 = pathological
//!   sex            u8       0 = female, 1 = male
//!   hospital_id    u32 length + UTF-8 bytes
//!   n_frames       u32
//!   n_channels     u32      19
//!   frame_len      u32      600
//!   frame indices  n_frames * u32
//!   frame data     n_frames * 19 * 600 * f32
//! Frame data is channel-major within each frame.

use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::N_CHANNELS;
use crate::preprocess::{Frame, FrameSet, Label, RecordingMeta, Sex, FRAME_LEN};

const MAGIC: &[u8; 8] = b"EEGFRAMS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("corrupt frame archive: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One manifest row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub label: u8,
    pub sex: String,
    pub hospital_id: String,
    pub n_frames: usize,
}

impl ManifestEntry {
    pub fn from_frameset(fs: &FrameSet) -> ManifestEntry {
        ManifestEntry {
            recording_id: fs.meta.recording_id.clone(),
            label: fs.label.as_u8(),
            sex: match fs.meta.sex {
                Sex::Female => "F".into(),
                Sex::Male => "M".into(),
            },
            n_frames: fs.n_frames(),
            hospital_id: fs.meta.hospital_id.clone(),
        }
    }

    pub fn label_enum(&self) -> Option<Label> {
        Label::from_u8(self.label)
    }

    pub fn sex_enum(&self) -> Option<Sex> {
        match self.sex.as_str() {
            "F" => Some(Sex::Female),
            "M" => Some(Sex::Male),
            _ => None,
        }
    }
}

pub fn write_frameset<W: Write>(fs: &FrameSet, mut w: W) -> Result<(), ArchiveError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let id = fs.meta.recording_id.as_bytes();
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    w.write_all(&[fs.label.as_u8(), fs.meta.sex.as_u8()])?;
    let hosp = fs.meta.hospital_id.as_bytes();
    w.write_all(&(hosp.len() as u32).to_le_bytes())?;
    w.write_all(hosp)?;
    w.write_all(&(fs.frames.len() as u32).to_le_bytes())?;
    w.write_all(&(N_CHANNELS as u32).to_le_bytes())?;
    w.write_all(&(FRAME_LEN as u32).to_le_bytes())?;
    for frame in &fs.frames {
        w.write_all(&(frame.index as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(N_CHANNELS * FRAME_LEN * 4);
    for frame in &fs.frames {
        buf.clear();
        for &v in &frame.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_frameset<R: Read>(mut r: R) -> Result<FrameSet, ArchiveError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ArchiveError::Corrupt("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> Result<u32, ArchiveError> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ArchiveError::Corrupt(format!("unknown version {version}")));
    }
    let id_len = read_u32(&mut r)? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)?;
    let recording_id = String::from_utf8(id).map_err(|_| ArchiveError::Corrupt("id".into()))?;
    let mut two = [0u8; 2];
    r.read_exact(&mut two)?;
    let label = Label::from_u8(two[0]).ok_or_else(|| ArchiveError::Corrupt("label".into()))?;
    let sex = Sex::from_u8(two[1]).ok_or_else(|| ArchiveError::Corrupt("sex".into()))?;
    let hosp_len = read_u32(&mut r)? as usize;
    let mut hosp = vec![0u8; hosp_len];
    r.read_exact(&mut hosp)?;
    let hospital_id =
        String::from_utf8(hosp).map_err(|_| ArchiveError::Corrupt("hospital".into()))?;
    let n_frames = read_u32(&mut r)? as usize;
    let n_channels = read_u32(&mut r)? as usize;
    let frame_len = read_u32(&mut r)? as usize;
    if n_channels != N_CHANNELS || frame_len != FRAME_LEN {
        return Err(ArchiveError::Corrupt(format!(
            "unexpected shape {n_channels}x{frame_len}"
        )));
    }
    let mut indices = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        indices.push(read_u32(&mut r)? as usize);
    }
    let mut frames = Vec::with_capacity(n_frames);
    let mut raw = vec![0u8; N_CHANNELS * FRAME_LEN * 4];
    for &index in &indices {
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        frames.push(Frame { data, index });
    }
    Ok(FrameSet {
        frames,
        label,
        meta: RecordingMeta {
            recording_id,
            sex,
            hospital_id,
        },
    })
}

pub fn write_frameset_file(fs: &FrameSet, path: &Path) -> Result<(), ArchiveError> {
    let file = std::fs::File::create(path)?;
    write_frameset(fs, io::BufWriter::new(file))
}

pub fn read_frameset_file(path: &Path) -> Result<FrameSet, ArchiveError> {
    let file = std::fs::File::open(path)?;
    read_frameset(io::BufReader::new(file))
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), ArchiveError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("manifest row serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ArchiveError> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| ArchiveError::Corrupt(format!("manifest line {}: {e}", lineno + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}
