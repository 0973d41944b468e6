//! On-disk dataset container and split manifest.
//!
//! Dataset file, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TCLDSET\0"
//! version  u32      1
//! classes  u32
//! frames   u32      L_raw
//! height   u32
//! width    u32
//! count    u32
//! domain   u8       0 = target, 1 = shifted
//! seed     u64
//! count × record:
//!   id      u64
//!   truth   u32
//!   label   i32      -1 when hidden
//!   domain  u8
//!   speed   f64
//!   pixels  f32 × frames·height·width, frame-major then row-major
//! ```

use super::{Domain, VideoSample};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 8] = b"TCLDSET\0";
pub const DATASET_VERSION: u32 = 1;

/// Header fields of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub classes: u32,
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    pub count: u32,
    pub domain: Domain,
    pub seed: u64,
}

fn domain_code(d: Domain) -> u8 {
    match d {
        Domain::Target => 0,
        Domain::Shifted => 1,
    }
}

fn domain_from(code: u8, path: &Path) -> Result<Domain> {
    match code {
        0 => Ok(Domain::Target),
        1 => Ok(Domain::Shifted),
        c => Err(Error::Format {
            path: path.into(),
            reason: format!("unknown domain code {c}"),
        }),
    }
}

pub fn write_dataset(path: &Path, classes: usize, domain: Domain, seed: u64, videos: &[VideoSample]) -> Result<()> {
    let first = videos
        .first()
        .ok_or_else(|| Error::Data("refusing to write an empty dataset".into()))?;
    let (frames, height, width) = (first.num_frames, first.height, first.width);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    for v in [DATASET_VERSION, classes as u32, frames as u32, height as u32, width as u32, videos.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[domain_code(domain)])?;
    w.write_all(&seed.to_le_bytes())?;
    for v in videos {
        if (v.num_frames, v.height, v.width) != (frames, height, width) {
            return Err(Error::Data(format!("video {} has different geometry", v.id)));
        }
        w.write_all(&v.id.to_le_bytes())?;
        w.write_all(&(v.truth as u32).to_le_bytes())?;
        let label = v.label.map_or(-1i32, |l| l as i32);
        w.write_all(&label.to_le_bytes())?;
        w.write_all(&[domain_code(v.domain)])?;
        w.write_all(&v.speed.to_le_bytes())?;
        for p in v.frames() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<VideoSample>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let bad = |reason: String| Error::Format {
        path: path.into(),
        reason,
    };
    if &take::<8>(&mut r)? != DATASET_MAGIC {
        return Err(bad("not a dataset file".into()));
    }
    let u32_of = |r: &mut BufReader<std::fs::File>| -> Result<u32> { Ok(u32::from_le_bytes(take(r)?)) };
    let version = u32_of(&mut r)?;
    if version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let classes = u32_of(&mut r)?;
    let frames = u32_of(&mut r)?;
    let height = u32_of(&mut r)?;
    let width = u32_of(&mut r)?;
    let count = u32_of(&mut r)?;
    let domain = domain_from(take::<1>(&mut r)?[0], path)?;
    let seed = u64::from_le_bytes(take(&mut r)?);
    let header = DatasetHeader {
        classes,
        frames,
        height,
        width,
        count,
        domain,
        seed,
    };
    let pixels = (frames * height * width) as usize;
    let mut videos = Vec::with_capacity(count as usize);
    let mut raw = vec![0u8; pixels * 4];
    for _ in 0..count {
        let id = u64::from_le_bytes(take(&mut r)?);
        let truth = u32_of(&mut r)? as usize;
        let label = i32::from_le_bytes(take(&mut r)?);
        let vdomain = domain_from(take::<1>(&mut r)?[0], path)?;
        let speed = f64::from_le_bytes(take(&mut r)?);
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if truth >= classes as usize {
            return Err(bad(format!("video {id} has class {truth} of {classes}")));
        }
        let mut v = VideoSample::new(
            id,
            truth,
            vdomain,
            speed,
            (frames as usize, height as usize, width as usize),
            data,
        );
        v.label = match label {
            -1 => None,
            l if l >= 0 && (l as u32) < classes => Some(l as usize),
            l => return Err(bad(format!("video {id} has label {l}"))),
        };
        videos.push(v);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, videos))
}

/// Split membership by video id, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub seed: u64,
    pub label_fraction: f64,
    pub labeled: Vec<u64>,
    pub unlabeled: Vec<u64>,
    pub test: Vec<u64>,
}

impl SplitManifest {
    pub fn from_split(split: &super::DatasetSplit, seed: u64, label_fraction: f64) -> Self {
        let ids = |s: &[VideoSample]| s.iter().map(|v| v.id).collect();
        Self {
            version: 1,
            seed,
            label_fraction,
            labeled: ids(&split.labeled),
            unlabeled: ids(&split.unlabeled),
            test: ids(&split.test),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetSpec};

    #[test]
    fn dataset_file_round_trips() {
        let spec = DatasetSpec {
            num_videos: 5,
            seed: 3,
            ..DatasetSpec::default()
        };
        let mut videos = generate_dataset(&spec).unwrap();
        videos[2] = videos[2].unlabeled();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dataset(&path, 8, Domain::Target, 3, &videos).unwrap();
        let (header, back) = read_dataset(&path).unwrap();
        assert_eq!(header.count, 5);
        assert_eq!(header.seed, 3);
        assert_eq!(back, videos);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 8 + 6 * 4 + 1 + 8 + 5 * (8 + 4 + 4 + 1 + 8 + 32 * 256 * 4));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTADATASET").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
    }
}
