// CCV1 layout, all little-endian:
//
//   0  magic "CCV1"
//   4  version u32
//   8  num_videos, frames_per_video, height, width, num_classes: u32
//  28  seed u64
//  36  pixels f32 [num_videos][frames][height][width]
//      labels u16 [num_videos]

use std::fs;
use std::path::Path;

use super::{ClassLabels, VideoDataset};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CCV1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 36;

pub fn write_dataset_bytes(ds: &VideoDataset, labels: &ClassLabels) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ds.pixels.len() * 4 + labels.0.len() * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [ds.num_videos, ds.frames_per_video, ds.height, ds.width, ds.num_classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for p in &ds.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for l in &labels.0 {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn write_dataset(path: &Path, ds: &VideoDataset, labels: &ClassLabels) -> Result<()> {
    fs::write(path, write_dataset_bytes(ds, labels)).map_err(|e| Error::io(path, e))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn read_dataset_bytes(bytes: &[u8]) -> Result<(VideoDataset, ClassLabels)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}, expected \"CCV1\"", &bytes[..4]),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let field = |i: usize| u32_at(bytes, 8 + 4 * i) as usize;
    let (num_videos, frames, height, width, num_classes) =
        (field(0), field(1), field(2), field(3), field(4));
    let seed = u64::from_le_bytes(bytes[28..36].try_into().unwrap());

    let n_pixels = num_videos
        .checked_mul(frames)
        .and_then(|v| v.checked_mul(height))
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::Format {
            offset: 8,
            message: "header dimensions overflow".into(),
        })?;
    let expected = n_pixels * 4 + num_videos * 2;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(Error::Format {
            offset: HEADER_LEN as u64,
            message: format!("payload length mismatch: expected {expected} bytes, found {actual}"),
        });
    }
    let mut pixels = Vec::with_capacity(n_pixels);
    for (i, chunk) in bytes[HEADER_LEN..HEADER_LEN + n_pixels * 4].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Format {
                offset: (HEADER_LEN + 4 * i) as u64,
                message: format!("pixel value {v} outside [0, 1]"),
            });
        }
        pixels.push(v);
    }
    let label_start = HEADER_LEN + n_pixels * 4;
    let mut labels = Vec::with_capacity(num_videos);
    for (i, chunk) in bytes[label_start..].chunks_exact(2).enumerate() {
        let l = u16::from_le_bytes([chunk[0], chunk[1]]);
        if l as usize >= num_classes {
            return Err(Error::Format {
                offset: (label_start + 2 * i) as u64,
                message: format!("class label {l} not below num_classes {num_classes}"),
            });
        }
        labels.push(l);
    }
    Ok((
        VideoDataset {
            num_videos,
            frames_per_video: frames,
            height,
            width,
            num_classes,
            seed,
            pixels,
        },
        ClassLabels(labels),
    ))
}

pub fn read_dataset(path: &Path) -> Result<(VideoDataset, ClassLabels)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenerateConfig};

    fn sample() -> (VideoDataset, ClassLabels) {
        generate(&GenerateConfig {
            num_videos: 5,
            frames_per_video: 3,
            height: 6,
            width: 7,
            num_classes: 4,
            seed: 77,
            ..GenerateConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let (ds, labels) = sample();
        let bytes = write_dataset_bytes(&ds, &labels);
        assert_eq!(bytes.len(), HEADER_LEN + 5 * 3 * 6 * 7 * 4 + 5 * 2);
        assert_eq!(read_dataset_bytes(&bytes).unwrap(), (ds, labels));
    }

    #[test]
    fn truncation_reports_lengths() {
        let (ds, labels) = sample();
        let bytes = write_dataset_bytes(&ds, &labels);
        let err = read_dataset_bytes(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("expected 2530") && err.contains("found 2527"), "{err}");
        assert!(matches!(
            read_dataset_bytes(&bytes[..10]),
            Err(Error::Format { offset: 10, .. })
        ));
    }

    #[test]
    fn corrupted_magic_and_version() {
        let (ds, labels) = sample();
        let mut bytes = write_dataset_bytes(&ds, &labels);
        bytes[1] = b'X';
        assert!(matches!(read_dataset_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = write_dataset_bytes(&ds, &labels);
        bytes[4] = 9;
        assert!(matches!(read_dataset_bytes(&bytes), Err(Error::Format { offset: 4, .. })));
    }
}
