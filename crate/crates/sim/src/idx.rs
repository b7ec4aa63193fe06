//! Reader for the IDX format used by MNIST: big-endian magic, dimension
//! sizes, then raw unsigned bytes.

use std::fs;
use std::path::Path;

use fedsurrogate_core::data::{Dataset, Sample};

use crate::error::IdxError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io { path: path.to_path_buf(), source })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Validates magic and length; returns the dimension sizes and the payload.
fn parse<'a>(path: &Path, bytes: &'a [u8], magic: u32, dims: usize) -> Result<(Vec<usize>, &'a [u8]), IdxError> {
    let truncated = |expected: usize| IdxError::Truncated { path: path.to_path_buf(), expected, actual: bytes.len() };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(IdxError::BadMagic { path: path.to_path_buf(), found, expected: magic });
    }
    let header = 4 + 4 * dims;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let sizes: Vec<usize> = (0..dims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let payload: usize = sizes.iter().product();
    if bytes.len() < header + payload {
        return Err(truncated(header + payload));
    }
    Ok((sizes, &bytes[header..header + payload]))
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major.
pub fn load_idx(images: &Path, labels: &Path, num_classes: usize) -> Result<Dataset, IdxError> {
    let image_bytes = read(images)?;
    let label_bytes = read(labels)?;
    let (sizes, pixels) = parse(images, &image_bytes, IMAGES_MAGIC, 3)?;
    let (label_sizes, label_data) = parse(labels, &label_bytes, LABELS_MAGIC, 1)?;
    let (count, dim) = (sizes[0], sizes[1] * sizes[2]);
    if label_sizes[0] != count {
        return Err(IdxError::CountMismatch { images: count, labels: label_sizes[0] });
    }
    let mut samples = Vec::with_capacity(count);
    for (i, &label) in label_data.iter().enumerate() {
        let label = label as usize;
        if label >= num_classes {
            return Err(IdxError::LabelOutOfRange { label, classes: num_classes });
        }
        let features = pixels[i * dim..(i + 1) * dim].iter().map(|&p| p as f64 / 255.0).collect();
        samples.push(Sample { features, label });
    }
    Ok(Dataset::new(samples, num_classes).expect("labels were checked against the class count"))
}

/// Encodes samples as an IDX pair (pixels rounded to bytes). Useful for
/// building fixtures; images are `rows x cols`.
pub fn encode_idx(samples: &[Sample], rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + samples.len() * rows * cols);
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [samples.len(), rows, cols] {
        images.extend_from_slice(&(v as u32).to_be_bytes());
    }
    let mut labels = Vec::with_capacity(8 + samples.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for s in samples {
        images.extend(s.features.iter().map(|&f| (f.clamp(0.0, 1.0) * 255.0).round() as u8));
        labels.push(s.label as u8);
    }
    (images, labels)
}
