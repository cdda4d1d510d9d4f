//! IDX (MNIST family) and CIFAR-10 binary readers. Pixel bytes are scaled to
//! `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::LabeledDataset;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Bytes per CIFAR-10 record: one label byte and a 3×32×32 image.
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what}: header ends at byte {}", bytes.len())))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::BadMagic { found, expected });
    }
    Ok(())
}

fn check_body(bytes: &[u8], header: usize, body: usize, what: &str) -> Result<()> {
    let want = header + body;
    if bytes.len() < want {
        return Err(Error::Truncated(format!("{what}: expected {want} bytes, found {}", bytes.len())));
    }
    if bytes.len() > want {
        return Err(Error::invalid(format!("{what}: {} trailing bytes", bytes.len() - want)));
    }
    Ok(())
}

/// Ids of the first `k` examples of every label, in file order.
fn keep_first(labels: &[usize], per_class: Option<usize>) -> Vec<usize> {
    match per_class {
        None => (0..labels.len()).collect(),
        Some(k) => {
            let mut seen = Vec::new();
            let mut keep = Vec::new();
            for (i, &y) in labels.iter().enumerate() {
                if seen.len() <= y {
                    seen.resize(y + 1, 0);
                }
                if seen[y] < k {
                    seen[y] += 1;
                    keep.push(i);
                }
            }
            keep
        }
    }
}

fn assemble(
    raw: &[&[u8]],
    labels: &[usize],
    shape: [usize; 3],
    num_classes: usize,
    per_class: Option<usize>,
) -> Result<LabeledDataset> {
    let keep = keep_first(labels, per_class);
    if let Some(k) = per_class {
        let mut counts = vec![0; num_classes];
        for &i in &keep {
            counts[labels[i]] += 1;
        }
        if let Some((class, &available)) = counts.iter().enumerate().find(|(_, &c)| c < k) {
            return Err(Error::UndersizedClass { class, available, requested: k });
        }
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(keep.len() * len);
    for &i in &keep {
        data.extend(raw[i].iter().map(|&b| f64::from(b) / 255.0));
    }
    let images = Tensor::new(vec![keep.len(), shape[0], shape[1], shape[2]], data)?;
    let labels = keep.iter().map(|&i| labels[i]).collect();
    LabeledDataset::new(images, labels, num_classes)
}

/// Parses an IDX image file (`0x00000803`) and label file (`0x00000801`).
///
/// The class count is one more than the largest label. With `per_class`
/// only the first `k` examples of each class are kept.
pub fn parse_idx(images: &[u8], labels: &[u8], per_class: Option<usize>) -> Result<LabeledDataset> {
    check_magic(images, IDX_IMAGES, "IDX images")?;
    check_magic(labels, IDX_LABELS, "IDX labels")?;
    let n_img = be_u32(images, 4, "IDX images")? as usize;
    let rows = be_u32(images, 8, "IDX images")? as usize;
    let cols = be_u32(images, 12, "IDX images")? as usize;
    let n_lbl = be_u32(labels, 4, "IDX labels")? as usize;
    check_body(images, 16, n_img * rows * cols, "IDX images")?;
    check_body(labels, 8, n_lbl, "IDX labels")?;
    if n_img != n_lbl {
        return Err(Error::CountMismatch { images: n_img, labels: n_lbl });
    }
    let ys: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let num_classes = ys.iter().max().map_or(1, |m| m + 1);
    let raw: Vec<&[u8]> = images[16..].chunks_exact((rows * cols).max(1)).take(n_img).collect();
    assemble(&raw, &ys, [1, rows, cols], num_classes, per_class)
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, per_class: Option<usize>) -> Result<LabeledDataset> {
    let img = std::fs::read(images)?;
    let lbl = std::fs::read(labels)?;
    parse_idx(&img, &lbl, per_class)
}

/// Parses concatenated CIFAR-10 records (10 classes, 3×32×32).
pub fn parse_cifar(bytes: &[u8], per_class: Option<usize>) -> Result<LabeledDataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::RecordLength { len: bytes.len(), record: CIFAR_RECORD });
    }
    let records: Vec<&[u8]> = bytes.chunks_exact(CIFAR_RECORD).collect();
    let labels: Vec<usize> = records.iter().map(|r| r[0] as usize).collect();
    if let Some(i) = labels.iter().position(|&y| y >= 10) {
        return Err(Error::invalid(format!("record {i} has label {}", labels[i])));
    }
    let raw: Vec<&[u8]> = records.iter().map(|r| &r[1..]).collect();
    assemble(&raw, &labels, [3, 32, 32], 10, per_class)
}

/// Reads and concatenates CIFAR-10 batch files in order.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], per_class: Option<usize>) -> Result<LabeledDataset> {
    if paths.is_empty() {
        return Err(Error::invalid("no CIFAR batch files given"));
    }
    let mut bytes = Vec::new();
    for p in paths {
        let chunk = std::fs::read(p)?;
        if chunk.len() % CIFAR_RECORD != 0 {
            return Err(Error::RecordLength { len: chunk.len(), record: CIFAR_RECORD });
        }
        bytes.extend_from_slice(&chunk);
    }
    parse_cifar(&bytes, per_class)
}
