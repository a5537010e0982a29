//! IDX container support (the MNIST on-disk format). Big-endian headers:
//! image files carry magic 0x00000803 with (count, rows, cols), label files
//! magic 0x00000801 with (count). Pixels are u8, scaled to [0,1] by /255.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_images<R: Read>(reader: &mut R) -> Result<Array2<f64>> {
    let trunc = |_| Error::format("truncated IDX image file");
    let magic = reader.read_u32::<BigEndian>().map_err(trunc)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(format!(
            "bad IDX image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = reader.read_u32::<BigEndian>().map_err(trunc)? as usize;
    let rows = reader.read_u32::<BigEndian>().map_err(trunc)? as usize;
    let cols = reader.read_u32::<BigEndian>().map_err(trunc)? as usize;
    let dim = rows * cols;
    let mut bytes = vec![0u8; count * dim];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| Error::format("truncated IDX image payload"))?;
    let values: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Array2::from_shape_vec((count, dim), values)
        .map_err(|e| Error::format(format!("IDX shape error: {e}")))
}

fn read_labels<R: Read>(reader: &mut R) -> Result<Vec<usize>> {
    let trunc = |_| Error::format("truncated IDX label file");
    let magic = reader.read_u32::<BigEndian>().map_err(trunc)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(format!(
            "bad IDX label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = reader.read_u32::<BigEndian>().map_err(trunc)? as usize;
    let mut bytes = vec![0u8; count];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| Error::format("truncated IDX label payload"))?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

/// Loads a paired IDX image/label file into a Dataset with all tags Clean.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = File::open(images_path).map_err(|e| Error::io(images_path, e))?;
    let features = read_images(&mut BufReader::new(images))?;
    let labels_file = File::open(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let labels = read_labels(&mut BufReader::new(labels_file))?;
    if features.nrows() != labels.len() {
        return Err(Error::format(format!(
            "image count {} does not match label count {}",
            features.nrows(),
            labels.len()
        )));
    }
    Dataset::clean(features, labels)
}

/// In-memory decode, used by tests and the loaders above.
pub fn decode_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let features = read_images(&mut &images[..])?;
    let label_vec = read_labels(&mut &labels[..])?;
    if features.nrows() != label_vec.len() {
        return Err(Error::format(format!(
            "image count {} does not match label count {}",
            features.nrows(),
            label_vec.len()
        )));
    }
    Dataset::clean(features, label_vec)
}

/// Encodes a dataset as IDX bytes. Features are quantized to the u8 grid by
/// round(v*255); data previously loaded from IDX round-trips bit-exactly.
/// Rows/cols: square when the dim is a perfect square, else 1×dim.
pub fn encode_idx(data: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let dim = data.dim();
    let side = (dim as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == dim { (side, side) } else { (1, dim) };

    let mut images = Vec::with_capacity(16 + data.len() * dim);
    images.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
    images.write_u32::<BigEndian>(data.len() as u32).unwrap();
    images.write_u32::<BigEndian>(rows as u32).unwrap();
    images.write_u32::<BigEndian>(cols as u32).unwrap();
    for v in data.features.iter() {
        images.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }

    let mut labels = Vec::with_capacity(8 + data.len());
    labels.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
    labels.write_u32::<BigEndian>(data.len() as u32).unwrap();
    for &l in &data.labels {
        labels.push(l as u8);
    }
    (images, labels)
}

pub fn save_idx(data: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = encode_idx(data);
    let mut w = BufWriter::new(File::create(images_path).map_err(|e| Error::io(images_path, e))?);
    w.write_all(&images).map_err(|e| Error::io(images_path, e))?;
    let mut w = BufWriter::new(File::create(labels_path).map_err(|e| Error::io(labels_path, e))?);
    w.write_all(&labels).map_err(|e| Error::io(labels_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn image_bytes(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
        buf.write_u32::<BigEndian>(count).unwrap();
        buf.write_u32::<BigEndian>(rows).unwrap();
        buf.write_u32::<BigEndian>(cols).unwrap();
        buf.extend_from_slice(pixels);
        buf
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
        buf.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        buf.extend_from_slice(labels);
        buf
    }

    #[test]
    fn decodes_handcrafted_two_by_two_images() {
        // expected values computed independently: pixel byte / 255
        let images = image_bytes(2, 2, 2, &[0, 255, 128, 64, 10, 20, 30, 40]);
        let labels = label_bytes(&[1, 0]);
        let data = decode_idx(&images, &labels).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 4);
        assert_eq!(data.features[[0, 0]], 0.0);
        assert_eq!(data.features[[0, 1]], 1.0);
        assert_eq!(data.features[[0, 2]], 128.0 / 255.0);
        assert_eq!(data.features[[0, 3]], 64.0 / 255.0);
        assert_eq!(data.labels, vec![1, 0]);
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let images = image_bytes(1, 1, 1, &[7]);
        // image magic where a label magic is required
        let bad_labels = {
            let mut buf = Vec::new();
            buf.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
            buf.write_u32::<BigEndian>(1).unwrap();
            buf.push(0);
            buf
        };
        assert!(matches!(
            decode_idx(&images, &bad_labels),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn count_mismatch_is_a_format_error() {
        let images = image_bytes(3, 1, 2, &[1, 2, 3, 4, 5, 6]);
        let labels = label_bytes(&[0, 1]);
        assert!(matches!(decode_idx(&images, &labels), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let mut images = image_bytes(2, 2, 2, &[0; 8]);
        images.truncate(images.len() - 2);
        let labels = label_bytes(&[0, 1]);
        assert!(matches!(decode_idx(&images, &labels), Err(Error::Format(_))));
    }

    #[test]
    fn quantized_round_trip_is_bit_exact() {
        let raw = synth_blobs(3, 9, 20, 0.2, 99).unwrap();
        // first write quantizes; everything after that must be stable
        let (i1, l1) = encode_idx(&raw);
        let once = decode_idx(&i1, &l1).unwrap();
        let (i2, l2) = encode_idx(&once);
        let twice = decode_idx(&i2, &l2).unwrap();
        assert_eq!(once.features, twice.features);
        assert_eq!(once.labels, twice.labels);
        assert_eq!(i1, i2);
        assert_eq!(l1, l2);
    }
}
