//! On-disk dataset format: a JSON manifest next to one fixed-layout binary
//! file of little-endian f32 blocks in
//! `(gop, frame, grid_row, grid_col, pixel_row, pixel_col)` order.

use super::GopBlockSequence;
use crate::error::{Error, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "blocks.bin";
const FORMAT_VERSION: u32 = 1;

/// A homogeneous collection of GOPs plus the geometry they share.
#[derive(Debug, Clone)]
pub struct BlockDataset {
    pub block_size: usize,
    pub t: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub gops: Vec<GopBlockSequence>,
}

impl BlockDataset {
    pub fn new(
        block_size: usize,
        t: usize,
        grid_rows: usize,
        grid_cols: usize,
        gops: Vec<GopBlockSequence>,
    ) -> Result<Self> {
        for g in &gops {
            if g.block_size() != block_size
                || g.t() != t
                || g.grid() != (grid_rows, grid_cols)
            {
                return Err(Error::shape(
                    "dataset",
                    format!("block {block_size}, T {t}, grid {grid_rows}x{grid_cols}"),
                    format!(
                        "block {}, T {}, grid {}x{}",
                        g.block_size(),
                        g.t(),
                        g.grid().0,
                        g.grid().1
                    ),
                ));
            }
        }
        Ok(Self {
            block_size,
            t,
            grid_rows,
            grid_cols,
            gops,
        })
    }

    /// Builds from a non-empty GOP list, taking geometry from the first GOP.
    pub fn from_gops(gops: Vec<GopBlockSequence>) -> Result<Self> {
        let first = gops.first().ok_or(Error::Empty("gop list"))?;
        let (rows, cols) = first.grid();
        Self::new(first.block_size(), first.t(), rows, cols, gops)
    }

    pub fn len(&self) -> usize {
        self.gops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gops.is_empty()
    }

    pub fn positions(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn block_len(&self) -> usize {
        self.block_size * self.block_size
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipEntry {
    pub source_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub block_size: usize,
    pub t: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub gop_count: usize,
    /// Per-GOP provenance, in storage order.
    pub clips: Vec<ClipEntry>,
    pub data_file: String,
    /// SHA-256 of the binary payload, hex-encoded.
    pub data_sha256: String,
}

/// Writes the dataset into `dir` (created if needed) and returns the manifest.
pub fn write_dataset(dataset: &BlockDataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let data_path = dir.join(DATA_FILE);
    let mut hasher = Sha256::new();
    {
        let mut w = BufWriter::new(fs::File::create(&data_path)?);
        for gop in &dataset.gops {
            let blocks = gop.blocks();
            let slice = blocks
                .as_slice()
                .expect("gop blocks are stored contiguously");
            let mut bytes = Vec::with_capacity(slice.len() * 4);
            for v in slice {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            hasher.update(&bytes);
            w.write_all(&bytes)?;
        }
        w.flush()?;
    }
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        block_size: dataset.block_size,
        t: dataset.t,
        grid_rows: dataset.grid_rows,
        grid_cols: dataset.grid_cols,
        gop_count: dataset.gops.len(),
        clips: dataset
            .gops
            .iter()
            .map(|g| ClipEntry {
                source_id: g.source_id().to_string(),
            })
            .collect(),
        data_file: DATA_FILE.to_string(),
        data_sha256: hex(&hasher.finalize()),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`], validating shapes and the
/// payload hash.
pub fn read_dataset(dir: &Path) -> Result<BlockDataset> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::DatasetFormat(format!(
            "unsupported dataset version {}",
            manifest.version
        )));
    }
    if manifest.clips.len() != manifest.gop_count {
        return Err(Error::DatasetFormat(format!(
            "manifest lists {} clips for {} GOPs",
            manifest.clips.len(),
            manifest.gop_count
        )));
    }

    let positions = manifest.grid_rows * manifest.grid_cols;
    let n = manifest.block_size * manifest.block_size;
    let gop_floats = manifest.t * positions * n;
    let expected_bytes = manifest.gop_count * gop_floats * 4;

    let mut bytes = Vec::with_capacity(expected_bytes);
    BufReader::new(fs::File::open(dir.join(&manifest.data_file))?).read_to_end(&mut bytes)?;
    if bytes.len() != expected_bytes {
        return Err(Error::DatasetFormat(format!(
            "payload is {} bytes but the manifest shape implies {expected_bytes}",
            bytes.len()
        )));
    }
    let digest = hex(&Sha256::digest(&bytes));
    if digest != manifest.data_sha256 {
        return Err(Error::DatasetFormat(
            "payload hash does not match the manifest".into(),
        ));
    }

    let mut gops = Vec::with_capacity(manifest.gop_count);
    for (g, clip) in manifest.clips.iter().enumerate() {
        let start = g * gop_floats * 4;
        let mut values = Vec::with_capacity(gop_floats);
        for i in 0..gop_floats {
            let o = start + i * 4;
            values.push(f32::from_le_bytes([
                bytes[o],
                bytes[o + 1],
                bytes[o + 2],
                bytes[o + 3],
            ]));
        }
        let blocks = Array3::from_shape_vec((manifest.t, positions, n), values)
            .map_err(|e| Error::DatasetFormat(e.to_string()))?;
        gops.push(GopBlockSequence::new(
            manifest.block_size,
            manifest.grid_rows,
            manifest.grid_cols,
            blocks,
            clip.source_id.clone(),
        )?);
    }
    BlockDataset::new(
        manifest.block_size,
        manifest.t,
        manifest.grid_rows,
        manifest.grid_cols,
        gops,
    )
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gop(rng: &mut ChaCha8Rng, t: usize, rows: usize, cols: usize, b: usize) -> GopBlockSequence {
        let blocks = Array3::from_shape_fn((t, rows * cols, b * b), |_| rng.random::<f32>());
        GopBlockSequence::new(b, rows, cols, blocks, "synthetic://test").unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gops: Vec<_> = (0..3).map(|_| random_gop(&mut rng, 4, 2, 3, 8)).collect();
        let ds = BlockDataset::from_gops(gops).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in ds.gops.iter().zip(back.gops.iter()) {
            assert_eq!(a.blocks(), b.blocks());
            assert_eq!(a.source_id(), b.source_id());
        }
    }

    #[test]
    fn empty_dataset_is_valid() {
        let ds = BlockDataset::new(32, 10, 5, 5, Vec::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(manifest.gop_count, 0);
        let back = read_dataset(dir.path()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.block_size, 32);
    }

    #[test]
    fn tampered_block_size_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let ds = BlockDataset::from_gops(vec![random_gop(&mut rng, 3, 2, 2, 8)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();

        let manifest_path = dir.path().join(MANIFEST_FILE);
        let tampered = std::fs::read_to_string(&manifest_path)
            .unwrap()
            .replace("\"block_size\": 8", "\"block_size\": 16");
        std::fs::write(&manifest_path, tampered).unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let ds = BlockDataset::from_gops(vec![random_gop(&mut rng, 3, 2, 2, 8)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();

        let data_path = dir.path().join(DATA_FILE);
        let mut bytes = std::fs::read(&data_path).unwrap();
        bytes[10] ^= 0xff;
        std::fs::write(&data_path, bytes).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("hash"), "{err}");
    }
}
