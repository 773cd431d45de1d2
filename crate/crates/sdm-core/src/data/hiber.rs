//! HIBER-layout dataset directories: export, loading, and the file formats.
//!
//! Layout: `root/<group_id>/{hor,ver,mask}/frame_XXXXX.{hmp,hmp,png}` plus a
//! `manifest.toml` at the root recording groups, frame counts, per-group
//! seeds, and the scene-config hash. Masks are single-channel PNGs (0/255);
//! heatmaps are flat binary arrays with a small self-describing header.

use crate::data::sim::{simulate_sequence, SceneConfig};
use crate::data::{Frame, HeatmapPair, SequenceSample, SilhouetteMask, HIBER_GROUP_FRAMES};
use crate::error::{Error, Result};
use crate::num::{derive_seed, Dtype, Scalar};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const HEATMAP_MAGIC: &[u8; 4] = b"HMAP";
const HEATMAP_VERSION: u8 = 1;

/// Write a heatmap grid: magic, version, dtype code, rows, cols, scale,
/// then row-major little-endian data.
pub fn write_heatmap<T: Scalar>(path: &Path, grid: &Array2<T>) -> Result<()> {
    let (rows, cols) = grid.dim();
    let mut buf = Vec::with_capacity(18 + rows * cols * T::DTYPE.size_bytes());
    buf.extend_from_slice(HEATMAP_MAGIC);
    buf.push(HEATMAP_VERSION);
    buf.push(T::DTYPE.code());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    buf.extend_from_slice(&1.0f32.to_le_bytes()); // value scale
    for &v in grid.iter() {
        v.write_le(&mut buf);
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_heatmap<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    let mut file = fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let fail = |detail: &str| Error::Data(format!("{}: {detail}", path.display()));
    if buf.len() < 18 || &buf[0..4] != HEATMAP_MAGIC {
        return Err(fail("not a heatmap file"));
    }
    if buf[4] != HEATMAP_VERSION {
        return Err(fail("unsupported heatmap version"));
    }
    let dtype = Dtype::from_code(buf[5]).ok_or_else(|| fail("unknown dtype"))?;
    let rows = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
    let expected = 18 + rows * cols * dtype.size_bytes();
    if buf.len() != expected {
        return Err(fail("truncated heatmap data"));
    }
    let mut grid = Array2::<T>::zeros((rows, cols));
    let step = dtype.size_bytes();
    for (i, v) in grid.iter_mut().enumerate() {
        let at = 18 + i * step;
        *v = match dtype {
            Dtype::F32 => T::from_f(f32::read_le(&buf[at..at + 4]) as f64),
            Dtype::F64 => T::from_f(f64::read_le(&buf[at..at + 8])),
        };
    }
    Ok(grid)
}

pub fn write_mask_png(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (rows, cols) = mask.dim();
    let mut img = image::GrayImage::new(cols as u32, rows as u32);
    for ((r, c), &v) in mask.indexed_iter() {
        img.put_pixel(c as u32, r as u32, image::Luma([if v > 0 { 255 } else { 0 }]));
    }
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)?.into_luma8();
    let (cols, rows) = img.dimensions();
    let mut mask = Array2::<u8>::zeros((rows as usize, cols as usize));
    for ((r, c), v) in mask.indexed_iter_mut() {
        *v = u8::from(img.get_pixel(c as u32, r as u32).0[0] >= 128);
    }
    Ok(mask)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupEntry {
    pub id: String,
    pub frames: usize,
    pub seed: u64,
    pub person_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub groups: Vec<GroupEntry>,
}

impl DatasetManifest {
    pub fn save(&self, root: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        fs::write(root.join("manifest.toml"), text)?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let text = fs::read_to_string(root.join("manifest.toml"))?;
        toml::from_str(&text).map_err(|e| Error::Data(format!("manifest parse: {e}")))
    }

    pub fn person_count(&self, group_id: &str) -> Option<usize> {
        self.groups.iter().find(|g| g.id == group_id).map(|g| g.person_count)
    }
}

fn frame_file(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("frame_{index:05}.{ext}"))
}

/// Render `groups` sequences and write them in the HIBER layout. Each group
/// gets a seed derived from the base config seed; the manifest records the
/// scene-config hash and per-group seeds.
pub fn export_synthetic_dataset<T: Scalar>(
    cfg: &SceneConfig,
    groups: usize,
    frames_per_group: usize,
    out: &Path,
) -> Result<DatasetManifest> {
    fs::create_dir_all(out)?;
    let mut manifest = DatasetManifest {
        config_hash: cfg.hash(),
        groups: Vec::with_capacity(groups),
    };
    for gi in 0..groups {
        let group_id = format!("g{gi:03}");
        let seed = derive_seed(cfg.seed, "group", gi as u64);
        let mut group_cfg = cfg.clone();
        group_cfg.seed = seed;
        let seq = simulate_sequence::<T>(&group_cfg, frames_per_group)?;
        let gdir = out.join(&group_id);
        for sub in ["hor", "ver", "mask"] {
            fs::create_dir_all(gdir.join(sub))?;
        }
        for frame in &seq.frames {
            let i = frame.mask.frame_index;
            write_heatmap(&frame_file(&gdir.join("hor"), i, "hmp"), &frame.heatmaps.horizontal)?;
            write_heatmap(&frame_file(&gdir.join("ver"), i, "hmp"), &frame.heatmaps.vertical)?;
            write_mask_png(&frame_file(&gdir.join("mask"), i, "png"), &frame.mask.labels)?;
        }
        manifest.groups.push(GroupEntry {
            id: group_id,
            frames: frames_per_group,
            seed,
            person_count: cfg.persons.len(),
        });
    }
    manifest.save(out)?;
    Ok(manifest)
}

/// A frame skipped by the loader because one or more modality files were
/// missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedFrame {
    pub index: usize,
    pub missing: Vec<&'static str>,
}

/// A group as loaded from disk: aligned frames, skip reports, completeness.
#[derive(Debug)]
pub struct LoadedGroup<T> {
    pub sample: SequenceSample<T>,
    pub skipped: Vec<SkippedFrame>,
    /// True when the group has the full HIBER frame count and no skips.
    pub complete: bool,
}

fn scan_indices(dir: &Path, ext: &str, group: &str) -> Result<BTreeMap<usize, PathBuf>> {
    let mut map = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(map);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n.to_string(),
            None => continue,
        };
        let Some(stem) = name.strip_suffix(&format!(".{ext}")) else {
            continue;
        };
        let Some(num) = stem.strip_prefix("frame_") else {
            continue;
        };
        let index: usize = num.parse().map_err(|_| Error::FrameIndexMismatch {
            group: group.into(),
            detail: format!("unparseable frame file `{name}`"),
        })?;
        if map.insert(index, path).is_some() {
            return Err(Error::FrameIndexMismatch {
                group: group.into(),
                detail: format!("duplicate frame index {index}"),
            });
        }
    }
    Ok(map)
}

/// Load one group's aligned (horizontal, vertical, mask) triples. Frames
/// with a missing modality are skipped and reported; an entirely empty
/// group is an error.
pub fn load_hiber_group<T: Scalar>(root: &Path, group_id: &str) -> Result<LoadedGroup<T>> {
    let gdir = root.join(group_id);
    let hor = scan_indices(&gdir.join("hor"), "hmp", group_id)?;
    let ver = scan_indices(&gdir.join("ver"), "hmp", group_id)?;
    let mask = scan_indices(&gdir.join("mask"), "png", group_id)?;

    let mut all_indices: Vec<usize> = hor
        .keys()
        .chain(ver.keys())
        .chain(mask.keys())
        .cloned()
        .collect();
    all_indices.sort_unstable();
    all_indices.dedup();
    if all_indices.is_empty() {
        return Err(Error::NoFrames {
            root: root.display().to_string(),
            group: group_id.into(),
        });
    }

    let person_count = DatasetManifest::load(root)
        .ok()
        .and_then(|m| m.person_count(group_id))
        .unwrap_or(0);

    let mut frames = Vec::new();
    let mut skipped = Vec::new();
    for index in all_indices {
        let mut missing = Vec::new();
        if !hor.contains_key(&index) {
            missing.push("hor");
        }
        if !ver.contains_key(&index) {
            missing.push("ver");
        }
        if !mask.contains_key(&index) {
            missing.push("mask");
        }
        if !missing.is_empty() {
            skipped.push(SkippedFrame { index, missing });
            continue;
        }
        let horizontal = read_heatmap::<T>(&hor[&index])?;
        let vertical = read_heatmap::<T>(&ver[&index])?;
        let labels = read_mask_png(&mask[&index])?;
        frames.push(Frame {
            heatmaps: HeatmapPair {
                horizontal,
                vertical,
                frame_index: index,
            },
            mask: SilhouetteMask {
                labels,
                frame_index: index,
            },
        });
    }

    let complete = skipped.is_empty() && frames.len() == HIBER_GROUP_FRAMES;
    Ok(LoadedGroup {
        sample: SequenceSample {
            frames,
            group_id: group_id.into(),
            person_count,
        },
        skipped,
        complete,
    })
}

/// Group ids under a dataset root, manifest order when available, directory
/// order otherwise.
pub fn list_groups(root: &Path) -> Result<Vec<String>> {
    if let Ok(manifest) = DatasetManifest::load(root) {
        return Ok(manifest.groups.into_iter().map(|g| g.id).collect());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Convenience: load every group under a root.
pub fn load_dataset<T: Scalar>(root: &Path) -> Result<Vec<LoadedGroup<T>>> {
    let ids = list_groups(root)?;
    if ids.is_empty() {
        return Err(Error::NoFrames {
            root: root.display().to_string(),
            group: "<any>".into(),
        });
    }
    ids.iter().map(|id| load_hiber_group(root, id)).collect()
}

/// Line-oriented text file writer used for training logs and reports.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_windows;

    fn tiny_cfg(seed: u64) -> SceneConfig {
        let mut cfg = SceneConfig::single_walker((10, 12), seed);
        cfg.resolutions.horizontal = (8, 8);
        cfg.resolutions.vertical = (8, 8);
        cfg
    }

    #[test]
    fn heatmap_file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Array2::from_shape_fn((5, 7), |(r, c)| (r as f32 * 0.37 + c as f32 * 0.11).sin().abs());
        let path = dir.path().join("t.hmp");
        write_heatmap(&path, &grid).unwrap();
        let back = read_heatmap::<f32>(&path).unwrap();
        assert_eq!(grid, back);
    }

    #[test]
    fn truncated_heatmap_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Array2::<f32>::ones((4, 4));
        let path = dir.path().join("t.hmp");
        write_heatmap(&path, &grid).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_heatmap::<f32>(&path).is_err());
    }

    #[test]
    fn export_then_load_roundtrips_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(11);
        let manifest = export_synthetic_dataset::<f32>(&cfg, 1, 4, dir.path()).unwrap();
        assert_eq!(manifest.groups.len(), 1);

        let mut gcfg = cfg.clone();
        gcfg.seed = manifest.groups[0].seed;
        let original = simulate_sequence::<f32>(&gcfg, 4).unwrap();
        let loaded = load_hiber_group::<f32>(dir.path(), "g000").unwrap();
        assert!(loaded.skipped.is_empty());
        assert!(!loaded.complete); // only 4 of 590 frames
        assert_eq!(loaded.sample.person_count, 1);
        for (a, b) in original.frames.iter().zip(&loaded.sample.frames) {
            assert_eq!(a.heatmaps.horizontal, b.heatmaps.horizontal);
            assert_eq!(a.heatmaps.vertical, b.heatmaps.vertical);
            assert_eq!(a.mask.labels, b.mask.labels);
        }
    }

    #[test]
    fn export_writes_expected_file_count() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(5);
        export_synthetic_dataset::<f32>(&cfg, 2, 6, dir.path()).unwrap();
        let mut files = 0;
        for group in ["g000", "g001"] {
            for sub in ["hor", "ver", "mask"] {
                files += fs::read_dir(dir.path().join(group).join(sub)).unwrap().count();
            }
        }
        assert_eq!(files, 2 * 3 * 6);
        assert!(dir.path().join("manifest.toml").is_file());
    }

    #[test]
    fn manifest_hash_tracks_config_changes() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let dir3 = tempfile::tempdir().unwrap();
        let m1 = export_synthetic_dataset::<f32>(&tiny_cfg(5), 1, 2, dir1.path()).unwrap();
        let m2 = export_synthetic_dataset::<f32>(&tiny_cfg(5), 1, 2, dir2.path()).unwrap();
        let mut other = tiny_cfg(5);
        other.speckle_sigma += 0.05;
        let m3 = export_synthetic_dataset::<f32>(&other, 1, 2, dir3.path()).unwrap();
        assert_eq!(m1.config_hash, m2.config_hash);
        assert_ne!(m1.config_hash, m3.config_hash);
    }

    #[test]
    fn missing_modality_skips_frame_with_report() {
        let dir = tempfile::tempdir().unwrap();
        export_synthetic_dataset::<f32>(&tiny_cfg(3), 1, 10, dir.path()).unwrap();
        fs::remove_file(dir.path().join("g000/ver/frame_00007.hmp")).unwrap();
        let loaded = load_hiber_group::<f32>(dir.path(), "g000").unwrap();
        assert_eq!(loaded.sample.frames.len(), 9);
        assert_eq!(
            loaded.skipped,
            vec![SkippedFrame {
                index: 7,
                missing: vec!["ver"]
            }]
        );
        assert!(!loaded.complete);
        assert!(loaded.sample.frames.iter().all(|f| f.mask.frame_index != 7));
    }

    #[test]
    fn empty_group_is_a_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("g000/hor")).unwrap();
        match load_hiber_group::<f32>(dir.path(), "g000") {
            Err(Error::NoFrames { group, .. }) => assert_eq!(group, "g000"),
            other => panic!("expected NoFrames, got {other:?}"),
        }
    }

    #[test]
    fn complete_group_has_full_hiber_frame_count() {
        // tiny resolutions keep 590 frames cheap
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(9);
        cfg.resolutions.image = (6, 6);
        export_synthetic_dataset::<f32>(&cfg, 1, HIBER_GROUP_FRAMES, dir.path()).unwrap();
        let loaded = load_hiber_group::<f32>(dir.path(), "g000").unwrap();
        assert_eq!(loaded.sample.frames.len(), 590);
        assert!(loaded.complete);
        let ws = make_windows(&loaded.sample, 12, 12).unwrap();
        assert_eq!(ws.windows.len(), 49);
    }

    #[test]
    fn duplicate_frame_index_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        export_synthetic_dataset::<f32>(&tiny_cfg(3), 1, 3, dir.path()).unwrap();
        // same index with a different zero padding parses to a duplicate
        fs::copy(
            dir.path().join("g000/hor/frame_00001.hmp"),
            dir.path().join("g000/hor/frame_001.hmp"),
        )
        .unwrap();
        match load_hiber_group::<f32>(dir.path(), "g000") {
            Err(Error::FrameIndexMismatch { detail, .. }) => {
                assert!(detail.contains("duplicate frame index 1"), "{detail}");
            }
            other => panic!("expected FrameIndexMismatch, got {other:?}"),
        }
    }
}
