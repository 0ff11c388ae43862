//! Sequence directories:
//!
//! ```text
//! meta.json          {"num_objects", "num_frames", "width", "height"}
//! frames/000000.pgm
//! gt/000000.rle      one line per object
//! ```
//!
//! Ground truth may cover only frame 0, which is all tracking needs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{create_dir, frame_name, pgm, read_file, read_text, rle, write_atomic};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::mask::{Bitmask, LabelMap};
use crate::synth::{SceneSpec, SynthFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMeta {
    pub num_objects: usize,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone)]
pub struct SequenceDir {
    root: PathBuf,
    meta: SequenceMeta,
}

impl SequenceDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let meta: SequenceMeta = serde_json::from_str(&read_text(&root.join("meta.json"))?)?;
        if meta.num_frames == 0 || meta.num_objects == 0 {
            return Err(Error::parse("meta.json", "sequence needs at least one frame and one object"));
        }
        let seq = Self { root, meta };
        if !seq.gt_path(0).is_file() {
            return Err(Error::parse(
                seq.gt_path(0).display().to_string(),
                "first-frame annotation missing",
            ));
        }
        Ok(seq)
    }

    /// Creates the directory layout and writes `meta.json`.
    pub fn create(root: impl Into<PathBuf>, meta: SequenceMeta) -> Result<Self> {
        let root = root.into();
        create_dir(&root.join("frames"))?;
        create_dir(&root.join("gt"))?;
        let json = serde_json::to_string_pretty(&meta)? + "\n";
        write_atomic(&root.join("meta.json"), json.as_bytes())?;
        Ok(Self { root, meta })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn meta(&self) -> SequenceMeta {
        self.meta
    }

    pub fn len(&self) -> usize {
        self.meta.num_frames
    }

    pub fn is_empty(&self) -> bool {
        self.meta.num_frames == 0
    }

    pub fn frame_path(&self, t: usize) -> PathBuf {
        self.root.join("frames").join(frame_name(t, "pgm"))
    }

    pub fn gt_path(&self, t: usize) -> PathBuf {
        self.root.join("gt").join(frame_name(t, "rle"))
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t >= self.meta.num_frames {
            return Err(Error::FrameOutOfRange {
                index: t,
                len: self.meta.num_frames,
            });
        }
        Ok(())
    }

    pub fn frame(&self, t: usize) -> Result<GrayImage> {
        self.check_index(t)?;
        let img = pgm::decode(&read_file(&self.frame_path(t))?)?;
        if (img.width(), img.height()) != (self.meta.width, self.meta.height) {
            return Err(Error::parse(
                self.frame_path(t).display().to_string(),
                format!("{}x{} frame in a {}x{} sequence", img.width(), img.height(), self.meta.width, self.meta.height),
            ));
        }
        Ok(img)
    }

    pub fn has_gt(&self, t: usize) -> bool {
        t < self.meta.num_frames && self.gt_path(t).is_file()
    }

    /// Whether every frame carries ground truth.
    pub fn has_full_gt(&self) -> bool {
        (0..self.len()).all(|t| self.has_gt(t))
    }

    pub fn gt(&self, t: usize) -> Result<Vec<Bitmask>> {
        self.check_index(t)?;
        read_masks(&self.gt_path(t), self.meta.num_objects, self.meta.width, self.meta.height)
    }

    pub fn annotation(&self) -> Result<LabelMap> {
        LabelMap::merge(&self.gt(0)?)
    }

    pub fn write_frame(&self, t: usize, image: &GrayImage, gt: Option<&[Bitmask]>) -> Result<()> {
        self.check_index(t)?;
        write_atomic(&self.frame_path(t), &pgm::encode(image))?;
        if let Some(masks) = gt {
            write_atomic(&self.gt_path(t), rle::encode(masks).as_bytes())?;
        }
        Ok(())
    }
}

/// Reads one mask file and checks its object count and dims.
pub fn read_masks(path: &Path, num_objects: usize, width: usize, height: usize) -> Result<Vec<Bitmask>> {
    let masks = rle::decode(&read_text(path)?, Some(num_objects))
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    if let Some(m) = masks.first() {
        if (m.width(), m.height()) != (width, height) {
            return Err(Error::parse(
                path.display().to_string(),
                format!("{}x{} masks, expected {width}x{height}", m.width(), m.height()),
            ));
        }
    }
    Ok(masks)
}

/// Reads `%06d.rle` files `0..count` from `dir`.
pub fn read_mask_dir(dir: &Path, count: usize, num_objects: usize, width: usize, height: usize) -> Result<Vec<Vec<Bitmask>>> {
    (0..count)
        .map(|t| read_masks(&dir.join(frame_name(t, "rle")), num_objects, width, height))
        .collect()
}

/// Number of consecutive `%06d.rle` files starting at frame 0.
pub fn count_mask_files(dir: &Path) -> usize {
    (0..).take_while(|&t| dir.join(frame_name(t, "rle")).is_file()).count()
}

pub fn write_masks(dir: &Path, t: usize, masks: &[Bitmask]) -> Result<()> {
    write_atomic(&dir.join(frame_name(t, "rle")), rle::encode(masks).as_bytes())
}

fn synth_masks(f: &SynthFrame) -> Vec<Bitmask> {
    f.gt.split()
}

/// Renders `spec` frame by frame into a new sequence directory.
pub fn write_scene(spec: &SceneSpec, root: impl Into<PathBuf>) -> Result<SequenceDir> {
    spec.validate()?;
    let seq = SequenceDir::create(
        root,
        SequenceMeta {
            num_objects: spec.num_objects(),
            num_frames: spec.length,
            width: spec.width,
            height: spec.height,
        },
    )?;
    for (t, frame) in spec.frames().enumerate() {
        let frame = frame?;
        seq.write_frame(t, &frame.image, Some(&synth_masks(&frame)))?;
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::preset;

    #[test]
    fn scene_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = preset("distractor").unwrap();
        spec.length = 6;
        let seq = write_scene(&spec, dir.path().join("seq")).unwrap();
        let back = SequenceDir::open(seq.root()).unwrap();
        assert_eq!(back.meta(), seq.meta());
        for t in 0..6 {
            let f = spec.render(t).unwrap();
            assert_eq!(back.frame(t).unwrap(), f.image);
            assert_eq!(back.gt(t).unwrap(), f.gt.split());
        }
        assert_eq!(back.annotation().unwrap(), spec.render(0).unwrap().gt);
        assert!(back.has_full_gt());
        assert!(back.frame(6).is_err());
    }

    #[test]
    fn open_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(SequenceDir::open(dir.path()).is_err());
        let meta = SequenceMeta {
            num_objects: 1,
            num_frames: 2,
            width: 4,
            height: 4,
        };
        SequenceDir::create(dir.path(), meta).unwrap();
        // no first-frame annotation yet
        assert!(SequenceDir::open(dir.path()).is_err());
        std::fs::write(dir.path().join("gt/000000.rle"), "4 4 16\n4 4 16\n").unwrap();
        let seq = SequenceDir::open(dir.path()).unwrap();
        assert!(seq.gt(0).is_err());
    }
}
