//! On-disk dataset layout.
//!
//! ```text
//! <root>/split.json               train / val_seen / val_unseen sequence ids
//! <root>/<seq>/frames/00000.png   RGB frames
//! <root>/<seq>/masks/00000.png    indexed masks (0 = background, k = instance k)
//! <root>/<seq>/flow_fwd/00000.flo flow frame t -> t+1 (file index t)
//! <root>/<seq>/flow_bwd/00000.flo flow frame t+1 -> t (file index t)
//! <root>/<seq>/tubes.json         per-frame per-instance boxes
//! <root>/<seq>/meta.json          sizes, instance count, categories
//! ```

use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::flo::{read_flo, write_flo};
use crate::data::{
    Box2D, BoxTube, Frame, FlowDirection, InstanceMaskSet, SequenceMeta, VideoSequence,
};
use crate::error::{ensure, Error, Result};

/// Sequence ids per split, stored as `split.json` at the dataset root.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub val_seen: Vec<String>,
    pub val_unseen: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TubeFile {
    /// `frames[t][k]` is `[x0, y0, x1, y1]` for instance `k + 1`, or null
    /// when the instance is absent from frame `t`.
    frames: Vec<Vec<Option<[f32; 4]>>>,
}

/// Write a full sequence under `<root>/<seq.id>/`.
pub fn save_sequence(seq: &VideoSequence, root: &Path) -> Result<()> {
    seq.validate()?;
    let dir = root.join(&seq.id);
    for sub in ["frames", "masks", "flow_fwd", "flow_bwd"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }

    for (t, frame) in seq.frames.iter().enumerate() {
        write_frame_png(frame, &dir.join("frames").join(frame_name(t)))?;
    }
    save_masks(&seq.gt_masks, &dir.join("masks"))?;
    for (t, field) in seq.flows_fwd.iter().enumerate() {
        write_flo(field, &dir.join("flow_fwd").join(flo_name(t)))?;
    }
    for (t, field) in seq.flows_bwd.iter().enumerate() {
        write_flo(field, &dir.join("flow_bwd").join(flo_name(t)))?;
    }

    let tubes = TubeFile {
        frames: seq
            .tubes
            .frames()
            .iter()
            .map(|f| f.iter().map(|b| b.map(|b| [b.x0, b.y0, b.x1, b.y1])).collect())
            .collect(),
    };
    write_json(&dir.join("tubes.json"), &tubes)?;
    write_json(&dir.join("meta.json"), &seq.meta())?;
    Ok(())
}

/// Load `<root>/<id>/` back into memory and validate it.
pub fn load_sequence(root: &Path, id: &str) -> Result<VideoSequence> {
    let dir = root.join(id);
    let meta: SequenceMeta = read_json(&dir.join("meta.json"))?;
    ensure(meta.id == id, || {
        format!("meta.json in {id} claims id {}", meta.id)
    })?;

    let mut frames = Vec::with_capacity(meta.frame_count);
    for t in 0..meta.frame_count {
        frames.push(read_frame_png(&dir.join("frames").join(frame_name(t)), t)?);
    }
    let gt_masks = load_mask_dir(&dir.join("masks"), meta.frame_count, meta.instance_count)?;
    let mut flows_fwd = Vec::new();
    let mut flows_bwd = Vec::new();
    for t in 0..meta.frame_count.saturating_sub(1) {
        flows_fwd.push(read_flo(&dir.join("flow_fwd").join(flo_name(t)), FlowDirection::Forward)?);
        flows_bwd.push(read_flo(&dir.join("flow_bwd").join(flo_name(t)), FlowDirection::Backward)?);
    }

    let tube_file: TubeFile = read_json(&dir.join("tubes.json"))?;
    let mut tube_frames = Vec::with_capacity(tube_file.frames.len());
    for frame in tube_file.frames {
        let mut boxes = Vec::with_capacity(frame.len());
        for b in frame {
            boxes.push(match b {
                Some([x0, y0, x1, y1]) => Some(Box2D::new(x0, y0, x1, y1)?),
                None => None,
            });
        }
        tube_frames.push(boxes);
    }

    let seq = VideoSequence {
        id: id.to_string(),
        frames,
        gt_masks,
        flows_fwd,
        flows_bwd,
        tubes: BoxTube::new(tube_frames)?,
        categories: meta.categories,
    };
    seq.validate()?;
    ensure(seq.height() == meta.height && seq.width() == meta.width, || {
        format!("sequence {id}: png resolution disagrees with meta.json")
    })?;
    Ok(seq)
}

/// Write binary mask sets as indexed PNGs (`00000.png`, ...). Works for
/// ground truth and for predictions alike.
pub fn save_masks(masks: &[InstanceMaskSet], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, set) in masks.iter().enumerate() {
        let map = set.to_index_map()?;
        let (h, w) = map.dim();
        let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([map[[y as usize, x as usize]]])
        });
        let path = dir.join(frame_name(t));
        img.save(&path).map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(())
}

/// Read `frame_count` indexed mask PNGs with `instance_count` instances.
pub fn load_mask_dir(dir: &Path, frame_count: usize, instance_count: usize) -> Result<Vec<InstanceMaskSet>> {
    let mut out = Vec::with_capacity(frame_count);
    for t in 0..frame_count {
        let path = dir.join(frame_name(t));
        let img = image::open(&path).map_err(|e| Error::format(&path, e.to_string()))?.to_luma8();
        let (w, h) = img.dimensions();
        let mut map = Array2::<u8>::zeros((h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            map[[y as usize, x as usize]] = p.0[0];
        }
        out.push(
            InstanceMaskSet::from_index_map(&map, instance_count)
                .map_err(|e| Error::format(&path, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn save_split(split: &SplitFile, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&root.join("split.json"), split)
}

pub fn load_split(root: &Path) -> Result<SplitFile> {
    read_json(&root.join("split.json"))
}

fn frame_name(t: usize) -> String {
    format!("{t:05}.png")
}

fn flo_name(t: usize) -> String {
    format!("{t:05}.flo")
}

fn write_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    let (h, w) = (frame.height(), frame.width());
    let px = frame.pixels();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([
            quantize(px[[0, y, x]]),
            quantize(px[[1, y, x]]),
            quantize(px[[2, y, x]]),
        ])
    });
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

fn read_frame_png(path: &Path, index: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut pixels = Array3::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    Frame::new(pixels, index)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mask_pngs_round_trip() {
        let map = array![[0u8, 1, 2, 0], [1, 1, 0, 2]];
        let set = InstanceMaskSet::from_index_map(&map, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_masks(std::slice::from_ref(&set), dir.path()).unwrap();
        let back = load_mask_dir(dir.path(), 1, 2).unwrap();
        assert_eq!(back[0].to_index_map().unwrap(), map);
    }

    #[test]
    fn split_file_round_trips() {
        let split = SplitFile {
            train: vec!["a".into(), "b".into()],
            val_seen: vec!["c".into()],
            val_unseen: vec!["d".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        save_split(&split, dir.path()).unwrap();
        assert_eq!(load_split(dir.path()).unwrap(), split);
    }

    #[test]
    fn unknown_split_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("split.json"),
            r#"{"train":[],"val_seen":[],"val_unseen":[],"extra":1}"#,
        )
        .unwrap();
        assert!(load_split(dir.path()).is_err());
    }
}
