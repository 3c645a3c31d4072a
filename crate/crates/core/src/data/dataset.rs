use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::npy::{read_npy, write_npy, NpyArray, NpyData};
use crate::error::{invalid, Error, Result};
use crate::groups::FieldType;
use crate::scalar::Scalar;
use crate::tensor::GeometricTensor;

pub const IMAGE_SIZE: usize = 28;
/// Bytes per image (28 x 28 x 3, channel-last).
pub const IMAGE_LEN: usize = IMAGE_SIZE * IMAGE_SIZE * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(invalid(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub classes: usize,
    pub name: String,
}

/// Images are `N x 28 x 28 x 3` bytes, channel-last, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Vec<u8>, labels: Vec<usize>, split: Split, classes: usize, name: impl Into<String>) -> Result<Self> {
        if images.len() != labels.len() * IMAGE_LEN {
            return Err(Error::Validation(format!(
                "{} image bytes for {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Validation(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { images, labels, split, classes, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    /// Images and labels of `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Vec<u8>, Vec<usize>) {
        let mut images = Vec::with_capacity(indices.len() * IMAGE_LEN);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` samples (all of them when `n >= len`).
    pub fn truncate(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n * IMAGE_LEN].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            classes: self.classes,
            name: self.name.clone(),
        }
    }
}

fn read_meta(dir: &Path) -> Result<Option<DatasetMeta>> {
    let p = dir.join("meta.json");
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}

fn labels_from(arr: NpyArray, n: usize) -> Result<Vec<usize>> {
    let ok_shape = arr.shape == [n] || arr.shape == [n, 1];
    if !ok_shape {
        return Err(Error::Validation(format!("labels of shape {:?} for {n} images", arr.shape)));
    }
    match arr.data {
        NpyData::U8(v) => Ok(v.into_iter().map(usize::from).collect()),
        NpyData::I64(v) => v
            .into_iter()
            .map(|l| usize::try_from(l).map_err(|_| Error::Validation(format!("negative label {l}"))))
            .collect(),
        NpyData::F32(_) => Err(Error::UnsupportedDtype("<f4 labels".into())),
    }
}

/// Load `{split}_images.npy` / `{split}_labels.npy` from `dir`.
///
/// The class count comes from `meta.json` when present, otherwise from
/// `max(label) + 1`; `expected` (e.g. from the run config) must agree.
pub fn load_dataset(dir: &Path, split: Split, expected: Option<usize>) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let images = read_npy(&dir.join(format!("{split}_images.npy")))?;
    let labels = read_npy(&dir.join(format!("{split}_labels.npy")))?;
    let n = match images.shape.as_slice() {
        [n, IMAGE_SIZE, IMAGE_SIZE, 3] => *n,
        s => return Err(Error::Validation(format!("images must be N x 28 x 28 x 3, got {s:?}"))),
    };
    let images = match images.data {
        NpyData::U8(v) => v,
        other => return Err(Error::UnsupportedDtype(format!("{} images", other.descr()))),
    };
    let labels = labels_from(labels, n)?;
    let meta = read_meta(dir)?;
    let inferred = labels.iter().max().map_or(0, |m| m + 1);
    let classes = meta.as_ref().map_or(inferred, |m| m.classes);
    if inferred > classes {
        return Err(Error::Validation(format!("label {} out of range for {classes} classes", inferred - 1)));
    }
    if let Some(e) = expected {
        if e != classes {
            return Err(Error::Validation(format!("dataset has {classes} classes, config expects {e}")));
        }
    }
    let name = meta.map(|m| m.name).unwrap_or_else(|| {
        dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    Dataset::new(images, labels, split, classes, name)
}

/// Write one split (and `meta.json`) in the on-disk layout.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = data.len();
    let images = NpyArray::new(vec![n, IMAGE_SIZE, IMAGE_SIZE, 3], NpyData::U8(data.images.clone()))?;
    let labels: Vec<u8> = data
        .labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| invalid("labels above 255 need <i8 storage")))
        .collect::<Result<_>>()?;
    let labels = NpyArray::new(vec![n, 1], NpyData::U8(labels))?;
    write_npy(&dir.join(format!("{}_images.npy", data.split)), &images)?;
    write_npy(&dir.join(format!("{}_labels.npy", data.split)), &labels)?;
    let meta = DatasetMeta { classes: data.classes, name: data.name.clone() };
    let tmp = dir.join("meta.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&meta)?)?;
    fs::rename(tmp, dir.join("meta.json"))?;
    Ok(())
}

/// Channel-last bytes to a `B x 3 x 28 x 28` tensor scaled to `[0, 1]`.
pub fn normalize<T: Scalar>(images: &[u8], ftype: FieldType) -> Result<GeometricTensor<T>> {
    if images.len() % IMAGE_LEN != 0 {
        return Err(invalid(format!("{} bytes is not a whole number of images", images.len())));
    }
    let b = images.len() / IMAGE_LEN;
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let scale = T::from_f64_lossy(255.0);
    let mut data = vec![T::zero(); images.len()];
    for (i, img) in images.chunks_exact(IMAGE_LEN).enumerate() {
        let out = &mut data[i * IMAGE_LEN..(i + 1) * IMAGE_LEN];
        for (p, px) in img.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = T::from_u8(px[c]).expect("u8") / scale;
            }
        }
    }
    GeometricTensor::new(data, [b, 3, IMAGE_SIZE, IMAGE_SIZE], ftype)
}
