//! In-memory training set: decoded tiles and label maps, batched as
//! `[N, C, H, W]` tensors.

use ndarray::{Array3, ArrayD, Axis};

use crate::data::{DatasetManifest, ImageTile, LabelMap};

use super::TrainError;

/// One decoded manifest entry: image in `[-1, 1]`, mask as `{0, 1}` floats.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    /// `[3, R, R]`.
    pub image: Array3<f64>,
    /// `[1, R, R]`.
    pub mask: Array3<f64>,
}

/// A fully decoded dataset, every item at the same square resolution.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    items: Vec<TrainItem>,
    resolution: usize,
}

impl TrainingSet {
    /// Decodes every manifest entry, requiring an image and a label map
    /// per entry, both `resolution`-square.
    pub fn load(manifest: &DatasetManifest, resolution: usize) -> Result<Self, TrainError> {
        let mut items = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let img_path = e.image.as_ref().ok_or_else(|| TrainError::MissingInput {
                id: e.id.clone(),
                what: "image",
            })?;
            let map_path = e.labelmap.as_ref().ok_or_else(|| TrainError::MissingInput {
                id: e.id.clone(),
                what: "label map",
            })?;

            let tile = ImageTile::load_png(&manifest.resolve(img_path), &e.id, "train")?;
            if tile.size() as usize != resolution {
                return Err(TrainError::WrongResolution {
                    id: e.id.clone(),
                    got_w: tile.size(),
                    got_h: tile.size(),
                    want: resolution as u32,
                });
            }
            let map = LabelMap::load_png(&manifest.resolve(map_path))?;
            if map.width() as usize != resolution || map.height() as usize != resolution {
                return Err(TrainError::WrongResolution {
                    id: e.id.clone(),
                    got_w: map.width(),
                    got_h: map.height(),
                    want: resolution as u32,
                });
            }

            let mask = map.to_f64().insert_axis(Axis(0));
            items.push(TrainItem {
                id: e.id.clone(),
                image: tile.to_f64_norm(),
                mask,
            });
        }
        Ok(TrainingSet { items, resolution })
    }

    pub fn items(&self) -> &[TrainItem] {
        &self.items
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stacks the items at `indices` into `([N,3,R,R], [N,1,R,R])`.
    pub fn batch(&self, indices: &[usize]) -> (ArrayD<f64>, ArrayD<f64>) {
        let n = indices.len();
        let r = self.resolution;
        let mut images = ArrayD::zeros(vec![n, 3, r, r]);
        let mut masks = ArrayD::zeros(vec![n, 1, r, r]);
        for (slot, &ix) in indices.iter().enumerate() {
            let item = &self.items[ix];
            images
                .index_axis_mut(Axis(0), slot)
                .assign(&item.image.view().into_dyn());
            masks
                .index_axis_mut(Axis(0), slot)
                .assign(&item.mask.view().into_dyn());
        }
        (images, masks)
    }
}
