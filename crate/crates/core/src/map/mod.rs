//! Global Gaussian map: a 2D voxel grid over the ground plane whose cells
//! hold Gaussians, plus a KD-tree over occupied cell centers for range
//! queries around a camera.

mod gaussian;
pub mod io;
pub mod kdtree;

use std::collections::BTreeMap;
use std::sync::OnceLock;

pub use gaussian::{logit, sigmoid, Gaussian3D, PARAM_COUNT};
pub use io::{load, read_map, save, write_map};
use kdtree::KdTree2;

use crate::error::{Error, Result};
use crate::geom::Pose;

pub const DEFAULT_VOXEL_SIZE: f64 = 1.0;

/// Ground-plane cell index. Ordered by its packed 64-bit ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelKey {
    pub ix: i32,
    pub iy: i32,
}

impl VoxelKey {
    pub fn new(ix: i32, iy: i32) -> Self {
        VoxelKey { ix, iy }
    }

    pub fn id(self) -> u64 {
        ((self.ix as u32 as u64) << 32) | (self.iy as u32 as u64)
    }

    pub fn from_id(id: u64) -> Self {
        VoxelKey {
            ix: (id >> 32) as u32 as i32,
            iy: id as u32 as i32,
        }
    }

    pub fn center(self, voxel_size: f64) -> [f64; 2] {
        [
            (self.ix as f64 + 0.5) * voxel_size,
            (self.iy as f64 + 0.5) * voxel_size,
        ]
    }
}

impl Ord for VoxelKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.id().cmp(&other.id())
    }
}

impl PartialOrd for VoxelKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn cell_index(v: f64, voxel_size: f64) -> Result<i32> {
    let f = (v / voxel_size).floor();
    if !f.is_finite() || f < i32::MIN as f64 || f > i32::MAX as f64 {
        return Err(Error::IndexOutOfRange { coord: v });
    }
    Ok(f as i32)
}

/// Cell containing ground-plane point `(x, y)`.
pub fn voxel_key(x: f64, y: f64, voxel_size: f64) -> Result<VoxelKey> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::InvalidInput("voxel size must be positive".into()));
    }
    Ok(VoxelKey::new(
        cell_index(x, voxel_size)?,
        cell_index(y, voxel_size)?,
    ))
}

/// Where a submap Gaussian came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceRef {
    pub key: VoxelKey,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub gaussians: Vec<Gaussian3D>,
    pub sources: Vec<SourceRef>,
    /// Cells the submap was cut from, ascending.
    pub keys: Vec<VoxelKey>,
}

#[derive(Debug, Clone)]
pub struct GaussianMap {
    voxel_size: f64,
    cells: BTreeMap<VoxelKey, Vec<Gaussian3D>>,
    index: OnceLock<KdTree2<VoxelKey>>,
}

impl PartialEq for GaussianMap {
    fn eq(&self, other: &Self) -> bool {
        self.voxel_size.to_bits() == other.voxel_size.to_bits() && self.cells == other.cells
    }
}

impl Default for GaussianMap {
    fn default() -> Self {
        GaussianMap {
            voxel_size: DEFAULT_VOXEL_SIZE,
            cells: BTreeMap::new(),
            index: OnceLock::new(),
        }
    }
}

impl GaussianMap {
    pub fn new(voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::InvalidInput("voxel size must be positive".into()));
        }
        Ok(GaussianMap {
            voxel_size,
            ..Default::default()
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn gaussian_count(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelKey, &Vec<Gaussian3D>)> {
        self.cells.iter()
    }

    pub fn cell(&self, key: VoxelKey) -> Option<&[Gaussian3D]> {
        self.cells.get(&key).map(Vec::as_slice)
    }

    /// All Gaussians in cell order.
    pub fn all_gaussians(&self) -> Vec<Gaussian3D> {
        self.cells.values().flatten().copied().collect()
    }

    fn key_of(&self, g: &Gaussian3D) -> Result<VoxelKey> {
        voxel_key(g.mu[0], g.mu[1], self.voxel_size)
    }

    /// Appends each Gaussian to the cell containing its center. Parameters
    /// are rounded to the single-precision storage format on the way in.
    pub fn insert(&mut self, gaussians: impl IntoIterator<Item = Gaussian3D>) -> Result<()> {
        let mut staged = Vec::new();
        for g in gaussians {
            g.validate()?;
            let g = g.quantized();
            staged.push((self.key_of(&g)?, g));
        }
        let before = self.cells.len();
        for (key, g) in staged {
            self.cells.entry(key).or_default().push(g);
        }
        if self.cells.len() != before {
            self.index = OnceLock::new();
        }
        Ok(())
    }

    /// Inserts a whole cell read from storage; the caller guarantees
    /// the values are already single-precision and inside the cell.
    pub(crate) fn insert_cell_raw(&mut self, key: VoxelKey, gaussians: Vec<Gaussian3D>) {
        self.cells.insert(key, gaussians);
        self.index = OnceLock::new();
    }

    fn kdtree(&self) -> &KdTree2<VoxelKey> {
        self.index.get_or_init(|| {
            KdTree2::build(
                self.cells
                    .keys()
                    .map(|k| (k.center(self.voxel_size), *k))
                    .collect(),
            )
        })
    }

    /// Forces the KD-tree to be built now.
    pub fn rebuild_index(&mut self) {
        self.index = OnceLock::new();
        self.kdtree();
    }

    /// Occupied cells whose center lies within `radius` of `center`,
    /// ascending by key.
    pub fn query_radius(&self, center: [f64; 2], radius: f64) -> Result<Vec<VoxelKey>> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidInput("radius must be non-negative".into()));
        }
        let mut keys = self.kdtree().within_radius(center, radius);
        keys.sort();
        Ok(keys)
    }

    /// Gaussians of every cell within `radius` of the camera position.
    pub fn extract_submap(&self, pose: &Pose, radius: f64) -> Result<Submap> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput("submap radius must be positive".into()));
        }
        let c = pose.camera_center();
        self.extract_around([c.x, c.y], radius)
    }

    pub fn extract_around(&self, center: [f64; 2], radius: f64) -> Result<Submap> {
        let keys = self.query_radius(center, radius)?;
        let mut gaussians = Vec::new();
        let mut sources = Vec::new();
        for key in &keys {
            for (index, g) in self.cells[key].iter().enumerate() {
                gaussians.push(*g);
                sources.push(SourceRef { key: *key, index });
            }
        }
        if gaussians.is_empty() {
            return Err(Error::EmptySubmap);
        }
        Ok(Submap {
            gaussians,
            sources,
            keys,
        })
    }

    /// Replaces the contents of `keys` by `gaussians`, re-binning each one
    /// by its (possibly moved) center.
    pub fn replace_cells(&mut self, keys: &[VoxelKey], gaussians: Vec<Gaussian3D>) -> Result<()> {
        for g in &gaussians {
            g.validate()?;
            self.key_of(&g.quantized())?;
        }
        let before: Vec<VoxelKey> = self.cells.keys().copied().collect();
        for k in keys {
            self.cells.remove(k);
        }
        for g in gaussians {
            let g = g.quantized();
            let key = self.key_of(&g)?;
            self.cells.entry(key).or_default().push(g);
        }
        if !self.cells.keys().copied().eq(before.into_iter()) {
            self.index = OnceLock::new();
        }
        Ok(())
    }
}
