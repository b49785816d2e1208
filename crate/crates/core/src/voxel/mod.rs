//! Voxel data: meshes, voxelization, grid and image file formats, dataset
//! manifests.

mod binvox;
mod dataset;
mod grid;
mod image;
mod mesh;
mod obj;
pub mod synth;
mod voxelize;
mod vslv;

pub use self::image::{
    load_image_file, prepare_image, prepare_image_sized, read_image_sample, write_image_sample,
    CropBox, ImageSample, IMAGE_SIDE, VSLI_MAGIC,
};
pub use binvox::{read_binvox, write_binvox};
pub use dataset::{
    load_dataset, load_sample, DatasetManifest, ManifestEntry, Order, Sample, SampleData, Split,
};
pub use grid::VoxelGrid;
pub use mesh::{parse_off, write_off, TriangleMesh};
pub use obj::{grid_to_mesh, write_obj};
pub use voxelize::{
    fill_interior, normalize_to_grid, rasterize_surface, triangle_box_overlap, voxelize,
    voxelize_surface,
};
pub use vslv::{load_voxel, payload_len, read_voxel, save_voxel, write_voxel};

pub const GRID_SIDE: usize = 30;
