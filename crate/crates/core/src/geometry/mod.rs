//! Object-domain plumbing: coordinate grids, images, phantoms and raster files.

mod grid;
mod phantom;
mod raster;

pub(crate) use grid::pixel_center as grid_center;
pub use grid::{make_grid, CoordinateGrid, Image};
pub use phantom::{render_phantom, PhantomPreset, PhantomSpec, Primitive};
pub use raster::{load_image, save_image, save_png, IMAGE_MAGIC};

pub(crate) use raster::{decode_raster, encode_raster, read_raster, write_raster};
