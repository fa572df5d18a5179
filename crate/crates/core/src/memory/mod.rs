//! HBM and DDR models: tiled weight layout, DMA streaming, the DDR symbol
//! space and the on-disk weight format.

pub mod file;
mod store;
mod tag;
mod tile;

pub use store::{ddr_cycles, dma_write_value_transposed, DdrStore, SymbolTable, WeightStore, DDR_BYTES_PER_CYCLE};
pub use tag::{DdrTag, HbmTag, CONSTANTS, LAYER_PARAMS, LAYER_WEIGHTS};
pub use tile::{tile_traversal, BeatCoord, TileGeom, TiledMatrix, HBM_BEAT_BITS};
