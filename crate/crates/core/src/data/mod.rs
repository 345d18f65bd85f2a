//! Synthetic multi-level pyramids, aligned patch triples and PNG storage.

mod io;
mod synth;
mod triple;

pub use io::{load_patch_dir, load_png, save_dataset, save_png, save_triple, Manifest, MANIFEST};
pub use synth::{synth_pyramid, Pyramid, PyramidStyle};
pub use triple::{augment, rot90, sample_triple, split_indices, synth_dataset, PatchTriple, SynthSpec};
