//! Structured 4D tensors for dense sliding-window instance masks.
//!
//! Dense mask prediction emits one candidate mask per sliding-window
//! location, so the output of a model is naturally a `(V, U, H, W)` tensor:
//! `(H, W)` ranges over window positions and `(V, U)` over pixels inside each
//! window's mask. This crate treats that tensor as a first-class object with
//! explicit per-axis-pair units of length, and builds everything a small
//! dense-mask system needs on top of it:
//!
//! - [`tensor`]: unit-carrying tensors, feature maps, binary fixture dumps.
//! - [`transforms`]: the natural/aligned coordinate transforms, VU
//!   up/down-scaling, the fused unit-swapping kernel, and exact adjoints,
//!   checked against naive oracles.
//! - [`bipyramid`]: the constant-element-count mask pyramid and the
//!   feature-map conversion that feeds it.
//! - [`net`]: minimal differentiable layers, the five mask heads, the
//!   classification/box towers, and SGD.
//! - [`assign`]: sliding-window enumeration, mask-driven label assignment,
//!   and the training losses.
//! - [`infer`]: decoding dense predictions into instances, NMS, score
//!   calibration, and a simplified average-precision metric.
//! - [`synth`]: reproducible synthetic scenes, the toy training loop, and the
//!   ablation grid.
//!
//! See the `book/` directory for a guided tour; its code snippets compile and
//! run as doc-tests of this crate.

pub mod assign;
pub mod mask;
pub mod bench;
pub mod bipyramid;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod net;
pub mod rle;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};

// Book chapters double as doc-tests so the guide can never drift from the API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(ch01_tensors, "../../../book/src/tensors-and-units.md");
    chapter!(ch02_representations, "../../../book/src/representations.md");
    chapter!(ch03_swap, "../../../book/src/upscaling-and-swap.md");
    chapter!(ch04_bipyramid, "../../../book/src/bipyramid.md");
    chapter!(ch05_training, "../../../book/src/training.md");
    chapter!(ch06_inference, "../../../book/src/inference.md");
    chapter!(ch07_harness, "../../../book/src/synthetic-harness.md");
}
