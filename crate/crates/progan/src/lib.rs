//! Progressively grown Wasserstein GAN for small RGB images.
//!
//! The crate trains a generator/critic pair that starts at 4x4 resolution
//! and doubles it in four synchronized steps up to 64x64, blending each new
//! block in smoothly. Training uses the Wasserstein objective with a gradient
//! penalty, equalized learning-rate convolutions, pixelwise feature
//! normalization in the generator, and a minibatch standard-deviation channel
//! in the critic.
//!
//! Everything runs on a self-contained tensor engine with reverse-mode
//! automatic differentiation that supports differentiating through a backward
//! pass (required by the gradient penalty). Runs are deterministic for a
//! fixed seed, and checkpoints restore training bit-exactly.
//!
//! Start with the runnable programs in `examples/`, or use the `progan`
//! binary (`train`, `sample`, `verify`).
//!
//! ```
//! use progan::{Tape, Tensor};
//!
//! // record a computation, then differentiate it
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0])?, true)?;
//! let loss = x.mul(&x)?.sum_all()?;
//! let grads = loss.backward()?;
//! assert_eq!(grads.get_tensor(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
//!
//! // gradients are tape nodes too, so they can be differentiated again
//! let g = grads.get(&x).unwrap();
//! let grads2 = g.mul(&g)?.sum_all()?.backward()?;
//! assert_eq!(grads2.get_tensor(&x).unwrap().data(), &[8.0, 16.0, 24.0]);
//! # Ok::<(), progan::TensorError>(())
//! ```

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod grid;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod wgan;

pub use tensor::{Tape, Tensor, TensorError, Var};
