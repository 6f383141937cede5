//! Exploration with density bonuses on learned latent representations.
//!
//! A multi-head reward regressor is trained on prior tasks of a 2-D pusher
//! environment; its shared trunk becomes a frozen encoder whose outputs a VAE
//! scores for novelty while TRPO explores new tasks.

pub mod diffnet;
pub mod env;
pub mod harness;
pub mod policy;
pub mod regressor;
pub mod rng;
pub mod vae;
