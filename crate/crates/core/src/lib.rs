//! Layout-grounded video generation at desk scale.
//!
//! * [`dsl`]: dynamic scene layouts, their text grammar, validation and resampling
//! * [`prompting`]: the layout-generation prompt and chat message layout
//! * [`llm`]: chat-completions client with caching, replay and retries
//! * [`energy`]: top-k and center-of-mass attention energies and their gradients
//! * [`guidance`]: a softmax logit-field substrate driven by energy guidance
//! * [`benchmark`]: five-task prompt suite and rule-based layout verifier
//! * [`physics`]: gravity, bounce and perspective predicates over trajectories
//! * [`render`]: SVG and PGM output

pub mod dsl;
pub mod prompting;
pub mod energy;
pub mod gradcheck;
pub mod llm;
pub mod guidance;
pub mod benchmark;
pub mod physics;
pub mod render;
