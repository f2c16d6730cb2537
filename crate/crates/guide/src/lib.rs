//! The chapters of the guide in `book/`, compiled as doc-tests so the
//! snippets keep working.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}

#[doc = include_str!("../../../book/src/spectral.md")]
pub mod spectral {}

#[doc = include_str!("../../../book/src/bathtub.md")]
pub mod bathtub {}

#[doc = include_str!("../../../book/src/optimizer.md")]
pub mod optimizer {}

#[doc = include_str!("../../../book/src/stability.md")]
pub mod stability {}

#[doc = include_str!("../../../book/src/control.md")]
pub mod control {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
