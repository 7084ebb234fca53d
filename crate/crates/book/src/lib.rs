//! The guide in `book/`, compiled so that its code listings run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/network-model.md")]
pub mod network_model {}

#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}

#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}

#[doc = include_str!("../../../book/src/surrogate.md")]
pub mod surrogate {}

#[doc = include_str!("../../../book/src/optimizer.md")]
pub mod optimizer {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/acceptance.md")]
pub mod acceptance {}
