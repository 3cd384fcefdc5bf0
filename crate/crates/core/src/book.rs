//! Compiles and runs the code blocks of the guide in `book/` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/autodiff.md")]
mod autodiff {}

#[doc = include_str!("../../../book/src/corpus.md")]
mod corpus {}

#[doc = include_str!("../../../book/src/generator.md")]
mod generator {}

#[doc = include_str!("../../../book/src/discriminator.md")]
mod discriminator {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
