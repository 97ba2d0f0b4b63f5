//! Progressive image-to-concepts-to-report generation.

pub mod backbone;
pub mod cli;
pub mod concepts;
pub mod config;
pub mod data;
pub mod decode;
pub mod metrics;
pub mod model;
pub mod par;
pub mod tensor;
pub mod train;
pub mod transformer;

// The guide's code samples double as doctests so the book can never drift
// from the library (`cargo test --doc` runs every ```rust block).
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(tensors, "../../../book/src/tensors.md");
    chapter!(attention, "../../../book/src/attention.md");
    chapter!(pipeline, "../../../book/src/pipeline.md");
    chapter!(decoding, "../../../book/src/decoding.md");
    chapter!(concepts, "../../../book/src/concepts.md");
    chapter!(metrics, "../../../book/src/metrics.md");
    chapter!(data_formats, "../../../book/src/data-formats.md");
    chapter!(cli, "../../../book/src/cli.md");
}
