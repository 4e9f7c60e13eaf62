//! Knowledge-extraction toolkit: a content-addressed crawl archive, HTML
//! structure analysis into key/value XML, XPath-to-schema mapping, a parallel
//! bulk loader and coverage validation.

pub mod archive;
pub mod dictionary;
pub mod engine;
pub mod fetcher;
pub mod mapping;
pub mod pipeline;
pub mod structure;
pub mod text;
pub mod validation;
pub mod xmlutil;
pub mod xpath;
