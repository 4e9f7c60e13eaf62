//! Mapping coverage and conversion quality: XPath frequency statistics,
//! mapped/unmapped path sets, frequency-prioritized sampling, HTML conversion
//! reports and table occupation ratios.

mod conversion;
mod coverage;
mod occupation;
mod stats;

use thiserror::Error;

pub use conversion::{conversion_report, expected_keys, ConversionReport, REPORT_SEPARATOR};
pub use coverage::{coverage, sample_unmapped, CoverageReport};
pub use occupation::{occupation_ratios, OccupationReport, TableOccupation};
pub use stats::{collect_xpaths, collect_xpaths_from_files, PathStat, SkippedFile, XPathStats, DEFAULT_EXAMPLES};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("occupation ratio is undefined: the tables hold no rows")]
    UndefinedRatio,
    #[error("invalid stats file: {0}")]
    Stats(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
