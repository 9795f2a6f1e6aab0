//! Regenerates the shipped synthetic setup.
//!
//! ```text
//! cargo run -p rerank-core --example make_synthetic -- data
//! ```

use std::path::PathBuf;

use rerank_core::synthetic::{SyntheticConfig, SyntheticSetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let setup = SyntheticSetup::generate(&SyntheticConfig::default())?;
    setup.write_to_dir(&dir)?;
    eprintln!(
        "wrote {} paragraphs ({:.2}% insult sentences) to {}",
        setup.corpus.len(),
        100.0 * setup.toxic_sentence_fraction,
        dir.display()
    );
    Ok(())
}
