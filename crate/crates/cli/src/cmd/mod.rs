pub mod analysis;
pub mod corpus;
pub mod generate;
pub mod items;
pub mod study;

use std::path::Path;

/// File stem as an id, falling back to the whole path.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Non-blank, non-comment lines of a word list.
pub fn read_word_list(reader: impl std::io::BufRead) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let w = line.trim();
        if !w.is_empty() && !w.starts_with('#') {
            out.push(w.to_string());
        }
    }
    Ok(out)
}
