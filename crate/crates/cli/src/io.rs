use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sdsat::tokenizer::ByteTokenizer;
use sdsat::train::Corpus;
use sdsat::{ModelParams, TokenId};

use crate::args::Format;

pub fn parse_ids(line: &str) -> Result<Vec<TokenId>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<TokenId>()
                .with_context(|| format!("bad token id {t:?}"))
        })
        .collect()
}

/// Prompts, one per non-empty line. Ids must be ordinary (non-adaptive) tokens.
pub fn load_prompts(path: &Path, format: Format, params: &ModelParams) -> Result<Vec<Vec<TokenId>>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading prompts {}", path.display()))?;
    let cfg = params.config();
    let tok = ByteTokenizer::new(cfg.n_adaptive);
    let mut prompts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ids = match format {
            Format::Text => tok.encode(line),
            Format::Ids => parse_ids(line)?,
        };
        if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.first_adaptive()) {
            bail!(
                "{} line {}: token {bad} is not an ordinary token of this model (limit {})",
                path.display(),
                i + 1,
                cfg.first_adaptive()
            );
        }
        prompts.push(ids);
    }
    if prompts.is_empty() {
        bail!("{} holds no prompts", path.display());
    }
    Ok(prompts)
}

pub fn load_id_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading corpus {}", path.display()))?;
    let docs = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_ids)
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(docs)?)
}

pub fn render(ids: &[TokenId], format: Format, n_adaptive: usize) -> String {
    match format {
        Format::Text => ByteTokenizer::new(n_adaptive).decode(ids),
        Format::Ids => ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "),
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

/// `out.csv` -> `out.<suffix>.csv`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}

pub fn file_tag(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into())
}
