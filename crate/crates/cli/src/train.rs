use anyhow::{Context, Result};
use sdsat::model::checkpoint;
use sdsat::tokenizer::ByteTokenizer;
use sdsat::train::corpus::load_text_corpus;
use sdsat::train::{train, write_loss_csv, AdaptiveKind, Corpus, LossMode, LossRecord, TrainConfig};
use sdsat::{ModelConfig, ModelParams};

use crate::args::{AdaptiveArg, Format, ModeArg, TrainArgs};
use crate::io::{load_id_corpus, write_with};

fn model_config(a: &TrainArgs, corpus: &Corpus) -> ModelConfig {
    let vocab_size = match a.corpus_format {
        Format::Text => ByteTokenizer::new(a.n_adaptive).vocab_size(),
        Format::Ids => corpus.max_id() as usize + 1 + a.n_adaptive,
    };
    ModelConfig {
        vocab_size,
        n_adaptive: a.n_adaptive,
        n_layers: a.layers,
        n_heads: a.heads,
        d_model: a.d_model,
        max_seq: a.max_seq,
        seed: a.seed,
    }
}

fn train_config(a: &TrainArgs, mode: LossMode) -> TrainConfig {
    TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        seq_len: a.seq_len,
        lr: a.lr,
        weight_decay: a.weight_decay,
        grad_clip: a.grad_clip,
        mask_window: a.mask_window,
        mask_rate: a.mask_rate,
        w: a.w,
        mode,
        adaptive: match a.adaptive_tokens {
            AdaptiveArg::Identical => AdaptiveKind::Identical,
            AdaptiveArg::Diverse => AdaptiveKind::Diverse,
        },
        seed: a.seed,
        ..TrainConfig::default()
    }
}

fn run_one(
    init: &ModelParams,
    corpus: &Corpus,
    cfg: &TrainConfig,
    log_every: usize,
) -> Result<(ModelParams, Vec<LossRecord>)> {
    let mut params = init.clone();
    let records = train(&mut params, corpus, cfg, |r| {
        if log_every > 0 && (r.step + 1) % log_every == 0 {
            eprintln!(
                "[{}] step {:>5}  standard {:.4}  adaptive {}  lr {:.2e}",
                r.mode,
                r.step + 1,
                r.standard_loss,
                r.adaptive_loss.map_or("-".into(), |v| format!("{v:.4}")),
                r.lr
            );
        }
    })
    .with_context(|| format!("training in {} mode", cfg.mode))?;
    Ok((params, records))
}

pub fn run(a: &TrainArgs) -> Result<()> {
    let corpus = match a.corpus_format {
        Format::Text => load_text_corpus(&a.corpus, &ByteTokenizer::new(a.n_adaptive), a.infill, a.seed)?,
        Format::Ids => load_id_corpus(&a.corpus)?,
    };
    let init = ModelParams::init(model_config(a, &corpus))?;
    eprintln!(
        "corpus: {} documents, {} tokens; model: {} parameters",
        corpus.docs().len(),
        corpus.total_tokens(),
        init.num_params()
    );

    let modes: &[LossMode] = match a.mode {
        ModeArg::Basic => &[LossMode::Basic],
        ModeArg::Improved => &[LossMode::Improved],
        ModeArg::Both => &[LossMode::Basic, LossMode::Improved],
    };
    let mut all = Vec::new();
    let mut kept = init.clone();
    for &mode in modes {
        let (params, records) = run_one(&init, &corpus, &train_config(a, mode), a.log_every)?;
        all.extend(records);
        kept = params;
    }

    checkpoint::save(&kept, &a.checkpoint).with_context(|| format!("writing {}", a.checkpoint.display()))?;
    eprintln!(
        "checkpoint: {} (checksum {:016x})",
        a.checkpoint.display(),
        kept.checksum()
    );
    if let Some(path) = &a.out_csv {
        write_with(path, |w| write_loss_csv(&all, w))?;
        eprintln!("loss csv: {}", path.display());
    }
    Ok(())
}
