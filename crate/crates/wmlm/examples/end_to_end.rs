//! The whole pipeline in one pass at reduced scale: generate the corpus,
//! align encoders, adapt the transformer, train the GRU reference, and score
//! both zero-shot. Artifacts land in a temp directory like the CLI's would.

use wmlm::config::RunConfig;
use wmlm::eval::{self, SplitSpec};
use wmlm::scenegen;
use wmlm::train;

fn main() -> wmlm::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.traversals = 1;
    cfg.align.epochs = 6;
    cfg.train.epochs = 4;
    cfg.train.patience = 0;
    let seed = cfg.seed;

    let dir = std::env::temp_dir().join("wmlm_end_to_end");
    std::fs::create_dir_all(&dir)?;

    println!("[1/5] generating {} scenarios", scenegen::presets(seed, 1).len());
    let corpus: Vec<_> = scenegen::presets(seed, cfg.data.traversals)
        .iter()
        .map(scenegen::gen_scenario)
        .collect::<wmlm::Result<_>>()?;
    let files = scenegen::write_corpus(&corpus, &dir)?;
    println!("      {} dataset files under {}", files.len(), dir.display());

    println!("[2/5] stage 1 contrastive alignment (anchor = {})", cfg.align.anchor.tag());
    let stage1 = train::run_stage1(&cfg, &corpus, seed)?;
    stage1.checkpoint.save(&dir.join("stage1.ckpt"))?;
    let s1 = stage1.history.last().expect("align epochs > 0");
    println!("      loss {:.4} retrieval {:.4}", s1.loss, s1.retrieval);

    println!("[3/5] stage 2 multi-task adaptation (encoders frozen)");
    let stage2 = train::run_stage2(&cfg, &corpus, Some(&stage1.checkpoint), seed)?;
    stage2.checkpoint.save(&dir.join("stage2.ckpt"))?;
    let last = stage2.history.last().expect("train epochs > 0");
    println!(
        "      {} epochs, final {} loss {:.4} top1 {:.3}/{:.3}/{:.3}",
        stage2.epochs_run, last.split, last.loss, last.top1[0], last.top1[1], last.top1[2]
    );

    println!("[4/5] gru baseline");
    let rnn = train::train_rnn_baseline(&cfg, &corpus, seed)?;
    rnn.checkpoint.save(&dir.join("rnn.ckpt"))?;

    println!("[5/5] zero-shot evaluation on the held-out scenarios");
    let spec = SplitSpec::from_eval_config(&cfg.eval)?;
    let big = eval::evaluate(&stage2.checkpoint, &corpus, &spec)?;
    let small = eval::evaluate(&rnn.checkpoint, &corpus, &spec)?;
    big.save(&dir.join("report_wmlm.json"))?;
    small.save(&dir.join("report_rnn.json"))?;
    println!(
        "{:>6}  {:>21}  {:>8}  {:>11}",
        "model", "top1 (3 steps)", "nmse", "persistence"
    );
    for r in [&big, &small] {
        println!(
            "{:>6}  {:>6.3} {:>6.3} {:>6.3}  {:>8}  {:>11.3}",
            r.model,
            r.top1[0],
            r.top1[1],
            r.top1[2],
            r.nmse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.persistence_top1[2]
        );
    }
    println!("artifacts kept in {}", dir.display());
    Ok(())
}
