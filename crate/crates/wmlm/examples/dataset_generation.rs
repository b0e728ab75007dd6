//! Generate the eight synthetic scenarios, summarize their label statistics,
//! and round-trip one of them through the on-disk dataset format.

use wmlm::scenegen::{self, DATASET_FORMAT, HORIZON, OBS_LEN};

fn main() -> wmlm::Result<()> {
    let configs = scenegen::presets(7, scenegen::DESK_TRAVERSALS);
    println!("{} scenario presets, {} traversals each", configs.len(), configs[0].n_traversals);
    println!(
        "{:>3}  {:>7}  {:>7}  {:>8}  {:>7}  {:>7}  {:>7}",
        "id", "records", "windows", "blocked", "labels", "minbeam", "maxbeam"
    );

    let mut corpus = Vec::new();
    for cfg in &configs {
        let data = scenegen::gen_scenario(cfg)?;
        let windows = data.windows();
        let records: Vec<_> = data.traversals.iter().flatten().collect();
        let blocked = records.iter().filter(|r| r.blocked).count();
        let labels: std::collections::BTreeSet<usize> =
            records.iter().map(|r| r.beam_label).collect();
        println!(
            "{:>3}  {:>7}  {:>7}  {:>7.1}%  {:>7}  {:>7}  {:>7}",
            cfg.scenario_id,
            records.len(),
            windows.len(),
            100.0 * blocked as f64 / records.len() as f64,
            labels.len(),
            labels.iter().next().unwrap(),
            labels.iter().next_back().unwrap(),
        );
        corpus.push(data);
    }

    // Every window pairs OBS_LEN observed steps with HORIZON future steps.
    let w = &corpus[0].windows()[0];
    assert_eq!((w.obs.len(), w.future.len()), (OBS_LEN, HORIZON));
    println!(
        "window shape: {} observed + {} future records, label sequence {:?}",
        OBS_LEN,
        HORIZON,
        w.future.iter().map(|r| r.beam_label).collect::<Vec<_>>()
    );

    let dir = std::env::temp_dir().join("wmlm_dataset_example");
    std::fs::create_dir_all(&dir)?;
    let paths = scenegen::write_corpus(&corpus, &dir)?;
    let back = scenegen::read_corpus(&dir)?;
    assert_eq!(back, corpus);
    println!(
        "wrote {} files ({}) to {}; corpus round-trips exactly",
        paths.len(),
        DATASET_FORMAT,
        dir.display()
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
