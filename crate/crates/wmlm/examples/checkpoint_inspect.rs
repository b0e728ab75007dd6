//! Write a checkpoint, reopen it, and walk the manifest. The format is one
//! JSON header line followed by a raw little-endian f32 payload, so foreign
//! tooling can read it with a line reader and a byte cast.

use wmlm::autodiff::optim::ParamSet;
use wmlm::autodiff::Tensor;
use wmlm::checkpoint::{params_digest, Checkpoint, StageTag};
use wmlm::config::RunConfig;

fn main() -> wmlm::Result<()> {
    let mut params = ParamSet::<f32>::default();
    params.insert("enc.beam.w1", Tensor::param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?)?;
    params.insert("head.fc.b", Tensor::param(&[3], vec![-0.5, 0.0, 0.5])?)?;

    let cfg = RunConfig::default();
    let ckpt = Checkpoint::from_params(StageTag::Stage1, &params, &cfg, 42, None)?;
    let dir = std::env::temp_dir().join("wmlm_ckpt_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("demo.ckpt");
    ckpt.save(&path)?;

    let bytes = std::fs::read(&path)?;
    let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    println!(
        "file: {} bytes, header {} + payload {}",
        bytes.len(),
        header_len,
        bytes.len() - header_len
    );

    let back = Checkpoint::load(&path)?;
    println!(
        "format {} stage {} seed {} config digest {}",
        back.header.format,
        back.header.stage,
        back.header.seed,
        &back.header.config_digest[..16]
    );
    for entry in &back.header.manifest {
        println!(
            "  {:<12} shape {:?} offset {} len {}",
            entry.name, entry.shape, entry.offset, entry.len
        );
    }
    let (shape, data) = back.tensor("head.fc.b").expect("in manifest");
    println!("head.fc.b {shape:?} = {data:?}");

    // Loading back into a live parameter set restores bit-identical values.
    let before = params_digest(&params);
    params.iter().for_each(|(_, t)| t.with_data_mut(|d| d.fill(0.0)));
    assert_ne!(params_digest(&params), before);
    back.load_into(&params)?;
    assert_eq!(params_digest(&params), before);
    println!("parameter digest after zero + reload matches original: {before}");

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
