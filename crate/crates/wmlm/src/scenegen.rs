//! Synthetic vehicle-to-infrastructure scenario generation.
//!
//! A vehicle drives a straight road past a base station at the origin; the
//! array's broadside points at the road. Every timestep yields one
//! multimodal record: true position, noisy GPS, a 4-dim vision proxy
//! (image-plane coordinate, apparent size, and their deltas), the 64-beam
//! receive power sweep, and the ground-truth best beam.
//!
//! Geometry: road coordinates are (along-road x, offset y); the channel is
//! evaluated with the axes swapped so the array broadside (+x in `phy`)
//! faces the road and the bearing stays inside (-π/2, π/2) for the whole
//! traversal.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::digest::config_digest;
use crate::error::{Error, Result};
use crate::phy::{beam_powers, best_beam, build_codebook, los_channel, N_BEAMS, N_ELEMENTS};
use crate::rng;

/// Observation length of a sample window.
pub const OBS_LEN: usize = 5;

/// Prediction horizon of a sample window.
pub const HORIZON: usize = 3;

/// Amplitude reference: |α| = 1 at 10 m.
const REF_GAIN_M: f64 = 10.0;

/// Apparent-size reference: s = 1 at 10 m.
const VIS_SIZE_REF_M: f64 = 10.0;

/// Blockage events last this many consecutive steps (one full window).
const BLOCKAGE_LEN: usize = OBS_LEN + HORIZON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: u8,
    pub road_offset_m: f64,
    pub speed_mps: f64,
    pub x_range_m: (f64, f64),
    pub dt_s: f64,
    pub gps_noise_std_m: f64,
    pub vis_noise_std: f64,
    pub blockage_prob: f64,
    pub blockage_atten_db: f64,
    pub n_traversals: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.road_offset_m <= 0.0 {
            return Err(Error::Config("road_offset_m must be positive".into()));
        }
        if self.speed_mps <= 0.0 || self.dt_s <= 0.0 {
            return Err(Error::Config("speed_mps and dt_s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.blockage_prob) {
            return Err(Error::Config("blockage_prob must lie in [0, 1]".into()));
        }
        if self.gps_noise_std_m < 0.0 || self.vis_noise_std < 0.0 {
            return Err(Error::Config("noise stds must be nonnegative".into()));
        }
        if self.n_traversals == 0 {
            return Err(Error::Config("n_traversals must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultimodalRecord {
    pub t: usize,
    pub pos_true: [f64; 2],
    pub gps: [f64; 2],
    pub vis: [f64; 4],
    pub powers: Vec<f64>,
    pub beam_label: usize,
    pub blocked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub obs: Vec<MultimodalRecord>,
    pub future: Vec<MultimodalRecord>,
    pub scenario_id: u8,
}

/// One generated scenario: the config it came from plus the rendered record
/// sequence of every traversal (and how many positions were skipped for
/// falling outside the array's field of view).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub config: ScenarioConfig,
    pub traversals: Vec<Vec<MultimodalRecord>>,
    pub skipped: usize,
}

impl ScenarioData {
    /// All sliding windows of every traversal, in order.
    pub fn windows(&self) -> Vec<SampleWindow> {
        self.traversals
            .iter()
            .flat_map(|t| window_dataset(t, self.config.scenario_id))
            .collect()
    }

    pub fn record_count(&self) -> usize {
        self.traversals.iter().map(Vec::len).sum()
    }
}

/// The eight built-in presets. They differ in road offset, speed, noise
/// levels and blockage statistics; numbering matches the S4/S6 split
/// convention (S4 trains on 1..4, S6 on 1..6).
pub fn presets(root_seed: u64, n_traversals: usize) -> Vec<ScenarioConfig> {
    // (offset m, speed m/s, x range, dt s, gps σ m, vis σ, p_block, atten dB)
    let rows: [(f64, f64, (f64, f64), f64, f64, f64, f64, f64); 8] = [
        (10.0, 10.0, (-50.0, 50.0), 0.1, 0.5, 0.02, 0.10, 10.0),
        (20.0, 10.0, (-50.0, 50.0), 0.1, 1.0, 0.03, 0.15, 12.0),
        (15.0, 12.0, (-60.0, 60.0), 0.1, 0.8, 0.02, 0.20, 8.0),
        (12.0, 8.0, (-32.0, 32.0), 0.1, 1.5, 0.04, 0.10, 10.0),
        (25.0, 10.0, (-50.0, 50.0), 0.1, 1.2, 0.03, 0.00, 0.0),
        (18.0, 5.0, (-58.0, 58.0), 0.2, 0.6, 0.01, 0.25, 15.0),
        (8.0, 13.0, (-50.7, 50.7), 0.1, 2.0, 0.05, 0.15, 6.0),
        (30.0, 10.0, (-50.0, 50.0), 0.1, 1.0, 0.02, 0.30, 9.0),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, &(offset, speed, range, dt, gps, vis, block, atten))| ScenarioConfig {
            scenario_id: (i + 1) as u8,
            road_offset_m: offset,
            speed_mps: speed,
            x_range_m: range,
            dt_s: dt,
            gps_noise_std_m: gps,
            vis_noise_std: vis,
            blockage_prob: block,
            blockage_atten_db: atten,
            n_traversals,
            seed: rng::child_seed_indexed(root_seed, "scenario", (i + 1) as u64),
        })
        .collect()
}

/// Traversal count for the desk-scale default corpus (~2,200 windows).
pub const DESK_TRAVERSALS: usize = 3;

/// Traversal count for the full-size corpus (~14,000 windows).
pub const FULL_TRAVERSALS: usize = 19;

/// Straight-line constant-speed positions (x(t), road_offset). The line
/// itself is noise-free; traversal variation enters through per-traversal
/// noise streams during rendering.
pub fn gen_trajectory(cfg: &ScenarioConfig, _traversal_index: usize) -> Result<Vec<[f64; 2]>> {
    cfg.validate()?;
    let (x0, x1) = cfg.x_range_m;
    if x1 <= x0 {
        return Err(Error::Config(format!("empty x_range ({x0}, {x1})")));
    }
    let step = cfg.speed_mps * cfg.dt_s;
    // tolerate representation error in range/step before truncating
    let n = ((x1 - x0) / step + 1e-6).floor() as usize + 1;
    Ok((0..n).map(|i| [x0 + i as f64 * step, cfg.road_offset_m]).collect())
}

/// Per-step blockage flags: events start with probability
/// `blockage_prob / BLOCKAGE_LEN` at each unblocked step and then last
/// `BLOCKAGE_LEN` consecutive steps, so roughly a `blockage_prob` fraction
/// of windows overlaps an event.
fn blockage_mask(rng: &mut ChaCha8Rng, len: usize, prob: f64) -> Vec<bool> {
    use rand::RngExt;
    let start_p = prob / BLOCKAGE_LEN as f64;
    let mut mask = vec![false; len];
    let mut remaining = 0usize;
    for flag in mask.iter_mut() {
        if remaining == 0 && rng.random::<f64>() < start_p {
            remaining = BLOCKAGE_LEN;
        }
        if remaining > 0 {
            *flag = true;
            remaining -= 1;
        }
    }
    mask
}

struct Renderer {
    codebook: crate::phy::BeamCodebook,
    gps_noise: Normal<f64>,
    vis_noise: Normal<f64>,
}

impl Renderer {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        Ok(Renderer {
            codebook: build_codebook(N_ELEMENTS, N_BEAMS)?,
            gps_noise: Normal::new(0.0, cfg.gps_noise_std_m)
                .map_err(|e| Error::Config(format!("gps noise: {e}")))?,
            vis_noise: Normal::new(0.0, cfg.vis_noise_std)
                .map_err(|e| Error::Config(format!("vis noise: {e}")))?,
        })
    }

    /// Render one record. `prev_vis` carries the previous step's noisy
    /// (u, s) pair for the delta channels; `None` at traversal start.
    fn render_record(
        &self,
        cfg: &ScenarioConfig,
        t: usize,
        pos: [f64; 2],
        noise: &mut ChaCha8Rng,
        blocked: bool,
        prev_vis: Option<(f64, f64)>,
    ) -> Result<MultimodalRecord> {
        // road frame (along, offset) -> array frame (offset, along)
        let channel = los_channel([pos[1], pos[0]], [0.0, 0.0], REF_GAIN_M, N_ELEMENTS)?;
        let mut powers = beam_powers(&self.codebook, &channel)?;
        if blocked {
            let atten = 10f64.powf(-cfg.blockage_atten_db / 10.0);
            for p in powers.iter_mut() {
                *p *= atten;
            }
        }
        let beam_label = best_beam(&powers)?;

        let gps = [
            pos[0] + self.gps_noise.sample(noise),
            pos[1] + self.gps_noise.sample(noise),
        ];

        let d = (pos[0] * pos[0] + pos[1] * pos[1]).sqrt();
        let u = (channel.theta.sin() + self.vis_noise.sample(noise)).clamp(-1.0, 1.0);
        let s = VIS_SIZE_REF_M / d + self.vis_noise.sample(noise);
        let (du, ds) = match prev_vis {
            Some((pu, ps)) => (u - pu, s - ps),
            None => (0.0, 0.0),
        };

        Ok(MultimodalRecord { t, pos_true: pos, gps, vis: [u, s, du, ds], powers, beam_label, blocked })
    }
}

/// Generate every traversal of a scenario. Traversals use independent
/// derived RNG streams, so their noise realizations do not depend on
/// generation order.
pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<ScenarioData> {
    cfg.validate()?;
    let renderer = Renderer::new(cfg)?;
    let mut traversals = Vec::with_capacity(cfg.n_traversals);
    let mut skipped = 0usize;
    for tv in 0..cfg.n_traversals {
        let positions = gen_trajectory(cfg, tv)?;
        let troot = rng::child_seed_indexed(cfg.seed, "traversal", tv as u64);
        let mut noise = rng::stream(troot, "noise");
        let mut block_rng = rng::stream(troot, "blockage");
        let mask = blockage_mask(&mut block_rng, positions.len(), cfg.blockage_prob);
        let mut records = Vec::with_capacity(positions.len());
        let mut prev_vis = None;
        for (t, (&pos, &blocked)) in positions.iter().zip(&mask).enumerate() {
            match renderer.render_record(cfg, t, pos, &mut noise, blocked, prev_vis) {
                Ok(rec) => {
                    prev_vis = Some((rec.vis[0], rec.vis[1]));
                    records.push(rec);
                }
                Err(Error::Domain(_)) => {
                    // position outside the array's field of view
                    skipped += 1;
                    prev_vis = None;
                }
                Err(e) => return Err(e),
            }
        }
        traversals.push(records);
    }
    Ok(ScenarioData { config: cfg.clone(), traversals, skipped })
}

/// All length-8 sliding windows (stride 1) of one traversal's records.
/// Windows never span a timestep gap.
pub fn window_dataset(records: &[MultimodalRecord], scenario_id: u8) -> Vec<SampleWindow> {
    let total = OBS_LEN + HORIZON;
    if records.len() < total {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(records.len() - total + 1);
    'outer: for start in 0..=records.len() - total {
        let chunk = &records[start..start + total];
        for pair in chunk.windows(2) {
            if pair[1].t != pair[0].t + 1 {
                continue 'outer;
            }
        }
        out.push(SampleWindow {
            obs: chunk[..OBS_LEN].to_vec(),
            future: chunk[OBS_LEN..].to_vec(),
            scenario_id,
        });
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    scenario_id: u8,
    config: ScenarioConfig,
    seed: u64,
    config_digest: String,
    tool_version: String,
}

/// On-disk format tag for dataset files.
pub const DATASET_FORMAT: &str = "wmlm-ds-1";

/// Write one scenario to a JSON-lines file: a header line, then one record
/// per line. Traversal boundaries are recoverable from resets of `t`.
pub fn write_dataset(data: &ScenarioData, path: &Path) -> Result<()> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.to_string(),
        scenario_id: data.config.scenario_id,
        config: data.config.clone(),
        seed: data.config.seed,
        config_digest: config_digest(&data.config)?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mut buf = String::new();
    writeln_json(&mut buf, &header)?;
    for traversal in &data.traversals {
        for record in traversal {
            writeln_json(&mut buf, record)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(buf.as_bytes())?;
    Ok(())
}

fn writeln_json<T: Serialize>(buf: &mut String, value: &T) -> Result<()> {
    let line = serde_json::to_string(value)
        .map_err(|e| Error::Data(format!("serialization failed: {e}")))?;
    let _ = writeln!(buf, "{line}");
    Ok(())
}

/// Read a scenario file back. Validates the format tag, re-checks label
/// soundness on every record, and rebuilds traversal boundaries from
/// timestep resets. Parse failures name the offending line.
pub fn read_dataset(path: &Path) -> Result<ScenarioData> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Data(format!(
            "{}: format {:?}, expected {:?}",
            path.display(),
            header.format,
            DATASET_FORMAT
        )));
    }
    let mut traversals: Vec<Vec<MultimodalRecord>> = Vec::new();
    let mut last_good = 0usize; // header is line 1
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let record: MultimodalRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!(
                "{}: line {line_no}: {e} (last good record at line {})",
                path.display(),
                if last_good == 0 { 1 } else { last_good }
            ))
        })?;
        if record.powers.len() != N_BEAMS {
            return Err(Error::Data(format!(
                "{}: line {line_no}: {} powers, expected {N_BEAMS}",
                path.display(),
                record.powers.len()
            )));
        }
        let expect = best_beam(&record.powers)?;
        if record.beam_label != expect {
            return Err(Error::Data(format!(
                "{}: line {line_no}: beam_label {} but best_beam(powers) = {expect}",
                path.display(),
                record.beam_label
            )));
        }
        let start_new = match traversals.last().and_then(|t| t.last()) {
            Some(prev) => record.t != prev.t + 1,
            None => true,
        };
        if start_new {
            traversals.push(Vec::new());
        }
        traversals.last_mut().expect("just pushed").push(record);
        last_good = line_no;
    }
    Ok(ScenarioData { config: header.config, traversals, skipped: 0 })
}

/// Write the whole corpus, one file per scenario, named `S<k>.jsonl`.
pub fn write_corpus(scenarios: &[ScenarioData], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(scenarios.len());
    for data in scenarios {
        let path = dir.join(format!("S{}.jsonl", data.config.scenario_id));
        write_dataset(data, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Read every `S*.jsonl` in a directory, ordered by scenario id.
pub fn read_corpus(dir: &Path) -> Result<Vec<ScenarioData>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('S') && name.ends_with(".jsonl") {
            found.push(path);
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!("{}: no S*.jsonl dataset files", dir.display())));
    }
    let mut scenarios: Vec<ScenarioData> =
        found.iter().map(|p| read_dataset(p)).collect::<Result<_>>()?;
    scenarios.sort_by_key(|s| s.config.scenario_id);
    Ok(scenarios)
}
