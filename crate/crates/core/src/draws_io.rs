//! Columnar storage for posterior draws.
//!
//! `draws.csv` has one row per snapshot per parameter block with columns
//! `chain,snapshot,iteration,block,values`. `values` is a space-separated
//! row-major flattening of the block. Blocks are `loglik`, `z`, `pi`,
//! `beta/<question>` (`K × L_j`), and for dynamic runs `pi_tilde` and
//! `sigma2`. Shapes and the run configuration live in `draws_meta.json`.
//! Floats are written in shortest round-trip form so reading back is exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SurveyDataset;
use crate::distributions::StreamId;
use crate::dynamic_sampler::SgldDiagnostics;
use crate::error::{Error, Result};
use crate::state::{ChainState, ModelConfig, PosteriorDraws, Snapshot};

pub const DRAWS_FILE: &str = "draws.csv";
pub const META_FILE: &str = "draws_meta.json";
pub const DIAGNOSTICS_FILE: &str = "sgld_diagnostics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub config: ModelConfig,
    pub streams: Vec<StreamId>,
    pub n_respondents: usize,
    pub id_column: String,
    pub label_column: String,
    pub ids: Vec<String>,
    /// Label index of each respondent.
    pub labels: Vec<usize>,
    pub label_values: Vec<String>,
    pub question_names: Vec<String>,
    pub category_counts: Vec<usize>,
    pub n_snapshots: usize,
}

impl DrawsMeta {
    pub fn new(draws: &PosteriorDraws, data: &SurveyDataset) -> Self {
        let schema = data.schema();
        Self {
            config: draws.config.clone(),
            streams: draws.streams.clone(),
            n_respondents: data.n_respondents(),
            id_column: schema.id_column,
            label_column: schema.label_column,
            ids: data.ids().to_vec(),
            labels: data.labels().to_vec(),
            label_values: data.label_values().to_vec(),
            question_names: data.questions().iter().map(|q| q.name.clone()).collect(),
            category_counts: data.category_counts(),
            n_snapshots: draws.len(),
        }
    }
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_draws_to<W: Write>(writer: W, draws: &PosteriorDraws, question_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["chain", "snapshot", "iteration", "block", "values"])?;
    for (idx, snap) in draws.snapshots.iter().enumerate() {
        let prefix = [snap.chain.to_string(), idx.to_string(), snap.iteration.to_string()];
        let mut row = |block: &str, values: String| -> Result<()> {
            w.write_record(prefix.iter().map(String::as_str).chain([block, values.as_str()]))?;
            Ok(())
        };
        let s = &snap.state;
        row("loglik", snap.loglik.to_string())?;
        row("z", join(&s.z))?;
        row("pi", join(s.pi.iter().flatten()))?;
        for (j, q) in s.beta.iter().enumerate() {
            let name = question_names.get(j).cloned().unwrap_or_else(|| j.to_string());
            row(&format!("beta/{name}"), join(q.iter().flatten()))?;
        }
        if let Some(pt) = &s.pi_tilde {
            row("pi_tilde", join(pt.iter().flatten()))?;
        }
        if let Some(s2) = &s.sigma2 {
            row("sigma2", join(s2))?;
        }
    }
    w.flush().map_err(|e| Error::io("draws", e))?;
    Ok(())
}

/// Writes `draws.csv` and `draws_meta.json` into `dir`.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws, meta: &DrawsMeta) -> Result<()> {
    let path = dir.join(DRAWS_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_draws_to(BufWriter::new(file), draws, &meta.question_names)?;
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))
}

fn parse_values<T: std::str::FromStr>(text: &str, block: &str) -> Result<Vec<T>> {
    text.split_ascii_whitespace()
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Schema(format!("block {block}: cannot parse '{v}'")))
        })
        .collect()
}

fn reshape(flat: Vec<f64>, cols: usize, block: &str) -> Result<Vec<Vec<f64>>> {
    if cols == 0 || flat.len() % cols != 0 {
        return Err(Error::Schema(format!("block {block} has {} values", flat.len())));
    }
    Ok(flat.chunks(cols).map(<[f64]>::to_vec).collect())
}

pub fn read_draws_from<R: Read>(reader: R, meta: &DrawsMeta) -> Result<PosteriorDraws> {
    let k = meta.config.n_types();
    let mut r = csv::Reader::from_reader(reader);
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut current: Option<usize> = None;
    for record in r.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(Error::Schema("draws rows need five fields".into()));
        }
        let parse_usize = |i: usize| -> Result<usize> {
            record[i]
                .parse()
                .map_err(|_| Error::Schema(format!("bad integer '{}'", &record[i])))
        };
        let (chain, idx, iteration) = (parse_usize(0)?, parse_usize(1)?, parse_usize(2)?);
        if current != Some(idx) {
            if idx != snapshots.len() {
                return Err(Error::Schema(format!("snapshot {idx} out of order")));
            }
            snapshots.push(Snapshot {
                chain,
                iteration,
                loglik: f64::NAN,
                state: ChainState {
                    z: Vec::new(),
                    pi: Vec::new(),
                    beta: vec![Vec::new(); meta.category_counts.len()],
                    pi_tilde: None,
                    sigma2: None,
                },
            });
            current = Some(idx);
        }
        let snap = snapshots.last_mut().expect("pushed above");
        let block = &record[3];
        let values = &record[4];
        match block {
            "loglik" => {
                snap.loglik = values
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad loglik '{values}'")))?
            }
            "z" => snap.state.z = parse_values(values, block)?,
            "pi" => snap.state.pi = reshape(parse_values(values, block)?, k, block)?,
            "pi_tilde" => snap.state.pi_tilde = Some(reshape(parse_values(values, block)?, k, block)?),
            "sigma2" => snap.state.sigma2 = Some(parse_values(values, block)?),
            b if b.starts_with("beta/") => {
                let name = &b[5..];
                let j = meta
                    .question_names
                    .iter()
                    .position(|q| q == name)
                    .ok_or_else(|| Error::Schema(format!("unknown question in block {b}")))?;
                snap.state.beta[j] = reshape(parse_values(values, block)?, meta.category_counts[j], block)?;
            }
            other => return Err(Error::Schema(format!("unknown block '{other}'"))),
        }
    }
    if snapshots.len() != meta.n_snapshots {
        return Err(Error::Schema(format!(
            "expected {} snapshots, found {}",
            meta.n_snapshots,
            snapshots.len()
        )));
    }
    Ok(PosteriorDraws {
        config: meta.config.clone(),
        streams: meta.streams.clone(),
        snapshots,
    })
}

pub fn read_meta(dir: &Path) -> Result<DrawsMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads `draws.csv` and `draws_meta.json` from `dir`.
pub fn read_draws(dir: &Path) -> Result<(PosteriorDraws, DrawsMeta)> {
    let meta = read_meta(dir)?;
    let path = dir.join(DRAWS_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let draws = read_draws_from(file, &meta)?;
    Ok((draws, meta))
}

/// One row per chain and iteration.
pub fn write_diagnostics(path: &Path, per_chain: &[SgldDiagnostics]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["chain", "iteration", "step_size", "noise_variance", "gradient_norm", "drift"])?;
    for (c, d) in per_chain.iter().enumerate() {
        for i in 0..d.iteration.len() {
            w.write_record([
                c.to_string(),
                d.iteration[i].to_string(),
                d.step_size[i].to_string(),
                d.noise_variance[i].to_string(),
                d.gradient_norm[i].to_string(),
                d.drift[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;
    use crate::dynamic_sampler::{run_dynamic, DynamicConfig, StepSchedule};
    use crate::simulate::{simulate_static, simulate_with_path, TrueParams};
    use crate::static_sampler::{default_priors, run_gibbs, StaticConfig};

    fn truth() -> TrueParams {
        TrueParams {
            pi: vec![vec![0.6, 0.4], vec![0.2, 0.8]],
            beta: vec![
                vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]],
                vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            ],
        }
    }

    fn roundtrip(draws: &PosteriorDraws, data: &SurveyDataset) {
        let meta = DrawsMeta::new(draws, data);
        let mut buf = Vec::new();
        write_draws_to(&mut buf, draws, &meta.question_names).unwrap();
        let back = read_draws_from(buf.as_slice(), &meta).unwrap();
        assert_eq!(&back, draws);
    }

    #[test]
    fn static_roundtrip_is_exact() {
        let data = simulate_static(&truth(), &[30, 30], &mut RngStream::new(1, 0)).unwrap();
        let p = default_priors(&data, 2);
        let cfg = StaticConfig { k: 2, alpha: p.alpha, eta: p.eta, iterations: 20, burn_in: 10, thin: 2 };
        let draws = run_gibbs(&data, &cfg, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(draws.len(), 5);
        roundtrip(&draws, &data);
    }

    #[test]
    fn dynamic_roundtrip_is_exact() {
        let data = simulate_with_path(&truth(), &[30, 30], &mut RngStream::new(2, 0)).unwrap();
        let p = default_priors(&data, 2);
        let cfg = DynamicConfig {
            k: 2,
            eta: p.eta,
            v0: 1.0,
            s0: 0.1,
            schedule: StepSchedule::default(),
            iterations: 12,
            burn_in: 2,
            thin: 5,
            batch_size: None,
        };
        let run = run_dynamic(&data, &cfg, &mut RngStream::new(2, 1)).unwrap();
        roundtrip(&run.draws, &data);
    }

    #[test]
    fn unknown_block_is_rejected() {
        let data = simulate_static(&truth(), &[5, 5], &mut RngStream::new(3, 0)).unwrap();
        let p = default_priors(&data, 2);
        let cfg = StaticConfig { k: 2, alpha: p.alpha, eta: p.eta, iterations: 2, burn_in: 1, thin: 1 };
        let draws = run_gibbs(&data, &cfg, &mut RngStream::new(3, 1)).unwrap();
        let meta = DrawsMeta::new(&draws, &data);
        let text = "chain,snapshot,iteration,block,values\n0,0,2,theta,1 2\n";
        assert!(matches!(read_draws_from(text.as_bytes(), &meta), Err(Error::Schema(_))));
    }
}
