use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::run_training;
use crate::error::{invalid, Error, Result};
use crate::layers::build_resnet9;

pub const SUMMARY_FILE: &str = "summary.csv";

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub name: String,
    pub dataset: String,
    pub group: String,
    pub augmentation: usize,
    pub dp: bool,
    pub seed: u64,
    pub val_accuracy: Option<f64>,
    pub params: Option<usize>,
    pub brier: Option<f64>,
    pub mean_sparsity: Option<f64>,
    pub epsilon: Option<f64>,
    pub status: String,
}

/// Configs from every `*.json` file in `dir`, in file-name order.
pub fn load_grid_configs(dir: &Path) -> Result<Vec<(String, TrainConfig)>> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, TrainConfig::from_file(&p)?))
        })
        .collect()
}

/// Run every config in sequence; failures become rows with their error
/// kind as status. Writes `out/summary.csv`.
pub fn run_grid(configs: &[(String, TrainConfig)], out: &Path) -> Result<Vec<GridRow>> {
    if configs.is_empty() {
        return Err(invalid("grid has no configs"));
    }
    fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(configs.len());
    for (name, cfg) in configs {
        let mut row = GridRow {
            name: name.clone(),
            dataset: cfg.dataset_name.clone().unwrap_or_else(|| cfg.dataset.display().to_string()),
            group: cfg.group.to_string(),
            augmentation: cfg.augmentation.replicas(),
            dp: cfg.dp,
            seed: cfg.seed,
            val_accuracy: None,
            params: None,
            brier: None,
            mean_sparsity: None,
            epsilon: None,
            status: "ok".into(),
        };
        match run_training(cfg) {
            Ok(m) => {
                row.dataset = m.dataset_name;
                row.val_accuracy = m.final_val_accuracy;
                row.params = Some(m.param_count);
                row.brier = m.final_brier;
                row.mean_sparsity = Some(m.mean_grad_sparsity);
                row.epsilon = m.final_epsilon;
            }
            Err(e) => {
                row.status = e.kind().to_string();
                if let Some(classes) = cfg.classes {
                    let mut rng = rand::SeedableRng::seed_from_u64(0);
                    let model = build_resnet9::<f32, rand_chacha::ChaCha8Rng>(&cfg.model_spec(classes), &mut rng);
                    row.params = model.ok().map(|m| m.param_count());
                }
            }
        }
        rows.push(row);
    }
    write_summary(&out.join(SUMMARY_FILE), &rows)?;
    Ok(rows)
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn write_summary(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut s = String::from("name,dataset,group,augmentation,dp,seed,val_accuracy,params,brier,mean_sparsity,epsilon,status\n");
    for r in rows {
        let cells = [
            r.name.clone(),
            r.dataset.clone(),
            r.group.clone(),
            r.augmentation.to_string(),
            r.dp.to_string(),
            r.seed.to_string(),
            fmt_opt(&r.val_accuracy),
            fmt_opt(&r.params),
            fmt_opt(&r.brier),
            fmt_opt(&r.mean_sparsity),
            fmt_opt(&r.epsilon),
            r.status.clone(),
        ];
        let quoted: Vec<String> = cells
            .iter()
            .map(|c| if c.contains([',', '"', '\n']) { format!("\"{}\"", c.replace('"', "\"\"")) } else { c.clone() })
            .collect();
        s.push_str(&quoted.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}
