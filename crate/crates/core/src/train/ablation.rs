//! The (seed × ratio × variant) ablation grid.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::metrics::{evaluate, Metrics};
use super::run::{subsample_stratified, train, KnowledgeMaps, Variant};
use super::{OptimConfig, Result, TrainError};
use crate::knowledge::MapGrid;
use crate::model::ModelConfig;
use crate::synth::{annotations_for, gen_dataset, GenConfig};

/// Which cells to run. Every cell regenerates its seed's dataset, builds
/// maps from (the subsampled) train split only, trains and evaluates.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub ratios: Vec<f64>,
    pub map_grid: MapGrid,
    /// Worker threads for independent seeds. 1 keeps everything on one core.
    pub jobs: usize,
}

impl AblationConfig {
    pub fn new(seeds: Vec<u64>) -> Self {
        AblationConfig {
            seeds,
            variants: Variant::ALL.to_vec(),
            ratios: vec![1.0],
            map_grid: MapGrid::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub seed: u64,
    pub variant: String,
    pub ratio: f64,
    pub train_scenes: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub variant: String,
    pub ratio: f64,
    pub mean_mca: f64,
    pub std_mca: f64,
    pub mean_mpca: f64,
    /// mean MCA minus the Base variant's mean MCA at the same ratio.
    pub delta_mca_vs_base: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

impl AblationReport {
    pub fn aggregate(&self, variant: Variant, ratio: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.variant == variant.name() && a.ratio == ratio)
    }

    pub fn cell(&self, seed: u64, variant: Variant, ratio: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.variant == variant.name() && c.ratio == ratio)
    }
}

fn check_dims(model_cfg: &ModelConfig, gen_cfg: &GenConfig) -> Result<()> {
    let pairs = [
        ("action classes", model_cfg.action_classes, gen_cfg.action_classes),
        ("group classes", model_cfg.group_classes, gen_cfg.group_classes),
        ("feature dim", model_cfg.feature_dim, gen_cfg.feature_dim),
    ];
    for (name, m, g) in pairs {
        if m != g {
            return Err(TrainError::Config(format!(
                "model/generator mismatch on {name}: {m} vs {g}"
            )));
        }
    }
    Ok(())
}

/// Runs every (seed × ratio × variant) cell and aggregates per variant.
///
/// Data and initialization are shared within a seed, so variants differ only
/// in architecture flags and maps. Maps are built after subsampling, from
/// the train split alone; the test split never reaches the map builders.
pub fn run_ablation(
    model_cfg: &ModelConfig,
    gen_cfg: &GenConfig,
    optim_cfg: &OptimConfig,
    ab: &AblationConfig,
) -> Result<AblationReport> {
    if ab.seeds.is_empty() || ab.variants.is_empty() || ab.ratios.is_empty() {
        return Err(TrainError::Config(
            "ablation needs at least one seed, variant and ratio".into(),
        ));
    }
    check_dims(model_cfg, gen_cfg)?;

    let run_seed = |&seed: &u64| -> Result<Vec<CellResult>> {
        let data = gen_dataset(&GenConfig {
            seed,
            ..gen_cfg.clone()
        })?;
        let mut cells = Vec::new();
        for &ratio in &ab.ratios {
            let subset =
                subsample_stratified(&data.train, ratio, gen_cfg.group_classes, seed)?;
            let ann = annotations_for(&data.vocabulary, &subset)?;
            let maps = KnowledgeMaps::build(&ann, ab.map_grid)?;
            for &variant in &ab.variants {
                let optim = OptimConfig {
                    seed,
                    ..optim_cfg.clone()
                };
                let result = train(variant, &subset, &maps, model_cfg, &optim)?;
                let metrics = evaluate(&result.state, variant, &data.test, &maps, None)?;
                cells.push(CellResult {
                    seed,
                    variant: variant.name().to_string(),
                    ratio,
                    train_scenes: subset.len(),
                    metrics,
                });
            }
        }
        Ok(cells)
    };

    let mut cells: Vec<CellResult> = if ab.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(ab.jobs)
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let per_seed: Vec<Result<Vec<CellResult>>> = pool.install(|| {
            use rayon::prelude::*;
            ab.seeds.par_iter().map(run_seed).collect()
        });
        let mut all = Vec::new();
        for chunk in per_seed {
            all.extend(chunk?);
        }
        all
    } else {
        let mut all = Vec::new();
        for seed in &ab.seeds {
            all.extend(run_seed(seed)?);
        }
        all
    };

    let variant_order = |name: &str| {
        Variant::ALL
            .iter()
            .position(|v| v.name() == name)
            .unwrap_or(usize::MAX)
    };
    cells.sort_by(|a, b| {
        (a.seed, a.ratio.to_bits(), variant_order(&a.variant)).cmp(&(
            b.seed,
            b.ratio.to_bits(),
            variant_order(&b.variant),
        ))
    });

    // per (variant, ratio) aggregates and deltas against Base
    let mut aggregates = Vec::new();
    for &ratio in &ab.ratios {
        let mean_of = |variant: Variant| -> Option<f64> {
            let values: Vec<f64> = cells
                .iter()
                .filter(|c| c.variant == variant.name() && c.ratio == ratio)
                .map(|c| c.metrics.mca)
                .collect();
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        let base_mean = mean_of(Variant::Base);
        for &variant in &ab.variants {
            let values: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.variant == variant.name() && c.ratio == ratio)
                .map(|c| (c.metrics.mca, c.metrics.mpca))
                .collect();
            let n = values.len() as f64;
            let mean_mca = values.iter().map(|v| v.0).sum::<f64>() / n;
            let mean_mpca = values.iter().map(|v| v.1).sum::<f64>() / n;
            let var = values
                .iter()
                .map(|v| (v.0 - mean_mca).powi(2))
                .sum::<f64>()
                / n;
            aggregates.push(Aggregate {
                variant: variant.name().to_string(),
                ratio,
                mean_mca,
                std_mca: var.sqrt(),
                mean_mpca,
                delta_mca_vs_base: match (variant, base_mean) {
                    (Variant::Base, _) => None,
                    (_, Some(b)) => Some(mean_mca - b),
                    (_, None) => None,
                },
            });
        }
    }

    Ok(AblationReport { cells, aggregates })
}

pub fn write_report_json(report: &AblationReport, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| TrainError::Config(format!("report serialization: {e}")))?;
    fs::write(path.as_ref(), text + "\n").map_err(|e| TrainError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })
}

/// One row per (variant, ratio) aggregate: the ablation table.
pub fn write_report_csv(report: &AblationReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("variant,ratio,mca,mpca\n");
    for a in &report.aggregates {
        out.push_str(&format!(
            "{},{},{:.3},{:.3}\n",
            a.variant, a.ratio, a.mean_mca, a.mean_mpca
        ));
    }
    fs::write(path.as_ref(), out).map_err(|e| TrainError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_grid_produces_rows_and_delta() {
        let gen = GenConfig {
            scenes_train: 12,
            scenes_test: 8,
            ..GenConfig::default()
        };
        let model = ModelConfig {
            embed_dim: 16,
            head_dim: 8,
            ffn_dim: 16,
            ..ModelConfig::default()
        };
        let optim = OptimConfig {
            epochs: 1,
            ..OptimConfig::default()
        };
        let ab = AblationConfig {
            variants: vec![Variant::Base, Variant::Full],
            ..AblationConfig::new(vec![0])
        };
        let report = run_ablation(&model, &gen, &optim, &ab).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert_eq!(report.aggregates.len(), 2);
        let full = report.aggregate(Variant::Full, 1.0).unwrap();
        assert!(full.delta_mca_vs_base.is_some());
        assert!(report.aggregate(Variant::Base, 1.0).unwrap().delta_mca_vs_base.is_none());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let gen = GenConfig::default();
        let model = ModelConfig {
            action_classes: 3,
            ..ModelConfig::default()
        };
        let err = run_ablation(
            &model,
            &gen,
            &OptimConfig::default(),
            &AblationConfig::new(vec![0]),
        );
        assert!(err.is_err());
    }
}
