use serde::{Deserialize, Serialize};

use super::metrics::{sae_metrics, SaeMetrics};
use super::train::{sae_train, TrainConfig};
use super::{SaeLossWeights, StandardizedPair};
use crate::error::{Error, Result};
use crate::table::{fmt_f64, Csv};

/// cross_weight values of the reference sweep.
pub const DEFAULT_CROSS_WEIGHTS: [f64; 5] = [0.0, 0.1, 0.2, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub use_raw_mse: bool,
    pub cross_weight: f64,
}

impl SweepCell {
    /// use_raw_mse in {false, true} x the reference cross weights.
    pub fn default_grid() -> Vec<SweepCell> {
        [false, true]
            .into_iter()
            .flat_map(|raw| {
                DEFAULT_CROSS_WEIGHTS.iter().map(move |&c| SweepCell {
                    use_raw_mse: raw,
                    cross_weight: c,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub feature: String,
    pub cell: SweepCell,
    /// Exact weights used for this cell.
    pub weights: SaeLossWeights,
    pub metrics: SaeMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const HEADER: [&'static str; 12] = [
        "feature",
        "use_raw_mse",
        "cross_weight",
        "r2_full_x",
        "r2_full_y",
        "r2_shared_x",
        "r2_shared_y",
        "cka_shared",
        "r2_cross_x",
        "r2_cross_y",
        "gap_x",
        "gap_y",
    ];

    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&Self::HEADER);
        for r in &self.rows {
            let m = &r.metrics;
            let mut fields = vec![
                r.feature.clone(),
                if r.cell.use_raw_mse { "True".into() } else { "False".into() },
                fmt_f64(r.cell.cross_weight),
            ];
            fields.extend(
                [
                    m.r2_full_x,
                    m.r2_full_y,
                    m.r2_shared_x,
                    m.r2_shared_y,
                    m.cka_shared,
                    m.r2_cross_x,
                    m.r2_cross_y,
                    m.gap_x,
                    m.gap_y,
                ]
                .map(fmt_f64),
            );
            csv.row(fields);
        }
        csv.into_string()
    }

    /// Fraction of adjacent cross_weight steps (within each use_raw_mse
    /// block, ordered by cross_weight) where the gap does not increase, per
    /// branch: (non-increasing steps, total steps).
    pub fn gap_trend(&self) -> (usize, usize) {
        let mut ok = 0;
        let mut total = 0;
        for raw in [false, true] {
            let mut block: Vec<&SweepRow> = self.rows.iter().filter(|r| r.cell.use_raw_mse == raw).collect();
            block.sort_by(|a, b| a.cell.cross_weight.total_cmp(&b.cell.cross_weight));
            for w in block.windows(2) {
                for (a, b) in [(w[0].metrics.gap_x, w[1].metrics.gap_x), (w[0].metrics.gap_y, w[1].metrics.gap_y)] {
                    total += 1;
                    if b <= a {
                        ok += 1;
                    }
                }
            }
        }
        (ok, total)
    }
}

/// Trains one model per grid cell with the same seed and evaluates it on
/// `eval`.
pub fn sae_sweep(
    feature: &str,
    train: &StandardizedPair,
    eval: &StandardizedPair,
    grid: &[SweepCell],
    base: &SaeLossWeights,
    cfg: &TrainConfig,
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for cell in grid {
        let weights = SaeLossWeights {
            use_raw_mse: cell.use_raw_mse,
            cross: cell.cross_weight,
            ..*base
        };
        let (model, _) = sae_train(train, &weights, cfg)?;
        rows.push(SweepRow {
            feature: feature.to_string(),
            cell: *cell,
            weights,
            metrics: sae_metrics(&model, &eval.data)?,
        });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::sae_metrics;
    use crate::synth::{gen_paired_features, PlantedSpec};

    #[test]
    fn one_cell_equals_direct_call() {
        let spec = PlantedSpec {
            n: 200,
            d_x: 6,
            d_y: 6,
            shared_dim: 2,
            unique_dim_x: 2,
            unique_dim_y: 2,
            shared_fraction: 0.6,
            noise_std: 0.1,
            seed: 7,
        };
        let (pair, _) = gen_paired_features(&spec).unwrap();
        let (tr, te) = pair.split_at(150).unwrap();
        let train = StandardizedPair::fit(&tr).unwrap();
        let eval = train.apply(&te).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 50,
            d_s: 3,
            d_u: 2,
            hidden: 8,
            ..Default::default()
        };
        let cell = SweepCell {
            use_raw_mse: true,
            cross_weight: 0.5,
        };
        let t = sae_sweep("backbone", &train, &eval, &[cell], &SaeLossWeights::default(), &cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        let w = SaeLossWeights {
            use_raw_mse: true,
            cross: 0.5,
            ..Default::default()
        };
        assert_eq!(t.rows[0].weights, w);
        let (m, _) = sae_train(&train, &w, &cfg).unwrap();
        assert_eq!(t.rows[0].metrics, sae_metrics(&m, &eval.data).unwrap());
        assert!(t.to_csv().starts_with("feature,use_raw_mse,cross_weight,r2_full_x"));
        assert!(sae_sweep("b", &train, &eval, &[], &w, &cfg).is_err());
    }

    #[test]
    fn default_grid_has_ten_cells() {
        let g = SweepCell::default_grid();
        assert_eq!(g.len(), 10);
        assert!(!g[0].use_raw_mse && g[9].use_raw_mse && g[9].cross_weight == 1.0);
    }
}
