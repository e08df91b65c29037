use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::sae::{sae_forward, SaeModel};

/// Squared-norm energies of the additive decoder contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateFeatures {
    pub e_shared_vlm: f64,
    pub e_unique_vlm: f64,
    pub e_shared_vit: f64,
    pub e_unique_vit: f64,
}

impl GateFeatures {
    pub fn scaled(&self, c: f64) -> Self {
        GateFeatures {
            e_shared_vlm: c * self.e_shared_vlm,
            e_unique_vlm: c * self.e_unique_vlm,
            e_shared_vit: c * self.e_shared_vit,
            e_unique_vit: c * self.e_unique_vit,
        }
    }
}

fn row_energy(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.norm_squared()).collect()
}

/// Energies for every row of a standardized pair; x is the VLM branch and
/// y the vision branch.
pub fn energy_decomposition(model: &SaeModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Vec<GateFeatures>> {
    let a = sae_forward(model, x, y)?;
    let sv = row_energy(&(&a.zs_x * model.dec_shared_x.transpose()));
    let uv = row_energy(&(&a.zu_x * model.dec_unique_x.transpose()));
    let st = row_energy(&(&a.zs_y * model.dec_shared_y.transpose()));
    let ut = row_energy(&(&a.zu_y * model.dec_unique_y.transpose()));
    Ok((0..x.nrows())
        .map(|i| GateFeatures {
            e_shared_vlm: sv[i],
            e_unique_vlm: uv[i],
            e_shared_vit: st[i],
            e_unique_vit: ut[i],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchIndicators {
    pub r_u: f64,
    pub r_s: f64,
    pub u: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateIndicators {
    pub vlm: BranchIndicators,
    pub vit: BranchIndicators,
    pub d_bar: f64,
}

fn branch(es: f64, eu: f64, eps: f64) -> BranchIndicators {
    let total = es + eu;
    BranchIndicators {
        r_u: eu / (total + eps),
        r_s: es / (total + eps),
        u: eu / (es + eps),
        d: es / (total + eps),
    }
}

pub fn indicators(f: &GateFeatures, eps: f64) -> Result<GateIndicators> {
    let e = [f.e_shared_vlm, f.e_unique_vlm, f.e_shared_vit, f.e_unique_vit];
    if e.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("gate energies must be finite and non-negative".into()));
    }
    let vlm = branch(f.e_shared_vlm, f.e_unique_vlm, eps);
    let vit = branch(f.e_shared_vit, f.e_unique_vit, eps);
    Ok(GateIndicators {
        vlm,
        vit,
        d_bar: (vlm.d + vit.d) / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MoreUnique,
    SharedConditional,
    Smoothed,
    VitFallback,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::MoreUnique, Strategy::SharedConditional, Strategy::Smoothed, Strategy::VitFallback];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::MoreUnique => "more_unique",
            Strategy::SharedConditional => "shared_conditional",
            Strategy::Smoothed => "smoothed",
            Strategy::VitFallback => "vit_fallback",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown gating strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub tau: f64,
    pub kappa: f64,
    pub tau_strong: f64,
    pub epsilon: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            tau: 0.7,
            kappa: 5.0,
            tau_strong: 0.8,
            epsilon: 1e-8,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !(0.0..=1.0).contains(&self.tau) || !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument("gate config needs kappa > 0, tau in [0, 1], epsilon >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Vlm,
    Vit,
}

impl Choice {
    pub fn name(&self) -> &'static str {
        match self {
            Choice::Vlm => "vlm",
            Choice::Vit => "vit",
        }
    }

    pub fn from_score(s: f64) -> Self {
        if s > 0.0 {
            Choice::Vlm
        } else {
            Choice::Vit
        }
    }
}

impl FromStr for Choice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vlm" => Ok(Choice::Vlm),
            "vit" => Ok(Choice::Vit),
            other => Err(Error::InvalidArgument(format!("unknown choice {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub scenario_id: String,
    pub score: f64,
    pub choice: Choice,
}

fn s_unique(i: &GateIndicators) -> f64 {
    i.vlm.u - i.vit.u
}

fn s_shared(i: &GateIndicators) -> f64 {
    i.vlm.r_s - i.vit.r_s
}

/// Signed score and choice; positive favours the VLM branch.
pub fn rule_score(ind: &GateIndicators, strategy: Strategy, cfg: &GateConfig) -> (f64, Choice) {
    let smoothed = || {
        let w = sigmoid(cfg.kappa * (ind.d_bar - cfg.tau));
        w * s_shared(ind) + (1.0 - w) * s_unique(ind)
    };
    match strategy {
        Strategy::MoreUnique => {
            let s = s_unique(ind);
            (s, Choice::from_score(s))
        }
        Strategy::SharedConditional => {
            let s = if ind.d_bar > cfg.tau { s_shared(ind) } else { s_unique(ind) };
            (s, Choice::from_score(s))
        }
        Strategy::Smoothed => {
            let s = smoothed();
            (s, Choice::from_score(s))
        }
        Strategy::VitFallback => {
            let s = smoothed();
            let c = if ind.d_bar > cfg.tau_strong && s > 0.0 { Choice::Vlm } else { Choice::Vit };
            (s, c)
        }
    }
}

/// Applies one strategy to every scenario.
pub fn rule_decisions(features: &[(String, GateFeatures)], strategy: Strategy, cfg: &GateConfig) -> Result<Vec<GateDecision>> {
    cfg.validate()?;
    features
        .iter()
        .map(|(id, f)| {
            let (score, choice) = rule_score(&indicators(f, cfg.epsilon)?, strategy, cfg);
            Ok(GateDecision {
                scenario_id: id.clone(),
                score,
                choice,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Mlp};
    use crate::sae::SaeDims;
    use nalgebra::DVector;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest};
    use proptest::strategy::Strategy as PropStrategy;

    fn ind(u_vlm: f64, u_vit: f64, rs_vlm: f64, rs_vit: f64, d_bar: f64) -> GateIndicators {
        let b = |u, r_s| BranchIndicators { r_u: 0.0, r_s, u, d: 0.0 };
        GateIndicators {
            vlm: b(u_vlm, rs_vlm),
            vit: b(u_vit, rs_vit),
            d_bar,
        }
    }

    #[test]
    fn identical_branches_choose_vit() {
        let f = GateFeatures {
            e_shared_vlm: 2.0,
            e_unique_vlm: 1.0,
            e_shared_vit: 2.0,
            e_unique_vit: 1.0,
        };
        let i = indicators(&f, 1e-8).unwrap();
        for s in Strategy::ALL {
            let (score, c) = rule_score(&i, s, &GateConfig::default());
            assert_eq!((score, c), (0.0, Choice::Vit));
        }
    }

    #[test]
    fn sigmoid_midpoint_and_hand_blend() {
        let cfg = GateConfig::default();
        let i = ind(0.5, 0.2, 0.3, 0.6, 0.7);
        // w = 0.5: average of -0.3 and 0.3.
        assert!(rule_score(&i, Strategy::Smoothed, &cfg).0.abs() < 1e-15);
        let i = ind(0.5, 0.2, 0.3, 0.6, 0.9);
        let w = 1.0 / (1.0 + (-1.0f64).exp());
        let expect = w * -0.3 + (1.0 - w) * 0.3;
        let (s, c) = rule_score(&i, Strategy::Smoothed, &cfg);
        assert!((s - expect).abs() < 1e-15);
        assert_eq!(c, Choice::Vit);
    }

    #[test]
    fn fallback_needs_strong_sharing() {
        let cfg = GateConfig::default();
        let i = ind(0.0, 0.0, 0.9, 0.1, 0.75);
        assert!(rule_score(&i, Strategy::Smoothed, &cfg).0 > 0.0);
        assert_eq!(rule_score(&i, Strategy::VitFallback, &cfg).1, Choice::Vit);
        let i = GateIndicators { d_bar: 0.85, ..i };
        assert_eq!(rule_score(&i, Strategy::VitFallback, &cfg).1, Choice::Vlm);
    }

    #[test]
    fn indicator_identities() {
        let f = GateFeatures {
            e_shared_vlm: 3.0,
            e_unique_vlm: 1.0,
            e_shared_vit: 0.5,
            e_unique_vit: 0.0,
        };
        let i = indicators(&f, 0.0).unwrap();
        assert_eq!((i.vlm.r_u, i.vlm.r_s, i.vlm.u, i.vlm.d), (0.25, 0.75, 1.0 / 3.0, 0.75));
        assert_eq!(i.d_bar, (0.75 + 1.0) / 2.0);
        assert!(indicators(&GateFeatures { e_shared_vit: -1.0, ..f }, 0.0).is_err());
        assert_eq!("smoothed".parse::<Strategy>().unwrap(), Strategy::Smoothed);
        assert!("best".parse::<Strategy>().is_err());
    }

    fn one_dim_model(ws: f64, wu: f64) -> SaeModel {
        let ident = || Mlp {
            layers: vec![
                Dense {
                    w: DMatrix::from_element(1, 1, 1.0),
                    b: DVector::zeros(1),
                },
                Dense {
                    w: DMatrix::from_element(1, 1, 1.0),
                    b: DVector::zeros(1),
                },
            ],
        };
        SaeModel {
            dims: SaeDims {
                d_x: 1,
                d_y: 1,
                d_s: 1,
                d_u: 1,
                hidden: 1,
            },
            enc_shared_x: ident(),
            enc_unique_x: ident(),
            enc_shared_y: ident(),
            enc_unique_y: ident(),
            dec_shared_x: DMatrix::from_element(1, 1, ws),
            dec_unique_x: DMatrix::from_element(1, 1, wu),
            dec_shared_y: DMatrix::from_element(1, 1, ws),
            dec_unique_y: DMatrix::from_element(1, 1, wu),
            bias_x: DVector::zeros(1),
            bias_y: DVector::zeros(1),
        }
    }

    #[test]
    fn energies_by_hand() {
        // Positive inputs pass the ReLU unchanged: z_s = z_u = x.
        let x = DMatrix::from_column_slice(2, 1, &[2.0, 3.0]);
        let y = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
        let e = energy_decomposition(&one_dim_model(0.5, 2.0), &x, &y).unwrap();
        assert_eq!(e[0].e_shared_vlm, 1.0);
        assert_eq!(e[0].e_unique_vlm, 16.0);
        assert_eq!(e[1].e_shared_vit, 0.0625);
        assert_eq!(e[1].e_unique_vit, 1.0);
        let zero_u = energy_decomposition(&one_dim_model(0.5, 0.0), &x, &y).unwrap();
        assert!(zero_u.iter().all(|f| f.e_unique_vlm == 0.0 && f.e_unique_vit == 0.0));
        let doubled = energy_decomposition(&one_dim_model(1.0, 2.0), &x, &y).unwrap();
        assert_eq!(doubled[1].e_shared_vlm, 4.0 * e[1].e_shared_vlm);
    }

    fn energies() -> impl PropStrategy<Value = GateFeatures> {
        (0.01f64..10.0, 0.01f64..10.0, 0.01f64..10.0, 0.01f64..10.0).prop_map(|(a, b, c, d)| GateFeatures {
            e_shared_vlm: a,
            e_unique_vlm: b,
            e_shared_vit: c,
            e_unique_vit: d,
        })
    }

    proptest! {
        #[test]
        fn smoothed_converges_to_hard_rule(f in energies(), tau in 0.5f64..0.9) {
            let i = indicators(&f, 1e-8).unwrap();
            prop_assume!((i.d_bar - tau).abs() >= 0.01);
            let cfg = GateConfig { tau, kappa: 1e4, ..Default::default() };
            let s2 = rule_score(&i, Strategy::SharedConditional, &cfg).0;
            let s3 = rule_score(&i, Strategy::Smoothed, &cfg).0;
            prop_assert!((s3 - s2).abs() <= 1e-6);
        }

        #[test]
        fn decisions_scale_invariant_without_epsilon(f in energies(), c in 1e-3f64..1e3, tau in 0.5f64..0.9) {
            let cfg = GateConfig { tau, epsilon: 0.0, ..Default::default() };
            let a = indicators(&f, 0.0).unwrap();
            let b = indicators(&f.scaled(c), 0.0).unwrap();
            for s in Strategy::ALL {
                prop_assert_eq!(rule_score(&a, s, &cfg).1, rule_score(&b, s, &cfg).1);
            }
        }
    }
}
