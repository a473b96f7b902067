//! Prior hyperparameters and their empirical-Bayes updates.
//!
//! Feature j in group g has prior b_j | ψ_j ~ N(0, ψ_j γ γ'_g I_d); the
//! outcome column uses γ alone. ψ_j ~ InvGamma(κ, ν).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EbMode {
    #[default]
    Off,
    /// Unconstrained γ_g per group.
    Free,
    /// γ'_g with Σ_g |G_g| log γ'_g = 0 and γ held fixed.
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub gamma_overall: f64,
    pub gamma_group: Vec<f64>,
    pub kappa: f64,
    pub nu: f64,
    pub eb_mode: EbMode,
}

impl HyperParams {
    pub fn new(d: usize, n_groups: usize) -> Self {
        Self {
            gamma_overall: 1.0 / d as f64,
            gamma_group: vec![1.0; n_groups.max(1)],
            kappa: 9.0,
            nu: 4.0,
            eb_mode: EbMode::Off,
        }
    }

    pub fn with_eb(mut self, mode: EbMode) -> Self {
        self.eb_mode = mode;
        self
    }

    /// Prior scale of column j; `group` is None for the outcome column.
    pub fn gamma_for(&self, group: Option<usize>) -> f64 {
        match group {
            Some(g) => self.gamma_overall * self.gamma_group[g],
            None => self.gamma_overall,
        }
    }

    /// Prior mean of ψ, ν/(κ-1).
    pub fn prior_psi_mean(&self) -> f64 {
        self.nu / (self.kappa - 1.0)
    }

    /// Apply one empirical-Bayes step given per-feature statistics
    /// s_j = E(ψ_j⁻¹){tr Ω_j + μ_jᵀμ_j}.
    pub fn eb_step(&mut self, stats: &[f64], groups: &[Vec<usize>], d: usize) {
        match self.eb_mode {
            EbMode::Off => {}
            EbMode::Free => {
                let g = eb_update_free(stats, groups, d);
                for (k, v) in g.into_iter().enumerate() {
                    self.gamma_group[k] = v / self.gamma_overall;
                }
            }
            EbMode::Constrained => {
                self.gamma_group = eb_update_constrained(stats, groups);
            }
        }
    }
}

/// Per-group argmax of Σ_{j∈G_g} [-(d/2) log γ_g - s_j/(2γ_g)].
pub fn eb_update_free(stats: &[f64], groups: &[Vec<usize>], d: usize) -> Vec<f64> {
    groups
        .iter()
        .map(|g| {
            let a: f64 = g.iter().map(|&j| stats[j]).sum();
            a / (g.len() * d) as f64
        })
        .collect()
}

/// Argmin of Σ_g a_g / γ'_g subject to Σ_g |G_g| log γ'_g = 0, where
/// a_g = Σ_{j∈G_g} s_j. Stationarity gives γ'_g ∝ a_g/|G_g|.
pub fn eb_update_constrained(stats: &[f64], groups: &[Vec<usize>]) -> Vec<f64> {
    let ratio: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&j| stats[j]).sum::<f64>() / g.len() as f64)
        .collect();
    let total: usize = groups.iter().map(Vec::len).sum();
    let mean_log = groups
        .iter()
        .zip(&ratio)
        .map(|(g, r)| g.len() as f64 * r.ln())
        .sum::<f64>()
        / total as f64;
    ratio.iter().map(|r| (r.ln() - mean_log).exp()).collect()
}

/// γ-dependent part of the variational lower bound for absolute group scales.
pub fn eb_objective(stats: &[f64], groups: &[Vec<usize>], d: usize, gamma: &[f64]) -> f64 {
    groups
        .iter()
        .zip(gamma)
        .map(|(g, &gm)| {
            g.iter()
                .map(|&j| -0.5 * d as f64 * gm.ln() - stats[j] / (2.0 * gm))
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn free_single_group_unit_moments() {
        // E(ψ⁻¹){tr Ω + μᵀμ} = d for every feature: γ = 1.
        let d = 3;
        let stats = vec![3.0; 5];
        let g = eb_update_free(&stats, &[vec![0, 1, 2, 3, 4]], d);
        assert!((g[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constrained_equal_groups() {
        let stats = vec![2.0, 2.0, 2.0, 2.0];
        let g = eb_update_constrained(&stats, &[vec![0, 1], vec![2, 3]]);
        assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constrained_two_groups() {
        let stats = vec![1.0, 1.0, 4.0, 4.0];
        let g = eb_update_constrained(&stats, &[vec![0, 1], vec![2, 3]]);
        assert!((g[0] - 0.5).abs() < 1e-14);
        assert!((g[1] - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn constrained_is_feasible(stats in proptest::collection::vec(0.01f64..50.0, 7), split in 1usize..6) {
            let groups = vec![(0..split).collect::<Vec<_>>(), (split..7).collect()];
            let g = eb_update_constrained(&stats, &groups);
            let c: f64 = groups.iter().zip(&g).map(|(gr, v)| gr.len() as f64 * v.ln()).sum();
            prop_assert!(c.abs() < 1e-10);
        }
    }
}
