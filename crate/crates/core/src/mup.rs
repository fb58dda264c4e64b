//! Width-aware hyperparameter rescaling and mixing-budget algebra.
//!
//! Base hyperparameters tuned at a proxy width transfer to a target width
//! `d` via the multiplier `m_N = d / d_base`: the learning rate shrinks to
//! `eta / m_N` and the weight decay grows to `lambda * m_N`. The rescaling
//! applies to hidden-layer parameters during training; this module reports
//! the scalar effective values only.
//!
//! A total budget of `D` tokens splits into a low-resource portion
//! `alpha * D = R_max * D_LR` (the unique corpus repeated `R_max` times)
//! and a high-resource remainder. When the requested repetitions exceed the
//! budget the mix caps at `alpha = 1` instead of failing: such runs simply
//! degenerate to monolingual training.

use crate::model::{BaseHp, EffectiveHp, MixBudget, ScaleSpec};

/// Rescales a base hyperparameter pair to its effective values at the given
/// scale: `eta_eff = eta / m_N`, `lambda_eff = lambda * m_N`.
pub fn rescale_hp(base: BaseHp, scale: &ScaleSpec) -> EffectiveHp {
    let m = scale.m_n();
    EffectiveHp::from_rescale(base.weight_decay() * m, base.learning_rate() / m)
}

/// Total training budget in tokens: `multiplier * n_nonemb`.
pub fn token_budget(scale: &ScaleSpec, multiplier: u64) -> u64 {
    multiplier * scale.n_nonemb()
}

/// Splits a total budget `d` between `r_max` repetitions of a `d_lr`-token
/// corpus and fresh auxiliary data.
///
/// `alpha = min(1, r_max * d_lr / d)`; the `capped` flag records when the
/// raw ratio exceeded 1 and the remainder was clamped to zero.
pub fn mix_budget(d: u64, d_lr: u64, r_max: u32) -> MixBudget {
    assert!(d > 0, "total budget must be positive");
    assert!(d_lr > 0, "corpus size must be positive");
    assert!(r_max > 0, "repetition budget must be positive");
    let lr_tokens = u64::from(r_max) * d_lr;
    let raw = lr_tokens as f64 / d as f64;
    let capped = lr_tokens > d;
    MixBudget {
        total_tokens: d,
        lr_corpus_tokens: d_lr,
        repetition_budget: r_max,
        alpha: if capped { 1.0 } else { raw },
        hr_tokens: d.saturating_sub(lr_tokens),
        capped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scale(name: &str, d_model: u32, n_nonemb: u64) -> ScaleSpec {
        ScaleSpec::with_default_base(name, d_model, n_nonemb).unwrap()
    }

    #[test]
    fn rescale_at_4x_width() {
        let hp = BaseHp::new(0.1, 0.01).unwrap();
        let eff = rescale_hp(hp, &scale("1.43B", 2048, 973_000_000));
        assert_abs_diff_eq!(eff.weight_decay, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(eff.learning_rate, 0.0025, epsilon = 1e-12);
    }

    #[test]
    fn rescale_is_identity_at_proxy_width() {
        let hp = BaseHp::new(0.1, 0.01).unwrap();
        let eff = rescale_hp(hp, &scale("150M", 512, 23_000_000));
        assert_eq!(eff.weight_decay, 0.1);
        assert_eq!(eff.learning_rate, 0.01);
    }

    #[test]
    fn rescale_at_2x_width() {
        let hp = BaseHp::new(1.0, 0.01).unwrap();
        let eff = rescale_hp(hp, &scale("380M", 1024, 122_000_000));
        assert_abs_diff_eq!(eff.weight_decay, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eff.learning_rate, 0.005, epsilon = 1e-12);
    }

    #[test]
    fn budget_is_multiplier_times_params() {
        assert_eq!(token_budget(&scale("1.43B", 2048, 973_000_000), 100), 97_300_000_000);
        assert_eq!(token_budget(&scale("150M", 512, 23_000_000), 100), 2_300_000_000);
        assert_eq!(token_budget(&scale("150M", 512, 23_000_000), 1), 23_000_000);
    }

    #[test]
    fn mix_splits_budget() {
        let mix = mix_budget(12_200_000_000, 200_000_000, 20);
        assert!(!mix.capped);
        assert_abs_diff_eq!(mix.alpha, 0.328, epsilon = 1e-3);
        assert_eq!(mix.hr_tokens, 8_200_000_000);
    }

    #[test]
    fn mix_at_100_reps_of_97b() {
        let mix = mix_budget(97_310_000_000, 200_000_000, 100);
        assert!(!mix.capped);
        assert_abs_diff_eq!(mix.alpha, 0.206, epsilon = 1e-3);
    }

    #[test]
    fn mix_caps_when_repetitions_exceed_budget() {
        let mix = mix_budget(2_280_000_000, 200_000_000, 100);
        assert!(mix.capped);
        assert_eq!(mix.alpha, 1.0);
        assert_eq!(mix.hr_tokens, 0);
    }

    #[test]
    fn reducing_r_max_to_floor_uncaps() {
        let d: u64 = 2_280_000_000;
        let d_lr: u64 = 200_000_000;
        let mix = mix_budget(d, d_lr, 100);
        assert!(mix.capped);
        let floor = (d / d_lr) as u32;
        let mix = mix_budget(d, d_lr, floor);
        assert!(!mix.capped);
        assert!(mix.alpha <= 1.0);
    }
}
