//! Reward shaping: goal bonus, objective-trend extrinsic term, and the
//! parallel-approach intrinsic heading term.
//!
//! The intrinsic signal predicts the heading that makes the tracked field
//! elements converge toward their destination values at proportional rates,
//! then pays the agent for steering close to that prediction. The prediction
//! needs only local element values and gradients, so it carries no positional
//! information.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Element, ElementGradient, FieldSample};
use crate::geo::angular_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardVariant {
    /// Goal bonus only.
    #[serde(rename = "SR")]
    Sparse,
    /// Goal bonus plus the objective-trend term.
    #[serde(rename = "ER")]
    Extrinsic,
    /// Extrinsic plus the parallel-approach intrinsic term.
    #[serde(rename = "ST")]
    Shaped,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    /// Bonus paid when the objective drops below the success threshold.
    pub r_goal: f64,
    /// Weight of the objective-trend extrinsic term.
    pub alpha: f64,
    /// Weight of the intrinsic heading term.
    pub beta: f64,
    /// Use the raw printed sign of the trend term (penalizes approach);
    /// default false implements the approach-positive intent.
    pub literal_trend_sign: bool,
    /// The two elements driving the parallel-approach prediction.
    pub pair: (Element, Element),
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            variant: RewardVariant::Shaped,
            r_goal: 200.0,
            alpha: 10.0,
            beta: 1.0,
            literal_trend_sign: false,
            pair: (Element::Decl, Element::Bh),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub total: f64,
    pub extrinsic: f64,
    pub intrinsic: f64,
}

/// Extrinsic reward: the goal bonus at success, otherwise the weighted
/// objective trend, positive when the vehicle approached the destination.
pub fn extrinsic_reward(f_now: f64, f_prev: f64, at_goal: bool, cfg: &RewardConfig) -> f64 {
    if at_goal {
        cfg.r_goal
    } else if cfg.literal_trend_sign {
        cfg.alpha * (f_now - f_prev)
    } else {
        cfg.alpha * (f_prev - f_now)
    }
}

/// Parallel-approach heading: the direction along which both tracked elements
/// close their deficits at the same proportional rate.
///
/// With deficits `bd_i = B_i - B_i_dest` and per-km gradients `g_i`:
///
/// ```text
/// heading = atan2(bd_1 * g2_x - bd_2 * g1_x,
///                 bd_2 * g1_y - bd_1 * g2_y)
/// ```
///
/// atan2 keeps the full circle; a plain arctan would collapse opposite
/// headings onto one value.
pub fn predicted_heading(
    current: &FieldSample,
    dest: &FieldSample,
    g1: &ElementGradient,
    g2: &ElementGradient,
    pair: (Element, Element),
) -> Result<f64> {
    let bd1 = pair.0.delta(current.element(pair.0), dest.element(pair.0));
    let bd2 = pair.1.delta(current.element(pair.1), dest.element(pair.1));
    let num = bd1 * g2.east_per_km - bd2 * g1.east_per_km;
    let den = bd2 * g1.north_per_km - bd1 * g2.north_per_km;
    if num == 0.0 && den == 0.0 {
        return Err(Error::IndeterminateHeading);
    }
    Ok(num.atan2(den))
}

/// Intrinsic reward: positive inside a quarter-circle window around the
/// predicted heading, negative beyond it. The angular difference is wrapped
/// to [0, pi] so near-opposite headings are penalized, not rewarded.
pub fn intrinsic_reward(lambda_actual: f64, lambda_pred: f64, cfg: &RewardConfig) -> f64 {
    cfg.beta * (std::f64::consts::FRAC_PI_4 - angular_distance(lambda_actual, lambda_pred))
}

/// Combine the terms according to the configured variant. `lambda_pred` is
/// `None` when the prediction was indeterminate; the intrinsic term then
/// contributes nothing.
pub fn total_reward(
    at_goal: bool,
    f_now: f64,
    f_prev: f64,
    lambda_actual: f64,
    lambda_pred: Option<f64>,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let (extrinsic, intrinsic) = match cfg.variant {
        RewardVariant::Sparse => (if at_goal { cfg.r_goal } else { 0.0 }, 0.0),
        RewardVariant::Extrinsic => (extrinsic_reward(f_now, f_prev, at_goal, cfg), 0.0),
        RewardVariant::Shaped => (
            extrinsic_reward(f_now, f_prev, at_goal, cfg),
            lambda_pred.map_or(0.0, |lp| intrinsic_reward(lambda_actual, lp, cfg)),
        ),
    };
    RewardBreakdown {
        total: extrinsic + intrinsic,
        extrinsic,
        intrinsic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::objective;
    use crate::field::{gradient, FieldProvider, LinearElementField};
    use crate::geo::RegionBounds;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};

    fn grad(e: f64, n: f64) -> ElementGradient {
        ElementGradient {
            east_per_km: e,
            north_per_km: n,
            one_sided: false,
        }
    }

    /// Fake samples where only the chosen pair matters.
    fn sample_with(d: f64, i: f64, bh: f64) -> FieldSample {
        FieldSample {
            bf: bh / i.cos().max(1e-6),
            bh,
            bx: bh * d.cos(),
            by: bh * d.sin(),
            bz: bh * i.tan(),
            decl_rad: d,
            incl_rad: i,
            degenerate_horizontal: false,
        }
    }

    #[test]
    fn extrinsic_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(extrinsic_reward(0.01, 0.5, true, &cfg), 200.0);
        assert_eq!(extrinsic_reward(1.0, 1.0, false, &cfg), 0.0);
        assert!((extrinsic_reward(1.5, 2.0, false, &cfg) - 5.0).abs() < 1e-12);
        let literal = RewardConfig {
            literal_trend_sign: true,
            ..cfg
        };
        assert!((extrinsic_reward(1.5, 2.0, false, &literal) + 5.0).abs() < 1e-12);
    }

    #[test]
    fn predicted_heading_hand_cases() {
        // Orthonormal gradients on (D, I); deficits expressed through samples.
        let pair = (Element::Decl, Element::Incl);
        let g1 = grad(1e-3, 0.0);
        let g2 = grad(0.0, 1e-3);
        let a = 0.01;
        // Both elements need +a: move along (1, 1).
        let cur = sample_with(0.0, 0.0, 30000.0);
        let dst = sample_with(a, a, 30000.0);
        let h = predicted_heading(&cur, &dst, &g1, &g2, pair).unwrap();
        assert!((h - FRAC_PI_4).abs() < 1e-12);
        // Deficit only in element 1: move due east, along g1.
        let dst = sample_with(a, 0.0, 30000.0);
        let h = predicted_heading(&cur, &dst, &g1, &g2, pair).unwrap();
        assert!(h.abs() < 1e-12);
        // Deficits (a, sqrt(3) a): arctan(sqrt(3)) = pi/3.
        let dst = sample_with(a, 3.0f64.sqrt() * a, 30000.0);
        let h = predicted_heading(&cur, &dst, &g1, &g2, pair).unwrap();
        assert!((h - FRAC_PI_3).abs() < 1e-12);
    }

    #[test]
    fn predicted_heading_indeterminate_at_goal() {
        let pair = (Element::Decl, Element::Incl);
        let s = sample_with(0.02, -0.4, 30000.0);
        let e = predicted_heading(&s, &s, &grad(1e-3, 0.0), &grad(0.0, 1e-3), pair);
        assert!(matches!(e, Err(Error::IndeterminateHeading)));
        // Zero gradients: likewise indeterminate.
        let d = sample_with(0.04, -0.4, 30000.0);
        let e = predicted_heading(&s, &d, &grad(0.0, 0.0), &grad(0.0, 0.0), pair);
        assert!(matches!(e, Err(Error::IndeterminateHeading)));
    }

    #[test]
    fn intrinsic_cases() {
        let cfg = RewardConfig {
            beta: 1.0,
            ..Default::default()
        };
        assert!((intrinsic_reward(1.0, 1.0, &cfg) - FRAC_PI_4).abs() < 1e-12);
        assert!(intrinsic_reward(1.0 + FRAC_PI_4, 1.0, &cfg).abs() < 1e-12);
        assert!((intrinsic_reward(1.0 + FRAC_PI_2, 1.0, &cfg) + FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn intrinsic_peaks_at_prediction_and_decreases() {
        let cfg = RewardConfig::default();
        let pred = 0.7;
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let off = k as f64 / 100.0 * PI;
            let r = intrinsic_reward(pred + off, pred, &cfg);
            assert!(r < prev || k == 0);
            prev = r;
        }
        // Wrapping: an offset just past pi comes back down the other side.
        let a = intrinsic_reward(pred + PI - 0.01, pred, &cfg);
        let b = intrinsic_reward(pred + PI + 0.01, pred, &cfg);
        assert!((a - b).abs() < 0.03);
    }

    #[test]
    fn variant_composition() {
        let st = RewardConfig::default();
        let sr = RewardConfig {
            variant: RewardVariant::Sparse,
            ..st
        };
        let er = RewardConfig {
            variant: RewardVariant::Extrinsic,
            ..st
        };
        // Sparse pays nothing off-goal.
        assert_eq!(total_reward(false, 1.0, 2.0, 0.3, Some(0.3), &sr).total, 0.0);
        // Shaped at goal: bonus plus intrinsic.
        let r = total_reward(true, 0.01, 0.2, 0.3, Some(0.3), &st);
        assert!((r.total - (200.0 + FRAC_PI_4)).abs() < 1e-12);
        // ER equals ST with beta = 0 on identical transitions.
        let st_beta0 = RewardConfig { beta: 0.0, ..st };
        for (at_goal, f_now, f_prev) in [(false, 1.3, 1.5), (true, 0.01, 0.4), (false, 2.0, 1.0)] {
            let a = total_reward(at_goal, f_now, f_prev, 0.2, Some(0.9), &er);
            let b = total_reward(at_goal, f_now, f_prev, 0.2, Some(0.9), &st_beta0);
            assert_eq!(a.total, b.total);
        }
    }

    /// One step along the predicted heading closes both element deficits at
    /// the same proportional rate, for arbitrary linearly independent
    /// gradients.
    #[test]
    fn proportional_convergence_identity() {
        let region = RegionBounds::new(0.0, 6.0, 0.0, 6.0).unwrap();
        let mut rng = crate::rng::rng_from(5, "reward/proportional");
        use rand::Rng as _;
        for _ in 0..200 {
            let g1 = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let g2 = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let cross: f64 = g1.0 * g2.1 - g1.1 * g2.0;
            if cross.abs() < 0.1 {
                continue; // nearly collinear; the identity needs independence
            }
            let field = LinearElementField::new(region)
                .unwrap()
                .incl(-0.3, (0.0, 0.0))
                .decl(0.0, (0.0, 0.0))
                .bh(30000.0, g1)
                // second element rides on inclination
                .incl(-0.3, (g2.0 * 1e-5, g2.1 * 1e-5));
            let frame = *field.frame();
            let pair = (Element::Bh, Element::Incl);
            let cur_p = frame.to_geo(100.0, 100.0);
            let dst_p = frame.to_geo(140.0, 130.0);
            let cur = field.sample(&cur_p).unwrap();
            let dst = field.sample(&dst_p).unwrap();
            let gb = gradient(&field, &frame, &cur_p, Element::Bh, 1.0).unwrap();
            let gi = gradient(&field, &frame, &cur_p, Element::Incl, 1.0).unwrap();
            let h = predicted_heading(&cur, &dst, &gb, &gi, pair).unwrap();
            let step = 1.0;
            let next_p = frame.to_geo(100.0 + step * h.cos(), 100.0 + step * h.sin());
            let next = field.sample(&next_p).unwrap();
            let ratio = |e: Element| {
                e.delta(next.element(e), cur.element(e)) / e.delta(dst.element(e), cur.element(e))
            };
            let r1 = ratio(Element::Bh);
            let r2 = ratio(Element::Incl);
            assert!(
                (r1 - r2).abs() < 1e-6,
                "proportional rates diverge: {r1} vs {r2}"
            );
        }
    }

    /// In a field with orthogonal equal-weight gradients the prediction is the
    /// exact minimizer of the next-step objective; following it drives the
    /// objective monotonically to the goal.
    #[test]
    fn following_prediction_descends_objective() {
        let (field, task_origin, task_dest) = oracle_field();
        let frame = *field.frame();
        let so = field.sample(&task_origin).unwrap();
        let sd = field.sample(&task_dest).unwrap();
        let pair = (Element::Decl, Element::Incl);
        let zeta = 0.01;
        // Start on the anti-diagonal line through the destination.
        let (dx, dy) = frame.to_km(&task_dest);
        let mut pos = (dx - 60.0, dy + 60.0);
        let mut f_prev = {
            let s = field.sample(&frame.to_geo(pos.0, pos.1)).unwrap();
            objective(&s, &sd, &so).unwrap()
        };
        let step = 1.0;
        for _ in 0..500 {
            if f_prev < zeta {
                break;
            }
            let p = frame.to_geo(pos.0, pos.1);
            let cur = field.sample(&p).unwrap();
            let g1 = gradient(&field, &frame, &p, pair.0, 1.0).unwrap();
            let g2 = gradient(&field, &frame, &p, pair.1, 1.0).unwrap();
            let h = predicted_heading(&cur, &sd, &g1, &g2, pair).unwrap();
            pos = (pos.0 + step * h.cos(), pos.1 + step * h.sin());
            let s = field.sample(&frame.to_geo(pos.0, pos.1)).unwrap();
            let f_now = objective(&s, &sd, &so).unwrap();
            assert!(f_now < f_prev, "objective must strictly decrease");
            f_prev = f_now;
        }
        assert!(f_prev < zeta, "did not reach the goal threshold");
    }

    /// Orthogonal-gradient linear field plus a diagonal task; used by the
    /// argmin oracle here and in the acceptance suite.
    pub(crate) fn oracle_field() -> (LinearElementField, crate::geo::GeoPoint, crate::geo::GeoPoint) {
        let region = RegionBounds::new(0.0, 6.0, 0.0, 6.0).unwrap();
        let s = 1e-3; // rad per km for both angular elements
        let field = LinearElementField::new(region)
            .unwrap()
            .decl(-0.3, (s, 0.0))
            .incl(-0.5, (0.0, s))
            // Third element varies along the task diagonal so its deficit
            // vanishes on the anti-diagonal through the destination.
            .bh(30000.0, (2.0, 2.0));
        let frame = *field.frame();
        let dest = frame.to_geo(300.0, 300.0);
        let origin = frame.to_geo(220.0, 220.0);
        (field, origin, dest)
    }

    #[test]
    fn prediction_matches_exhaustive_argmin() {
        let (field, task_origin, task_dest) = oracle_field();
        let frame = *field.frame();
        let so = field.sample(&task_origin).unwrap();
        let sd = field.sample(&task_dest).unwrap();
        let pair = (Element::Decl, Element::Incl);
        let (dx, dy) = frame.to_km(&task_dest);
        let mut rng = crate::rng::rng_from(9, "reward/argmin");
        use rand::Rng as _;
        let probe = 1.0;
        for _ in 0..100 {
            // Random state on the anti-diagonal through the destination.
            let t = rng.gen_range(-80.0..80.0f64);
            let t = if t.abs() < 2.0 { 10.0 } else { t };
            let (x, y) = (dx + t, dy - t);
            let p = frame.to_geo(x, y);
            let cur = field.sample(&p).unwrap();
            let g1 = gradient(&field, &frame, &p, pair.0, 1.0).unwrap();
            let g2 = gradient(&field, &frame, &p, pair.1, 1.0).unwrap();
            let pred = predicted_heading(&cur, &sd, &g1, &g2, pair).unwrap();
            // Exhaustive scan of next-step objective over 3600 headings.
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..3600 {
                let th = k as f64 / 3600.0 * std::f64::consts::TAU - PI;
                let q = frame.to_geo(x + probe * th.cos(), y + probe * th.sin());
                let s = field.sample(&q).unwrap();
                let f = objective(&s, &sd, &so).unwrap();
                if f < best.0 {
                    best = (f, th);
                }
            }
            assert!(
                angular_distance(pred, best.1) < 1e-3,
                "prediction {pred} vs argmin {}",
                best.1
            );
        }
    }
}
