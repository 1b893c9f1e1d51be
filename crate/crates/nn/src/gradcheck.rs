//! Central finite-difference verification of analytic gradients.

use crate::error::{NnError, Result};
use crate::params::{Grads, ParamId, ParamStore};

/// Denominator floor of the relative error, so that coordinates with
/// vanishing gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Steps tried by [`adaptive_diff_check`], largest first.
pub const STEP_LADDER: [f64; 13] = [
    1e-3, 5e-4, 2e-4, 1e-4, 5e-5, 2e-5, 1e-5, 5e-6, 2e-6, 1e-6, 5e-7, 2e-7, 1e-7,
];

/// Assumed rounding error of one loss evaluation, in units of `f64::EPSILON * |loss|`.
pub const ROUNDOFF_ULPS: f64 = 64.0;

fn central(store: &mut ParamStore, loss: &mut impl FnMut(&ParamStore) -> f64, id: ParamId, k: usize, h: f64) -> f64 {
    let orig = store.get(id)[k];
    store.get_mut(id)[k] = orig + h;
    let up = loss(store);
    store.get_mut(id)[k] = orig - h;
    let down = loss(store);
    store.get_mut(id)[k] = orig;
    (up - down) / (2.0 * h)
}

fn compare<F>(store: &mut ParamStore, analytic: &Grads, max_per_param: Option<usize>, mut numeric: F) -> GradCheck
where
    F: FnMut(&mut ParamStore, ParamId, usize) -> f64,
{
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = max_per_param.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for k in (0..n).step_by(stride) {
            let num = numeric(store, id, k);
            let a = analytic.get(id)[k];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR);
            out.checked += 1;
            if rel > out.max_rel_error || !rel.is_finite() {
                out.max_rel_error = rel;
                out.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    out
}

/// Compares `analytic` against `(f(p + eps) - f(p - eps)) / 2 eps` per
/// coordinate. With `max_per_param`, coordinates are sampled at an even
/// stride. The relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    analytic: &Grads,
    mut loss: F,
    eps: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheck>
where
    F: FnMut(&ParamStore) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NnError::Shape(format!("step {eps} outside [1e-7, 1e-3]")));
    }
    Ok(compare(store, analytic, max_per_param, |s, id, k| central(s, &mut loss, id, k, eps)))
}

/// Like [`finite_diff_check`], with the step chosen per coordinate from
/// [`STEP_LADDER`]. Each adjacent pair of central differences gets the error
/// estimate `|D(h) - D(h')| + ROUNDOFF_ULPS * EPSILON * |f| / h'`, and the
/// estimate `D(h')` of the best pair is used. Large steps lose accuracy
/// near activation kinks; small steps lose it to cancellation when the loss
/// is large next to the coordinate's derivative.
pub fn adaptive_diff_check<F>(
    store: &mut ParamStore,
    analytic: &Grads,
    mut loss: F,
    max_per_param: Option<usize>,
) -> Result<GradCheck>
where
    F: FnMut(&ParamStore) -> f64,
{
    let roundoff = ROUNDOFF_ULPS * f64::EPSILON * loss(store).abs();
    Ok(compare(store, analytic, max_per_param, |s, id, k| {
        let d: Vec<f64> = STEP_LADDER.iter().map(|&h| central(s, &mut loss, id, k, h)).collect();
        let err = |j: usize| (d[j] - d[j + 1]).abs() + roundoff / STEP_LADDER[j + 1];
        let best = (0..d.len() - 1)
            .min_by(|&a, &b| err(a).total_cmp(&err(b)))
            .expect("ladder has at least two steps");
        d[best + 1]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Activation, GruCell, Mlp};
    use crate::params::Init;
    use crate::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic(s: &ParamStore) -> (f64, Grads) {
        let mut t = Tape::new();
        let id = s.id("p").unwrap();
        let p = t.param(s, id);
        let c = t.input(vec![1.0, -2.0, 0.5]);
        let d = t.sub(p, c);
        let sq = t.mul(d, d);
        let loss = t.sum(sq);
        let mut g = Grads::zeros_like(s);
        t.backward(s, loss, &mut g).unwrap();
        (t.value(loss)[0], g)
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.add("p", 3, 1, Init::Uniform(1.0), &mut rng).unwrap();
        let (_, g) = quadratic(&s);
        let r = finite_diff_check(&mut s, &g, |s| quadratic(s).0, 1e-5, None).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    /// Unrolled GRU with an MLP readout and a guarded square root.
    fn recurrent_loss(s: &ParamStore, cell: &GruCell, head: &Mlp) -> (f64, Grads) {
        let mut t = Tape::new();
        let mut h = t.input(vec![0.0; cell.hidden]);
        let mut total = t.input(vec![0.0]);
        for step in 0..3 {
            let x = t.input(vec![0.1 * step as f64, -0.3, 0.7]);
            h = cell.step(&mut t, s, x, h);
            let y = head.apply(&mut t, s, h);
            let e = t.exp(y);
            let b = t.apply_boxes(&[0.5, 0.4, 0.2, 0.1], e);
            let target = t.input(vec![0.3, 0.1, 0.25, 0.2]);
            let d = t.sub(b, target);
            let sq = t.mul(d, d);
            let ss = t.sum(sq);
            let r = t.sqrt(ss);
            let sig = t.sigmoid(r);
            let th = t.tanh(sig);
            let sc = t.scale(th, 2.0);
            total = t.add(total, sc);
        }
        let mut g = Grads::zeros_like(s);
        t.backward(s, total, &mut g).unwrap();
        (t.value(total)[0], g)
    }

    fn recurrent_setup() -> (ParamStore, GruCell, Mlp) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let cell = GruCell::new(&mut s, &mut rng, "g", 3, 8).unwrap();
        let head = Mlp::new(
            &mut s,
            &mut rng,
            "head",
            8,
            &[(6, Activation::Relu), (4, Activation::Identity)],
        )
        .unwrap();
        (s, cell, head)
    }

    #[test]
    fn unrolled_recurrent_gradient_matches() {
        let (mut s, cell, head) = recurrent_setup();
        let (_, g) = recurrent_loss(&s, &cell, &head);
        let r = finite_diff_check(&mut s, &g, |s| recurrent_loss(s, &cell, &head).0, 1e-5, None)
            .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let (mut s, cell, head) = recurrent_setup();
        let (_, mut g) = recurrent_loss(&s, &cell, &head);
        // drop the reset-gate contribution of one hidden-to-hidden weight
        let id = cell.w_hh;
        let k = (0..g.get(id).len())
            .max_by(|&a, &b| g.get(id)[a].abs().total_cmp(&g.get(id)[b].abs()))
            .unwrap();
        g.get_mut(id)[k] *= 0.5;
        let r = finite_diff_check(&mut s, &g, |s| recurrent_loss(s, &cell, &head).0, 1e-5, None)
            .unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }

    #[test]
    fn sampling_limits_coordinates() {
        let (mut s, cell, head) = recurrent_setup();
        let (_, g) = recurrent_loss(&s, &cell, &head);
        let r = finite_diff_check(&mut s, &g, |s| recurrent_loss(s, &cell, &head).0, 1e-5, Some(2))
            .unwrap();
        assert!(r.checked <= 2 * s.len());
    }

    #[test]
    fn step_outside_range_rejected() {
        let (mut s, cell, head) = recurrent_setup();
        let g = Grads::zeros_like(&s);
        assert!(finite_diff_check(&mut s, &g, |s| recurrent_loss(s, &cell, &head).0, 0.1, None).is_err());
    }

    /// `relu(p - c)` summed, with one coordinate just below the kink.
    fn kinked(s: &ParamStore) -> (f64, Grads) {
        let mut t = Tape::new();
        let p = t.param(s, s.id("p").unwrap());
        let c = t.input(vec![0.5, -0.2, 0.3]);
        let d = t.sub(p, c);
        let r = t.relu(d);
        let w = t.input(vec![3.0, -2.0, 5.0]);
        let y = t.mul(r, w);
        let loss = t.sum(y);
        let mut g = Grads::zeros_like(s);
        t.backward(s, loss, &mut g).unwrap();
        (t.value(loss)[0], g)
    }

    #[test]
    fn adaptive_steps_resolve_a_nearby_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let id = s.add("p", 3, 1, Init::Constant(0.0), &mut rng).unwrap();
        s.get_mut(id).copy_from_slice(&[0.5 - 2e-5, 0.1, 0.2]);
        let (_, g) = kinked(&s);
        let fixed = finite_diff_check(&mut s, &g, |s| kinked(s).0, 1e-3, None).unwrap();
        assert!(fixed.max_rel_error > 0.1, "{fixed:?}");
        let r = adaptive_diff_check(&mut s, &g, |s| kinked(s).0, None).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn adaptive_steps_handle_large_losses() {
        let (mut s, cell, head) = recurrent_setup();
        let big = |s: &ParamStore| {
            let (l, g) = recurrent_loss(s, &cell, &head);
            let mut g2 = Grads::zeros_like(s);
            for id in s.ids() {
                for (a, b) in g2.get_mut(id).iter_mut().zip(g.get(id)) {
                    *a = 1e4 * b;
                }
            }
            (1e4 * l, g2)
        };
        let (_, g) = big(&s);
        let r = adaptive_diff_check(&mut s, &g, |s| big(s).0, None).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn adaptive_check_detects_corruption() {
        let (mut s, cell, head) = recurrent_setup();
        let (_, mut g) = recurrent_loss(&s, &cell, &head);
        let id = cell.w_hh;
        let k = (0..g.get(id).len())
            .max_by(|&a, &b| g.get(id)[a].abs().total_cmp(&g.get(id)[b].abs()))
            .unwrap();
        g.get_mut(id)[k] *= 0.5;
        let r = adaptive_diff_check(&mut s, &g, |s| recurrent_loss(s, &cell, &head).0, None).unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }
}
