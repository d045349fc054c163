//! Central finite differences against the tape's gradients for every
//! parameter of every mode's composite objective.

mod common;

use fairrec_core::autograd::Graph;
use fairrec_core::fairrec::{Lambdas, LossBreakdown, Mode};
use fairrec_core::params::{ParamGrads, ParamId, ParamStore};

use common::{build, fixture, Fixture};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn lambdas(adversarial: f64) -> Lambdas {
    Lambdas {
        gender: 0.3,
        orthogonal: 0.7,
        adversarial,
    }
}

fn losses(store: &ParamStore, model: &fairrec_core::fairrec::FairRecModel, fx: &Fixture, l: Lambdas) -> LossBreakdown {
    let mut g = Graph::new(store);
    model.forward(&mut g, &fx.batch(), l, None).breakdown
}

fn analytic(store: &ParamStore, model: &fairrec_core::fairrec::FairRecModel, fx: &Fixture, l: Lambdas) -> ParamGrads {
    let mut g = Graph::new(store);
    let out = model.forward(&mut g, &fx.batch(), l, None);
    g.backward(out.root).params
}

/// Relative error with the denominator floored at 1e-4: central
/// differences carry ~1e-10 rounding noise, which would dominate entries
/// whose true gradient is itself that small.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-4)
}

/// Central difference of `f` over entry `i` of parameter `id`.
fn central(store: &mut ParamStore, id: ParamId, i: usize, f: &dyn Fn(&ParamStore) -> f64) -> f64 {
    let orig = store.get(id).as_slice().unwrap()[i];
    store.get_mut(id).as_slice_mut().unwrap()[i] = orig + H;
    let up = f(store);
    store.get_mut(id).as_slice_mut().unwrap()[i] = orig - H;
    let down = f(store);
    store.get_mut(id).as_slice_mut().unwrap()[i] = orig;
    (up - down) / (2.0 * H)
}

#[test]
fn every_parameter_matches_finite_differences() {
    let fx = fixture();
    for mode in Mode::ALL {
        let (mut store, model) = build(mode, 5);
        let l = lambdas(0.4);
        let grads = analytic(&store, &model, &fx, l);
        let disc = model.discriminator_params();
        let mut worst = (0.0, String::new());
        let mut checked = 0;
        for id in store.ids().collect::<Vec<_>>() {
            let is_disc = disc.contains(&id);
            for i in 0..store.get(id).len() {
                // Encoder and head parameters descend the composite objective;
                // the discriminator descends L_A itself.
                let numeric = central(&mut store, id, i, &|s| {
                    let b = losses(s, &model, &fx, l);
                    if is_disc {
                        b.l_a
                    } else {
                        b.total
                    }
                });
                let a = grads.get(id).as_slice().unwrap()[i];
                let e = rel_err(a, numeric);
                if e > worst.0 {
                    worst = (e, format!("{}[{i}]: analytic {a:e} numeric {numeric:e}", store.name(id)));
                }
                checked += 1;
            }
        }
        assert!(checked > 100, "{mode}: only {checked} entries");
        assert!(worst.0 < TOL, "{mode}: worst relative error {:e} at {}", worst.0, worst.1);
    }
}

#[test]
fn reversal_scales_encoder_gradient_by_minus_lambda() {
    let fx = fixture();
    let (mut store, model) = build(Mode::FairRec, 9);
    let with = analytic(&store, &model, &fx, lambdas(0.5));
    let without = analytic(&store, &model, &fx, lambdas(0.0));
    let disc = model.discriminator_params();
    let mut compared = 0;
    for id in store.ids().collect::<Vec<_>>() {
        if disc.contains(&id) || !store.name(id).starts_with("user_free") {
            continue;
        }
        for i in 0..store.get(id).len() {
            let d_la = central(&mut store, id, i, &|s| losses(s, &model, &fx, lambdas(0.5)).l_a);
            let diff = with.get(id).as_slice().unwrap()[i] - without.get(id).as_slice().unwrap()[i];
            let expected = -0.5 * d_la;
            assert!(
                (diff - expected).abs() <= 1e-5 * expected.abs() + 1e-9,
                "{}[{i}]: {diff:e} vs {expected:e}",
                store.name(id)
            );
            compared += 1;
        }
    }
    assert!(compared > 0);
    // Discriminator gradients do not depend on the reversal weight.
    for id in disc {
        assert_eq!(with.get(id), without.get(id));
    }
}

#[test]
fn zero_reversal_weight_cuts_discriminator_signal_from_encoders() {
    let fx = fixture();
    let (store, model) = build(Mode::NoAdv, 3);
    let grads = analytic(&store, &model, &fx, Lambdas::default());
    // no_adv: the discriminator still learns, the encoders ignore it.
    for id in model.discriminator_params() {
        assert!(grads.get(id).iter().any(|&v| v != 0.0));
    }
    let with_adv = analytic(&store, &model, &fx, Lambdas { adversarial: 0.9, ..Lambdas::default() });
    for id in store.ids() {
        assert_eq!(grads.get(id), with_adv.get(id), "{}", store.name(id));
    }
}
