//! Toy-scale training oracle: 200 steps on one fixed synthetic triplet must
//! cut the loss in half, and identical seeds must reproduce identical traces.

use dest_core::data::{synth_scene, SceneParams, SceneTriplet};
use dest_core::net::variant;
use dest_core::selfsup::{LossConfig, TrainState};

fn micro_b0() -> dest_core::net::VariantConfig {
    let mut cfg = variant("B0").unwrap();
    cfg.decoder_width = 64;
    cfg
}

#[test]
fn two_hundred_steps_on_one_triplet_halve_the_loss() {
    let cfg = micro_b0();
    let mut ts = TrainState::<f32>::new(7, &cfg, &cfg, 4e-5, LossConfig::default(), true).unwrap();
    let s: SceneTriplet<f32> = synth_scene(7, &SceneParams::default()).unwrap();
    let (prev, target, next) = (
        SceneTriplet::batched(&s.prev),
        SceneTriplet::batched(&s.target),
        SceneTriplet::batched(&s.next),
    );
    let mut first = 0.0;
    let mut last = 0.0;
    for step in 0..200 {
        let st = ts.step(&prev, &target, &next, &s.k).unwrap();
        assert!(st.loss.is_finite() && st.loss > 0.0, "step {step}: loss {}", st.loss);
        if step == 0 {
            first = st.loss;
        }
        last = st.loss;
    }
    assert!(
        last <= 0.5 * first,
        "loss must at least halve on a fixed triplet: {first} -> {last}"
    );
}

#[test]
fn short_traces_are_bit_identical_across_runs() {
    let run = || {
        let cfg = micro_b0();
        let mut ts =
            TrainState::<f32>::new(11, &cfg, &cfg, 4e-5, LossConfig::default(), true).unwrap();
        let s: SceneTriplet<f32> = synth_scene(11, &SceneParams::default()).unwrap();
        let (p, t, n) = (
            SceneTriplet::batched(&s.prev),
            SceneTriplet::batched(&s.target),
            SceneTriplet::batched(&s.next),
        );
        (0..3).map(|_| ts.step(&p, &t, &n, &s.k).unwrap().loss).collect::<Vec<f64>>()
    };
    assert_eq!(run(), run());
}
