mod common;

use jnd::attack::{attack_step, total_cost, AttackConfig, ClassifierObjective};
use jnd::Tensor;

fn correctly_classified(model: &jnd::models::ClassifierModel, set: &jnd::data::LabeledImageSet, n: usize) -> Vec<(Tensor, usize)> {
    set.iter()
        .filter(|(img, y)| model.predict(img).unwrap().label == *y)
        .take(n)
        .map(|(img, y)| (img.clone(), y))
        .collect()
}

#[test]
fn small_step_decreases_cost_and_short_runs_never_increase_it() {
    let (model, held_out) = common::quick_classifier();
    let config = AttackConfig::default();
    let images = correctly_classified(&model, &held_out, 10);
    assert_eq!(images.len(), 10);

    for (img, y) in &images {
        let objective = ClassifierObjective::new(&model, *y, config.classifier_loss).unwrap();

        // one tiny step, in f64 so the decrease is not lost to rounding;
        // the start point sits away from the bounded-range kinks
        let x0: Tensor<f64> = img.map(|v| v.clamp(2.0, 253.0)).cast();
        let before = total_cost(&objective, &x0, &x0, &config.weights).unwrap();
        let alpha = 1e-3;
        let x1 = Tensor::new(
            x0.shape().to_vec(),
            x0.data().iter().zip(before.gradient.data()).map(|(x, g)| x - alpha * g).collect(),
        )
        .unwrap();
        let after = total_cost(&objective, &x1, &x0, &config.weights).unwrap();
        assert!(after.cost < before.cost, "label {y}: {} -> {}", before.cost, after.cost);

        // ten steps at a tenth of the default step size
        let small = AttackConfig {
            alpha: config.alpha / 10.0,
            ..config.clone()
        };
        let mut x = img.clone();
        let mut costs = Vec::new();
        for k in 0..=10 {
            let (next, record, _) = attack_step(&objective, &x, img, &small, k).unwrap();
            costs.push(record.cost);
            x = next;
        }
        for w in costs.windows(2) {
            assert!(w[1] <= w[0], "label {y}: cost rose {costs:?}");
        }
    }
}

#[test]
fn full_cost_gradient_through_a_trained_classifier() {
    let (model, held_out) = common::quick_classifier();
    for (seed, (img, y)) in correctly_classified(&model, &held_out, 3).into_iter().enumerate() {
        let (err, n) = common::full_cost_check(&model, &img, y, seed as u64);
        assert!(n >= 100);
        assert!(err < 1e-3, "relative error {err}");
    }
}
