use camforest_web::{cell_curve, discharge, fitted_behavior, Wdbc};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn cell_curve_crosses_half_at_threshold() {
    let r = parse(cell_curve(0.2, false, 25.0, 401).unwrap());
    let (x, model, circ) = (floats(&r["x"]), floats(&r["model"]), floats(&r["circuit"]));
    assert_eq!(x.len(), 401);
    let i = x.iter().position(|&v| (v - 0.2).abs() < 1e-9).unwrap();
    assert!((model[i] - 0.5).abs() < 1e-12);
    assert!((circ[i] - 0.5).abs() < 0.02, "circuit {}", circ[i]);
    assert!(model.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn discharge_matches_fitted_model() {
    let fit = parse(fitted_behavior(11).unwrap());
    let b = &fit["behavior"];
    let (a, bb, k) = (b["a"].as_f64().unwrap(), b["b"].as_f64().unwrap(), b["k"].as_f64().unwrap());
    let r = parse(discharge(-0.6, 0.0, a, bb, k).unwrap());
    let v = floats(&r["v"]);
    assert!(v.windows(2).all(|w| w[1] <= w[0]));
    let (sensed, model) = (r["sensed"].as_f64().unwrap(), r["model"].as_f64().unwrap());
    assert!((sensed - model).abs() < 0.05, "sensed {sensed} model {model}");
}

#[test]
fn surfaces_without_noise_match_clean_models() {
    let w = Wdbc::new(20.0, 20).unwrap();
    let r = parse(w.surfaces(0.0, 0, 16).unwrap());
    assert_eq!(floats(&r["dt"]).len(), 256);
    let dt_acc = r["dt_accuracy"].as_f64().unwrap();
    assert!(dt_acc > 0.85, "{dt_acc}");
    // Same seed, same surfaces.
    assert_eq!(w.surfaces(0.1, 3, 8).unwrap(), w.surfaces(0.1, 3, 8).unwrap());
    assert_ne!(w.surfaces(0.1, 3, 8).unwrap(), w.surfaces(0.1, 4, 8).unwrap());
}
