use collapsar::ensemble::EnsembleModel;
use collapsar::measurement::MeasurementModel;
use collapsar::SpatialGrid;

const QMUPL: &str = r#"{
  "model": "qmupl",
  "grid": {"x_min": -4.0, "x_max": 4.0, "n_points": 32},
  "particles": [{"mass": 1.0}],
  "lambda0": 0.25,
  "hamiltonian": {"kind": {"type": "free"}, "masses": [1.0]},
  "dt": 0.0025,
  "horizon": 1.0,
  "stride": 40,
  "initial": {"type": "gaussian", "center": 0.0, "sigma": 0.6, "momentum": 0.0}
}"#;

#[test]
fn model_round_trips_through_json() {
    let m: EnsembleModel = serde_json::from_str(QMUPL).unwrap();
    m.validate().unwrap();
    let back: EnsembleModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(m, back);
    let preset = EnsembleModel::Measurement(MeasurementModel::pointer_sharp(0.2).unwrap());
    let back: EnsembleModel = serde_json::from_str(&serde_json::to_string(&preset).unwrap()).unwrap();
    assert_eq!(preset, back);
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    let mut v: serde_json::Value = serde_json::from_str(QMUPL).unwrap();
    for path in [
        &["extra"][..],
        &["grid", "extra"],
        &["hamiltonian", "extra"],
        &["initial", "extra"],
        &["particles", "0", "extra"],
    ] {
        let mut bad = v.clone();
        let mut node = &mut bad;
        for key in &path[..path.len() - 1] {
            node = match key.parse::<usize>() {
                Ok(i) => &mut node[i],
                Err(_) => &mut node[*key],
            };
        }
        node[path[path.len() - 1]] = 1.into();
        let err = serde_json::from_value::<EnsembleModel>(bad).unwrap_err().to_string();
        assert!(err.contains("unknown field"), "{path:?}: {err}");
    }
    v["model"] = "bohmian".into();
    assert!(serde_json::from_value::<EnsembleModel>(v).is_err());
}

#[test]
fn grids_validate_while_parsing() {
    assert!(serde_json::from_str::<SpatialGrid>(r#"{"x_min": 0.0, "x_max": 1.0, "n_points": 0}"#).is_err());
    assert!(serde_json::from_str::<SpatialGrid>(r#"{"x_min": 1.0, "x_max": 0.0, "n_points": 16}"#).is_err());
    let g: SpatialGrid = serde_json::from_str(r#"{"x_min": -1.0, "x_max": 1.0, "n_points": 16}"#).unwrap();
    assert_eq!(g.n_points(), 16);
}

#[test]
fn negative_rate_names_the_field() {
    let mut v: serde_json::Value = serde_json::from_str(QMUPL).unwrap();
    v["lambda0"] = (-0.5).into();
    let m: EnsembleModel = serde_json::from_value(v).unwrap();
    assert!(m.validate().unwrap_err().to_string().contains("lambda0"));
}
