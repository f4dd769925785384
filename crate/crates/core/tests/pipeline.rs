use std::path::Path;

use vessel_track::association;
use vessel_track::ingest::{parse_ground_truth, parse_mot_detections, write_ground_truth, write_mot_detections, RunConfig};
use vessel_track::metrics::evaluate;
use vessel_track::pipeline::{
    parse_predictions, parse_tracks, predict_tracks, predict_tracks_cv, track_boxes, track_histories,
    write_predictions, write_tracks,
};
use vessel_track::scenario::{synthesize, truth_to_ground_truth, Scenario};

fn load(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn text_formats_compose_into_a_scored_run() {
    for name in ["straight.json", "arc.json", "crossing.json", "harbor_occlusion.json"] {
        let scenario = load(name);
        let (truth, stream) = synthesize(&scenario).unwrap();
        let gt = parse_ground_truth(&write_ground_truth(&truth_to_ground_truth(&truth))).unwrap();
        let stream = parse_mot_detections(&write_mot_detections(&stream)).unwrap();

        let cfg = RunConfig::default();
        let tracks = association::run(&stream, &cfg).unwrap();
        let rows = parse_tracks(&write_tracks(&tracks)).unwrap();
        let histories = track_histories(&rows).unwrap();
        let boxes = track_boxes(&rows).unwrap();

        let run = predict_tracks(&histories, &cfg, 10).unwrap();
        let preds = parse_predictions(&write_predictions(&run.records)).unwrap();
        assert_eq!(preds.len(), run.records.len());

        let report = evaluate(&preds, &gt, Some(&boxes));
        let ade = report.ade.unwrap();
        assert!(ade.is_finite() && ade < 25.0, "{name}: ade {ade}");
        assert!(report.track_coverage.unwrap() > 0.8, "{name}");
        assert!(report.id_switches.unwrap() <= 2, "{name}");
    }
}

#[test]
fn spline_beats_constant_velocity_on_a_turning_vessel() {
    let scenario = load("arc.json");
    let (truth, stream) = synthesize(&scenario).unwrap();
    let gt = truth_to_ground_truth(&truth);
    let cfg = RunConfig::default();
    let rows = parse_tracks(&write_tracks(&association::run(&stream, &cfg).unwrap())).unwrap();
    let histories = track_histories(&rows).unwrap();
    let boxes = track_boxes(&rows).unwrap();
    let spline = evaluate(&predict_tracks(&histories, &cfg, 20).unwrap().records, &gt, Some(&boxes));
    let cv = evaluate(&predict_tracks_cv(&histories, &cfg, 20).unwrap().records, &gt, Some(&boxes));
    assert!(spline.fde.unwrap() < cv.fde.unwrap(), "spline {:?} cv {:?}", spline.fde, cv.fde);
}
