use divprompt_core::gateway::Confusion;
use divprompt_core::sensitivity::{sensitivity_sweep, SweepConfig};

#[test]
fn predicted_alignment_falls_with_accuracy() {
    let points = sensitivity_sweep(&SweepConfig::default()).unwrap();
    for p in &points {
        println!("{p:?}");
        assert!((p.observed_accuracy - p.q).abs() <= 0.06, "{p:?}");
        assert!((p.alignment_actual - points[0].alignment_actual).abs() <= 0.05);
    }
    assert!(points[0].alignment_predicted - points[3].alignment_predicted > 0.05);
    for pair in points.windows(2) {
        assert!(pair[0].alignment_predicted > pair[1].alignment_predicted);
    }
}

#[test]
fn sweep_is_deterministic() {
    let config = SweepConfig { accuracies: vec![0.7], images: 50, confusion: Confusion::Uniform, ..SweepConfig::default() };
    assert_eq!(sensitivity_sweep(&config).unwrap(), sensitivity_sweep(&config).unwrap());
}
