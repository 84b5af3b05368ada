use drivex::config::RunConfig;
use drivex::Error;

#[test]
fn default_is_valid_and_uses_the_documented_hyperparameters() {
    let c = RunConfig::default();
    c.validate().unwrap();
    assert_eq!(c.train.tau, 0.65);
    assert_eq!(c.train.strength, 0.6);
    assert_eq!(c.train.shift_schedule, [2.0, 6.0]);
    assert_eq!(c.train.traj_stride, 3);
    assert_eq!(c.shifts, [1.0, 2.0, 3.0]);
}

#[test]
fn partial_json_fills_defaults() {
    let c = RunConfig::from_json(r#"{"train": {"total_steps": 10, "warmup_steps": 5}, "restorer": {"id": "oracle"}}"#).unwrap();
    assert_eq!(c.train.total_steps, 10);
    assert_eq!(c.train.refresh_interval, 1000);
    assert_eq!(c.restorer.id, "oracle");
    assert_eq!(c.restorer.noise_level, 0.0);
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    for text in [
        r#"{"trian": {}}"#,
        r#"{"train": {"step": 3}}"#,
        r#"{"restorer": {"id": "identity", "noise": 0.1}}"#,
        r#"{"world": {"seed": 1, "colour": 2}}"#,
    ] {
        let err = RunConfig::from_json(text).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("unknown field")), "{text}: {err}");
    }
}

#[test]
fn validation_catches_bad_values() {
    let bad = [
        r#"{"restorer": {"id": "diffusion"}}"#,
        r#"{"restorer": {"id": "noisy-oracle", "noise_level": 2.0}}"#,
        r#"{"train": {"warmup_steps": 0}}"#,
        r#"{"shifts": [-1.0]}"#,
        r#"{"capture": {"frames": 60}}"#,
    ];
    for text in bad {
        let c = RunConfig::from_json(text).unwrap();
        assert!(c.validate().is_err(), "{text}");
    }
}

#[test]
fn echo_reproduces_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::default();
    c.train.tau = 0.5;
    c.train.learning_rates.color = 0.123;
    c.world.seed = 77;
    c.shifts = vec![1.0, 3.0];
    c.echo(dir.path()).unwrap();
    assert_eq!(RunConfig::load(&dir.path().join("config.json")).unwrap(), c);
}
