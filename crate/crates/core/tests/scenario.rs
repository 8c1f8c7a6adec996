use std::path::Path;

use hfdrive::agents::PolicyHandle;
use hfdrive::scenario::{
    import_polylines, load_scenario, parse_scenario, standard_suite, ScenarioError, STANDARD_NAMES,
};
use hfdrive::sim::{AgentKind, Termination, WorldConfig};

const MINIMAL: &str = r#"
name = "minimal"

[[road.lanes]]
id = 0
centerline = [{ x = 0.0, y = 0.0 }, { x = 200.0, y = 0.0 }]
width = 3.5
speed_limit = 15.0

[[agents]]
id = 0
kind = "ego"
spawn = { x = 10.0, y = 0.0, heading = 0.0 }
speed = 5.0
policy = { kind = "scripted-follow" }
"#;

fn errors(r: Result<hfdrive::scenario::Scenario, ScenarioError>) -> Vec<String> {
    match r {
        Err(ScenarioError::Invalid(e)) => e,
        Err(other) => panic!("unexpected error kind: {other}"),
        Ok(_) => panic!("scenario was accepted"),
    }
}

#[test]
fn minimal_scenario_gets_defaults() {
    let sc = parse_scenario(MINIMAL, Path::new(".")).unwrap();
    let spec = &sc.spec;
    assert_eq!(spec.format_version, 1);
    assert_eq!(spec.seed, 0);
    assert_eq!(spec.max_ticks, 600);
    assert_eq!(spec.segment_len, 40);
    assert!(spec.stop_on_ego_collision);
    assert!(!spec.allow_human_ego);
    assert_eq!(spec.world, WorldConfig::default());
    assert_eq!(spec.agents[0].radius(), 1.0);
    assert_eq!(spec.jitter.position, 0.0);
    match &spec.agents[0].policy {
        PolicyHandle::ScriptedFollow { persona, .. } => assert_eq!(persona, "normal"),
        other => panic!("{other:?}"),
    }
    assert_eq!(sc.road.lanes.len(), 1);
    assert!((sc.road.lanes[0].length() - 200.0).abs() < 1e-9);
}

#[test]
fn unknown_key_is_named() {
    let text = format!("wheather = \"rain\"\n{MINIMAL}");
    let errs = errors(parse_scenario(&text, Path::new(".")));
    assert!(errs.iter().any(|e| e.contains("wheather")), "{errs:?}");
}

#[test]
fn nested_unknown_key_is_rejected() {
    let text = MINIMAL.replace("speed_limit = 15.0", "speed_limit = 15.0\nfriction = 0.7");
    let errs = errors(parse_scenario(&text, Path::new(".")));
    assert!(errs.iter().any(|e| e.contains("friction")), "{errs:?}");
}

#[test]
fn duplicate_agent_ids_are_rejected() {
    let text = format!(
        "{MINIMAL}\n[[agents]]\nid = 0\nkind = \"scripted-car\"\nspawn = {{ x = 40.0, y = 0.0, heading = 0.0 }}\nspeed = 5.0\npolicy = {{ kind = \"scripted-follow\" }}\n"
    );
    let errs = errors(parse_scenario(&text, Path::new(".")));
    assert!(errs.iter().any(|e| e.contains("duplicate id 0")), "{errs:?}");
}

#[test]
fn all_problems_are_reported_together() {
    let text = MINIMAL
        .replace("speed = 5.0", "speed = -3.0")
        .replace("name = \"minimal\"", "name = \"\"\nmax_ticks = 0");
    let errs = errors(parse_scenario(&text, Path::new(".")));
    assert!(errs.len() >= 3, "{errs:?}");
}

#[test]
fn human_ego_needs_opt_in() {
    let text = MINIMAL.replace("{ kind = \"scripted-follow\" }", "{ kind = \"human-gateway\" }");
    let errs = errors(parse_scenario(&text, Path::new(".")));
    assert!(errs.iter().any(|e| e.contains("allow_human_ego")));
    let ok = format!("allow_human_ego = true\n{text}");
    assert!(parse_scenario(&ok, Path::new(".")).is_ok());
}

#[test]
fn missing_learned_policy_file_is_reported() {
    let text = MINIMAL.replace(
        "{ kind = \"scripted-follow\" }",
        "{ kind = \"learned\", policy = \"nowhere/policy.json\" }",
    );
    let errs = errors(parse_scenario(&text, Path::new(".")));
    assert!(errs.iter().any(|e| e.contains("nowhere/policy.json")));
}

#[test]
fn to_toml_round_trips() {
    for sc in standard_suite() {
        let back = parse_scenario(&sc.spec.to_toml(), Path::new(".")).unwrap();
        assert_eq!(back.spec, sc.spec);
        assert_eq!(back.road, sc.road);
    }
}

#[test]
fn standard_suite_is_complete_and_valid() {
    let suite = standard_suite();
    let names: Vec<&str> = suite.iter().map(|s| s.name()).collect();
    assert_eq!(names, STANDARD_NAMES);
    for sc in &suite {
        assert!(sc.ego().is_some());
        assert!(sc.is_deterministic(true));
        assert!(sc.spec.validate(Path::new(".")).is_empty());
    }
    let ped = &suite[1];
    assert!(ped.spec.agents.iter().any(|a| a.kind == AgentKind::Pedestrian));
    assert_eq!(ped.road.crosswalks.len(), 1);
    assert_eq!(suite[2].road.lanes.len(), 2);
}

#[test]
fn scripted_suite_runs_to_completion() {
    for sc in standard_suite() {
        let log = sc.run(3).unwrap();
        assert_eq!(log.footer.termination, Termination::MaxTicks, "{}", sc.name());
        assert_eq!(log.ticks.len() as u64, sc.spec.max_ticks);
        assert_eq!(log.header.episode_id, format!("{}-s3", sc.name()));
    }
}

#[test]
fn episode_logs_round_trip_through_ndjson() {
    for sc in standard_suite() {
        let log = sc.run(5).unwrap();
        let text = log.to_ndjson_string();
        let back = hfdrive::sim::EpisodeLog::read_ndjson(text.as_bytes()).unwrap();
        assert_eq!(back, log, "{}", sc.name());
    }
}

#[test]
fn jitter_makes_seeds_differ() {
    let sc = &standard_suite()[0];
    let a = sc.run(1).unwrap();
    let b = sc.run(2).unwrap();
    assert_ne!(a.ticks[0].agents, b.ticks[0].agents);
    assert_eq!(a.to_ndjson_string(), sc.run(1).unwrap().to_ndjson_string());
}

#[test]
fn load_from_file_resolves_polyline_import() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("roads.txt"), "# main road\n0 0\n100 0\n\n100.2 0\n250 30\n").unwrap();
    let text = MINIMAL.replace(
        "[[road.lanes]]\nid = 0\ncenterline = [{ x = 0.0, y = 0.0 }, { x = 200.0, y = 0.0 }]\nwidth = 3.5\nspeed_limit = 15.0\n",
        "[road.import]\npath = \"roads.txt\"\nlane_width = 3.5\nspeed_limit = 12.0\n",
    );
    let path = dir.path().join("s.toml");
    std::fs::write(&path, text).unwrap();
    let sc = load_scenario(&path).unwrap();
    assert_eq!(sc.road.lanes.len(), 2);
    assert_eq!(sc.road.lanes[0].successors, vec![sc.road.lanes[1].id]);
    assert_eq!(sc.road.lanes[1].speed_limit, 12.0);
}

#[test]
fn load_reports_missing_file() {
    let err = load_scenario(Path::new("/definitely/not/here.toml")).unwrap_err();
    assert!(matches!(err, ScenarioError::Io { .. }));
}

mod polylines {
    use super::*;

    fn import(text: &str) -> Result<hfdrive::sim::RoadGraph, ScenarioError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lines.txt");
        std::fs::write(&p, text).unwrap();
        import_polylines(&p, 3.5, 13.9)
    }

    #[test]
    fn single_segment_is_one_straight_lane() {
        let road = import("0 0\n100 0\n").unwrap();
        assert_eq!(road.lanes.len(), 1);
        let lane = &road.lanes[0];
        assert!((lane.length() - 100.0).abs() < 1e-12);
        assert_eq!(lane.width, 3.5);
        assert_eq!(lane.speed_limit, 13.9);
        assert!(lane.successors.is_empty());
    }

    #[test]
    fn endpoints_within_half_a_metre_chain() {
        // oracle: |(100, 0.3) - (100, 0)| = 0.3 <= 0.5, |(100, 0.7) - (100, 0)| = 0.7 > 0.5
        let road = import("0 0\n100 0\n\n100 0.3\n200 0.3\n").unwrap();
        assert_eq!(road.lanes[0].successors, vec![road.lanes[1].id]);
        let road = import("0 0\n100 0\n\n100 0.7\n200 0.7\n").unwrap();
        assert!(road.lanes[0].successors.is_empty());
    }

    #[test]
    fn one_point_polyline_is_an_error() {
        assert!(matches!(import("5 5\n"), Err(ScenarioError::Invalid(_))));
        assert!(matches!(import("0 0\n1 x\n"), Err(ScenarioError::Invalid(_))));
    }
}
