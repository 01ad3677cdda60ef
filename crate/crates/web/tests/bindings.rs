use cesim_web::{check_json, generate_text, run_json};

#[test]
fn generated_scenarios_run_and_check() {
    for c in ["pinball", "tree15", "osp2", "markers"] {
        let text = generate_text(c, 4, 60).unwrap();
        let run: serde_json::Value = serde_json::from_str(&run_json(&text, 5).unwrap()).unwrap();
        assert_eq!(run["stage"], 60);
        assert!(run["trace"].as_array().unwrap().len() <= 5);
        let rows: Vec<serde_json::Value> =
            serde_json::from_str(&check_json(&text).unwrap()).unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r["passed"] == true), "{c}: {rows:?}");
    }
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(generate_text("nonsense", 0, 10).is_err());
    assert!(run_json("construction pinball\n", 10).is_err());
    assert!(check_json("horizon 5\n").is_err());
}

#[test]
fn page_calls_only_exported_functions() {
    let page = include_str!("../www/index.html");
    assert!(page.contains("import init, { generate, run, check }"));
}
