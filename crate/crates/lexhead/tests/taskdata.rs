//! Validation of the shipped task files.

use std::path::PathBuf;

use lexhead::task::{load_task, render_example_prompt, render_instruction_prompt};

fn tasks_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../tasks")
}

fn all_task_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(tasks_dir())
        .expect("tasks directory present")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

#[test]
fn every_shipped_task_file_loads_and_renders() {
    let files = all_task_files();
    assert!(files.len() >= 20, "expected the full task set, found {}", files.len());
    for file in files {
        let task = load_task(&file).unwrap_or_else(|e| panic!("{}: {e}", file.display()));
        // each file renders in both styles without panicking
        let shots = 2.min(task.pairs.len() - 1);
        let p = render_example_prompt(&task, shots, 0, 0).unwrap();
        assert!(!p.rendered.is_empty());
        for t in 0..task.instruction_templates.len() {
            let p = render_instruction_prompt(&task, t, 0).unwrap();
            assert!(p.rendered.contains(&task.pairs[0].input));
        }
        let terms = task.term_set().unwrap();
        assert!(!terms.normalized().is_empty());
    }
}

#[test]
fn the_core_seventeen_tasks_are_present() {
    let names: Vec<String> = all_task_files()
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    for required in [
        "product-producer",
        "antonym",
        "synonym",
        "singular-plural",
        "country-capital",
        "park-country",
        "next_item",
        "prev_item",
        "english-french",
        "english-german",
        "english-spanish",
        "present-past",
        "person-occupation",
        "person-sport",
        "person-instrument",
        "country-currency",
        "landmark-country",
    ] {
        assert!(names.iter().any(|n| n == required), "missing task {required}");
    }
}

#[test]
fn antonym_terms_and_capital_control_link() {
    let antonym = load_task(&tasks_dir().join("antonym.json")).unwrap();
    let normalized = antonym.term_set().unwrap();
    assert!(normalized.contains_normalized("opposite"));
    assert!(normalized.contains_normalized("reverse"));

    let capital = load_task(&tasks_dir().join("country-capital.json")).unwrap();
    assert_eq!(capital.related_task.as_deref(), Some("country-currency"));
}

#[test]
fn ambiguity_arms_stay_matched() {
    let task = load_task(&tasks_dir().join("number-list-even.json")).unwrap();
    let (ambiguous, control) = lexhead::task::render_ambiguity_arms(&task, &[0, 1, 2]).unwrap();
    assert_eq!(ambiguous.len(), control.len());
    for (a, c) in ambiguous.iter().zip(control.iter()) {
        assert_eq!(a.query, c.query);
        assert_eq!(a.shots, c.shots);
        assert_ne!(a.rendered, c.rendered);
    }
}
