use std::fs;
use std::path::Path;

use cogforge_core::prompts::{TemplateName, TemplateSet};
use cogforge_core::selftest::golden_cases;

fn golden(name: TemplateName) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{}.txt", name.as_str()));
    fs::read_to_string(path).unwrap()
}

#[test]
fn builtin_and_on_disk_templates_match_goldens() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates/v1");
    let sets = [TemplateSet::builtin(), TemplateSet::load_dir(&dir).unwrap()];
    for case in golden_cases() {
        let expected = golden(case.template);
        for set in &sets {
            let rendered = set.render(case.template, case.problem, case.answer, case.reasoning);
            assert_eq!(rendered.to_fixture(), expected, "{}", case.template.as_str());
        }
    }
}

#[test]
fn judges_are_told_to_answer_in_one_word() {
    let set = TemplateSet::builtin();
    for name in [TemplateName::Critic, TemplateName::Verifier] {
        let system = &set.render(name, "p", "a", "r").system;
        assert!(system.contains("exactly one word"), "{}", name.as_str());
    }
    let critic = set.render(TemplateName::Critic, "p", "a", "r").system;
    assert!(critic.contains("exactly one word: easy, medium, or hard."));
    let verifier = set.render(TemplateName::Verifier, "p", "a", "r").system;
    assert!(verifier.contains("exactly one word: YES or NO."));
}

#[test]
fn inputs_are_not_reinterpreted() {
    let set = TemplateSet::builtin();
    let tricky = "{problem} {answer} {{reasoning}} $1 \\n";
    let user = set.render(TemplateName::Verifier, tricky, tricky, tricky).user;
    assert_eq!(user.matches(tricky).count(), 3);
    assert_eq!(
        user,
        format!("Problem:\n{tricky}\n\nAnswer:\n{tricky}\n\nReasoning Process:\n{tricky}")
    );
}

#[test]
fn edited_template_breaks_the_match() {
    let dir = tempfile::tempdir().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates/v1");
    for entry in fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    let critic = dir.path().join("critic.txt");
    let text = fs::read_to_string(&critic)
        .unwrap()
        .replacen("exactly one word", "one word", 1);
    fs::write(&critic, text).unwrap();
    let set = TemplateSet::load_dir(dir.path()).unwrap();
    let case = golden_cases()
        .into_iter()
        .find(|c| c.template == TemplateName::Critic)
        .unwrap();
    let rendered = set.render(case.template, case.problem, case.answer, case.reasoning);
    assert_ne!(rendered.to_fixture(), golden(TemplateName::Critic));
}
