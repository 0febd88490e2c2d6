//! Golden prompt files, one per technique × configuration, under
//! `tests/fixtures/prompts/v1/`. Regenerate with `PROMPTJOULE_BLESS=1`.

mod common;

use std::path::PathBuf;

use promptjoule::prompt::{render_prompt, ConfigId, Pet, Role, TagSpacing, TAG_EXPLANATION};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prompts/v1")
}

#[test]
fn golden_prompts() {
    let bless = std::env::var_os("PROMPTJOULE_BLESS").is_some();
    let pool = common::example_pool();
    let snippet = common::disruptor();
    let mut mismatches = Vec::new();
    for pet in Pet::standard() {
        for config in ConfigId::ALL {
            let prompt = render_prompt(&snippet, pet, &config.config(), &pool, TagSpacing::AsListed).unwrap();
            let rendered = serde_json::to_string_pretty(&prompt).unwrap() + "\n";
            let path = fixture_dir().join(format!("{pet}_{config}.json"));
            if bless {
                std::fs::create_dir_all(fixture_dir()).unwrap();
                std::fs::write(&path, &rendered).unwrap();
                continue;
            }
            let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            if golden != rendered {
                mismatches.push(path.display().to_string());
            }
        }
    }
    assert!(mismatches.is_empty(), "golden mismatch: {mismatches:?}");
}

#[test]
fn rendering_is_pure() {
    let pool = common::example_pool();
    for pet in Pet::standard() {
        for config in ConfigId::ALL {
            let a = render_prompt(&common::disruptor(), pet, &config.config(), &pool, TagSpacing::AsListed).unwrap();
            let b = render_prompt(&common::disruptor(), pet, &config.config(), &pool, TagSpacing::AsListed).unwrap();
            assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        }
    }
}

#[test]
fn shot_examples_follow_the_configuration() {
    let pool = common::example_pool();
    let few = Pet::few_shot(5).unwrap();
    let c1 = render_prompt(&common::disruptor(), few, &ConfigId::C1.config(), &pool, TagSpacing::AsListed).unwrap();
    assert_eq!(
        c1.messages[1].content,
        "<code> import java.util.List;  public class Names { </code> <incomplete> private final </incomplete>"
    );
    assert_eq!(c1.messages[2].role, Role::Assistant);
    assert_eq!(c1.messages[2].content, "private final List<String> names;");

    let c4 = render_prompt(&common::disruptor(), few, &ConfigId::C4.config(), &pool, TagSpacing::AsListed).unwrap();
    assert_eq!(
        c4.messages[3].content,
        "Hi, complete the following snippet adding one line please: public class Counter {  private int count; public void"
    );

    let c2 = render_prompt(&common::disruptor(), few, &ConfigId::C2.config(), &pool, TagSpacing::AsListed).unwrap();
    assert!(c2.messages[1].content.starts_with(TAG_EXPLANATION));
}
