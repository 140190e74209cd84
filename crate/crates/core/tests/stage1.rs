use promptsearch::engine::Engine;
use promptsearch::error_analysis::{analyze, Aspect};
use promptsearch::synthetic::{baozi_task, task_backends};
use promptsearch::templates::Templates;

#[test]
fn baozi_analysis_finds_the_count_error() {
    let task = baozi_task();
    let prompt = task.prompt.clone();
    let engine = Engine::new(task_backends(task), Templates::default());
    let meta = analyze(&prompt, &engine, 7).unwrap();
    println!("{}", serde_json::to_string_pretty(&meta).unwrap());
    assert!(meta.consistent());
    assert!(meta.error_set.records.iter().any(|r| r.category == Aspect::Number));
}
