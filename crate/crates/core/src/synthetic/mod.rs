//! A deterministic, model-free stand-in for the whole model stack.
//!
//! Prompts follow a small grammar ([`scene`]); the mock imager "renders" a
//! prompt into a [`SceneSpec`] with seeded, prompt-sensitive corruption
//! ([`render`]); exact oracles answer questions about scenes and caption
//! them ([`vqa`]); and [`agents::SimulatedAgents`] plays every chat agent
//! of the pipeline on top of those oracles. [`tasks`] generates benchmark
//! tasks.
//!
//! # Scene serialization
//!
//! A scene is stored as JSON next to its placeholder image:
//!
//! ```json
//! {"objects":[{"noun":"baozi","count":6},{"noun":"steamer","count":1,"texture":"bamboo"}],
//!  "relations":[{"subject":0,"predicate":"in","object":1}],
//!  "background":"","style":""}
//! ```
//!
//! The placeholder PNG is 16 pixels wide. Row 0 encodes the scene id; row
//! `i + 1` holds one colored cell per counted instance of object `i`
//! (capped at 16) on a white ground.

pub mod agents;
pub mod lexicon;
pub mod render;
pub mod scene;
pub mod tasks;
pub mod vqa;

use std::io;
use std::sync::Arc;

pub use agents::SimulatedAgents;
pub use render::{render_scene, SyntheticImager};
pub use scene::{SceneObject, SceneSpec};
pub use tasks::{adhoc_task, baozi_task, generate_tasks, CorruptionProfile, SyntheticTask, TaskFamily};
pub use vqa::mock_vqa_answer;

use crate::backends::mock::HashEmbedder;
use crate::backends::{ArtifactStore, Backends};
use crate::error_analysis::Aspect;

/// The full mock stack for one task: synthetic renderer, simulated agents
/// and hashed embeddings over an in-memory store.
pub fn task_backends(task: SyntheticTask) -> Backends {
    task_backends_with(task, Arc::new(ArtifactStore::in_memory()), SimulatedAgents::new)
}

/// Like [`task_backends`] with a chosen store and agent configuration.
pub fn task_backends_with(
    task: SyntheticTask,
    store: Arc<ArtifactStore>,
    agents: impl FnOnce(Arc<ArtifactStore>) -> SimulatedAgents,
) -> Backends {
    let imager = SyntheticImager::new(Arc::new(task), store.clone());
    Backends::new(Arc::new(agents(store.clone())), Arc::new(imager), Arc::new(HashEmbedder::default()), store)
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("prompt does not follow the synthetic grammar: {0}")]
    Grammar(String),
    #[error("question aspect {0} not supported for {1:?}")]
    UnsupportedAspect(Aspect, String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Encode 8-bit RGB pixels as a PNG.
pub fn encode_png(width: u32, height: u32, rgb: &[u8]) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(io::Error::other)?;
    writer.write_image_data(rgb).map_err(io::Error::other)?;
    writer.finish().map_err(io::Error::other)?;
    Ok(out)
}

const GRID_WIDTH: usize = 16;

fn color_rgb(color: Option<&str>) -> [u8; 3] {
    match color {
        Some("red") => [220, 40, 40],
        Some("blue") => [40, 70, 220],
        Some("green") => [40, 170, 60],
        Some("yellow") => [240, 220, 40],
        Some("purple") => [140, 50, 170],
        Some("orange") => [245, 140, 30],
        Some("white") => [250, 250, 250],
        Some("black") => [15, 15, 15],
        Some("pink") => [245, 150, 190],
        Some("brown") => [130, 80, 40],
        Some("gray") => [128, 128, 128],
        _ => [90, 90, 90],
    }
}

/// Placeholder image for a scene (see the module docs for the layout).
pub fn encode_scene_png(scene: &SceneSpec) -> io::Result<Vec<u8>> {
    let height = scene.objects.len() + 1;
    let mut pixels = vec![255u8; GRID_WIDTH * height * 3];
    let id = hex::decode(scene.id()).expect("scene id is hex");
    for (i, b) in id.iter().cycle().take(GRID_WIDTH * 3).enumerate() {
        pixels[i] = *b;
    }
    for (row, object) in scene.objects.iter().enumerate() {
        let rgb = color_rgb(object.color.as_deref());
        for cell in 0..(object.count as usize).min(GRID_WIDTH) {
            let at = ((row + 1) * GRID_WIDTH + cell) * 3;
            pixels[at..at + 3].copy_from_slice(&rgb);
        }
    }
    encode_png(GRID_WIDTH as u32, height as u32, &pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_png_decodes_to_expected_size() {
        let scene = scene::parse_prompt("three red apples on a table").unwrap().scene;
        let bytes = encode_scene_png(&scene).unwrap();
        let decoder = png::Decoder::new(io::Cursor::new(bytes));
        let reader = decoder.read_info().unwrap();
        let info = reader.info();
        assert_eq!((info.width, info.height), (16, 3));
    }

    #[test]
    fn different_scenes_give_different_images() {
        let a = scene::parse_prompt("three red apples").unwrap().scene;
        let b = scene::parse_prompt("three red apples beside a cat").unwrap().scene;
        assert_ne!(encode_scene_png(&a).unwrap(), encode_scene_png(&b).unwrap());
    }
}
