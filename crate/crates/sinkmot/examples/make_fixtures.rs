//! Regenerates the toy fixtures under `tests/fixtures/toy` (or the directory
//! given as the first argument): a 3-identity scene in the benchmark layout,
//! its embeddings, hand-set parameters and a run configuration.

use std::path::PathBuf;

use sinkmot::checkpoint::save_params;
use sinkmot::config::RunConfig;
use sinkmot::embedfile::save_embeddings;
use sinkmot::formats::{format_detections, format_ground_truth};
use sinkmot::synthetic::Scene;
use sinkmot_core::params::{ModelConfig, Parameters};

const DIM: usize = 16;

fn main() -> anyhow::Result<()> {
    let root = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy"));
    std::fs::create_dir_all(root.join("det"))?;
    std::fs::create_dir_all(root.join("gt"))?;

    let scene = Scene::separable("toy", 3, 30, 7);
    std::fs::write(root.join("det/det.txt"), format_detections(&scene.detections()))?;
    std::fs::write(root.join("gt/gt.txt"), format_ground_truth(&scene.ground_truth()))?;
    save_embeddings(&scene.embeddings(DIM, 0.05, 7), &root.join("embeddings.txt"))?;

    let model = ModelConfig { d_app: DIM, d_inter: DIM, layers: 2 };
    save_params(&Parameters::passthrough(&model)?, &root.join("params.bin"))?;

    let mut cfg = RunConfig::default();
    cfg.d_app = DIM;
    cfg.d_inter = DIM;
    cfg.epochs = 10;
    cfg.frame_width = Some(scene.frame_size.width());
    cfg.frame_height = Some(scene.frame_size.height());
    std::fs::write(root.join("toy.cfg"), format!("# toy scene: 3 identities, 30 frames\n{}", cfg.render()))?;
    println!("wrote fixtures to {}", root.display());
    Ok(())
}
