//! Run the whole pipeline in a workspace from a named preset, then run it
//! again to show that finished stages are skipped.
//!
//! cargo run --release --example pipeline_run -- [smoke|desk|paper] [workspace]

use biobridge::pipeline::{run, PipelineConfig};

fn main() -> biobridge::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "smoke".into());
    let workspace = args.next().unwrap_or_else(|| format!("run-{preset}"));
    let cfg = PipelineConfig::from_toml_with(&format!("preset = \"{preset}\"\nworkspace = \"{workspace}\"\n"), &[])?;

    for attempt in ["first", "second"] {
        let manifest = run(&cfg)?;
        println!("{attempt} run:");
        for r in &manifest.stages {
            println!("  {:<10} {:?} {:.1} s", r.stage.as_str(), r.status, r.seconds);
        }
    }
    let summary = std::fs::read_to_string(cfg.workspace.join("reports/summary.txt")).unwrap_or_default();
    print!("{summary}");
    Ok(())
}
