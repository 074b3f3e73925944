//! Built-in scenarios for trying the pipeline end to end.

use std::path::Path;

use anyhow::Result;
use hilc_core::fixtures;
use hilc_core::log::synth::ScenarioSpec;
use hilc_core::runtime::VirtualScenario;
use serde_json::json;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Name {
    /// Two distinct icons clicked in turn.
    TwoClicks,
    /// Twin speaker icons; the demonstrated one is told apart by its label.
    Speaker,
    /// Five files dragged onto a canvas, demonstrated as a loop.
    LoopIcons,
    /// Icon grid with a decoy and a restyled wanted icon.
    LoopGrid,
    /// A button that appears later and must be clicked when it does.
    Standby,
    /// Clicks, a drag and typing on one desktop.
    Mixed,
}

/// Writes `scenario.json` (what a run executes against) and `demo.json`
/// (input for `hilc log synth`).
pub fn write(name: Name, out: &Path) -> Result<()> {
    let (run, demo_scene, demo): (VirtualScenario, VirtualScenario, ScenarioSpec) = match name {
        Name::TwoClicks => {
            let (sc, spec, _) = fixtures::two_clicks();
            (sc.clone(), sc, spec)
        }
        Name::Speaker => {
            let f = fixtures::speaker(0);
            (f.scenario.clone(), f.scenario, f.demo)
        }
        Name::LoopIcons => {
            let f = fixtures::loop_icons();
            (f.scenario.clone(), f.scenario, f.demo)
        }
        Name::LoopGrid => {
            let f = fixtures::loop_grid();
            (f.scenario.clone(), f.scenario, f.demo)
        }
        Name::Standby => {
            let f = fixtures::standby();
            (fixtures::standby_timeline(&[3500, 11500]), f.demo_scenario, f.demo)
        }
        Name::Mixed => {
            let (sc, spec) = fixtures::mixed_desktop();
            (sc.clone(), sc, spec)
        }
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("scenario.json"), serde_json::to_string_pretty(&run)?)?;
    std::fs::write(
        out.join("demo.json"),
        serde_json::to_string_pretty(&json!({ "scenario": demo_scene, "demo": demo }))?,
    )?;
    out!("{name:?} -> {}", out.display());
    Ok(())
}
