use journey::cohort::write_event_log;
use journey::par::Executor;
use journey::rng::STREAM_SIMULATION;
use journey::simulator::simulate_cohort;

use super::{EVENTS_FILE, TRUTH_FILE};
use crate::config::PipelineConfig;
use crate::run::{table, Run};
use crate::SimulateArgs;

pub fn simulate(
    run: &mut Run,
    mut config: PipelineConfig,
    executor: &Executor,
    args: &SimulateArgs,
) -> anyhow::Result<()> {
    if let Some(n) = args.patients {
        config.simulation.n_patients = n;
    }
    if let Some(n) = args.variables {
        config.simulation.n_variables = n;
    }
    run.config(&config.simulation);
    run.streams(&[STREAM_SIMULATION]);
    config.simulation.validate()?;
    run.prepare()?;

    run.stage("simulate");
    let sim = simulate_cohort(&config.simulation, executor)?;

    run.stage("write");
    run.write_with(EVENTS_FILE, |w| Ok(write_event_log(&sim.events, w)?))?;
    run.write_jsonl(TRUTH_FILE, &sim.truth)?;

    let deaths = sim.truth.iter().filter(|t| t.death_week.is_some()).count();
    let progressions = sim.truth.iter().filter(|t| t.progression_week.is_some()).count();
    let lines: usize = sim.truth.iter().map(|t| t.therapy_line_weeks.len()).sum();
    run.count("patients", sim.truth.len());
    run.count("events", sim.events.len());
    run.count("deaths", deaths);
    run.count("progressions", progressions);
    run.count("therapy_lines", lines);

    let rows = vec![
        vec!["patients".into(), sim.truth.len().to_string()],
        vec!["events".into(), sim.events.len().to_string()],
        vec!["therapy lines".into(), lines.to_string()],
        vec!["deaths".into(), deaths.to_string()],
        vec!["progressions".into(), progressions.to_string()],
    ];
    run.summary(&table(&["simulated", "count"], &rows))
}
