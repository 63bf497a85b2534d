use journey::backend::{Backend, FixtureBackend, MockBackend, MockStrategy, RemoteBackend};
use journey::cohort::CohortStore;
use journey::rng::{self, STREAM_MOCK_NOISE};
use journey::SerializerConfig;

use crate::config::{BackendKind, MockKind, PipelineConfig};
use crate::error::invalid;
use crate::BackendArgs;

/// Folds backend flags into the evaluation section.
pub fn apply_flags(config: &mut PipelineConfig, args: &BackendArgs) {
    let eval = &mut config.evaluation;
    if let Some(b) = args.backend {
        eval.backend = b;
    }
    if let Some(dir) = &args.fixtures {
        eval.fixtures = Some(dir.display().to_string());
    }
    if let Some(s) = args.mock_noise {
        eval.mock_noise = s;
    }
    if let Some(m) = args.mock_strategy {
        eval.mock_strategy = m;
    }
}

pub fn make_backend(
    config: &PipelineConfig,
    store: &CohortStore,
    jobs: usize,
) -> anyhow::Result<Box<dyn Backend>> {
    let eval = &config.evaluation;
    match eval.backend {
        BackendKind::Mock => {
            let strategy = match eval.mock_strategy {
                MockKind::CopyForward => MockStrategy::CopyForward,
                MockKind::Mean => MockStrategy::Constant(
                    store
                        .stats
                        .variables
                        .iter()
                        .map(|(k, s)| (k.clone(), s.mean))
                        .collect(),
                ),
            };
            let mut mock = MockBackend::copy_forward()
                .with_strategy(strategy)
                .with_noise(
                    eval.mock_noise,
                    store.stats.std_devs(),
                    rng::derive_u64(config.seed, STREAM_MOCK_NOISE, "mock"),
                );
            mock.serializer = SerializerConfig {
                quintile_task_enabled: true,
                ..config.serializer.clone()
            };
            Ok(Box::new(mock))
        }
        BackendKind::Fixture => {
            let dir = eval
                .fixtures
                .as_ref()
                .ok_or_else(|| invalid("--backend fixture needs --fixtures <dir>"))?;
            Ok(Box::new(FixtureBackend::open(dir)?))
        }
        BackendKind::Remote => {
            let mut remote = config.remote.clone().with_env()?;
            if jobs > 0 {
                remote.max_in_flight = jobs;
            }
            Ok(Box::new(RemoteBackend::new(remote)?))
        }
    }
}
