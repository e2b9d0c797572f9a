//! Parsing of `--detector` and `--engine` selections, shared with the CLI.

use std::path::PathBuf;
use std::sync::Arc;

use mangaface_core::{
    DetectorAdapter, EngineRegistry, Error, ExternalDetector, ExternalEngine, MockDetector,
    ReenactmentEngine, Result,
};

/// `mock:PATH` (a faces document replayed for every panel) or
/// `external:COMMAND ARGS...`.
pub fn parse_detector(spec: &str) -> Result<Arc<dyn DetectorAdapter>> {
    if let Some(path) = spec.strip_prefix("mock:") {
        return Ok(Arc::new(MockDetector::from_fixture(&PathBuf::from(path))?));
    }
    if let Some(cmd) = spec.strip_prefix("external:") {
        let mut parts = cmd.split_whitespace();
        let program =
            parts.next().ok_or_else(|| Error::InvalidArgument("external detector has no command".into()))?;
        return Ok(Arc::new(ExternalDetector::new(program, parts.map(str::to_owned).collect())));
    }
    Err(Error::InvalidArgument(format!("detector `{spec}`: expected mock:PATH or external:COMMAND")))
}

/// `identity`, `stamp` or `external:LABEL=COMMAND ARGS...`. Built-ins
/// resolve through the registry; external specs build a new engine.
pub fn parse_engine(spec: &str, registry: &EngineRegistry) -> Result<Arc<dyn ReenactmentEngine>> {
    match spec.strip_prefix("external:") {
        Some(rest) if rest.contains('=') => Ok(Arc::new(ExternalEngine::from_spec(rest)?)),
        _ => registry.get(spec),
    }
}

/// Registry with the built-ins plus each external engine spec.
pub fn registry_with(externals: &[String]) -> Result<EngineRegistry> {
    let mut registry = EngineRegistry::new();
    for spec in externals {
        let spec = spec.strip_prefix("external:").unwrap_or(spec);
        registry.register(Arc::new(ExternalEngine::from_spec(spec)?));
    }
    Ok(registry)
}
