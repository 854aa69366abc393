//! File plumbing: scenario loading and report writers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::PlatoonScenario;
use crate::simulator::SimulationTrace;
use crate::stability::StringStabilityReport;

/// Reads and validates a scenario. A relative leader CSV path is resolved
/// against the scenario file's directory.
pub fn load_scenario(path: &Path) -> Result<PlatoonScenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scenario = parse_scenario(&text)?;
    if let Some(dir) = path.parent() {
        scenario.leader_profile.resolve_relative_to(dir);
    }
    scenario.validate()
}

/// Parses a scenario without validating it.
pub fn parse_scenario(text: &str) -> Result<PlatoonScenario> {
    Ok(serde_json::from_str(text)?)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trace_csv(path: &Path, trace: &SimulationTrace) -> Result<()> {
    trace.write_csv(create(path)?)
}

/// Columns `omega_rad_s, magnitude, x, y`.
pub fn write_frequency_csv(path: &Path, report: &StringStabilityReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["omega_rad_s", "magnitude", "x", "y"])?;
    for p in &report.points {
        w.serialize((p.omega, p.magnitude, p.x, p.y))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, PowertrainParams};
    use crate::profile::LeaderProfileSource;

    #[test]
    fn scenario_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let mut s = PlatoonScenario::reference(ModelKind::Asymmetric, PowertrainParams::new(0.1, 0.1), 0.8);
        s.gains.kc = 0.1 + 0.2;
        write_json(&path, &s).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), s);
    }

    #[test]
    fn relative_profile_path_resolves() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("lead.csv"), "t_s,v_mps\n0,20\n10,20\n").unwrap();
        let mut s = PlatoonScenario::reference(ModelKind::Asymmetric, PowertrainParams::new(0.1, 0.1), 0.8);
        s.leader_profile = LeaderProfileSource::Path("lead.csv".into());
        s.duration = 10.0;
        let path = dir.path().join("s.json");
        write_json(&path, &s).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(loaded.leader_profile, LeaderProfileSource::Path(dir.path().join("lead.csv")));
    }

    #[test]
    fn malformed_and_invalid_inputs() {
        assert!(matches!(parse_scenario("{ nope"), Err(Error::Json(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let mut s = PlatoonScenario::reference(ModelKind::Asymmetric, PowertrainParams::new(0.1, 0.1), 0.8);
        s.step = -1.0;
        write_json(&path, &s).unwrap();
        assert!(!load_scenario(&path).unwrap_err().violations().is_empty());
        assert!(matches!(load_scenario(&dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
