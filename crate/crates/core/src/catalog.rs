//! Built-in application catalog and the ten co-scheduling scenarios.
//!
//! The four application profiles were measured on a 40k-core machine. To fit
//! the 640-core evaluation platform every profile is scaled by 64: processor
//! counts are divided by 64 and compute times multiplied by 64, while I/O
//! volumes stay the same.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ApplicationSpec, Platform, Scenario};

pub const SCALE: u32 = 64;

/// Unscaled application profiles: (short name, processors, compute s, volume GB).
const RAW_PROFILES: [(&str, u32, f64, f64); 4] = [
    ("T1", 32_768, 70.0, 128.2),
    ("T2", 4_096, 1.2, 235.8),
    ("AP", 8_192, 240.0, 423.4),
    ("PP", 32_768, 7554.0, 34_304.0),
];

/// Number of copies of (T1, T2, AP, PP) in each set.
const SETS: [[u32; 4]; 10] = [
    [0, 10, 0, 0],
    [0, 8, 1, 0],
    [0, 6, 2, 0],
    [0, 4, 3, 0],
    [0, 2, 0, 1],
    [0, 2, 4, 0],
    [1, 2, 0, 0],
    [0, 0, 1, 1],
    [0, 0, 5, 0],
    [1, 0, 1, 0],
];

pub const SET_NAMES: [&str; 10] = [
    "set1", "set2", "set3", "set4", "set5", "set6", "set7", "set8", "set9", "set10",
];

/// Profile `name` ("T1", "T2", "AP" or "PP") scaled to the evaluation platform.
pub fn profile(name: &str) -> Option<ApplicationSpec> {
    raw_profile(name).map(|raw| {
        ApplicationSpec::new(
            raw.id(),
            raw.procs() / SCALE,
            raw.work() * SCALE as f64,
            raw.volume(),
        )
        .expect("catalog entries are valid")
    })
}

/// Profile `name` exactly as measured, without scaling.
pub fn raw_profile(name: &str) -> Option<ApplicationSpec> {
    RAW_PROFILES
        .iter()
        .find(|(n, ..)| *n == name)
        .map(|&(n, p, w, vol)| ApplicationSpec::new(n, p, w, vol).expect("catalog entries are valid"))
}

/// Catalog set `index` (1-based).
pub fn set(index: usize) -> Option<Scenario> {
    let counts = SETS.get(index.checked_sub(1)?)?;
    let mut apps = Vec::new();
    for (&(name, ..), &count) in RAW_PROFILES.iter().zip(counts) {
        let base = profile(name).expect("known profile");
        for copy in 1..=count {
            apps.push(base.clone().with_id(format!("{name}_{copy}")));
        }
    }
    Some(Scenario::new(SET_NAMES[index - 1], Platform::jupiter(), apps).expect("catalog sets fit the platform"))
}

pub fn all_sets() -> Vec<Scenario> {
    (1..=SETS.len()).map(|i| set(i).expect("in range")).collect()
}

/// Resolves a catalog name: `set1`..`set10`, or `raw:T1`, `raw:T2`, `raw:AP`,
/// `raw:PP` for a single unscaled profile alone on a platform sized to it.
pub fn load_scenario(name: &str) -> Result<Scenario> {
    if let Some(profile_name) = name.strip_prefix("raw:") {
        let app = raw_profile(profile_name).ok_or_else(|| Error::NotFound(name.to_string()))?;
        let pf = Platform::jupiter();
        let platform = Platform::new(app.procs(), pf.node_bandwidth(), pf.io_bandwidth())?;
        return Scenario::new(name, platform, vec![app]);
    }
    SET_NAMES
        .iter()
        .position(|&n| n == name)
        .and_then(|i| set(i + 1))
        .ok_or_else(|| Error::NotFound(name.to_string()))
}

/// Parses a scenario from JSON text:
/// `{"platform": {"N", "b", "B"}, "apps": [{"id", "p", "w", "vol"}, ...]}`.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        Error::Parse {
            line: e.line(),
            field: backticked(&message).unwrap_or("?").to_string(),
            message,
        }
    })
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scenario = parse_scenario(&text)?;
    if scenario.name().is_empty() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        scenario = Scenario::new(stem, *scenario.platform(), scenario.apps().to_vec())?;
    }
    Ok(scenario)
}

fn backticked(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_profiles() {
        let t1 = profile("T1").unwrap();
        assert_eq!((t1.procs(), t1.work(), t1.volume()), (512, 4480.0, 128.2));
        let t2 = profile("T2").unwrap();
        assert_eq!((t2.procs(), t2.work(), t2.volume()), (64, 76.8, 235.8));
        let ap = profile("AP").unwrap();
        assert_eq!((ap.procs(), ap.work(), ap.volume()), (128, 15360.0, 423.4));
        let pp = profile("PP").unwrap();
        assert_eq!((pp.procs(), pp.work(), pp.volume()), (512, 483_456.0, 34_304.0));
    }

    #[test]
    fn every_set_uses_all_640_cores() {
        for s in all_sets() {
            let total: u32 = s.apps().iter().map(|a| a.procs()).sum();
            assert_eq!(total, 640, "{}", s.name());
        }
    }

    #[test]
    fn set_contents() {
        let s1 = load_scenario("set1").unwrap();
        assert_eq!(s1.apps().len(), 10);
        assert!(s1.apps().iter().all(|a| a.id().starts_with("T2_")));

        let s5 = load_scenario("set5").unwrap();
        let ids: Vec<_> = s5.apps().iter().map(|a| a.id()).collect();
        assert_eq!(ids, ["T2_1", "T2_2", "PP_1"]);
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(load_scenario("setX"), Err(Error::NotFound(_))));
        assert!(matches!(load_scenario("set11"), Err(Error::NotFound(_))));
        assert!(matches!(load_scenario("raw:ZZ"), Err(Error::NotFound(_))));
    }

    #[test]
    fn raw_profiles_load() {
        let s = load_scenario("raw:T2").unwrap();
        assert_eq!(s.apps()[0].procs(), 4096);
        assert_eq!(s.apps()[0].work(), 1.2);
    }

    #[test]
    fn json_round_trip() {
        let s = load_scenario("set3").unwrap();
        let back = parse_scenario(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn parse_errors_carry_line_and_field() {
        let text = "{\n  \"platform\": {\"N\": 640, \"b\": 0.01, \"B\": 3},\n  \"apps\": [\n    {\"id\": \"x\", \"p\": 4, \"w\": 1.0}\n  ]\n}";
        match parse_scenario(text) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(field, "vol");
            }
            other => panic!("unexpected {other:?}"),
        }

        let text = "{\"platform\": {\"N\": 640, \"b\": 0.01, \"B\": 3},\n\"apps\": [{\"id\": \"x\", \"p\": 0, \"w\": 1.0, \"vol\": 1.0}]}";
        match parse_scenario(text) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "p");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
