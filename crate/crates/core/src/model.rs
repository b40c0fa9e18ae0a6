//! Platform and application model.
//!
//! Units are fixed throughout the crate: seconds for time, GB for volumes and
//! GB/s for bandwidths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The shared machine: `units` processing units, each with an I/O card of
/// bandwidth `node_bandwidth`, behind a global I/O system of bandwidth
/// `io_bandwidth`.
///
/// `units` is the normalization constant of the system efficiency; for the
/// built-in catalog it is the total core count (640).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlatform", into = "RawPlatform")]
pub struct Platform {
    units: u32,
    node_bandwidth: f64,
    io_bandwidth: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPlatform {
    #[serde(rename = "N")]
    units: u32,
    b: f64,
    #[serde(rename = "B")]
    io_bandwidth: f64,
}

impl TryFrom<RawPlatform> for Platform {
    type Error = Error;

    fn try_from(raw: RawPlatform) -> Result<Self> {
        Platform::new(raw.units, raw.b, raw.io_bandwidth)
    }
}

impl From<Platform> for RawPlatform {
    fn from(p: Platform) -> Self {
        RawPlatform {
            units: p.units,
            b: p.node_bandwidth,
            io_bandwidth: p.io_bandwidth,
        }
    }
}

impl Platform {
    pub fn new(units: u32, node_bandwidth: f64, io_bandwidth: f64) -> Result<Self> {
        if units == 0 {
            return Err(Error::invalid("platform", "field `N` must be at least 1"));
        }
        if !(node_bandwidth.is_finite() && node_bandwidth > 0.0) {
            return Err(Error::invalid("platform", "field `b` must be positive"));
        }
        if !(io_bandwidth.is_finite() && io_bandwidth > 0.0) {
            return Err(Error::invalid("platform", "field `B` must be positive"));
        }
        Ok(Platform {
            units,
            node_bandwidth,
            io_bandwidth,
        })
    }

    /// The evaluation platform: 640 cores, b = 0.01 GB/s, B = 3 GB/s.
    pub fn jupiter() -> Self {
        Platform {
            units: 640,
            node_bandwidth: 0.01,
            io_bandwidth: 3.0,
        }
    }

    pub fn units(&self) -> u32 {
        self.units
    }

    pub fn node_bandwidth(&self) -> f64 {
        self.node_bandwidth
    }

    pub fn io_bandwidth(&self) -> f64 {
        self.io_bandwidth
    }
}

/// A periodic application: `procs` dedicated processors, alternating `work`
/// seconds of computation and the transfer of `volume` GB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawApp", into = "RawApp")]
pub struct ApplicationSpec {
    id: String,
    procs: u32,
    work: f64,
    volume: f64,
}

#[derive(Serialize, Deserialize)]
struct RawApp {
    id: String,
    p: u32,
    w: f64,
    vol: f64,
}

impl TryFrom<RawApp> for ApplicationSpec {
    type Error = Error;

    fn try_from(raw: RawApp) -> Result<Self> {
        ApplicationSpec::new(raw.id, raw.p, raw.w, raw.vol)
    }
}

impl From<ApplicationSpec> for RawApp {
    fn from(a: ApplicationSpec) -> Self {
        RawApp {
            id: a.id,
            p: a.procs,
            w: a.work,
            vol: a.volume,
        }
    }
}

impl ApplicationSpec {
    pub fn new(id: impl Into<String>, procs: u32, work: f64, volume: f64) -> Result<Self> {
        let id = id.into();
        if procs == 0 {
            return Err(Error::invalid("application", format!("{id}: field `p` must be at least 1")));
        }
        if !(work.is_finite() && work > 0.0) {
            return Err(Error::invalid("application", format!("{id}: field `w` must be positive")));
        }
        if !(volume.is_finite() && volume >= 0.0) {
            return Err(Error::invalid("application", format!("{id}: field `vol` must be non-negative")));
        }
        Ok(ApplicationSpec {
            id,
            procs,
            work,
            volume,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn procs(&self) -> u32 {
        self.procs
    }

    /// Compute time of one instance.
    pub fn work(&self) -> f64 {
        self.work
    }

    /// I/O volume of one instance.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Largest aggregate bandwidth the application can ever use.
    pub fn rate_cap(&self, platform: &Platform) -> f64 {
        (self.procs as f64 * platform.node_bandwidth).min(platform.io_bandwidth)
    }

    pub fn derive(&self, platform: &Platform) -> DerivedApp {
        let tio = min_io_time(self, platform);
        DerivedApp {
            tio,
            rho: self.work / (self.work + tio),
        }
    }

    pub(crate) fn with_id(mut self, id: String) -> Self {
        self.id = id;
        self
    }
}

/// Quantities that follow from an application and the platform alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedApp {
    /// Time to transfer one instance's volume on an otherwise idle system.
    pub tio: f64,
    /// Efficiency of the application running alone.
    pub rho: f64,
}

/// Minimal I/O time of one instance: `vol / min(p·b, B)`.
pub fn min_io_time(app: &ApplicationSpec, platform: &Platform) -> f64 {
    if app.volume == 0.0 {
        return 0.0;
    }
    app.volume / app.rate_cap(platform)
}

/// Efficiency achieved when running alone: `w / (w + tio)`.
pub fn optimal_efficiency(app: &ApplicationSpec, platform: &Platform) -> f64 {
    app.derive(platform).rho
}

/// A fixed set of co-scheduled applications on one platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario", into = "RawScenario")]
pub struct Scenario {
    name: String,
    platform: Platform,
    apps: Vec<ApplicationSpec>,
}

#[derive(Serialize, Deserialize)]
struct RawScenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    platform: Platform,
    apps: Vec<ApplicationSpec>,
}

impl TryFrom<RawScenario> for Scenario {
    type Error = Error;

    fn try_from(raw: RawScenario) -> Result<Self> {
        Scenario::new(raw.name, raw.platform, raw.apps)
    }
}

impl From<Scenario> for RawScenario {
    fn from(s: Scenario) -> Self {
        RawScenario {
            name: s.name,
            platform: s.platform,
            apps: s.apps,
        }
    }
}

impl Scenario {
    pub fn new(name: impl Into<String>, platform: Platform, apps: Vec<ApplicationSpec>) -> Result<Self> {
        let used: u64 = apps.iter().map(|a| a.procs as u64).sum();
        if used > platform.units as u64 {
            return Err(Error::invalid(
                "scenario",
                format!("field `apps` uses {used} processors but the platform has {}", platform.units),
            ));
        }
        for (i, a) in apps.iter().enumerate() {
            if apps[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::invalid("scenario", format!("field `id`: duplicate application id `{}`", a.id)));
            }
        }
        Ok(Scenario {
            name: name.into(),
            platform,
            apps,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn apps(&self) -> &[ApplicationSpec] {
        &self.apps
    }

    /// Smallest period holding one instance of every application:
    /// `max_k (w_k + tio_k)`.
    pub fn min_period(&self) -> f64 {
        self.apps
            .iter()
            .map(|a| a.work + min_io_time(a, &self.platform))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// System efficiency reachable if every application ran alone:
/// `(1/N) Σ p_k w_k / (w_k + tio_k)`.
pub fn upper_bound_syseff(scenario: &Scenario) -> f64 {
    let platform = scenario.platform();
    let total: f64 = scenario
        .apps()
        .iter()
        .map(|a| a.procs as f64 * optimal_efficiency(a, platform))
        .sum();
    total / platform.units as f64
}
