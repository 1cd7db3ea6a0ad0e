//! Flat `key = value` experiment configuration.
//!
//! One key per line, `#` starts a comment, keys are case-insensitive and may
//! appear at most once. See the README for the full key table.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gmrs_core::model::{partition_messages, LayerPolicy, RequestProfile};

/// A configuration problem, with the offending line when there is one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }

    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }

    fn rule(name: &str, message: impl fmt::Display) -> Self {
        ConfigError::new(format!("rule {name}: {message}"))
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    Slow,
    Fast,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Slow => "slow",
            Scenario::Fast => "fast",
        }
    }
}

/// Schemes in canonical (reporting) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    PropRs,
    OneLayerRs,
    Noma,
    Ofdma,
    FastProp,
    FastCor,
    FastIid,
    FastOneLayer,
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::PropRs,
        Scheme::OneLayerRs,
        Scheme::Noma,
        Scheme::Ofdma,
        Scheme::FastProp,
        Scheme::FastCor,
        Scheme::FastIid,
        Scheme::FastOneLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::PropRs => "prop-rs",
            Scheme::OneLayerRs => "1l-rs",
            Scheme::Noma => "noma",
            Scheme::Ofdma => "ofdma",
            Scheme::FastProp => "fast-prop",
            Scheme::FastCor => "fast-cor",
            Scheme::FastIid => "fast-iid",
            Scheme::FastOneLayer => "fast-1l",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn scenario(self) -> Scenario {
        match self {
            Scheme::PropRs | Scheme::OneLayerRs | Scheme::Noma | Scheme::Ofdma => Scenario::Slow,
            _ => Scenario::Fast,
        }
    }

    /// Layer policy of the optimized structure; OFDMA serves groups on their own layer.
    pub fn policy(self) -> LayerPolicy {
        match self {
            Scheme::PropRs | Scheme::FastProp | Scheme::FastCor | Scheme::FastIid => LayerPolicy::FullGeneral,
            Scheme::OneLayerRs | Scheme::FastOneLayer => LayerPolicy::OneLayer,
            Scheme::Noma | Scheme::Ofdma => LayerPolicy::NoSplit,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChannelKind {
    /// `CN(0, λI)` per user and subcarrier.
    Iid { lambda: f64 },
    /// One-ring covariance with `groups` azimuths shared within a group.
    OneRing { groups: usize, spread: f64, spacing: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SweepAxis {
    /// Antenna count `M`.
    Antennas,
    /// Power budget in dBm.
    Power,
    /// One-ring group count `G`.
    Groups,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Antennas => "M",
            SweepAxis::Power => "P",
            SweepAxis::Groups => "G",
        }
    }

    pub fn parse(s: &str) -> Option<SweepAxis> {
        match s {
            "M" | "m" => Some(SweepAxis::Antennas),
            "P" | "p" => Some(SweepAxis::Power),
            "G" | "g" => Some(SweepAxis::Groups),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    /// `1/|S|` for every group.
    Uniform,
    /// One weight per message group in canonical group order.
    Explicit(Vec<f64>),
}

/// One point of the sweep grid with every swept quantity resolved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    /// The swept value as written in the config (dBm for `P`).
    pub value: f64,
    pub antennas: usize,
    pub power_watts: f64,
    pub channel: ChannelKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub profile: RequestProfile,
    pub scenario: Scenario,
    pub schemes: Vec<Scheme>,
    pub channel: ChannelKind,
    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<f64>,
    pub subcarriers: usize,
    pub antennas: usize,
    /// Subcarrier bandwidth `B` in hertz.
    pub bandwidth: f64,
    /// Noise power `σ²` in watts.
    pub noise: f64,
    pub power_dbm: f64,
    pub weights: Weights,
    pub realizations: u32,
    pub seed: u64,
    pub out: PathBuf,
    /// Monte-Carlo samples for ergodic evaluation (antithetic, even).
    pub mc_samples: usize,
    pub ssca_iterations: usize,
    pub trace: bool,
    pub dump_channels: bool,
}

/// Every accepted key; the README documents each one.
pub const KEYS: [&str; 22] = [
    "requests",
    "users",
    "scenario",
    "schemes",
    "channel",
    "lambda",
    "groups",
    "spread_deg",
    "spacing",
    "sweep",
    "values",
    "subcarriers",
    "antennas",
    "bandwidth",
    "noise",
    "power_dbm",
    "weights",
    "realizations",
    "seed",
    "out",
    "mc_samples",
    "ssca_iterations",
];

const FLAG_KEYS: [&str; 2] = ["trace", "dump_channels"];

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: Option<T>) -> Result<T, ConfigError> {
        match self.take(key) {
            Some((line, v)) => v
                .parse()
                .map_err(|_| ConfigError::at(line, format!("{key}: cannot parse {v:?}"))),
            None => default.ok_or_else(|| ConfigError::new(format!("missing required key {key}"))),
        }
    }

    fn flag(&mut self, key: &str) -> Result<bool, ConfigError> {
        match self.take(key) {
            None => Ok(false),
            Some((line, v)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(ConfigError::at(line, format!("{key}: expected true or false, got {v:?}"))),
            },
        }
    }
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| ConfigError::at(line, format!("{key}: cannot parse list item {s:?}")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    /// Resolved sweep grid in config order.
    pub fn cells(&self) -> Vec<SweepCell> {
        self.sweep_values
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                let mut cell = SweepCell {
                    index,
                    value,
                    antennas: self.antennas,
                    power_watts: dbm_to_watts(self.power_dbm),
                    channel: self.channel,
                };
                match self.sweep_axis {
                    SweepAxis::Antennas => cell.antennas = value as usize,
                    SweepAxis::Power => cell.power_watts = dbm_to_watts(value),
                    SweepAxis::Groups => {
                        if let ChannelKind::OneRing { spread, spacing, .. } = self.channel {
                            cell.channel = ChannelKind::OneRing {
                                groups: value as usize,
                                spread,
                                spacing,
                            };
                        }
                    }
                }
                cell
            })
            .collect()
    }

    /// Weights in canonical group order.
    pub fn weight_vector(&self) -> Vec<f64> {
        let groups = partition_messages(&self.profile).map(|p| p.len()).unwrap_or(0);
        match &self.weights {
            Weights::Uniform => vec![1.0 / groups as f64; groups],
            Weights::Explicit(w) => w.clone(),
        }
    }

    /// Cross-field rules; each failure names the rule it breaks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let partition = partition_messages(&self.profile).map_err(|e| ConfigError::new(e.to_string()))?;
        for s in &self.schemes {
            if s.scenario() != self.scenario {
                return Err(ConfigError::rule(
                    "scheme-scenario",
                    format!("{s} requires scenario = {}", s.scenario().name()),
                ));
            }
            if *s == Scheme::FastIid && !matches!(self.channel, ChannelKind::Iid { .. }) {
                return Err(ConfigError::rule("iid-channel", "fast-iid requires channel = iid"));
            }
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return Err(ConfigError::rule("distinct-schemes", "a scheme is listed twice"));
        }
        if self.sweep_values.is_empty() {
            return Err(ConfigError::rule("sweep-values", "values must list at least one value"));
        }
        if !self.sweep_values.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(ConfigError::rule("sweep-values", "sweep values must be positive"));
        }
        let mut sorted = self.sweep_values.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() != self.sweep_values.len() {
            return Err(ConfigError::rule("sweep-values", "sweep values must be distinct"));
        }
        if matches!(self.sweep_axis, SweepAxis::Antennas | SweepAxis::Groups)
            && self.sweep_values.iter().any(|v| v.fract() != 0.0)
        {
            return Err(ConfigError::rule("sweep-values", "M and G sweep values must be integers"));
        }
        if self.sweep_axis == SweepAxis::Groups && !matches!(self.channel, ChannelKind::OneRing { .. }) {
            return Err(ConfigError::rule("groups-sweep", "sweep = G requires channel = one-ring"));
        }
        let users = self.profile.users();
        for cell in self.cells() {
            if let ChannelKind::OneRing { groups, .. } = cell.channel {
                if groups == 0 || groups > users {
                    return Err(ConfigError::rule(
                        "group-count",
                        format!("G = {groups} must lie in 1..={users}"),
                    ));
                }
            }
            if cell.antennas == 0 {
                return Err(ConfigError::rule("positive", "antennas must be positive"));
            }
        }
        for (name, v) in [("bandwidth", self.bandwidth), ("noise", self.noise)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::rule("positive", format!("{name} must be positive")));
            }
        }
        if !self.power_dbm.is_finite() {
            return Err(ConfigError::rule("positive", "power_dbm must be finite"));
        }
        match self.channel {
            ChannelKind::Iid { lambda } if !(lambda.is_finite() && lambda > 0.0) => {
                return Err(ConfigError::rule("positive", "lambda must be positive"));
            }
            ChannelKind::OneRing { spread, spacing, .. } if !(spread.is_finite() && spread >= 0.0 && spacing.is_finite() && spacing > 0.0) => {
                return Err(ConfigError::rule("positive", "spread must be nonnegative and spacing positive"));
            }
            _ => {}
        }
        if self.subcarriers == 0 || self.realizations == 0 {
            return Err(ConfigError::rule("positive", "subcarriers and realizations must be positive"));
        }
        if self.mc_samples < 2 || self.mc_samples % 2 != 0 {
            return Err(ConfigError::rule("antithetic", "mc_samples must be even and at least 2"));
        }
        if self.ssca_iterations == 0 {
            return Err(ConfigError::rule("positive", "ssca_iterations must be positive"));
        }
        if let Weights::Explicit(w) = &self.weights {
            if w.len() != partition.len() {
                return Err(ConfigError::rule(
                    "weights",
                    format!("{} weights for {} message groups", w.len(), partition.len()),
                ));
            }
            if !w.iter().all(|a| a.is_finite() && *a >= 0.0) {
                return Err(ConfigError::rule("weights", "weights must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected key = value, got {content:?}")))?;
            let key = k.trim().to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) && !FLAG_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::at(line, format!("unknown key {key:?}")));
            }
            if map.insert(key.clone(), (line, v.trim().to_string())).is_some() {
                return Err(ConfigError::at(line, format!("duplicate key {key:?}")));
            }
        }
        let mut e = Entries { map };

        let (req_line, req) = e.take("requests").ok_or_else(|| ConfigError::new("missing required key requests"))?;
        let requests = req
            .split(';')
            .map(|u| parse_list::<u32>(req_line, "requests", u))
            .collect::<Result<Vec<_>, _>>()?;
        let profile = RequestProfile::from_requests(requests).map_err(|err| ConfigError::at(req_line, err.to_string()))?;
        if let Some((line, v)) = e.take("users") {
            let k: usize = v.parse().map_err(|_| ConfigError::at(line, format!("users: cannot parse {v:?}")))?;
            if k != profile.users() {
                return Err(ConfigError::at(
                    line,
                    format!("users = {k} but requests lists {} users", profile.users()),
                ));
            }
        }

        let scenario = match e.take("scenario") {
            Some((_, v)) if v == "slow" => Scenario::Slow,
            Some((_, v)) if v == "fast" => Scenario::Fast,
            Some((line, v)) => return Err(ConfigError::at(line, format!("scenario must be slow or fast, got {v:?}"))),
            None => return Err(ConfigError::new("missing required key scenario")),
        };
        let schemes = match e.take("schemes") {
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Scheme::parse(s).ok_or_else(|| ConfigError::at(line, format!("unknown scheme {s:?}"))))
                .collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        };

        let lambda: f64 = e.parse("lambda", Some(1.0))?;
        let groups: usize = e.parse("groups", Some(1))?;
        let spread_deg: f64 = e.parse("spread_deg", Some(10.0))?;
        let spacing: f64 = e.parse("spacing", Some(gmrs_core::channel::DEFAULT_SPACING))?;
        let channel = match e.take("channel") {
            Some((_, v)) if v == "iid" => ChannelKind::Iid { lambda },
            Some((_, v)) if v == "one-ring" => ChannelKind::OneRing {
                groups,
                spread: spread_deg.to_radians(),
                spacing,
            },
            Some((line, v)) => return Err(ConfigError::at(line, format!("channel must be iid or one-ring, got {v:?}"))),
            None => return Err(ConfigError::new("missing required key channel")),
        };

        let (sweep_line, sweep) = e.take("sweep").ok_or_else(|| ConfigError::new("missing required key sweep"))?;
        let sweep_axis = SweepAxis::parse(&sweep)
            .ok_or_else(|| ConfigError::at(sweep_line, format!("sweep must be M, P or G, got {sweep:?}")))?;
        let (values_line, values) = e.take("values").ok_or_else(|| ConfigError::new("missing required key values"))?;
        let sweep_values = parse_list::<f64>(values_line, "values", &values)?;

        let weights = match e.take("weights") {
            None => Weights::Uniform,
            Some((_, v)) if v == "uniform" => Weights::Uniform,
            Some((line, v)) => Weights::Explicit(parse_list(line, "weights", &v)?),
        };

        let config = ExperimentConfig {
            profile,
            scenario,
            schemes,
            channel,
            sweep_axis,
            sweep_values,
            subcarriers: e.parse("subcarriers", Some(4))?,
            antennas: e.parse("antennas", Some(4))?,
            bandwidth: e.parse("bandwidth", Some(30e3))?,
            noise: e.parse("noise", Some(1e-9))?,
            power_dbm: e.parse("power_dbm", Some(30.0))?,
            weights,
            realizations: e.parse("realizations", Some(20))?,
            seed: e.parse("seed", Some(1))?,
            out: e.parse("out", Some(PathBuf::from("results")))?,
            mc_samples: e.parse("mc_samples", Some(2000))?,
            ssca_iterations: e.parse("ssca_iterations", Some(200))?,
            trace: e.flag("trace")?,
            dump_channels: e.flag("dump_channels")?,
        };
        debug_assert!(e.map.is_empty(), "every accepted key is consumed");
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "requests = 1,4,5,7; 2,4,6,7; 3,5,6,7\nscenario = slow\nchannel = one-ring\nsweep = P\nvalues = 20, 26, 30\n";

    fn with(extra: &str) -> Result<ExperimentConfig, ConfigError> {
        format!("{BASE}{extra}").parse()
    }

    #[test]
    fn defaults_fill_unset_keys() {
        let c = with("schemes = prop-rs, ofdma # trailing comment\n").unwrap();
        assert_eq!(c.schemes, vec![Scheme::PropRs, Scheme::Ofdma]);
        assert_eq!((c.subcarriers, c.antennas, c.realizations), (4, 4, 20));
        assert_eq!(c.weight_vector(), vec![1.0 / 7.0; 7]);
        let cells = c.cells();
        assert_eq!(cells.len(), 3);
        assert!((cells[2].power_watts - 1.0).abs() < 1e-12);
        assert!((cells[0].power_watts - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_scheme_list_is_valid() {
        assert!(with("").unwrap().schemes.is_empty());
    }

    #[test]
    fn compatibility_rules_are_named() {
        let e = with("schemes = fast-cor\n").unwrap_err();
        assert!(e.message.contains("rule scheme-scenario"), "{e}");
        let e = "requests = 1; 2\nscenario = fast\nchannel = one-ring\nsweep = P\nvalues = 30\nschemes = fast-iid\n"
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert!(e.message.contains("rule iid-channel"), "{e}");
        let e = "requests = 1; 2\nscenario = slow\nchannel = iid\nsweep = G\nvalues = 1\n"
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert!(e.message.contains("rule groups-sweep"), "{e}");
        assert!(with("groups = 4\n").unwrap_err().message.contains("rule group-count"));
        assert!(with("mc_samples = 7\n").unwrap_err().message.contains("rule antithetic"));
        assert!(with("weights = 1, 2\n").unwrap_err().message.contains("rule weights"));
    }

    #[test]
    fn sweep_values_must_be_positive_and_distinct() {
        let text = BASE.replace("values = 20, 26, 30", "values = 20, -3");
        assert!(text.parse::<ExperimentConfig>().unwrap_err().message.contains("rule sweep-values"));
        let text = BASE.replace("sweep = P", "sweep = M").replace("values = 20, 26, 30", "values = 4, 0");
        let e = text.parse::<ExperimentConfig>().unwrap_err();
        assert!(e.message.contains("rule sweep-values"), "{e}");
        let e = BASE.replace("values = 20, 26, 30", "values = 20, 20").parse::<ExperimentConfig>().unwrap_err();
        assert!(e.message.contains("distinct"), "{e}");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let e = with("antennas = four\n").unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(with("colour = red\n").unwrap_err().message.contains("unknown key"));
        assert!(with("seed = 1\nseed = 2\n").unwrap_err().message.contains("duplicate"));
        assert!(with("users = 2\n").is_err());
    }

    #[test]
    fn sweeps_resolve_per_cell() {
        let c = "requests = 1; 2\nscenario = slow\nchannel = one-ring\nsweep = G\nvalues = 1, 2\n"
            .parse::<ExperimentConfig>()
            .unwrap();
        assert!(matches!(c.cells()[1].channel, ChannelKind::OneRing { groups: 2, .. }));
        let c = "requests = 1; 2\nscenario = slow\nchannel = iid\nsweep = M\nvalues = 2, 8\n"
            .parse::<ExperimentConfig>()
            .unwrap();
        assert_eq!(c.cells()[1].antennas, 8);
    }
}
