//! JSON experiment configurations. Every field has a default, unknown keys are
//! rejected, and command-line flags are applied on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fsrm::device::{NoiseModel, SettingMode};
use fsrm::estimators::{Pooling, Quantity, Scheme};
use fsrm::io::read_state;
use fsrm::noisestudy::NoiseScheme;
use fsrm::qcore::{DensityMatrix, Partition};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, CliError, CliResult};

/// A state named on the command line or in a config:
/// `bell`, `werner:P`, `product:N`, `mixed:N`, `random:N:RANK:SEED` or `file:PATH`.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSpec {
    Bell,
    Werner(f64),
    Product(usize),
    Mixed(usize),
    Random { n_qubits: usize, rank: usize, seed: u64 },
    File(PathBuf),
}

impl StateSpec {
    pub fn build(&self) -> CliResult<DensityMatrix> {
        Ok(match self {
            StateSpec::Bell => DensityMatrix::bell_phi_plus(),
            StateSpec::Werner(p) => DensityMatrix::werner(*p)?,
            StateSpec::Product(n) => DensityMatrix::product_zero(*n)?,
            StateSpec::Mixed(n) => DensityMatrix::maximally_mixed(*n)?,
            StateSpec::Random { n_qubits, rank, seed } => DensityMatrix::random(*n_qubits, *rank, *seed)?,
            StateSpec::File(path) => read_state(path)?,
        })
    }
}

impl FromStr for StateSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        fn num<T: FromStr>(field: &str, v: &str) -> CliResult<T> {
            v.parse().map_err(|_| CliError::Config(format!("state {field} {v:?} is not a number")))
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(StateSpec::File(PathBuf::from(path)));
        }
        let parts: Vec<&str> = s.split(':').collect();
        Ok(match parts.as_slice() {
            ["bell"] => StateSpec::Bell,
            ["werner", p] => StateSpec::Werner(num("p", p)?),
            ["product", n] => StateSpec::Product(num("qubit count", n)?),
            ["mixed", n] => StateSpec::Mixed(num("qubit count", n)?),
            ["random", n, r, seed] => StateSpec::Random {
                n_qubits: num("qubit count", n)?,
                rank: num("rank", r)?,
                seed: num("seed", seed)?,
            },
            _ => {
                return invalid(format!(
                    "unknown state {s:?}; expected bell, werner:P, product:N, mixed:N, random:N:RANK:SEED or file:PATH"
                ))
            }
        })
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Bell => f.write_str("bell"),
            StateSpec::Werner(p) => write!(f, "werner:{p}"),
            StateSpec::Product(n) => write!(f, "product:{n}"),
            StateSpec::Mixed(n) => write!(f, "mixed:{n}"),
            StateSpec::Random { n_qubits, rank, seed } => write!(f, "random:{n_qubits}:{rank}:{seed}"),
            StateSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl Serialize for StateSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The serialized name of a unit enum value, e.g. `fsrm` or `p3`.
pub fn name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

/// Default partition: the first ⌈n/2⌉ qubits form A.
pub fn default_partition(n_qubits: usize) -> String {
    (0..n_qubits).map(|j| if j < n_qubits.div_ceil(2) { '1' } else { '0' }).collect()
}

pub fn resolve_partition(part: Option<&str>, n_qubits: usize) -> CliResult<Partition> {
    let text = part.map_or_else(|| default_partition(n_qubits), str::to_string);
    let p: Partition = text.parse()?;
    p.check_len(n_qubits)?;
    p.check_bipartite()?;
    Ok(p)
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub state: StateSpec,
    pub scheme: Scheme,
    pub quantity: Quantity,
    pub partition: Option<String>,
    pub n_u: usize,
    pub n_m: Option<usize>,
    pub settings: Option<SettingMode>,
    pub pooling: Pooling,
    pub noise: NoiseModel,
    pub povm: Option<PathBuf>,
    pub coefficients: Option<PathBuf>,
    pub seed: u64,
    pub batches: usize,
    pub out: Option<PathBuf>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            state: StateSpec::Bell,
            scheme: Scheme::Fsrm,
            quantity: Quantity::P2,
            partition: None,
            n_u: 10_000,
            n_m: None,
            settings: None,
            pooling: Pooling::All,
            noise: NoiseModel::none(),
            povm: None,
            coefficients: None,
            seed: 0,
            batches: 10,
            out: None,
        }
    }
}

impl EstimateConfig {
    /// Fills in defaults that depend on other fields and checks compatibility.
    pub fn resolve(mut self, n_qubits: usize) -> CliResult<Self> {
        let min_shots = match (self.scheme, self.quantity) {
            (Scheme::Cs, _) => 1,
            (_, Quantity::P2) => 2,
            _ => 3,
        };
        let n_m = *self.n_m.get_or_insert(min_shots);
        if n_m < min_shots {
            return invalid(format!(
                "{} {} needs at least {min_shots} shots per round, got n_m = {n_m}",
                name(&self.scheme),
                name(&self.quantity)
            ));
        }
        let settings = *self.settings.get_or_insert(match (self.scheme, self.quantity) {
            (Scheme::Cs, _) | (_, Quantity::P2) => SettingMode::CmOnly,
            _ => SettingMode::Sampled,
        });
        if self.scheme == Scheme::Cs && settings != SettingMode::CmOnly {
            return invalid("classical shadows use computational-basis settings only");
        }
        if self.scheme == Scheme::Rm && self.quantity != Quantity::P2 && settings != SettingMode::Sampled {
            return invalid("plug-in RM for p3 and n3 requires sampled (Bell-capable) settings");
        }
        if self.scheme == Scheme::Cs && (self.povm.is_some() || self.coefficients.is_some()) {
            return invalid("povm and coefficients apply only to Bell-measurement schemes");
        }
        if self.n_u < 2 {
            return invalid(format!("n_u must be at least 2, got {}", self.n_u));
        }
        if self.batches == 0 {
            return invalid("batches must be positive");
        }
        self.noise.validate()?;
        let part = resolve_partition(self.partition.as_deref(), n_qubits)?;
        self.partition = Some(part.to_string());
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub state: StateSpec,
    pub scheme: Scheme,
    pub quantity: Quantity,
    pub partition: Option<String>,
    pub n_list: Vec<usize>,
    pub n_m_list: Vec<usize>,
    pub repetitions: usize,
    pub pooling: Pooling,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub fit_out: Option<PathBuf>,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            state: StateSpec::Bell,
            scheme: Scheme::Fsrm,
            quantity: Quantity::P2,
            partition: None,
            n_list: vec![1_000, 2_000, 5_000, 10_000, 20_000, 50_000, 100_000],
            n_m_list: vec![2, 200],
            repetitions: 100,
            pooling: Pooling::All,
            seed: 0,
            out: None,
            fit_out: None,
        }
    }
}

impl ConvergeConfig {
    pub fn resolve(mut self, n_qubits: usize) -> CliResult<Self> {
        if self.n_list.len() < 4 {
            return invalid(format!("a fit needs at least 4 values of N, got {}", self.n_list.len()));
        }
        if self.repetitions < 20 {
            return invalid(format!("at least 20 repetitions are required, got {}", self.repetitions));
        }
        if self.scheme == Scheme::Cs {
            return invalid("convergence sweeps compare shots per round; use fsrm or rm");
        }
        if self.n_m_list.is_empty() {
            return invalid("n_m_list is empty");
        }
        let min_shots = if self.quantity == Quantity::P2 { 2 } else { 3 };
        for &m in &self.n_m_list {
            if m < min_shots {
                return invalid(format!("n_m = {m} is below {min_shots} for {}", name(&self.quantity)));
            }
            for &n in &self.n_list {
                if n % m != 0 || n / m < 2 {
                    return invalid(format!("N = {n} is not a multiple of n_m = {m} with at least 2 rounds"));
                }
            }
        }
        let mut sorted = self.n_list.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.n_list {
            return invalid("n_list must be strictly ascending");
        }
        let part = resolve_partition(self.partition.as_deref(), n_qubits)?;
        self.partition = Some(part.to_string());
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseStudyConfig {
    pub schemes: Vec<String>,
    pub epsilons: Vec<f64>,
    pub n_list: Vec<usize>,
    pub dim: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        Self {
            schemes: vec!["cs".into(), "fsrm-1".into(), "fsrm-2".into()],
            epsilons: vec![0.1, 0.5, 1.0],
            n_list: vec![100, 1_000, 10_000],
            dim: 2,
            seed: 0,
            out: None,
        }
    }
}

impl NoiseStudyConfig {
    pub fn parsed_schemes(&self) -> CliResult<Vec<NoiseScheme>> {
        if self.schemes.is_empty() {
            return invalid("no schemes requested");
        }
        self.schemes.iter().map(|s| Ok(s.parse()?)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmendConfig {
    pub povm: Option<PathBuf>,
    pub ceiling: f64,
    pub out: Option<PathBuf>,
}

impl Default for AmendConfig {
    fn default() -> Self {
        Self {
            povm: None,
            ceiling: fsrm::amendment::DEFAULT_CEILING,
            out: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_specs_round_trip() {
        for s in ["bell", "werner:0.5", "product:3", "mixed:2", "random:2:3:7", "file:a/b.json"] {
            let spec: StateSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("werner".parse::<StateSpec>().is_err());
        assert!("random:2:x:1".parse::<StateSpec>().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<EstimateConfig>(r#"{"scheme": "fsrm", "shots": 3}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
        let ok: EstimateConfig = serde_json::from_str(r#"{"state": "werner:0.3", "quantity": "p3"}"#).unwrap();
        assert_eq!(ok.state, StateSpec::Werner(0.3));
    }

    #[test]
    fn resolution_fills_dependent_defaults() {
        let c = EstimateConfig {
            quantity: Quantity::P3,
            ..Default::default()
        }
        .resolve(2)
        .unwrap();
        assert_eq!(c.n_m, Some(3));
        assert_eq!(c.settings, Some(SettingMode::Sampled));
        assert_eq!(c.partition.as_deref(), Some("10"));

        let bad = EstimateConfig {
            quantity: Quantity::P3,
            n_m: Some(2),
            ..Default::default()
        };
        assert!(bad.resolve(2).is_err());
        let bad = EstimateConfig {
            scheme: Scheme::Rm,
            quantity: Quantity::P3,
            settings: Some(SettingMode::CmOnly),
            ..Default::default()
        };
        assert!(bad.resolve(2).is_err());
        let bad = EstimateConfig {
            partition: Some("11".into()),
            ..Default::default()
        };
        assert!(bad.resolve(2).is_err());
    }

    #[test]
    fn converge_preconditions() {
        assert!(ConvergeConfig::default().resolve(2).is_ok());
        let few = ConvergeConfig {
            n_list: vec![1000, 2000, 4000],
            ..Default::default()
        };
        assert!(few.resolve(2).is_err());
        let reps = ConvergeConfig {
            repetitions: 10,
            ..Default::default()
        };
        assert!(reps.resolve(2).is_err());
    }

    #[test]
    fn default_partitions() {
        assert_eq!(default_partition(2), "10");
        assert_eq!(default_partition(3), "110");
        assert_eq!(default_partition(4), "1100");
    }
}
