use std::path::PathBuf;

use fsrm::amendment::{amend, error_bound, weingarten, CoefficientTable};
use fsrm::device::{run_rounds, NoisyBellPovm, RoundPlan, SettingMode, ShotRecord};
use fsrm::ensembles::splitmix64;
use fsrm::estimators::*;
use fsrm::io::{read_povm, PovmFile, StateFile};
use fsrm::noisestudy::{err_curve, ErrPoint};
use fsrm::qcore::{exact_pt_moment, negativity, DensityMatrix, Partition};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::error::{invalid, CliResult};
use crate::fit::{db_gain, db_gain_free, fit_curve, FitResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionMoments {
    pub partition: String,
    pub p3: f64,
    pub negativity: f64,
    pub n3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub state: StateSpec,
    pub n_qubits: usize,
    pub partition: String,
    pub p2: f64,
    pub p3: f64,
    pub negativity: f64,
    pub n3: f64,
    /// Every bipartition with qubit 0 in A.
    pub partitions: Vec<PartitionMoments>,
}

fn partition_moments(rho: &DensityMatrix, part: &Partition) -> CliResult<PartitionMoments> {
    let p2 = exact_pt_moment(rho, part, 2)?;
    let p3 = exact_pt_moment(rho, part, 3)?;
    Ok(PartitionMoments {
        partition: part.to_string(),
        p3,
        negativity: negativity(rho, part)?,
        n3: p2 * p2 - p3,
    })
}

pub fn oracle(state: &StateSpec, partition: Option<&str>) -> CliResult<OracleReport> {
    let rho = state.build()?;
    let n = rho.n_qubits();
    if n < 2 {
        return invalid("a bipartition needs at least two qubits");
    }
    let part = resolve_partition(partition, n)?;
    let main = partition_moments(&rho, &part)?;
    let mut partitions = Vec::new();
    for mask in 0..(1u32 << (n - 1)) {
        let bits: String = (0..n)
            .map(|j| if j == 0 || mask >> (n - 1 - j) & 1 == 0 { '1' } else { '0' })
            .collect();
        let p: Partition = bits.parse()?;
        if p.check_bipartite().is_ok() {
            partitions.push(partition_moments(&rho, &p)?);
        }
    }
    Ok(OracleReport {
        state: state.clone(),
        n_qubits: n,
        partition: main.partition,
        p2: rho.purity(),
        p3: main.p3,
        negativity: main.negativity,
        n3: main.n3,
        partitions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub quantity: Quantity,
    pub mean: f64,
    pub std_error: f64,
    pub rounds: usize,
    pub scheme: Scheme,
    pub exact: f64,
    pub biased: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_reason: Option<String>,
    /// Means of contiguous equal blocks of rounds, each an independent experiment.
    pub batch_means: Vec<f64>,
    pub batch_spread: f64,
    pub povm_hash: String,
    pub seed: u64,
    pub config: EstimateConfig,
}

pub fn exact_value(rho: &DensityMatrix, part: &Partition, q: Quantity) -> CliResult<f64> {
    let p2 = rho.purity();
    Ok(match q {
        Quantity::P2 => p2,
        Quantity::P3 => exact_pt_moment(rho, part, 3)?,
        Quantity::N3 => p2 * p2 - exact_pt_moment(rho, part, 3)?,
    })
}

pub fn run_estimator(
    records: &[ShotRecord],
    scheme: Scheme,
    quantity: Quantity,
    part: &Partition,
    coeffs: Option<&CoefficientTable>,
    pooling: Pooling,
) -> CliResult<MomentEstimate> {
    Ok(match (scheme, quantity) {
        (Scheme::Fsrm, Quantity::P2) => estimate_p2_fsrm(records, pooling)?,
        (Scheme::Fsrm, Quantity::P3) => estimate_p3_fsrm(records, part, coeffs, pooling)?,
        (Scheme::Fsrm, Quantity::N3) => estimate_n3_fsrm(records, part, coeffs, pooling)?,
        (Scheme::Rm, Quantity::P2) => estimate_p2_rm(records)?,
        (Scheme::Rm, Quantity::P3) => estimate_p3_rm(records, part, coeffs)?,
        (Scheme::Rm, Quantity::N3) => estimate_n3_rm(records, part, coeffs)?,
        (Scheme::Cs, Quantity::P2) => estimate_p2_cs(records)?,
        (Scheme::Cs, Quantity::P3) => estimate_p3_cs(records, part)?,
        (Scheme::Cs, Quantity::N3) => estimate_n3_cs(records, part)?,
    })
}

pub fn estimate(cfg: EstimateConfig) -> CliResult<EstimateOutput> {
    let rho = cfg.state.build()?;
    let cfg = cfg.resolve(rho.n_qubits())?;
    let part: Partition = cfg.partition.as_deref().expect("resolved").parse()?;
    let povm = match &cfg.povm {
        Some(p) => read_povm(p)?,
        None => NoisyBellPovm::ideal(),
    };
    let povm_hash = povm.fingerprint();
    let coeffs = cfg.coefficients.as_deref().map(CoefficientTable::read).transpose()?;
    if let Some(c) = &coeffs {
        if c.povm_hash != povm_hash {
            return invalid(format!(
                "coefficients were solved for POVM {} but the configured POVM is {}",
                c.povm_hash, povm_hash
            ));
        }
    }
    let settings = cfg.settings.expect("resolved");
    let plan = RoundPlan {
        rounds: cfg.n_u,
        shots: cfg.n_m.expect("resolved"),
        settings,
    };
    let records = run_rounds(&rho, &plan, cfg.seed, &cfg.noise, &povm)?;
    let est = run_estimator(&records, cfg.scheme, cfg.quantity, &part, coeffs.as_ref(), cfg.pooling)?;

    let batches = cfg.batches.min(records.len() / 2).max(1);
    let batch_means: Vec<f64> = (0..batches)
        .filter_map(|b| {
            let (lo, hi) = (b * records.len() / batches, (b + 1) * records.len() / batches);
            run_estimator(&records[lo..hi], cfg.scheme, cfg.quantity, &part, coeffs.as_ref(), cfg.pooling)
                .ok()
                .map(|e| e.mean)
        })
        .collect();
    let batch_spread = if batch_means.len() > 1 { mean_sd(&batch_means).1 } else { 0.0 };

    let uses_bell = settings == SettingMode::Sampled && cfg.quantity != Quantity::P2;
    let bias_reason = if cfg.scheme == Scheme::Rm {
        Some("plug-in randomized measurement is biased at finite shots per round".to_string())
    } else if uses_bell && coeffs.is_none() && !povm.is_ideal(1e-12) {
        Some("noisy Bell measurement without amendment coefficients; run amend".to_string())
    } else {
        None
    };
    Ok(EstimateOutput {
        quantity: cfg.quantity,
        mean: est.mean,
        std_error: est.std_error,
        rounds: est.rounds_used,
        scheme: cfg.scheme,
        exact: exact_value(&rho, &part, cfg.quantity)?,
        biased: bias_reason.is_some(),
        bias_reason,
        batch_means,
        batch_spread,
        povm_hash,
        seed: cfg.seed,
        config: cfg,
    })
}

/// Seed for one cell of a sweep, mixed from the master seed and the cell's coordinates.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(master), |acc, &c| splitmix64(acc ^ c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeRow {
    pub n_m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_u: usize,
    pub repetitions: usize,
    pub err: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeReport {
    pub exact: f64,
    pub rows: Vec<ConvergeRow>,
    pub fits: Vec<FitResult>,
    /// Gain of the smallest over the largest shots-per-round value, slope fixed at −½.
    pub db_gain: f64,
    pub db_gain_free_slope: f64,
    pub config: ConvergeConfig,
}

pub fn converge(cfg: ConvergeConfig) -> CliResult<ConvergeReport> {
    let rho = cfg.state.build()?;
    let cfg = cfg.resolve(rho.n_qubits())?;
    let part: Partition = cfg.partition.as_deref().expect("resolved").parse()?;
    let exact = exact_value(&rho, &part, cfg.quantity)?;
    let povm = NoisyBellPovm::ideal();
    let settings = if cfg.quantity == Quantity::P2 {
        SettingMode::CmOnly
    } else {
        SettingMode::Sampled
    };
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &n_m in &cfg.n_m_list {
        let mut points = Vec::new();
        for &n in &cfg.n_list {
            let plan = RoundPlan {
                rounds: n / n_m,
                shots: n_m,
                settings,
            };
            let sq = (0..cfg.repetitions as u64)
                .into_par_iter()
                .map(|r| {
                    let seed = derive_seed(cfg.seed, &[n_m as u64, n as u64, r]);
                    let records = run_rounds(&rho, &plan, seed, &fsrm::device::NoiseModel::none(), &povm)?;
                    let e = run_estimator(&records, cfg.scheme, cfg.quantity, &part, None, cfg.pooling)?;
                    Ok((e.mean - exact).powi(2))
                })
                .collect::<CliResult<Vec<f64>>>()?;
            let err = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
            points.push((n, err));
            rows.push(ConvergeRow {
                n_m,
                n,
                n_u: plan.rounds,
                repetitions: cfg.repetitions,
                err,
                seed: cfg.seed,
            });
        }
        fits.push(fit_curve(n_m, &points)?);
    }
    let lo = fits.iter().min_by_key(|f| f.n_m).expect("non-empty");
    let hi = fits.iter().max_by_key(|f| f.n_m).expect("non-empty");
    Ok(ConvergeReport {
        exact,
        db_gain: db_gain(lo, hi),
        db_gain_free_slope: db_gain_free(lo, hi),
        rows,
        fits,
        config: cfg,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmendReport {
    pub povm_hash: String,
    pub overall_fidelity: f64,
    pub port_fidelities: [f64; 4],
    pub residual: f64,
    pub ceiling: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn amend_povm(povm: &NoisyBellPovm, cfg: &AmendConfig) -> CliResult<(CoefficientTable, AmendReport)> {
    if !(cfg.ceiling > 0.0 && cfg.ceiling.is_finite()) {
        return invalid(format!("ceiling must be positive, got {}", cfg.ceiling));
    }
    let table = amend(povm, cfg.ceiling)?;
    let k = weingarten(3, 2)?.two_sided_k();
    let report = AmendReport {
        povm_hash: table.povm_hash.clone(),
        overall_fidelity: povm.overall_fidelity(),
        port_fidelities: povm.port_fidelities(),
        residual: table.residual,
        ceiling: cfg.ceiling,
        k,
        bound: error_bound(table.residual, k),
        out: cfg.out.clone(),
    };
    Ok((table, report))
}

pub fn amend_cmd(cfg: &AmendConfig) -> CliResult<AmendReport> {
    let povm = match &cfg.povm {
        Some(p) => read_povm(p)?,
        None => NoisyBellPovm::ideal(),
    };
    let (table, report) = amend_povm(&povm, cfg)?;
    if let Some(out) = &cfg.out {
        table.write(out)?;
    }
    Ok(report)
}

pub fn noise_study(cfg: &NoiseStudyConfig) -> CliResult<Vec<ErrPoint>> {
    let schemes = cfg.parsed_schemes()?;
    if cfg.epsilons.is_empty() || cfg.n_list.is_empty() {
        return invalid("epsilons and n_list must be non-empty");
    }
    if cfg.dim < 2 {
        return invalid(format!("dimension must be at least 2, got {}", cfg.dim));
    }
    let mut out = Vec::new();
    for scheme in schemes {
        for &eps in &cfg.epsilons {
            out.extend(err_curve(scheme, cfg.dim, eps, &cfg.n_list, cfg.seed)?);
        }
    }
    Ok(out)
}

pub fn make_state(spec: &StateSpec) -> CliResult<StateFile> {
    Ok(StateFile::from(&spec.build()?))
}

/// Default per-port fidelities for synthetic POVMs.
pub const REFERENCE_PORT_FIDELITIES: [f64; 4] = [0.7730, 0.5495, 0.7611, 0.8541];
pub const DEFAULT_TWIST: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PovmReport {
    pub overall_fidelity: f64,
    pub port_fidelities: [f64; 4],
    pub povm_hash: String,
}

pub fn make_povm(ports: [f64; 4], twist: f64, seed: u64) -> CliResult<(PovmFile, PovmReport)> {
    let povm = NoisyBellPovm::synthetic(ports, twist, seed)?;
    let report = PovmReport {
        overall_fidelity: povm.overall_fidelity(),
        port_fidelities: povm.port_fidelities(),
        povm_hash: povm.fingerprint(),
    };
    Ok((PovmFile::from(&povm), report))
}
