//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the lines always reach the console.

use std::time::Instant;

use fsrm::amendment::{m_plus, twirl_operator, weingarten, CoefficientTable};
use fsrm::device::SettingMode;
use fsrm::ensembles::{sample_cue, SeededStream};
use fsrm::estimators::Quantity;
use fsrm::io::write_json;
use fsrm::noisestudy::{err_curve, NoiseScheme};
use fsrm::qcore::perm::permute_operator_factors;
use fsrm::qcore::{ComplexMatrix, DensityMatrix, C64};
use fsrm_cli::commands::{self, DEFAULT_TWIST, REFERENCE_PORT_FIDELITIES};
use fsrm_cli::config::{AmendConfig, ConvergeConfig, EstimateConfig, StateSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Result<Outcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn oracle_exactness() -> Result<Outcome, String> {
    let bell = commands::oracle(&StateSpec::Bell, None).map_err(err)?;
    let mixed = commands::oracle(&StateSpec::Mixed(2), None).map_err(err)?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let pass = close(bell.p2, 1.0)
        && close(bell.p3, 0.25)
        && close(bell.negativity, 0.5)
        && close(mixed.p2, 0.25)
        && close(mixed.p3, 0.0625);
    Ok(outcome(
        pass,
        format!(
            "bell p2={:.12} p3={:.12} N={:.12}; I/4 p2={:.12} p3={:.12}",
            bell.p2, bell.p3, bell.negativity, mixed.p2, mixed.p3
        ),
    ))
}

fn fsrm_unbiasedness() -> Result<Outcome, String> {
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..20u64 {
        let state = StateSpec::Random {
            n_qubits: 2,
            rank: 2 + i as usize % 3,
            seed: 4000 + i,
        };
        let p2 = commands::estimate(EstimateConfig {
            state: state.clone(),
            quantity: Quantity::P2,
            n_u: 20_000,
            n_m: Some(2),
            seed: 100 + i,
            ..Default::default()
        })
        .map_err(err)?;
        let p3 = commands::estimate(EstimateConfig {
            state,
            quantity: Quantity::P3,
            n_u: 50_000,
            n_m: Some(3),
            seed: 200 + i,
            ..Default::default()
        })
        .map_err(err)?;
        worst.0 = worst.0.max((p2.mean - p2.exact).abs() / p2.std_error);
        worst.1 = worst.1.max((p3.mean - p3.exact).abs() / p3.std_error);
    }
    Ok(outcome(
        worst.0 <= 4.0 && worst.1 <= 4.0,
        format!("20 states, worst |z| p2={:.2} p3={:.2} (limit 4)", worst.0, worst.1),
    ))
}

fn convergence_scaling() -> Result<Outcome, String> {
    let r = commands::converge(ConvergeConfig::default()).map_err(err)?;
    let slopes_ok = r.fits.iter().all(|f| (f.slope + 0.5).abs() <= 0.07);
    let gain_ok = (r.db_gain - 4.75).abs() <= 1.5;
    let few = r.rows.iter().filter(|x| x.n_m == 2);
    let many: Vec<_> = r.rows.iter().filter(|x| x.n_m == 200).collect();
    let ordered = few.zip(&many).all(|(a, b)| a.n == b.n && a.err < b.err);
    let slopes: Vec<String> = r.fits.iter().map(|f| format!("N_M={}: {:.3}", f.n_m, f.slope)).collect();
    Ok(outcome(
        slopes_ok && gain_ok && ordered,
        format!(
            "slopes [{}], gain {:.2} dB (free-slope {:.2} dB), Err(N_M=2) < Err(N_M=200) at every N: {ordered}",
            slopes.join(", "),
            r.db_gain,
            r.db_gain_free_slope
        ),
    ))
}

fn cm_only_no_go() -> Result<Outcome, String> {
    let mp = m_plus();
    let copy_major = permute_operator_factors(&mp.kron(&mp), &[2; 6], &[0, 3, 1, 4, 2, 5]).map_err(err)?;
    let m = DensityMatrix::bell_phi_plus().matrix().clone();
    let target = 0.25 * copy_major.trace_product(&m.kron(&m).kron(&m)).re * 2.0;
    let est = commands::estimate(EstimateConfig {
        quantity: Quantity::P3,
        n_u: 50_000,
        settings: Some(SettingMode::CmOnly),
        seed: 44,
        ..Default::default()
    })
    .map_err(err)?;
    let z_target = (est.mean - target) / est.std_error;
    let z_true = (est.mean - 0.25) / est.std_error;
    Ok(outcome(
        z_target.abs() <= 4.0 && target != 0.25 && z_true.abs() > 4.0,
        format!(
            "CM-only p3 = {:.4} ± {:.4}; oracle {target:.4} (z={z_target:.2}), true p3 0.25 (z={z_true:.1})",
            est.mean, est.std_error
        ),
    ))
}

fn amendment_end_to_end() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let povm_path = dir.path().join("povm.json");
    let coeff_path = dir.path().join("coefficients.json");
    let (file, povm_report) = commands::make_povm(REFERENCE_PORT_FIDELITIES, DEFAULT_TWIST, 0).map_err(err)?;
    write_json(&povm_path, &file).map_err(err)?;
    let report = commands::amend_cmd(&AmendConfig {
        povm: Some(povm_path.clone()),
        out: Some(coeff_path.clone()),
        ..Default::default()
    })
    .map_err(err)?;
    CoefficientTable::read(&coeff_path).map_err(err)?;
    let run = |coefficients| {
        commands::estimate(EstimateConfig {
            quantity: Quantity::P3,
            n_u: 50_000,
            povm: Some(povm_path.clone()),
            coefficients,
            seed: 55,
            ..Default::default()
        })
    };
    let amended = run(Some(coeff_path.clone())).map_err(err)?;
    let plain = run(None).map_err(err)?;
    let z_amended = (amended.mean - 0.25) / amended.std_error;
    let z_plain = (plain.mean - 0.25) / plain.std_error;
    let bound_ok = (report.bound - report.k * report.residual).abs() <= 1e-15 * report.bound.max(1e-300);
    let pass = report.residual <= 1e-6
        && report.k < 0.056
        && bound_ok
        && z_amended.abs() <= 4.0
        && z_plain.abs() > 5.0
        && plain.biased
        && !amended.biased;
    Ok(outcome(
        pass,
        format!(
            "fidelity {:.4}, residual {:.2e}, K {:.5}, bound {:.2e}; amended p3 {:.4} ± {:.4} (z={z_amended:.2}), unamended {:.4} ± {:.4} (z={z_plain:.1})",
            povm_report.overall_fidelity,
            report.residual,
            report.k,
            report.bound,
            amended.mean,
            amended.std_error,
            plain.mean,
            plain.std_error
        ),
    ))
}

fn noise_robustness() -> Result<Outcome, String> {
    let seed = 66;
    let mut fsrm_at_1e4 = Vec::new();
    let mut decreasing = true;
    for k in 1..=3 {
        let c = err_curve(NoiseScheme::Fsrm(k), 2, 0.5, &[1_000, 10_000, 100_000], seed).map_err(err)?;
        decreasing &= c.windows(2).all(|w| w[1].err < w[0].err);
        fsrm_at_1e4.push(c[1].err);
    }
    let cs = err_curve(NoiseScheme::Cs, 2, 0.5, &[10_000, 100_000], seed).map_err(err)?;
    let plateau = (cs[1].err - cs[0].err).abs() <= 0.1 * cs[0].err;
    let worst_fsrm = fsrm_at_1e4.iter().cloned().fold(0.0, f64::max);
    let floors: Vec<f64> = [0.1, 0.5, 1.0]
        .iter()
        .map(|&eps| err_curve(NoiseScheme::Cs, 2, eps, &[100_000], seed).map(|c| c[0].err))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let increasing = floors.windows(2).all(|w| w[1] > w[0]);
    let pass = worst_fsrm < 0.05 && decreasing && plateau && cs[0].err > 5.0 * worst_fsrm && increasing;
    Ok(outcome(
        pass,
        format!(
            "FSRM Err(1e4) k=1..3 {:.4}/{:.4}/{:.4} decreasing {decreasing}; CS Err {:.4} -> {:.4}; CS floors {:.4} < {:.4} < {:.4}",
            fsrm_at_1e4[0], fsrm_at_1e4[1], fsrm_at_1e4[2], cs[0].err, cs[1].err, floors[0], floors[1], floors[2]
        ),
    ))
}

fn twirl_oracle() -> Result<Outcome, String> {
    let draws = 100_000;
    let mut worst = 0.0f64;
    for k in 1..=3usize {
        let dim = 1usize << k;
        let w = weingarten(k, 2).map_err(err)?;
        let mut a = DensityMatrix::random(k, 2, 70 + k as u64).map_err(err)?.matrix().clone();
        a[(0, dim - 1)] += C64::new(0.4, 0.1);
        let exact = twirl_operator(&a, &w).map_err(err)?;
        let mut rng = SeededStream::new(77, k as u64);
        let len = dim * dim;
        let (mut sum, mut sq) = (vec![C64::new(0.0, 0.0); len], vec![(0.0, 0.0); len]);
        for _ in 0..draws {
            let u = sample_cue(2, &mut rng).map_err(err)?;
            let uk = ComplexMatrix::kron_all(std::iter::repeat(&u).take(k));
            let x = a.conjugate_by(&uk);
            for (i, z) in x.data().iter().enumerate() {
                sum[i] += z;
                sq[i].0 += z.re * z.re;
                sq[i].1 += z.im * z.im;
            }
        }
        let n = draws as f64;
        for i in 0..len {
            let mean = sum[i] / n;
            let se_re = ((sq[i].0 / n - mean.re * mean.re).max(0.0) / (n - 1.0)).sqrt();
            let se_im = ((sq[i].1 / n - mean.im * mean.im).max(0.0) / (n - 1.0)).sqrt();
            let d = mean - exact.data()[i];
            for (dev, se) in [(d.re, se_re), (d.im, se_im)] {
                let z = if se > 1e-14 { dev.abs() / se } else if dev.abs() < 1e-12 { 0.0 } else { f64::INFINITY };
                worst = worst.max(z);
            }
        }
    }
    Ok(outcome(worst <= 5.0, format!("k=1,2,3 at 1e5 draws, worst entrywise |z| = {worst:.2} (limit 5)")))
}

fn main() {
    let checks: [(&str, Check); 7] = [
        ("oracle exactness", oracle_exactness),
        ("FSRM unbiasedness", fsrm_unbiasedness),
        ("convergence scaling", convergence_scaling),
        ("CM-only no-go", cm_only_no_go),
        ("amendment end-to-end", amendment_end_to_end),
        ("noise robustness", noise_robustness),
        ("twirl oracle equivalence", twirl_oracle),
    ];
    let mut failures = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match check() {
            Ok(o) => (if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!("{tag} criterion {} ({name}): {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64());
    }
    println!(
        "EXCLUDED criterion 8 (hardware numbers): photon counts, interference visibilities and measured device estimates depend on the physical apparatus"
    );
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
