//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use beamalign::array::{array_response, channel_vector, make_channel, ArrayGeometry, ImpairmentVector};
use beamalign::baseline::exhaustive_select;
use beamalign::codebook::{dft_codebook, Awv};
use beamalign::dataset::{filter_labels, generate_dataset, split, GenConfig};
use beamalign::harness::{run_beam_pattern, run_gainloss_vs_m, run_required_m_vs_array, Algo, ExperimentConfig};
use beamalign::metrics::{bf_gain, overhead_reduction};
use beamalign::neural::{param_count, Matrix, NetworkParameters, TENSOR_NAMES};
use beamalign::sounding::noiseless_rss;
use beamalign::{seed, Complex64};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_parameter_count() -> Outcome {
    let mut cases = 0;
    for m in 4..=36 {
        for k in [8, 16, 51, 64] {
            let net = NetworkParameters::init(m, k, 7).map_err(|e| e.to_string())?;
            let counted: usize = net.trainable().iter().map(|t| t.len()).sum();
            let formula = 64 * m + 129 * k + 8768;
            if counted != formula || param_count(m, k) != formula {
                return Err(format!("M={m} K'={k}: counted {counted}, formula {formula}"));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} shapes exact"))
}

fn c2_overhead() -> Outcome {
    let r = overhead_reduction(51, 5).map_err(|e| e.to_string())?;
    check((r - 0.902).abs() <= 0.0005, format!("(51, 5) -> {r:.6}"))
}

/// Central differences of the train-mode loss, one scalar at a time.
fn numeric_gradient(net: &NetworkParameters, x: &Matrix, labels: &[usize], h: f64) -> Vec<Vec<f64>> {
    let mut probe = net.clone();
    let mut out = Vec::new();
    for t in 0..TENSOR_NAMES.len() {
        let len = probe.trainable()[t].len();
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = probe.trainable()[t][i];
            probe.trainable_mut()[t][i] = orig + h;
            let up = probe.train_loss(x, labels).unwrap();
            probe.trainable_mut()[t][i] = orig - h;
            let down = probe.train_loss(x, labels).unwrap();
            probe.trainable_mut()[t][i] = orig;
            *gi = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

fn c3_gradients() -> Outcome {
    let mut rng = seed::rng(0xC3);
    let mut worst: f64 = 0.0;
    for cfg in 0..20 {
        let m = rng.gen_range(2..=12);
        let k = rng.gen_range(2..=12);
        let batch = rng.gen_range(3..=8);
        let mut net = NetworkParameters::init(m, k, rng.gen()).unwrap();
        for t in net.trainable_mut() {
            t.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
        let rows: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..m).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..k)).collect();

        let cache = net.forward_cached(&x).unwrap();
        let (_, analytic) = net.backward(&cache, &labels).unwrap();
        let numeric = numeric_gradient(&net, &x, &labels, 1e-5);
        for (t, (a, n)) in analytic.tensors.iter().zip(&numeric).enumerate() {
            let diff = a.iter().zip(n).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let scale = a
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(n.iter().map(|v| v * v).sum::<f64>().sqrt());
            // Biases feeding batch norm have an identically zero gradient.
            let err = if scale < 1e-7 { diff } else { diff / scale };
            if err >= 1e-4 {
                return Err(format!(
                    "config {cfg} (M={m} K'={k}) tensor {}: rel err {err:e}",
                    TENSOR_NAMES[t]
                ));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!("20 configs, worst tensor rel err {worst:.2e}"))
}

fn c4_exhaustive_oracle() -> Outcome {
    let g = ArrayGeometry::ula(36).unwrap();
    let dft = dft_codebook(&g, 64, -45.0, 45.0).unwrap();
    let angles = dft.angles_deg.clone().unwrap();
    let e = ImpairmentVector::identity(36);
    let mut rng = seed::rng(0xC4);
    let nearest = |phi: f64| {
        (0..angles.len())
            .min_by(|&a, &b| (angles[a] - phi).abs().total_cmp(&(angles[b] - phi).abs()))
            .unwrap()
    };
    let select = |phi: f64, alpha: Complex64| {
        let h = channel_vector(&make_channel(phi, alpha).unwrap(), &g).unwrap();
        exhaustive_select(&noiseless_rss(&dft, &e, &h).unwrap()).unwrap()
    };
    let mut on_grid_miss = 0;
    let mut off_grid_miss = 0;
    for _ in 0..10_000 {
        let mut alpha = || Complex64::from_polar(rng.gen_range(0.1..2.0), rng.gen_range(0.0..std::f64::consts::TAU));
        let (a1, a2) = (alpha(), alpha());
        let k = rng.gen_range(0..angles.len());
        if select(angles[k], a1) != k {
            on_grid_miss += 1;
        }
        let phi = rng.gen_range(-45.0..=45.0);
        if select(phi, a2).abs_diff(nearest(phi)) > 1 {
            off_grid_miss += 1;
        }
    }
    check(
        on_grid_miss == 0 && off_grid_miss == 0,
        format!("on-grid misses {on_grid_miss}/10000, off-grid beyond one index {off_grid_miss}/10000"),
    )
}

fn c5_gain_normalization() -> Outcome {
    let mut rng = seed::rng(0xC5);
    let mut worst_aligned: f64 = 0.0;
    let mut out_of_range = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(2..=64);
        let g = ArrayGeometry::ula(n).unwrap();
        let e = ImpairmentVector::identity(n);
        let phi = rng.gen_range(-89.0..89.0);
        let alpha = Complex64::from_polar(rng.gen_range(0.1..10.0), rng.gen_range(0.0..std::f64::consts::TAU));
        let h: Vec<Complex64> = array_response(&g, phi).unwrap().iter().map(|a| a * alpha).collect();
        let w = Awv(array_response(&g, phi)
            .unwrap()
            .iter()
            .map(|a| a / (n as f64).sqrt())
            .collect());
        worst_aligned = worst_aligned.max((bf_gain(&h, &e, &w).unwrap() - 1.0).abs());

        let raw: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let norm = raw.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let w = Awv(raw.iter().map(|c| c / norm).collect());
        let gain = bf_gain(&h, &e, &w).unwrap();
        if !(0.0..=1.0 + 1e-12).contains(&gain) {
            out_of_range += 1;
        }
    }
    check(
        worst_aligned <= 1e-9 && out_of_range == 0,
        format!("aligned |G-1| max {worst_aligned:.1e}, random beams outside [0,1]: {out_of_range}/10000"),
    )
}

fn c6_array_scaling() -> Outcome {
    let config = ExperimentConfig::default();
    let rows = run_required_m_vs_array(&config).map_err(|e| e.to_string())?;
    let get = |algo: Algo, n: usize, t: usize| {
        rows.iter()
            .find(|r| r.algo == algo && r.n_rx == n && r.trial == t)
            .and_then(|r| r.required_m)
            .unwrap_or(usize::MAX)
    };
    let majority = config.trials / 2 + 1;
    let mut summary = Vec::new();
    let mut ok = true;
    for &n in &config.array_sizes {
        let wins = (0..config.trials)
            .filter(|&t| {
                let nn = get(Algo::Nn, n, t);
                nn != usize::MAX && nn <= get(Algo::RssMpVanilla, n, t) && nn <= get(Algo::RssMpRefined, n, t)
            })
            .count();
        ok &= wins >= majority;
        let show = |a| {
            (0..config.trials)
                .map(|t| get(a, n, t))
                .map(|m| if m == usize::MAX { "none".into() } else { m.to_string() })
                .collect::<Vec<_>>()
                .join("/")
        };
        summary.push(format!(
            "N={n}: nn {} vanilla {} refined {}",
            show(Algo::Nn),
            show(Algo::RssMpVanilla),
            show(Algo::RssMpRefined)
        ));
    }
    let sublinear = (0..config.trials)
        .filter(|&t| {
            let (small, large) = (get(Algo::Nn, 8, t), get(Algo::Nn, 64, t));
            large != usize::MAX && (large as f64) / (small as f64) < 4.0
        })
        .count();
    ok &= sublinear >= majority;
    check(
        ok,
        format!("{}; ratio<4 in {sublinear}/{} seeds", summary.join("; "), config.trials),
    )
}

fn c7_gainloss_ordering() -> Outcome {
    let config = ExperimentConfig {
        m_list: vec![5, 10, 20],
        ..ExperimentConfig::default()
    };
    let rows = run_gainloss_vs_m(&config).map_err(|e| e.to_string())?;
    let mut mean: BTreeMap<(Algo, usize), f64> = BTreeMap::new();
    for r in &rows {
        *mean.entry((r.algo, r.m)).or_default() += r.p90_db / config.trials as f64;
    }
    let p90 = |a, m| mean[&(a, m)];
    let mut ok = true;
    let mut parts = Vec::new();
    for &m in &config.m_list {
        let (v, r, n) = (p90(Algo::RssMpVanilla, m), p90(Algo::RssMpRefined, m), p90(Algo::Nn, m));
        ok &= v >= r && r >= n;
        parts.push(format!("M={m}: {v:.3}/{r:.3}/{n:.3}"));
    }
    let nn_reaches = config.m_list.iter().any(|&m| m <= 10 && p90(Algo::Nn, m) < 2.0);
    let vanilla_short = p90(Algo::RssMpVanilla, 20) >= 2.0;
    ok &= nn_reaches && vanilla_short;
    check(
        ok,
        format!(
            "mean p90 dB vanilla/refined/nn {}; nn < 2 dB by M=10: {nn_reaches}; vanilla >= 2 dB at M=20: {vanilla_short}",
            parts.join(", ")
        ),
    )
}

fn c8_beam_pattern() -> Outcome {
    let config = ExperimentConfig::default();
    let (rows, s) = run_beam_pattern(&config).map_err(|e| e.to_string())?;
    let (again, s2) = run_beam_pattern(&config).map_err(|e| e.to_string())?;
    check(
        s.ordering_holds() && rows == again && s == s2,
        format!(
            "peak shift {:.2} deg (grid {:.4}), PN dev {:.3} dB vs DFT mainlobe dev {:.3} dB",
            s.peak_shift_deg(),
            s.dft_grid_step_deg,
            s.pn_dev_db,
            s.dft_mainlobe_dev_db
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_beamalign"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn c9_cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let config = serde_json::json!({
        "gen": {"n_points": 600, "k": 16, "m0": 8, "n_rx": 16, "aoa_range_deg": [-45.0, 45.0]},
        "n_train": 300, "n_test": 150, "min_label_count": 5,
        "m_list": [4, 8], "train_sizes": [150, 300],
        "array_sizes": [8, 16], "array_m_list": [2, 4, 8],
        "train": {"max_epochs": 8, "early_stop_patience": 3},
        "trials": 2
    });
    let cfg = root.join("config.json");
    fs::write(&cfg, config.to_string()).unwrap();
    let cfg = cfg.to_str().unwrap();

    let ds_dir = root.join("data");
    run_cli(&[
        "gen-dataset",
        "--config",
        cfg,
        "--seed",
        "5",
        "--out",
        ds_dir.to_str().unwrap(),
    ])?;
    let dataset = ds_dir.join("dataset.jsonl");
    let dataset = dataset.to_str().unwrap();
    let model = root.join("train_a").join("model.json");
    let model = model.to_str().unwrap().to_string();

    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("gen-codebook", vec![]),
        ("gen-dataset", vec![]),
        ("train", vec!["--dataset", dataset, "-m", "8"]),
        ("eval", vec!["--dataset", dataset, "--model", &model]),
        ("sweep-m", vec![]),
        ("sweep-array", vec![]),
        ("beam-pattern", vec![]),
    ];
    let mut compared = 0;
    for (name, extra) in &commands {
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            let dir = root.join(format!("{}_{run}", name.split('-').next_back().unwrap()));
            let dir_s = dir.to_str().unwrap().to_string();
            let mut args = vec![*name, "--config", cfg, "--seed", "11", "--out", &dir_s];
            args.extend(extra.iter().copied());
            run_cli(&args)?;
            outputs.push(files(&dir));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return Err(format!("{name}: outputs differ between identical runs"));
        }
        compared += outputs[0].len();
    }
    Ok(format!(
        "{} subcommands, {compared} files byte-identical",
        commands.len()
    ))
}

fn c10_dataset_protocol() -> Outcome {
    let ds = generate_dataset(&GenConfig::default()).map_err(|e| e.to_string())?;
    let kept = filter_labels(&ds, 20).map_err(|e| e.to_string())?;
    let map = &kept.meta.label_map;
    let contiguous = map.windows(2).all(|w| w[1] == w[0] + 1);
    let min_count = kept.label_counts().into_iter().min().unwrap_or(0);

    let subset = kept.with_points(kept.points[..4958.min(kept.len())].to_vec());
    let subset = filter_labels(&subset, 2).map_err(|e| e.to_string())?;
    let (train, test) = split(&subset, 0.617, 3).map_err(|e| e.to_string())?;
    // Each label rounds independently, so the total can drift by half a point per label.
    let slack = subset.n_classes().div_ceil(2);
    let close = train.len().abs_diff(3060) <= slack && train.len() + test.len() == 4958;
    check(
        contiguous && min_count >= 20 && close,
        format!(
            "kept {} of {} points in {} contiguous labels (min count {min_count}); split {}/{} vs 3060/1898 (slack {slack})",
            kept.len(),
            ds.len(),
            kept.n_classes(),
            train.len(),
            test.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("parameter-count identity", c1_parameter_count),
        ("overhead ratio", c2_overhead),
        ("gradient correctness", c3_gradients),
        ("exhaustive-search oracle", c4_exhaustive_oracle),
        ("gain normalization", c5_gain_normalization),
        ("required M vs array size", c6_array_scaling),
        ("gain-loss ordering", c7_gainloss_ordering),
        ("beam pattern distortion", c8_beam_pattern),
        ("CLI determinism", c9_cli_determinism),
        ("dataset protocol", c10_dataset_protocol),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {:>2}", i + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|p| name.contains(p.as_str()) || id.contains(p.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("{id} PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
