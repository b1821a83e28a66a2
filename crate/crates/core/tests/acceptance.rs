//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report reaches the
//! terminal uncaptured. Exits non-zero when any blocking criterion fails.
//! The Cora criterion is non-blocking and needs `MILBO_CORA_DIR` pointing at a
//! directory converted with `tools/planetoid_to_dir.py`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use milbo::checkpoint::Checkpoint;
use milbo::config::resolve;
use milbo::gradcheck::{grad_check, DEFAULT_STEP};
use milbo::objective::{consistency_loss, contrastive_loss, select_pairs, PairSets, SimilarityMatrix};
use milbo::probe::{linear_probe, mean_std, ProbeConfig};
use milbo::rng::{stream, Purpose};
use milbo::sweep::{run_sweep, SweepGrid};
use milbo::train::{embed, resume, train, TrainConfig};
use milbo::{load_graph, sample_view, Graph, SampleConfig};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    blocking: bool,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria = [
        Criterion { id: 1, name: "gradient exactness", blocking: true, run: gradient_exactness },
        Criterion { id: 2, name: "loss oracles", blocking: true, run: loss_oracles },
        Criterion { id: 3, name: "pair-selection oracle", blocking: true, run: selection_oracle },
        Criterion { id: 4, name: "sampling statistics", blocking: true, run: sampling_statistics },
        Criterion { id: 5, name: "sbm separability", blocking: true, run: separability },
        Criterion { id: 6, name: "ablation direction", blocking: true, run: ablation },
        Criterion { id: 7, name: "cora reproduction", blocking: false, run: cora },
        Criterion { id: 8, name: "lambda insensitivity", blocking: true, run: lambda_insensitivity },
        Criterion { id: 9, name: "determinism and resume", blocking: true, run: determinism },
    ];

    println!("acceptance: {} criteria", criteria.len());
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let label = match out.status {
            Status::Pass => "PASS",
            Status::Skip => "SKIP",
            Status::Fail if c.blocking => {
                failed += 1;
                "FAIL"
            }
            Status::Fail => "FAIL (non-blocking)",
        };
        println!("[{label}] {}. {} ({secs:.1}s): {}", c.id, c.name, out.detail);
    }
    if failed > 0 {
        println!("acceptance: {failed} blocking criteria failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all blocking criteria passed");
        ExitCode::SUCCESS
    }
}

fn sbm90() -> Graph {
    load_graph(&root().join("fixtures/sbm90")).expect("committed fixture")
}

fn sbm90_config(seed: u64) -> TrainConfig {
    let cfg: TrainConfig =
        resolve(Some(&root().join("configs/sbm90-train.json")), &[]).expect("committed config");
    TrainConfig { seed, ..cfg }
}

fn probe_mean(g: &Graph, cfg: &TrainConfig) -> f64 {
    let outcome = train(g, cfg).expect("training");
    let z = embed(g, &outcome.params).expect("embedding");
    linear_probe(z.z.view(), g.labels(), g.splits(), &ProbeConfig::default())
        .expect("probe")
        .mean
}

fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let g = load_graph(&root().join("fixtures/sbm10")).expect("committed fixture");
    let cfg = TrainConfig {
        d_hidden: 16,
        d_out: 16,
        lambda: 0.3,
        k: Some(5),
        l: Some(5),
        ..TrainConfig::default()
    };
    let report = grad_check(&g, &cfg, 0).expect("gradcheck");
    let elapsed = start.elapsed();
    Outcome::check(
        report.max_rel_error <= 1e-4
            && report.step == DEFAULT_STEP
            && report.step == 1e-5
            && report.checked == cfg.encoder_config().d_hidden * (g.num_features() + cfg.d_out)
            && elapsed < Duration::from_secs(60),
        format!(
            "max rel error {:.2e} over {} parameters (<= 1e-4), {:.2}s (< 60s)",
            report.max_rel_error,
            report.checked,
            elapsed.as_secs_f64()
        ),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.5..1.5))
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> PairSets {
    let mut all: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    rand::seq::SliceRandom::shuffle(all.as_mut_slice(), rng);
    let np = rng.gen_range(1..=all.len());
    let nn = rng.gen_range(0..=all.len() - np);
    PairSets {
        positives: all[..np].to_vec(),
        negatives: all[np..np + nn].to_vec(),
        k: 0,
        l: 0,
    }
}

/// Scalar reference: `−mean_P ln d_ij − mean_N ln(1 − d_ij)` with
/// `d_ij = 1 / (1 + e^{−⟨z1_i, z2_j⟩})`.
fn oracle_contrastive(z1: &Array2<f64>, z2: &Array2<f64>, pairs: &PairSets) -> f64 {
    let dot = |i: usize, j: usize| {
        let mut s = 0.0;
        for c in 0..z1.ncols() {
            s += z1[[i, c]] * z2[[j, c]];
        }
        s
    };
    let d = |i: usize, j: usize| 1.0 / (1.0 + (-dot(i, j)).exp());
    let mut pos = 0.0;
    for &(i, j) in &pairs.positives {
        pos -= d(i, j).ln();
    }
    let mut total = pos / pairs.positives.len() as f64;
    if !pairs.negatives.is_empty() {
        let mut neg = 0.0;
        for &(i, j) in &pairs.negatives {
            neg -= (1.0 - d(i, j)).ln();
        }
        total += neg / pairs.negatives.len() as f64;
    }
    total
}

fn oracle_consistency(z1: &Array2<f64>, z2: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..z1.nrows() {
        for c in 0..z1.ncols() {
            let diff = z1[[i, c]] - z2[[i, c]];
            total += diff * diff;
        }
    }
    total / z1.nrows() as f64
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=4);
        let z1 = random_matrix(&mut rng, n, d);
        let z2 = random_matrix(&mut rng, n, d);
        let pairs = random_pairs(&mut rng, n);
        let s = SimilarityMatrix::from_scores(z1.dot(&z2.t())).unwrap();
        let (cl, _) = contrastive_loss(&s, &pairs).unwrap();
        let (cvc, _, _) = consistency_loss(z1.view(), z2.view()).unwrap();
        worst = worst
            .max((cl - oracle_contrastive(&z1, &z2, &pairs)).abs())
            .max((cvc - oracle_consistency(&z1, &z2)).abs());
    }
    Outcome::check(
        worst <= 1e-12,
        format!("100 instances, max |impl - oracle| {worst:.2e} (<= 1e-12)"),
    )
}

/// Full stable sort of every off-diagonal entry.
fn oracle_select(scores: &Array2<f64>, k: usize, l: usize) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let n = scores.nrows();
    let mut entries: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                entries.push((i, j));
            }
        }
    }
    let mut desc = entries.clone();
    desc.sort_by(|a, b| scores[*b].partial_cmp(&scores[*a]).unwrap());
    let top: Vec<(usize, usize)> = desc[..k].to_vec();
    let mut rest: Vec<(usize, usize)> = entries.into_iter().filter(|e| !top.contains(e)).collect();
    rest.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap());
    let mut positives: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    positives.extend(top);
    (positives, rest[..l].to_vec())
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut ties = 0;
    for case in 0..100 {
        let n = rng.gen_range(1..=30);
        // Every other case draws from a tiny value set to force ties.
        let scores = if case % 2 == 0 {
            Array2::from_shape_simple_fn((n, n), || rng.gen_range(-5..=5) as f64)
        } else {
            random_matrix(&mut rng, n, n)
        };
        let off = n * (n - 1);
        let k = if off == 0 { 0 } else { rng.gen_range(0..=off) };
        let l = rng.gen_range(0..=off - k);
        let got = select_pairs(&SimilarityMatrix::from_scores(scores.clone()).unwrap(), k, l).unwrap();
        let (pos, neg) = oracle_select(&scores, k, l);
        if got.positives != pos || got.negatives != neg {
            mismatches += 1;
        }
        if case % 2 == 0 {
            ties += 1;
        }
    }
    Outcome::check(
        mismatches == 0,
        format!("100 matrices ({ties} with heavy ties), {mismatches} mismatches"),
    )
}

fn sampling_statistics() -> Outcome {
    const DRAWS: u64 = 10_000;
    let n = 12;
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    let g = Graph::new(Array2::ones((n, 2)), edges, None, None).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for p in [0.1, 0.5, 0.9] {
        let cfg = SampleConfig::new(p, p).unwrap();
        let mut node0 = 0u64;
        let mut edge0 = 0u64;
        let mut nodes = 0u64;
        let mut edges = 0u64;
        for draw in 0..DRAWS {
            let v = sample_view(&g, &cfg, &mut stream(11, Purpose::Views, draw)).unwrap();
            node0 += u64::from(v.node_mask[0]);
            edge0 += u64::from(v.kept_edges.contains(&(0, 1)));
            nodes += v.kept_nodes() as u64;
            edges += v.kept_edges.len() as u64;
        }
        let keep = 1.0 - p;
        let within = |count: u64, trials: u64| {
            let t = trials as f64;
            let sigma = (t * keep * (1.0 - keep)).sqrt();
            (count as f64 - t * keep).abs() / sigma
        };
        let z = [
            within(node0, DRAWS),
            within(edge0, DRAWS),
            within(nodes, DRAWS * n as u64),
            within(edges, DRAWS * g.num_edges() as u64),
        ];
        let max_z = z.iter().copied().fold(0.0, f64::max);
        ok &= max_z <= 3.0;
        details.push(format!("p={p}: max |z| {max_z:.2}"));
    }
    Outcome::check(ok, format!("{} (<= 3 sigma)", details.join(", ")))
}

fn separability() -> Outcome {
    let start = Instant::now();
    let g = sbm90();
    let accs: Vec<f64> = SEEDS.iter().map(|&s| probe_mean(&g, &sbm90_config(s))).collect();
    let elapsed = start.elapsed();
    let good = accs.iter().filter(|&&a| a >= 0.90).count();
    Outcome::check(
        good >= 4 && elapsed < Duration::from_secs(120),
        format!(
            "accuracy per seed {:?}, {good}/5 >= 0.90 (need 4), {:.1}s (< 120s)",
            accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation() -> Outcome {
    let g = sbm90();
    let mean_for = |strategy: &str| {
        let accs: Vec<f64> = SEEDS
            .iter()
            .map(|&s| {
                let cfg = TrainConfig {
                    strategy: strategy.into(),
                    ..sbm90_config(s)
                };
                probe_mean(&g, &cfg)
            })
            .collect();
        mean_std(&accs).0
    };
    let milbo = mean_for("milbo");
    let shuffling = mean_for("shuffling");
    let consistency = mean_for("consistency-only");
    Outcome::check(
        milbo >= shuffling,
        format!(
            "milbo {milbo:.3} >= shuffling {shuffling:.3} (consistency-only {consistency:.3}, not asserted)"
        ),
    )
}

fn cora() -> Outcome {
    let Some(dir) = std::env::var_os("MILBO_CORA_DIR") else {
        return Outcome {
            status: Status::Skip,
            detail: "MILBO_CORA_DIR not set; see tools/planetoid_to_dir.py".into(),
        };
    };
    let start = Instant::now();
    let g = match load_graph(Path::new(&dir)) {
        Ok(g) => g,
        Err(e) => return Outcome::check(false, format!("cannot load {}: {e}", dir.to_string_lossy())),
    };
    let base: TrainConfig =
        resolve(Some(&root().join("configs/cora.json")), &[]).expect("committed config");
    let accs: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| probe_mean(&g, &TrainConfig { seed, ..base.clone() }))
        .collect();
    let (mean, std) = mean_std(&accs);
    let elapsed = start.elapsed();
    Outcome::check(
        mean >= 0.82 && elapsed <= Duration::from_secs(15 * 60),
        format!(
            "mean {:.1}% ± {:.1}% (>= 82.0%), {:.0}s (<= 900s)",
            100.0 * mean,
            100.0 * std,
            elapsed.as_secs_f64()
        ),
    )
}

fn lambda_insensitivity() -> Outcome {
    let g = sbm90();
    let grid = SweepGrid {
        lambda: (1..=10).map(|i| i as f64 / 10.0).collect(),
        seeds: SEEDS.to_vec(),
        ..SweepGrid::default()
    };
    let rows = run_sweep(&g, &sbm90_config(0), &ProbeConfig::default(), &grid, 1).expect("sweep");
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let max = means.iter().copied().fold(f64::MIN, f64::max);
    let min = means.iter().copied().fold(f64::MAX, f64::min);
    Outcome::check(
        rows.len() == 10 && max - min <= 0.05,
        format!(
            "{} cells, mean accuracy range [{min:.3}, {max:.3}], spread {:.3} (<= 0.05)",
            rows.len(),
            max - min
        ),
    )
}

fn bits(ckpt: &Checkpoint) -> Vec<u64> {
    let mut out: Vec<u64> = ckpt.params.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect();
    for m in ckpt.adam.m.iter().chain(&ckpt.adam.v) {
        out.extend(m.iter().map(|v| v.to_bits()));
    }
    out
}

fn determinism() -> Outcome {
    let g = sbm90();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, epochs: u64| TrainConfig {
        epochs,
        checkpoint_every: 10,
        out_dir: Some(dir.path().join(name)),
        ..sbm90_config(3)
    };

    let a = train(&g, &run("a", 40)).unwrap();
    let b = train(&g, &run("b", 40)).unwrap();
    let ca = Checkpoint::load(&dir.path().join("a/checkpoint.json")).unwrap();
    let cb = Checkpoint::load(&dir.path().join("b/checkpoint.json")).unwrap();
    let strip = |c: &Checkpoint| Checkpoint {
        config: TrainConfig {
            out_dir: None,
            ..c.config.clone()
        },
        ..c.clone()
    };
    let same_logs = a
        .log
        .iter()
        .zip(&b.log)
        .all(|(x, y)| x.loss == y.loss && x.positives == y.positives && x.negatives == y.negatives);
    let identical = strip(&ca) == strip(&cb) && bits(&ca) == bits(&cb) && same_logs;

    // Interrupted at epoch 20 (periodic checkpoint of a shorter run), resumed to 40.
    train(&g, &run("c", 20)).unwrap();
    let mid = Checkpoint::load(&dir.path().join("c/checkpoint-epoch-000020.json")).unwrap();
    resume(&g, &run("c", 40), &mid).unwrap();
    let cc = Checkpoint::load(&dir.path().join("c/checkpoint.json")).unwrap();
    let resumed = cc.epoch == 40 && strip(&cc) == strip(&ca) && bits(&cc) == bits(&ca);

    Outcome::check(
        identical && resumed,
        format!("repeat run bit-identical: {identical}, resume 20->40 bit-identical: {resumed}"),
    )
}
