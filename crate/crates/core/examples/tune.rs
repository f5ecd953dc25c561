//! Throwaway parameter probe for the desk-scale experiment grid.

use std::time::Instant;

use fvaal_core::data::synthetic_blobs;
use fvaal_core::engine::{run_experiment, AugmentationMode, ExperimentConfig, StrategyKind, TimingMode};
use fvaal_core::metrics::{aubc, CurvePoint};

fn curve(records: &[fvaal_core::engine::RoundRecord]) -> Vec<CurvePoint> {
    records
        .iter()
        .map(|r| CurvePoint {
            budget: r.labeled as f64,
            accuracy: r.accuracy,
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.35);
    let mode = args.get(2).map(String::as_str).unwrap_or("none").to_string();
    let strategy = args.get(3).map(String::as_str).unwrap_or("random").to_string();
    let runs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);
    let lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let epochs: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(30);

    let all = synthetic_blobs::<f64>(9001, 3000, 784, 10, spread).unwrap();
    let (train, test) = all.split_at(2000);

    if mode == "nodes" {
        use fvaal_core::nn::{AdamState, MlpModel, TrainConfig};
        use fvaal_core::verifier::{harvest_traced_seeded, HarvestParams, TimeBasis};
        let data: Vec<(Vec<f64>, usize)> = train.samples[..220]
            .iter()
            .map(|s| (s.features.clone(), s.label))
            .collect();
        let mut model = MlpModel::<f64>::init(784, 32, 10, 7);
        let mut state = AdamState::new(&model);
        let tc = TrainConfig {
            epochs: 80,
            learning_rate: 0.002,
            seed: 99,
            ..TrainConfig::default()
        };
        fvaal_core::nn::train(&mut model, &mut state, &data, &tc).unwrap();
        let params = HarvestParams::<f64> {
            k: 3,
            time_limit: std::time::Duration::from_secs(5),
            eps_increment: 0.05,
            eps_max: 0.2,
            exclusion_radius: 0.045,
        };
        let started = Instant::now();
        let (mut nodes, mut queries, mut points) = (0u64, 0usize, 0usize);
        let mut per_harvest = Vec::new();
        for s in &train.samples[300..340] {
            let out = harvest_traced_seeded(&model, &s.features, &params, 0.01, &[], TimeBasis::Wall);
            let h: u64 = out.trace.iter().map(|t| t.nodes).sum();
            nodes += h;
            queries += out.trace.len();
            points += out.points.len();
            per_harvest.push(h);
        }
        let secs = started.elapsed().as_secs_f64();
        per_harvest.sort_unstable();
        println!(
            "40 harvests: {points} points, {queries} queries, {nodes} nodes in {secs:.2}s -> {:.0} nodes/s",
            nodes as f64 / secs
        );
        println!(
            "nodes per harvest min/med/p90/max = {:?}/{:?}/{:?}/{:?}",
            per_harvest.first(),
            per_harvest.get(per_harvest.len() / 2),
            per_harvest.get(per_harvest.len() * 9 / 10),
            per_harvest.last()
        );
        return;
    }

    if mode == "probe" {
        use fvaal_core::attacks::{deepfool, margin_by_binary_search, AttackParams};
        use fvaal_core::nn::{AdamState, MlpModel, TrainConfig};
        let data: Vec<(Vec<f64>, usize)> = train.samples[..220]
            .iter()
            .map(|s| (s.features.clone(), s.label))
            .collect();
        let mut model = MlpModel::<f64>::init(784, 32, 10, 7);
        let mut state = AdamState::new(&model);
        let tc = TrainConfig {
            epochs: 60,
            learning_rate: 0.003,
            seed: 99,
            ..TrainConfig::default()
        };
        fvaal_core::nn::train(&mut model, &mut state, &data, &tc).unwrap();
        let params = AttackParams::<f64>::default();
        let (mut flips, mut norms, mut iters) = (0, Vec::new(), Vec::new());
        let (mut bs_flips, mut bs_eps) = (0, Vec::new());
        for s in &train.samples[300..400] {
            let df = deepfool(&model, &s.features, &params).unwrap();
            if df.flipped {
                flips += 1;
                norms.push(df.perturbation_norm);
            }
            iters.push(df.iterations);
            let m = margin_by_binary_search(&model, &s.features, &params).unwrap();
            if m.flipped {
                bs_flips += 1;
                bs_eps.push(m.eps_star);
            }
        }
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bs_eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "deepfool: {flips}/100 flipped, norms min/med/max = {:?} iters max {}",
            (norms.first(), norms.get(norms.len() / 2), norms.last()),
            iters.iter().max().unwrap()
        );
        println!(
            "binsearch: {bs_flips}/100 flipped, eps min/med/max = {:?}",
            (bs_eps.first(), bs_eps.get(bs_eps.len() / 2), bs_eps.last())
        );
        return;
    }

    let kind = match strategy.as_str() {
        "fvaal" => StrategyKind::Fvaal,
        "dfal" => StrategyKind::Dfal,
        "badge" => StrategyKind::Badge,
        _ => StrategyKind::Random,
    };
    let aug = match mode.as_str() {
        "fv" => AugmentationMode::FvAdv,
        "fgsm" => AugmentationMode::FgsmAdv,
        _ => AugmentationMode::None,
    };
    let mut cfg = ExperimentConfig::new(kind, aug);
    cfg.runs = runs;
    cfg.seed = 42;
    cfg.timing = TimingMode::Suppressed;
    cfg.train.epochs = epochs;
    cfg.train.learning_rate = lr;
    cfg.harvest.time_limit = std::time::Duration::from_secs(5);
    cfg.harvest.eps_max = 0.2;
    cfg.harvest.exclusion_radius = 0.045;

    let started = Instant::now();
    let outs = run_experiment(&cfg, &train, &test).unwrap();
    let secs = started.elapsed().as_secs_f64();
    for out in &outs {
        let accs: Vec<String> = out.records.iter().map(|r| format!("{:.3}", r.accuracy)).collect();
        let (sat, unsat, timeout): (usize, usize, usize) = out.records.iter().fold(
            (0, 0, 0),
            |(s, u, t), r| (s + r.sat, u + r.unsat, t + r.timeout),
        );
        println!(
            "spread={spread} {strategy}/{mode} run={} acc=[{}] aubc={:.4} sat/unsat/to={sat}/{unsat}/{timeout} div={:?}",
            out.run,
            accs.join(","),
            aubc(&curve(&out.records)).unwrap(),
            out.diversity.map(|d| (d.mean, d.std)),
        );
    }
    println!("total {secs:.1}s for {runs} run(s)");
}
