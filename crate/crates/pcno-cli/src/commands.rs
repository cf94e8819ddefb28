//! Subcommand implementations.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use pcno_core::data::{pad_and_batch, read_dataset, write_dataset, SampleBundle};
use pcno_core::datagen;
use pcno_core::geometry::{CellBlock, DensityMode, PointCloudSample};
use pcno_core::model::{forward_values, prepare_sample, ModelConfig, ModelParams, Precision};
use pcno_core::train::{evaluate, load_checkpoint, save_checkpoint, TrainConfig};
use pcno_core::Result;

use crate::{BenchArgs, EvalArgs, GenArgs, GradcheckArgs, InspectArgs, PreprocessArgs, ProblemArg, TrainArgs};

const OK: ExitCode = ExitCode::SUCCESS;
const USAGE: u8 = 2;

/// Every run writes a resolved-config echo next to its outputs.
fn write_echo(out: &Path, echo: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("resolved_config.json"),
        serde_json::to_vec_pretty(echo)?,
    )?;
    Ok(())
}

pub fn gen(a: GenArgs) -> Result<ExitCode> {
    let (info, bundles, echo) = match a.problem {
        ProblemArg::Advdiff => {
            let (info, b) = datagen::gen_advdiff_dataset(a.n, a.seed)?;
            (
                info,
                b,
                serde_json::json!({"command": "gen", "problem": "advdiff", "n": a.n, "seed": a.seed}),
            )
        }
        ProblemArg::Darcy => {
            let (info, b) = datagen::gen_darcy_dataset(a.n, a.grid_n, a.seed)?;
            (
                info,
                b,
                serde_json::json!({"command": "gen", "problem": "darcy", "n": a.n, "seed": a.seed, "grid_n": a.grid_n}),
            )
        }
        ProblemArg::Burgers => {
            let (info, b) = datagen::gen_burgers_dataset(a.n, a.resolution, a.seed)?;
            (
                info,
                b,
                serde_json::json!({"command": "gen", "problem": "burgers", "n": a.n, "seed": a.seed, "resolution": a.resolution}),
            )
        }
    };
    write_dataset(&bundles, &info, &a.out)?;
    write_echo(&a.out, &echo)?;
    println!(
        "wrote {} samples to {} (d = {}, d_a = {}, d_u = {})",
        bundles.len(),
        a.out.display(),
        info.d,
        info.d_a,
        info.d_u
    );
    Ok(OK)
}

pub fn preprocess(a: PreprocessArgs) -> Result<ExitCode> {
    let (mut info, mut bundles) = read_dataset(&a.data, None)?;
    let mode = a.density_mode.to_mode();
    pcno_core::data::preprocess(&mut bundles, mode, a.d_prime, a.sv_rel_tol)?;
    let degenerate: usize = bundles
        .iter()
        .map(|b| b.grad_weights.as_ref().unwrap().degenerate_nodes.len())
        .sum();
    if degenerate > 0 {
        eprintln!("warning: {degenerate} nodes with rank-deficient local geometry");
    }
    info.density_mode = Some(mode);
    info.d_prime = a.d_prime;
    let out = a.out.clone().unwrap_or_else(|| a.data.clone());
    write_dataset(&bundles, &info, &out)?;
    write_echo(
        &out,
        &serde_json::json!({
            "command": "preprocess",
            "data": a.data,
            "density_mode": mode,
            "d_prime": a.d_prime,
            "sv_rel_tol": a.sv_rel_tol,
        }),
    )?;
    println!("preprocessed {} samples into {}", bundles.len(), out.display());
    Ok(OK)
}

/// Apply `key=value` overrides to a JSON config tree via dotted paths.
fn apply_overrides(doc: &mut serde_json::Value, overrides: &[String]) -> std::result::Result<(), String> {
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .ok_or_else(|| format!("override '{ov}' is not KEY=VALUE"))?;
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let parts: Vec<&str> = path.split('.').collect();
        let mut cur = &mut *doc;
        for part in &parts[..parts.len() - 1] {
            let obj = cur
                .as_object_mut()
                .ok_or_else(|| format!("override path '{path}' does not address an object"))?;
            cur = obj
                .entry(part.to_string())
                .or_insert_with(|| serde_json::json!({}));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("override path '{path}' does not address an object"))?;
        obj.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    if !a.config.exists() {
        eprintln!("error: config {} does not exist", a.config.display());
        return Ok(ExitCode::from(USAGE));
    }
    let mut doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&a.config)?)?;
    if let Err(msg) = apply_overrides(&mut doc, &a.overrides) {
        eprintln!("error: {msg}");
        return Ok(ExitCode::from(USAGE));
    }
    if let Some(seed) = a.seed {
        doc["seed"] = serde_json::json!(seed);
    }
    let cfg: TrainConfig = serde_json::from_value(doc.clone())?;

    let (_, train_bundles, test_bundles) = match &a.test_data {
        Some(test) => {
            let (info, tr) = read_dataset(&a.data, None)?;
            let (_, te) = read_dataset(test, None)?;
            (info, tr, te)
        }
        None => {
            let (info, all) = read_dataset(&a.data, None)?;
            let n_test = ((all.len() as f64) * a.test_frac).round().max(1.0) as usize;
            let n_train = all.len().saturating_sub(n_test);
            let mut all = all;
            let te = all.split_off(n_train);
            (info, all, te)
        }
    };
    println!(
        "training on {} samples, testing on {}",
        train_bundles.len(),
        test_bundles.len()
    );

    let started = Instant::now();
    let out = pcno_core::train::train(&cfg, &train_bundles, &test_bundles)?;
    let elapsed = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(&a.out)?;
    let echo = serde_json::json!({
        "command": "train",
        "config": doc,
        "data": a.data,
        "test_data": a.test_data,
        "overrides": a.overrides,
    });
    write_echo(&a.out, &echo)?;
    save_checkpoint(&out.best, echo.clone(), &a.out.join("best.ckpt"))?;
    save_checkpoint(&out.final_params, echo, &a.out.join("final.ckpt"))?;
    std::fs::write(
        a.out.join("history.json"),
        serde_json::to_vec_pretty(&out.history)?,
    )?;
    let mut csv = String::from("epoch,train_rel_l2,test_rel_l2,lr,wall_secs\n");
    for r in &out.history.epochs {
        csv.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{:.3}\n",
            r.epoch, r.train_rel_l2, r.test_rel_l2, r.lr, r.wall_secs
        ));
    }
    std::fs::write(a.out.join("history.csv"), csv)?;
    println!(
        "done in {elapsed:.1}s: best test rel-L2 {:.4e} (epoch {}), final {:.4e}",
        out.history.best_test_rel_l2, out.history.best_epoch, out.history.final_test_rel_l2
    );
    Ok(OK)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    if !a.checkpoint.exists() {
        eprintln!("error: checkpoint {} does not exist", a.checkpoint.display());
        return Ok(ExitCode::from(USAGE));
    }
    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let (_, bundles) = read_dataset(&a.data, None)?;
    let report = evaluate(&params, &bundles)?;

    std::fs::create_dir_all(&a.out)?;
    write_echo(
        &a.out,
        &serde_json::json!({
            "command": "eval",
            "checkpoint": a.checkpoint,
            "data": a.data,
        }),
    )?;
    std::fs::write(
        a.out.join("report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    // sorted per-sample errors, ready for percentile/median exports
    let mut csv = String::from("rank,sample_index,label,rel_l2\n");
    for (rank, s) in report.per_sample.iter().enumerate() {
        csv.push_str(&format!("{},{},{},{:.8e}\n", rank, s.index, s.label, s.rel_l2));
    }
    std::fs::write(a.out.join("per_sample.csv"), csv)?;

    println!("mean rel-L2: {:.4e} over {} samples", report.mean_rel_l2, report.per_sample.len());
    for (label, v) in &report.groups {
        println!("  {label}: {v:.4e}");
    }
    let median = &report.per_sample[report.per_sample.len() / 2];
    println!(
        "  median sample {} ({:.4e}), worst sample {} ({:.4e})",
        median.index,
        median.rel_l2,
        report.per_sample.last().unwrap().index,
        report.per_sample.last().unwrap().rel_l2
    );
    Ok(OK)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let report = pcno_core::gradcheck::run(a.seed, None)?;
    println!("finite-difference audit (tolerance {:.1e}):", report.tolerance);
    for e in &report.entries {
        println!("  {:<40} {:.3e}", e.name, e.discrepancy);
    }
    println!(
        "worst: {} at {:.3e} -> {}",
        report.worst_name,
        report.worst,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &a.out {
        write_echo(out, &serde_json::json!({"command": "gradcheck", "seed": a.seed}))?;
        std::fs::write(out.join("gradcheck.json"), serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(if report.passed() {
        OK
    } else {
        ExitCode::from(1)
    })
}

/// Uniform random chain cloud of n nodes for timing runs.
fn bench_cloud(n: usize, seed: u64) -> SampleBundle {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // enforce distinctness for the measure computation
    for i in 1..n {
        if nodes[i] <= nodes[i - 1] {
            nodes[i] = nodes[i - 1] + 1e-12;
        }
    }
    let mut cells = CellBlock::new();
    for i in 0..n - 1 {
        cells.push(1, &[i, i + 1]);
    }
    let fields_a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    SampleBundle::new(PointCloudSample {
        coords: nodes,
        n_nodes: n,
        dim: 1,
        intrinsic_dim: 1,
        cells,
        node_mask: vec![true; n],
        fields_a,
        d_a: 1,
        fields_u: None,
        d_u: 1,
        subdomains: vec![0; n],
        label: String::new(),
    })
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let sizes: Vec<i64> = a
        .sizes
        .split(',')
        .map(|s| s.trim().parse::<i64>().unwrap_or(-1))
        .collect();
    if sizes.iter().any(|&s| s <= 0) {
        eprintln!("error: sizes must be positive integers, got '{}'", a.sizes);
        return Ok(ExitCode::from(USAGE));
    }
    let sizes: Vec<usize> = sizes.into_iter().map(|s| s as usize).collect();

    let cfg = ModelConfig {
        d: 1,
        d_prime: 1,
        d_a: 1,
        d_u: 1,
        width: a.width,
        proj_width: a.width,
        n_layers: 4,
        k_max: a.k_max,
        n_subdomains: 1,
        density_mode: DensityMode::Uniform,
        precision: Precision::Real64,
    };
    let mut params = ModelParams::init(cfg.clone(), a.seed)?;
    params.set_length_scales(&[1.0]);

    println!("n_nodes,median_secs");
    let mut rows = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let mut bundle = bench_cloud(n, a.seed.wrapping_add(i as u64));
        pcno_core::data::preprocess(
            std::slice::from_mut(&mut bundle),
            DensityMode::Uniform,
            1,
            1e-8,
        )?;
        let prep = prepare_sample(
            &cfg,
            &bundle.sample,
            bundle.features.as_ref().unwrap(),
            bundle.grad_weights.as_ref().unwrap(),
        )?;
        // warm up once, then time
        let _ = forward_values(&params, &prep)?;
        let mut times = Vec::with_capacity(a.reps);
        for _ in 0..a.reps {
            let t = Instant::now();
            let _ = forward_values(&params, &prep)?;
            times.push(t.elapsed().as_secs_f64());
        }
        times.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let median = times[times.len() / 2];
        println!("{n},{median:.6}");
        rows.push((n, median));
    }

    if rows.len() >= 2 {
        // least-squares slope of log t vs log n
        let lx: Vec<f64> = rows.iter().map(|(n, _)| (*n as f64).ln()).collect();
        let ly: Vec<f64> = rows.iter().map(|(_, t)| t.ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = num / den;
        println!("fitted exponent: {slope:.3}");
        if let Some(out) = &a.out {
            write_echo(
                out,
                &serde_json::json!({"command": "bench", "sizes": sizes, "width": a.width, "k_max": a.k_max, "reps": a.reps, "seed": a.seed}),
            )?;
            let mut csv = String::from("n_nodes,median_secs\n");
            for (n, t) in &rows {
                csv.push_str(&format!("{n},{t:.6}\n"));
            }
            csv.push_str(&format!("# fitted exponent,{slope:.4}\n"));
            std::fs::write(out.join("bench.csv"), csv)?;
        }
    }
    Ok(OK)
}

pub fn inspect(a: InspectArgs) -> Result<ExitCode> {
    if a.path.is_dir() {
        let (info, _) = read_dataset(&a.path, Some(&[]))?;
        println!(
            "{} v{}: {} samples, d = {}, d' = {}, d_a = {}, d_u = {}",
            info.format, info.version, info.sample_count, info.d, info.d_prime, info.d_a, info.d_u
        );
        println!(
            "channels a: {:?}, u: {:?}, density: {:?}",
            info.channel_names_a, info.channel_names_u, info.density_mode
        );
        let mut by_label: std::collections::BTreeMap<&str, (usize, usize, usize)> =
            std::collections::BTreeMap::new();
        for r in &info.records {
            let e = by_label.entry(r.label.as_str()).or_insert((0, usize::MAX, 0));
            e.0 += 1;
            e.1 = e.1.min(r.n_nodes);
            e.2 = e.2.max(r.n_nodes);
        }
        for (label, (count, min_n, max_n)) in by_label {
            println!("  {label}: {count} samples, {min_n}..{max_n} nodes");
        }
        // exercise the batching path on a small prefix as a sanity check
        let take = info.records.len().min(2);
        let idx: Vec<usize> = (0..take).collect();
        let (_, bundles) = read_dataset(&a.path, Some(&idx))?;
        if !bundles.is_empty() {
            let batch = pad_and_batch(&bundles, None)?;
            println!("  batch probe: {} samples padded to {} nodes", batch.batch_size, batch.n_max);
        }
    } else {
        let (params, echo) = load_checkpoint(&a.path)?;
        println!(
            "checkpoint: {} parameters, width {}, {} layers, k_max {}, d = {}",
            params.n_parameters(),
            params.config.width,
            params.config.n_layers,
            params.config.k_max,
            params.config.d
        );
        println!("config echo: {}", serde_json::to_string_pretty(&echo)?);
    }
    Ok(OK)
}
