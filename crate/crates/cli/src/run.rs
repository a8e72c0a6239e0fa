//! Subcommand implementations: dataset generation, seeded training runs,
//! the variant x λ ablation grid, checkpoint evaluation, and attention-map
//! export. Every command echoes its resolved configuration to
//! `out_dir/run.json` before writing results so a finished directory is
//! self-describing.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use smoothmil_core::data::{
    generate_synthetic, load_manifest, load_split, prepare_bags, write_dataset, Bag, DatasetCard,
    Geometry, PreparedBag, Split,
};
use smoothmil_core::graph::NeighborPolicy;
use smoothmil_core::metrics::{
    attention_map, attention_variance_diagnostic, auroc, f1, rank_methods, write_map_csv,
    write_map_pgm, MapMoment,
};
use smoothmil_core::model::{MilModel, ModelVariant};
use smoothmil_core::train::{fit, score_split, write_history_csv, write_steps_csv, TrainConfig};
use smoothmil_core::{Error, Result};

use crate::config::{combo_slug, DataSection, EvalSection, LambdaSpec, RunConfig};

/// Process exit code for an error: 2 for configuration problems, 4 for
/// numeric failures, 3 for everything else (data, i/o, shape, domain).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 2,
        Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

// Per-split evaluation-seed salts, fixed so report metrics reuse identical
// prediction noise across invocations and stay distinct from the validation
// stream used inside `fit`.
fn split_eval_seed(seed: u64, split: Split) -> u64 {
    let salt: u64 = match split {
        Split::Train => 0x7472_6169_6e65,
        Split::Val => 0x7661_6c65,
        Split::Test => 0x7465_7374,
    };
    seed ^ salt
}

struct LoadedData {
    train: Vec<PreparedBag>,
    val: Vec<PreparedBag>,
    test: Vec<PreparedBag>,
}

fn infer_policy(first_bag: Option<&Bag>) -> NeighborPolicy {
    match first_bag.map(|b| b.coord_dim) {
        Some(2) => Geometry::Grid.default_policy(),
        _ => Geometry::Chain.default_policy(),
    }
}

/// Materializes the three splits as graph-prepared bags. Synthetic data is
/// generated from `seed`, so each run seed sees its own draw; manifest data
/// is identical for every seed.
fn load_data(data: &DataSection, seed: u64) -> Result<LoadedData> {
    let (train, val, test) = match data {
        DataSection::Synthetic(spec) => {
            let mut items = generate_synthetic(spec, seed)?;
            let mut by_split = [Vec::new(), Vec::new(), Vec::new()];
            for (split, bag) in items.drain(..) {
                let slot = match split {
                    Split::Train => 0,
                    Split::Val => 1,
                    Split::Test => 2,
                };
                by_split[slot].push(bag);
            }
            let [train, val, test] = by_split;
            (train, val, test)
        }
        DataSection::Manifest(path) => {
            let manifest = load_manifest(path)?;
            (
                load_split(&manifest, Split::Train)?,
                load_split(&manifest, Split::Val)?,
                load_split(&manifest, Split::Test)?,
            )
        }
    };
    let policy = infer_policy(train.first().or(val.first()).or(test.first()));
    Ok(LoadedData {
        train: prepare_bags(train, policy)?,
        val: prepare_bags(val, policy)?,
        test: prepare_bags(test, policy)?,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_run_json(config: &RunConfig) -> Result<()> {
    create_dir(&config.out_dir)?;
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Data(format!("cannot serialize run config: {}", e)))?;
    write_text(&config.out_dir.join("run.json"), &(text + "\n"))
}

struct SeedOutcome {
    seed: u64,
    test_auroc: f64,
    test_f1: f64,
}

/// Trains one seed end to end and writes its artifacts (checkpoint, epoch
/// history, step log, variance diagnostic) into `seed_dir`.
fn run_one_seed(
    variant: ModelVariant,
    data: &DataSection,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalSection,
    seed: u64,
    seed_dir: &Path,
) -> Result<SeedOutcome> {
    let loaded = load_data(data, seed)?;
    let model = MilModel::init(variant, seed)?;
    let result = fit(model, &loaded.train, &loaded.val, train_cfg, seed)?;

    create_dir(seed_dir)?;
    result.model.save_checkpoint(&seed_dir.join("model.psac"))?;
    write_history_csv(&result.history, &seed_dir.join("history.csv"))?;
    write_steps_csv(&result.steps, &seed_dir.join("steps.csv"))?;

    let scores = score_split(
        &result.model,
        &loaded.test,
        eval_cfg.predict_samples,
        split_eval_seed(seed, Split::Test),
    )?;
    let labels: Vec<u8> = loaded.test.iter().map(|b| b.bag.label).collect();
    let test_auroc = auroc(&scores, &labels)?;
    let test_f1 = f1(&scores, &labels, eval_cfg.f1_threshold)?;

    write_diagnostic(&result.model, &loaded.test, &seed_dir.join("diagnostic.csv"))?;

    Ok(SeedOutcome {
        seed,
        test_auroc,
        test_f1,
    })
}

/// Attention-variance summary over test bags that carry instance labels:
/// mean normalized variance among instances the attention map predicts
/// incorrectly vs. correctly.
fn write_diagnostic(model: &MilModel, test: &[PreparedBag], path: &Path) -> Result<()> {
    let mut pairs = Vec::new();
    for pb in test {
        if let Some(labels) = &pb.bag.instance_labels {
            pairs.push((attention_map(model, &pb.bag)?, labels.clone()));
        }
    }
    let mut out = String::from("group,instances,mean_var_norm\n");
    if pairs.is_empty() {
        out.push_str("mispredicted,0,\ncorrect,0,\n");
    } else {
        let d = attention_variance_diagnostic(&pairs)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "mispredicted,{},{}\n",
            d.mispredicted_count,
            fmt(d.mispredicted_mean_var)
        ));
        out.push_str(&format!(
            "correct,{},{}\n",
            d.correct_count,
            fmt(d.correct_mean_var)
        ));
    }
    write_text(path, &out)
}

/// Mean and sample standard deviation (n-1 denominator; 0 for a single value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_report_csv(outcomes: &[SeedOutcome], path: &Path) -> Result<()> {
    let mut out = String::from("run_seed,split,auroc,f1\n");
    for o in outcomes {
        out.push_str(&format!("{},test,{},{}\n", o.seed, o.test_auroc, o.test_f1));
    }
    let aurocs: Vec<f64> = outcomes.iter().map(|o| o.test_auroc).collect();
    let f1s: Vec<f64> = outcomes.iter().map(|o| o.test_f1).collect();
    let (ma, sa) = mean_std(&aurocs);
    let (mf, sf) = mean_std(&f1s);
    out.push_str(&format!(
        "aggregate,test,{:.4}±{:.4},{:.4}±{:.4}\n",
        ma, sa, mf, sf
    ));
    write_text(path, &out)
}

pub fn gen_synth(config: &RunConfig, dry_run: bool) -> Result<()> {
    let spec = match &config.data {
        DataSection::Synthetic(spec) => spec,
        DataSection::Manifest(_) => {
            return Err(Error::InvalidConfig(
                "gen-synth requires a synthetic data section".into(),
            ))
        }
    };
    let seed = config.seeds[0];
    if dry_run {
        println!(
            "plan: generate {}+{}+{} bags (seed {}) into {}",
            spec.train_bags,
            spec.val_bags,
            spec.test_bags,
            seed,
            config.out_dir.join("data").display()
        );
        return Ok(());
    }
    let items = generate_synthetic(spec, seed)?;
    let data_dir = config.out_dir.join("data");
    write_run_json(config)?;
    let manifest = write_dataset(&data_dir, &items)?;
    let card = DatasetCard::from_bags(&items);
    let card_text = serde_json::to_string_pretty(&card)
        .map_err(|e| Error::Data(format!("cannot serialize dataset card: {}", e)))?;
    write_text(&data_dir.join("card.json"), &(card_text + "\n"))?;
    for split in &card.splits {
        println!(
            "{}: {} bags ({} positive), {} instances",
            split.split.as_str(),
            split.bags,
            split.positive_bags,
            split.instances
        );
    }
    println!("manifest: {}", manifest.display());
    Ok(())
}

pub fn train(config: &RunConfig, dry_run: bool) -> Result<()> {
    let lambda = config.objective.single()?;
    let train_cfg = config.train.to_train_config(lambda);
    train_cfg.validate()?;
    if dry_run {
        for &seed in &config.seeds {
            println!(
                "plan: train seed {} -> {}",
                seed,
                config.out_dir.join(format!("seed-{}", seed)).display()
            );
        }
        return Ok(());
    }
    write_run_json(config)?;
    let mut outcomes = Vec::new();
    for &seed in &config.seeds {
        let seed_dir = config.out_dir.join(format!("seed-{}", seed));
        let outcome = run_one_seed(
            config.model,
            &config.data,
            &train_cfg,
            &config.eval,
            seed,
            &seed_dir,
        )?;
        println!(
            "seed {}: test auroc {:.4}, test f1 {:.4}",
            seed, outcome.test_auroc, outcome.test_f1
        );
        outcomes.push(outcome);
    }
    let report = config.out_dir.join("report.csv");
    write_report_csv(&outcomes, &report)?;
    println!("report: {}", report.display());
    Ok(())
}

struct Cell {
    variant: ModelVariant,
    variant_label: String,
    lambda: LambdaSpec,
    dir: PathBuf,
}

struct CellStats {
    seed_aurocs: Vec<f64>,
    mean_auroc: f64,
    mean_f1: f64,
}

fn run_cell(cell: &Cell, config: &RunConfig) -> Result<CellStats> {
    let policy = cell.lambda.to_policy()?;
    let train_cfg = config.train.to_train_config(policy);
    train_cfg.validate()?;
    let mut outcomes = Vec::new();
    for &seed in &config.seeds {
        let seed_dir = cell.dir.join(format!("seed-{}", seed));
        outcomes.push(run_one_seed(
            cell.variant,
            &config.data,
            &train_cfg,
            &config.eval,
            seed,
            &seed_dir,
        )?);
    }
    write_report_csv(&outcomes, &cell.dir.join("report.csv"))?;
    let aurocs: Vec<f64> = outcomes.iter().map(|o| o.test_auroc).collect();
    let f1s: Vec<f64> = outcomes.iter().map(|o| o.test_f1).collect();
    Ok(CellStats {
        mean_auroc: mean_std(&aurocs).0,
        mean_f1: mean_std(&f1s).0,
        seed_aurocs: aurocs,
    })
}

/// CSV fields never contain commas or newlines; error notes are flattened.
fn csv_safe(text: &str) -> String {
    text.replace(['\n', '\r'], " ").replace(',', ";")
}

pub fn ablate(config: &RunConfig, jobs: usize, dry_run: bool) -> Result<()> {
    let combos = config.variant_combos();
    let grid = config.objective.grid()?;
    let mut cells = Vec::new();
    for combo in &combos {
        for lambda in &grid {
            let variant_label = combo_slug(*combo);
            let dir_name = format!("{}-lambda-{}", variant_label, lambda.slug());
            cells.push(Cell {
                variant: config.variant_for(*combo),
                variant_label,
                lambda: lambda.clone(),
                dir: config.out_dir.join(dir_name),
            });
        }
    }
    if dry_run {
        for cell in &cells {
            println!(
                "plan: {} lambda={} x {} seeds -> {}",
                cell.variant_label,
                cell.lambda.slug(),
                config.seeds.len(),
                cell.dir.display()
            );
        }
        return Ok(());
    }
    write_run_json(config)?;

    let results: Vec<Mutex<Option<Result<CellStats>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(cells.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let outcome = run_cell(&cells[i], config);
                match &outcome {
                    Ok(stats) => println!(
                        "{} lambda={}: mean test auroc {:.4}",
                        cells[i].variant_label,
                        cells[i].lambda.slug(),
                        stats.mean_auroc
                    ),
                    Err(e) => println!(
                        "{} lambda={}: failed ({})",
                        cells[i].variant_label,
                        cells[i].lambda.slug(),
                        e
                    ),
                }
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    let results: Vec<Result<CellStats>> = results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled every cell"))
        .collect();

    // Mean rank per successful cell: one row per cell (the compared methods),
    // one column per seed, higher AUROC is better (rank 1).
    let ok_indices: Vec<usize> = (0..cells.len()).filter(|&i| results[i].is_ok()).collect();
    let mut ranks = vec![None; cells.len()];
    if !ok_indices.is_empty() {
        let table: Vec<Vec<f64>> = ok_indices
            .iter()
            .map(|&i| results[i].as_ref().unwrap().seed_aurocs.clone())
            .collect();
        let mean_ranks = rank_methods(&table)?;
        for (&i, rank) in ok_indices.iter().zip(mean_ranks) {
            ranks[i] = Some(rank);
        }
    }

    let mut out = String::from("variant,lambda,auroc,f1,rank,note\n");
    for (i, cell) in cells.iter().enumerate() {
        match &results[i] {
            Ok(stats) => out.push_str(&format!(
                "{},{},{},{},{},\n",
                cell.variant_label,
                cell.lambda.slug(),
                stats.mean_auroc,
                stats.mean_f1,
                ranks[i].expect("successful cells are ranked")
            )),
            Err(e) => out.push_str(&format!(
                "{},{},,,,{}\n",
                cell.variant_label,
                cell.lambda.slug(),
                csv_safe(&e.to_string())
            )),
        }
    }
    let table_path = config.out_dir.join("ablation.csv");
    write_text(&table_path, &out)?;
    println!("ablation table: {}", table_path.display());
    Ok(())
}

pub fn eval(config: &RunConfig, checkpoint: &Path, dry_run: bool) -> Result<()> {
    if dry_run {
        println!(
            "plan: evaluate {} on all splits -> {}",
            checkpoint.display(),
            config.out_dir.join("eval_report.csv").display()
        );
        return Ok(());
    }
    let model = MilModel::load_checkpoint(checkpoint)?;
    let seed = config.seeds[0];
    let loaded = load_data(&config.data, seed)?;
    let mut out = String::from("run_seed,split,auroc,f1\n");
    let splits = [
        (Split::Train, &loaded.train),
        (Split::Val, &loaded.val),
        (Split::Test, &loaded.test),
    ];
    for (split, bags) in splits {
        if bags.is_empty() {
            continue;
        }
        let scores = score_split(
            &model,
            bags,
            config.eval.predict_samples,
            split_eval_seed(seed, split),
        )?;
        let labels: Vec<u8> = bags.iter().map(|b| b.bag.label).collect();
        let split_auroc = auroc(&scores, &labels)?;
        let split_f1 = f1(&scores, &labels, config.eval.f1_threshold)?;
        println!(
            "{}: auroc {:.4}, f1 {:.4}",
            split.as_str(),
            split_auroc,
            split_f1
        );
        out.push_str(&format!(
            "{},{},{},{}\n",
            seed,
            split.as_str(),
            split_auroc,
            split_f1
        ));
    }
    write_run_json(config)?;
    write_text(&config.out_dir.join("eval_report.csv"), &out)
}

pub fn export_maps(config: &RunConfig, checkpoint: &Path, dry_run: bool) -> Result<()> {
    if dry_run {
        println!(
            "plan: export test-split attention maps from {} -> {}",
            checkpoint.display(),
            config.out_dir.join("maps").display()
        );
        return Ok(());
    }
    let model = MilModel::load_checkpoint(checkpoint)?;
    let loaded = load_data(&config.data, config.seeds[0])?;
    if loaded.test.is_empty() {
        eprintln!("warning: test split is empty; nothing to export");
        return Ok(());
    }
    write_run_json(config)?;
    let maps_dir = config.out_dir.join("maps");
    create_dir(&maps_dir)?;
    for pb in &loaded.test {
        let map = attention_map(&model, &pb.bag)?;
        write_map_csv(&map, &maps_dir.join(format!("{}.csv", map.bag_id)))?;
        write_map_pgm(
            &map,
            MapMoment::Mean,
            &maps_dir.join(format!("{}_mean.pgm", map.bag_id)),
        )?;
        write_map_pgm(
            &map,
            MapMoment::Variance,
            &maps_dir.join(format!("{}_var.pgm", map.bag_id)),
        )?;
    }
    println!(
        "wrote {} attention maps to {}",
        loaded.test.len(),
        maps_dir.display()
    );
    Ok(())
}
