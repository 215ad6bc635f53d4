use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};
use pcs_core::baselines::{elo_fit, rank_centrality, rao_kupper_fit, skill_fit, EloConfig, RcConfig, RkConfig, SkillConfig};
use pcs_core::dataio::{
    export_scores, load_comparisons, load_items, ratings_to_pairs, write_comparisons, write_items,
    ConversionOptions, RatingRecord,
};
use pcs_core::metrics::evaluate;
use pcs_core::model::{score_items, Checkpoint};
use pcs_core::simulator::{run_budget_experiment, simulate, write_budget_csv, BudgetOptions, Method, SimConfig};
use pcs_core::trainer::{sweep_gamma, train, write_sweep_csv, TrainConfig};
use pcs_core::{make_dataset, split, Dataset, SplitSpec};
use serde_json::{json, Value};
use tempfile::TempDir;

fn pcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcs")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = pcs(args);
    assert!(
        out.status.success(),
        "pcs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Data {
    dir: TempDir,
    items: PathBuf,
    comparisons: PathBuf,
}

impl Data {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let config = SimConfig {
            n_items: 40,
            feature_dim: 4,
            avg_comparisons_per_item: 12.0,
            seed: 5,
            ..SimConfig::default()
        };
        let (_, dataset) = simulate(&config).unwrap();
        let items = dir.path().join("items.jsonl");
        let comparisons = dir.path().join("comparisons.csv");
        write_items(dataset.items().as_slice(), &items).unwrap();
        write_comparisons(dataset.comparisons(), &comparisons).unwrap();
        Self { dir, items, comparisons }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Loaded the way the training commands load it.
    fn dataset(&self) -> (Dataset, pcs_core::dataio::FeatureStats) {
        let (items, stats) = load_items(&self.items).unwrap();
        (make_dataset(items, load_comparisons(&self.comparisons).unwrap()).unwrap(), stats)
    }
}

fn small_train_config() -> TrainConfig {
    let mut config = TrainConfig::small_data();
    config.hyper.max_epochs = 4;
    config.width = 16;
    config
}

#[test]
fn convert_matches_direct_conversion() {
    let dir = TempDir::new().unwrap();
    let ratings = dir.path().join("ratings.csv");
    fs::write(&ratings, "respondent_id,item_id,rating\nu1,a,3\nu1,b,3\nu1,c,5\n").unwrap();
    let out = dir.path().join("pairs.csv");
    ok(&["convert", "--ratings", s(&ratings), "--out", s(&out), "--base-time", "2024-01-01T00:00:00Z"]);

    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);

    let records = vec![
        RatingRecord { respondent_id: "u1".into(), item_id: "a".into(), rating: 3 },
        RatingRecord { respondent_id: "u1".into(), item_id: "b".into(), rating: 3 },
        RatingRecord { respondent_id: "u1".into(), item_id: "c".into(), rating: 5 },
    ];
    let options = ConversionOptions {
        base_time: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        max_pairs_per_respondent: None,
        seed: 0,
    };
    let direct = dir.path().join("direct.csv");
    write_comparisons(&ratings_to_pairs(&records, &options).unwrap(), &direct).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&direct).unwrap());
    let comps = load_comparisons(&out).unwrap();
    assert_eq!(comps.iter().filter(|c| c.outcome.is_tie()).count(), 1);
}

#[test]
fn baselines_match_direct_fits() {
    let data = Data::new();
    let comps = load_comparisons(&data.comparisons).unwrap();
    let direct = [
        ("elo", elo_fit(&comps, &EloConfig::default()).unwrap()),
        ("skill", skill_fit(&comps, &SkillConfig::default()).unwrap().0),
        ("rc", rank_centrality(&comps, &RcConfig::default()).unwrap().table),
        (
            "rk",
            rao_kupper_fit(&comps, &RkConfig { prior_games: 1.0, ..RkConfig::default() })
                .unwrap()
                .table,
        ),
    ];
    for (method, table) in direct {
        let cli_out = data.path(&format!("{method}.csv"));
        ok(&[
            "baseline",
            "--method",
            method,
            "--comparisons",
            s(&data.comparisons),
            "--out",
            s(&cli_out),
            "--prior-games",
            "1",
        ]);
        let direct_out = data.path(&format!("{method}_direct.csv"));
        export_scores(&table, &direct_out).unwrap();
        assert_eq!(fs::read(&cli_out).unwrap(), fs::read(&direct_out).unwrap(), "{method}");
    }
}

#[test]
fn eval_of_perfect_scores_is_exact() {
    let dir = TempDir::new().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, "item_id,score,method\na,3.0,truth\nb,2.0,truth\nc,1.0,truth\n").unwrap();
    let comps = dir.path().join("comps.csv");
    fs::write(
        &comps,
        "left_id,right_id,outcome,respondent_id,created_at\n\
         a,b,-1,r,2024-01-01T00:00:00Z\n\
         c,b,1,r,2024-01-01T00:00:01Z\n\
         c,a,1,r,2024-01-01T00:00:02Z\n",
    )
    .unwrap();
    let out = ok(&["eval", "--scores", s(&scores), "--comparisons", s(&comps), "--gamma", "0"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["accuracy2"], json!(1.0));
    assert_eq!(report["accuracy3"], json!(1.0));
}

#[test]
fn train_score_and_eval_match_direct_calls() {
    let data = Data::new();
    let config_path = data.path("train.json");
    fs::write(&config_path, serde_json::to_vec(&small_train_config()).unwrap()).unwrap();
    let ckpt = data.path("model.json");
    let out = ok(&[
        "train",
        "--items",
        s(&data.items),
        "--comparisons",
        s(&data.comparisons),
        "--config",
        s(&config_path),
        "--out",
        s(&ckpt),
        "--seed",
        "11",
    ]);
    let cli_report: Value = serde_json::from_slice(&out.stdout).unwrap();

    let (dataset, stats) = data.dataset();
    let mut config = small_train_config();
    config.hyper.seed = 11;
    let (train_set, dev_set, test_set) = split(&dataset, &SplitSpec::standard(11)).unwrap();
    let (params, _) = train(&train_set, &dev_set, &config).unwrap();
    let scores = score_items(&params, dataset.items(), "model").unwrap();
    let report = evaluate(&scores, test_set.comparisons(), config.hyper.gamma).unwrap();
    assert_eq!(cli_report, serde_json::to_value(&report).unwrap());
    let direct_ckpt = data.path("direct.json");
    Checkpoint::new(params, Some(stats)).save(&direct_ckpt).unwrap();
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&direct_ckpt).unwrap());

    let scored = data.path("scores.csv");
    ok(&["score", "--ckpt", s(&ckpt), "--items", s(&data.items), "--out", s(&scored)]);
    let direct_scores = data.path("direct_scores.csv");
    let table = Checkpoint::load(&ckpt).unwrap().score_items_file(&data.items).unwrap();
    export_scores(&table, &direct_scores).unwrap();
    assert_eq!(fs::read(&scored).unwrap(), fs::read(&direct_scores).unwrap());

    let out = ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--items",
        s(&data.items),
        "--comparisons",
        s(&data.comparisons),
        "--gamma",
        "0.3",
    ]);
    let cli_eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    let all = load_comparisons(&data.comparisons).unwrap();
    assert_eq!(cli_eval, serde_json::to_value(evaluate(&table, &all, 0.3).unwrap()).unwrap());
}

#[test]
fn sweep_matches_direct_sweep() {
    let data = Data::new();
    let config_path = data.path("train.json");
    fs::write(&config_path, serde_json::to_vec(&small_train_config()).unwrap()).unwrap();
    let out = data.path("sweep.csv");
    ok(&[
        "sweep-gamma",
        "--items",
        s(&data.items),
        "--comparisons",
        s(&data.comparisons),
        "--gammas",
        "0.1..0.5:0.2",
        "--config",
        s(&config_path),
        "--out",
        s(&out),
        "--seed",
        "3",
    ]);
    let (dataset, _) = data.dataset();
    let mut config = small_train_config();
    config.hyper.seed = 3;
    let (train_set, dev_set, test_set) = split(&dataset, &SplitSpec::standard(3)).unwrap();
    let rows = sweep_gamma(&train_set, &dev_set, &test_set, &[0.1, 0.3, 0.5], &config).unwrap();
    let direct = data.path("direct.csv");
    write_sweep_csv(&rows, &direct).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&direct).unwrap());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 4);
}

#[test]
fn minimal_simulation_grid_gives_one_row() {
    let dir = TempDir::new().unwrap();
    let grid = dir.path().join("grid.json");
    let base = SimConfig {
        n_items: 30,
        feature_dim: 3,
        ..SimConfig::default()
    };
    fs::write(
        &grid,
        serde_json::to_vec(&json!({
            "base": base,
            "budgets": [4.0],
            "methods": ["elo"],
            "n_seeds": 1,
        }))
        .unwrap(),
    )
    .unwrap();
    let out = dir.path().join("budget.csv");
    ok(&["simulate", "--grid", s(&grid), "--out", s(&out), "--seed", "9"]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("avg_comparisons,method,seed,accuracy2,accuracy3,tie_fraction\n"));

    let base = SimConfig { seed: 9, ..base };
    let rows = run_budget_experiment(&base, &[4.0], &[Method::Elo], 1, &BudgetOptions::default()).unwrap();
    let direct = dir.path().join("direct.csv");
    write_budget_csv(&rows, &direct).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&direct).unwrap());
}

#[test]
fn omitted_seed_is_generated_and_printed() {
    let dir = TempDir::new().unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(
        &grid,
        r#"{"base": {"n_items": 20, "feature_dim": 2}, "budgets": [3.0], "methods": ["elo"]}"#,
    )
    .unwrap();
    let out = ok(&["simulate", "--grid", s(&grid), "--out", s(&dir.path().join("o.csv"))]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let seed: u64 = stderr
        .lines()
        .find_map(|l| l.strip_prefix("seed: "))
        .expect("seed printed")
        .parse()
        .unwrap();
    let rows = fs::read_to_string(dir.path().join("o.csv")).unwrap();
    assert!(rows.contains(&format!(",elo,{seed},")));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(pcs(&["eval", "--ckpt", "a", "--comparisons", "c"]).status.code(), Some(2));
    assert_eq!(pcs(&["eval", "--comparisons", "c"]).status.code(), Some(2));
    assert_eq!(pcs(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pcs(&["baseline", "--method", "elo"]).status.code(), Some(2));
    assert_eq!(pcs(&["baseline", "--method", "nope", "--comparisons", "x", "--out", "y"]).status.code(), Some(2));
    assert_eq!(
        pcs(&["eval", "--ckpt", "a", "--scores", "b", "--comparisons", "c"]).status.code(),
        Some(2)
    );
    let out = pcs(&["sweep-gamma", "--items", "i", "--comparisons", "c", "--gammas", "x..y", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "usage");
    assert_eq!(pcs(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one_and_json() {
    let dir = TempDir::new().unwrap();
    let out = pcs(&[
        "baseline",
        "--method",
        "elo",
        "--comparisons",
        s(&dir.path().join("missing.csv")),
        "--out",
        s(&dir.path().join("o.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().len() > 0);
    assert!(err["kind"].is_string());

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "left_id,right_id,outcome,respondent_id,created_at\na,b,7,r,2024-01-01T00:00:00Z\n").unwrap();
    let out = pcs(&["baseline", "--method", "elo", "--comparisons", s(&bad), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_without_catalog_fails() {
    let dir = TempDir::new().unwrap();
    let out = pcs(&[
        "serve",
        "--listen",
        "127.0.0.1:0",
        "--items",
        s(&dir.path().join("missing.jsonl")),
        "--log",
        s(&dir.path().join("log.jsonl")),
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let err: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(err["kind"], "catalog");
}
