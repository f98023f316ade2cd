use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;
use log::warn;
use range_experts::attribution::{
    attribution_basis, explain_model, explain_query, explain_query_from_basis, AttributionMatrix, BaselinePool,
    BaselineSpec, Baselines, MethodKind,
};
use range_experts::data::{gen_friedman, gen_range_strategy, gen_wind_scada, load_csv, Dataset, WindSimConfig};
use range_experts::disentangle::{fit_surrogate, validate_surrogate, HeadInit, Probe, SurrogateFitConfig, SurrogateHeads};
use range_experts::eval::{
    compare_faithfulness, curve_csv, curves_svg, mean_curve, subtraction_flipping, ComparisonConfig, ScoredOutput,
    SvgSeries,
};
use range_experts::experts::{fit_bank, BankMode, RangeExpertBank};
use range_experts::nn::{train, MlpModel, Optimizer, TrainConfig};
use range_experts::query::QuerySpec;

use crate::manifest::{self, RunManifest};
use crate::spec::{mode_name, parse_kind, parse_list, parse_mode, parse_resolved, parse_slice, BaselineArg, Rows};
use crate::{
    Cli, Command, Common, DataArgs, EvaluateArgs, ExplainArgs, FitExpertsArgs, FitSurrogateArgs, GenArgs, GenKind,
    InitName, OptimizerName, PrecomputeArgs, ReportArgs, ScoredName, TrainArgs,
};

const BASIS_INDEX: &str = "index.txt";
const REPORT_FILE: &str = "report.txt";

pub fn run(command: Command, argv: Vec<String>) -> Result<()> {
    if let Command::Rerun { manifest } = &command {
        let recorded = RunManifest::read(manifest)?;
        let cli = Cli::try_parse_from(std::iter::once("rangex".to_string()).chain(recorded.args.iter().cloned()))
            .map_err(|e| anyhow!("manifest arguments do not parse: {e}"))?;
        if matches!(cli.command, Command::Rerun { .. }) {
            bail!("a manifest cannot record a rerun");
        }
        return run(cli.command, recorded.args);
    }
    let start = Instant::now();
    let (name, common, out_is_dir) = match &command {
        Command::Gen(a) => ("gen", &a.common, false),
        Command::Train(a) => ("train", &a.common, false),
        Command::FitExperts(a) => ("fit-experts", &a.common, false),
        Command::FitSurrogate(a) => ("fit-surrogate", &a.common, false),
        Command::Explain(a) => ("explain", &a.common, false),
        Command::Precompute(a) => ("precompute", &a.common, true),
        Command::Evaluate(a) => ("evaluate", &a.common, true),
        Command::Report(a) => ("report", &a.common, false),
        Command::Rerun { .. } => unreachable!(),
    };
    let manifest_path = manifest_path(common, out_is_dir);
    let mut man = RunManifest::new(name, argv);
    man.seed("seed", common.seed);
    match &command {
        Command::Gen(a) => gen(a, &mut man)?,
        Command::Train(a) => train_cmd(a, &mut man)?,
        Command::FitExperts(a) => fit_experts(a, &mut man)?,
        Command::FitSurrogate(a) => fit_surrogate_cmd(a, &mut man)?,
        Command::Explain(a) => explain(a, &mut man)?,
        Command::Precompute(a) => precompute(a, &mut man)?,
        Command::Evaluate(a) => evaluate(a, &mut man)?,
        Command::Report(a) => report(a, &mut man)?,
        Command::Rerun { .. } => unreachable!(),
    }
    man.duration = start.elapsed();
    man.write(&manifest_path)
}

fn manifest_path(common: &Common, out_is_dir: bool) -> PathBuf {
    common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(&common.out, out_is_dir))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn default_target(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = text.lines().next().ok_or_else(|| anyhow!("{} is empty", path.display()))?;
    Ok(header.rsplit(',').next().unwrap_or_default().trim().to_string())
}

fn load_dataset(path: &Path, target: Option<&str>, man: &mut RunManifest) -> Result<Dataset> {
    let target = match target {
        Some(t) => t.to_string(),
        None => default_target(path)?,
    };
    let load = load_csv(path, &target).with_context(|| format!("loading {}", path.display()))?;
    if load.dropped_rows > 0 {
        warn!("{}: dropped {} malformed rows", path.display(), load.dropped_rows);
    }
    man.input(path).param("target", &target);
    Ok(load.dataset)
}

fn load_data(args: &DataArgs, man: &mut RunManifest) -> Result<Dataset> {
    load_dataset(&args.data, args.target.as_deref(), man)
}

fn load_model(path: &Path, man: &mut RunManifest) -> Result<MlpModel> {
    man.input(path);
    MlpModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_bank(path: &Path, man: &mut RunManifest) -> Result<RangeExpertBank> {
    man.input(path);
    RangeExpertBank::load(path).with_context(|| format!("loading bank {}", path.display()))
}

fn load_heads(path: Option<&Path>, man: &mut RunManifest) -> Result<Option<SurrogateHeads>> {
    path.map(|p| {
        man.input(p);
        SurrogateHeads::load(p).with_context(|| format!("loading heads {}", p.display()))
    })
    .transpose()
}

fn gen(a: &GenArgs, man: &mut RunManifest) -> Result<()> {
    let out = &a.common.out;
    let seed = a.common.seed;
    man.param("n", a.n).param("noise", a.noise);
    let truth_path = || a.truth.clone().unwrap_or_else(|| out.with_extension("truth.csv"));
    let data = match a.kind {
        GenKind::Friedman => {
            man.param("kind", "friedman");
            gen_friedman(a.n, a.noise, seed)?
        }
        GenKind::RangeStrategy => {
            man.param("kind", "range_strategy").param("m", a.m);
            let (data, truth) = gen_range_strategy(a.n, a.m, seed, a.noise)?;
            let tp = truth_path();
            truth.write_csv(&tp)?;
            man.output(&tp);
            data
        }
        GenKind::Wind => {
            man.param("kind", "wind")
                .param("rated_speed", a.rated_speed)
                .param("rated_power", a.rated_power)
                .param("max_misalignment", a.max_misalignment);
            let cfg = WindSimConfig {
                n: a.n,
                seed,
                rated_speed: a.rated_speed,
                rated_power: a.rated_power,
                max_misalignment: a.max_misalignment,
            };
            let (data, truth) = gen_wind_scada(&cfg)?;
            let tp = truth_path();
            truth.write_csv(&tp)?;
            man.output(&tp);
            data
        }
    };
    data.write_csv(out).with_context(|| format!("cannot write {}", out.display()))?;
    man.output(out);
    println!("wrote {} rows, {} features to {}", data.len(), data.dim(), out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs, man: &mut RunManifest) -> Result<()> {
    let data = load_data(&a.data, man)?;
    let hidden: Vec<usize> = parse_list(&a.hidden)?;
    man.param("hidden", &a.hidden)
        .param("epochs", a.epochs)
        .param("lr", a.lr)
        .param("batch", a.batch)
        .param("l2", a.l2)
        .param("optimizer", format!("{:?}", a.optimizer).to_lowercase());
    let init = MlpModel::random(data.dim(), &hidden, a.common.seed, data.feature_names().to_vec())?;
    let model = if a.epochs == 0 {
        warn!("epochs = 0: saving the initial weights untrained");
        init
    } else {
        let cfg = TrainConfig {
            learning_rate: a.lr,
            epochs: a.epochs,
            batch_size: a.batch,
            seed: a.common.seed,
            l2_penalty: a.l2,
            optimizer: match a.optimizer {
                OptimizerName::Sgd => Optimizer::Sgd,
                OptimizerName::Adam => Optimizer::adam(),
            },
        };
        let (model, rep) = train(&init, &data, &cfg)?;
        println!(
            "train initial_mse={} final_mse={} best_epoch={}",
            rep.initial_loss(),
            rep.final_loss(),
            rep.best_epoch
        );
        model
    };
    println!("r2={}", model.r_squared(&data)?);
    model.save(&a.common.out)?;
    man.output(&a.common.out);
    Ok(())
}

fn fit_experts(a: &FitExpertsArgs, man: &mut RunManifest) -> Result<()> {
    let data = load_data(&a.data, man)?;
    let model = load_model(&a.model, man)?;
    let preds = model.predict_batch(data.features())?;
    let mode = match &a.breakpoints {
        Some(s) => BankMode::Custom(parse_list(s)?),
        None => BankMode::Uniform,
    };
    man.param("experts", a.experts)
        .param("breakpoints", a.breakpoints.as_deref().unwrap_or("uniform"))
        .param("top_unbounded", !a.bounded_top);
    let bank = fit_bank(&preds, a.experts, &mode, !a.bounded_top)?;
    bank.save(&a.common.out)?;
    man.output(&a.common.out);
    print!("{}", bank.to_text());
    Ok(())
}

fn fit_surrogate_cmd(a: &FitSurrogateArgs, man: &mut RunManifest) -> Result<()> {
    let data = load_data(&a.data, man)?;
    let model = load_model(&a.model, man)?;
    let bank = load_bank(&a.bank, man)?;
    let cfg = SurrogateFitConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.common.seed,
        dropout_augmentation: a.dropout,
        init: match a.init {
            InitName::CopyTop => HeadInit::CopyTopLayer,
            InitName::Pca => HeadInit::ConditionalPca,
            InitName::Zeros => HeadInit::Zeros,
        },
        l2_penalty: a.l2,
        attach_layer: a.attach,
        freeze_bias: a.freeze_bias,
        optimizer: Optimizer::adam(),
    };
    man.param("epochs", a.epochs)
        .param("lr", a.lr)
        .param("batch", a.batch)
        .param("l2", a.l2)
        .param("init", format!("{:?}", cfg.init))
        .param("attach", a.attach.map_or_else(|| "default".to_string(), |l| l.to_string()))
        .param("dropout", a.dropout)
        .param("freeze_bias", a.freeze_bias)
        .param("probes", a.probes);
    let heads = fit_surrogate(&model, &bank, &data, &cfg)?;
    heads.save(&a.common.out)?;
    man.output(&a.common.out);

    let mut text = format!("surrogate attach_layer={} experts={}\n", heads.attach_layer(), heads.len());
    match heads.top_cap() {
        Some(cap) => {
            let _ = writeln!(text, "top_cap={cap}");
        }
        None => text.push_str("top_cap=none\n"),
    }
    if let Some(r) = heads.report() {
        let _ = writeln!(text, "training_report epochs={} final_loss={}", r.epochs, r.final_loss);
        text.push_str("expert,train_within_range_mae,train_side_accuracy\n");
        for m in 0..r.within_range_mae.len() {
            let _ = writeln!(text, "{m},{},{}", r.within_range_mae[m], r.side_accuracy[m]);
        }
    }
    let probe = Probe {
        n_samples: a.probes,
        seed: a.common.seed,
    };
    text.push_str(&validate_surrogate(&model, &bank, &heads, &data, probe)?.to_record());
    print!("{text}");
    Ok(())
}

struct BasisIndex {
    method: MethodKind,
    baseline: Option<BaselineSpec>,
    rows: Vec<usize>,
}

impl BasisIndex {
    fn to_text(&self) -> String {
        let baseline = self.baseline.as_ref().map_or_else(|| "none".to_string(), |b| b.to_string());
        let rows: Vec<String> = self.rows.iter().map(usize::to_string).collect();
        format!(
            "basis v1\nmethod={}\nbaseline={baseline}\nrows={}\n",
            self.method,
            rows.join(",")
        )
    }

    fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(BASIS_INDEX);
        if !path.exists() {
            bail!("basis archive not found: {} does not exist", path.display());
        }
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut lines = text.lines();
        if lines.next() != Some("basis v1") {
            bail!("{}: not a basis index", path.display());
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().unwrap_or_default();
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| anyhow!("{}: expected '{key}=', got '{line}'", path.display()))
        };
        let method = parse_kind(&field("method")?)?;
        let baseline = match field("baseline")?.as_str() {
            "none" => None,
            s => Some(parse_resolved(s)?),
        };
        let rows_line = field("rows")?;
        let rows = if rows_line.is_empty() { Vec::new() } else { parse_list(&rows_line)? };
        Ok(BasisIndex { method, baseline, rows })
    }
}

fn sample_file(dir: &Path, row: usize) -> PathBuf {
    dir.join(format!("sample_{row}.csv"))
}

fn explain(a: &ExplainArgs, man: &mut RunManifest) -> Result<()> {
    let bank = load_bank(&a.bank, man)?;
    let query = a.query.parse::<QuerySpec>()?.build(&bank)?;
    let rows: Rows = a.rows.parse()?;
    man.param("query", &a.query).param("rows", &a.rows);
    let mut text = format!("{}\n", query.to_record());

    if let Some(dir) = &a.from_basis {
        man.input(dir).param("mode", "basis_sum");
        let index = BasisIndex::read(dir)?;
        let selected = match rows {
            Rows::All => index.rows.clone(),
            Rows::List(v) => {
                if let Some(r) = v.iter().find(|r| !index.rows.contains(r)) {
                    bail!("row {r} is not in the basis archive {}", dir.display());
                }
                v
            }
        };
        for row in selected {
            let (mut basis, names) = AttributionMatrix::read_csv(&sample_file(dir, row), index.method)?;
            basis.baseline = index.baseline.clone();
            let e = explain_query_from_basis(&basis, &query, None)?;
            let _ = writeln!(text, "sample row={row} mode=basis_sum");
            text.push_str(&e.to_record(&names));
        }
    } else {
        let model_path = a.model.as_deref().ok_or_else(|| anyhow!("--model is required"))?;
        let data_path = a.data.as_deref().ok_or_else(|| anyhow!("--data is required"))?;
        let model = load_model(model_path, man)?;
        let heads = load_heads(a.heads.as_deref(), man)?;
        let data = load_dataset(data_path, a.target.as_deref(), man)?;
        let mode = parse_mode(&a.mode)?;
        let method = a.method.build(a.common.seed);
        man.param("method", a.method.method.kind())
            .param("steps", a.method.steps)
            .param("permutations", a.method.permutations)
            .param("eps", a.method.eps)
            .param("mode", mode_name(mode));
        if heads.is_none() && a.method.method.kind() == MethodKind::Lrp {
            bail!("configuration error: LRP through range experts needs surrogate heads; run fit-surrogate and pass --heads");
        }
        let pool = BaselinePool::new(&data, &model)?;
        let baselines = if method.uses_baseline() {
            let spec = a
                .baseline
                .parse::<BaselineArg>()?
                .resolve(data.dim(), pool.predictions(), a.common.seed);
            man.param("baseline", &spec);
            Baselines::resolve(&spec, &pool)?
        } else {
            Baselines::none()
        };
        for row in rows.select(data.len())? {
            let x = &data.features()[row];
            let e = explain_query(&method, &model, &bank, heads.as_ref(), &query, x, &baselines, mode)?;
            let _ = writeln!(text, "sample row={row} mode={}", mode_name(mode));
            text.push_str(&e.to_record(data.feature_names()));
        }
    }
    write_file(&a.common.out, &text)?;
    man.output(&a.common.out);
    Ok(())
}

fn precompute(a: &PrecomputeArgs, man: &mut RunManifest) -> Result<()> {
    let data = load_data(&a.data, man)?;
    let model = load_model(&a.model, man)?;
    let bank = load_bank(&a.bank, man)?;
    let heads = load_heads(a.heads.as_deref(), man)?;
    let rows = a.rows.parse::<Rows>()?.select(data.len())?;
    let method = a.method.build(a.common.seed);
    man.param("method", a.method.method.kind())
        .param("steps", a.method.steps)
        .param("permutations", a.method.permutations)
        .param("eps", a.method.eps)
        .param("rows", &a.rows);
    let pool = BaselinePool::new(&data, &model)?;
    let baselines = if method.uses_baseline() {
        let spec = a
            .baseline
            .parse::<BaselineArg>()?
            .resolve(data.dim(), pool.predictions(), a.common.seed);
        man.param("baseline", &spec);
        Baselines::resolve(&spec, &pool)?
    } else {
        Baselines::none()
    };
    let dir = &a.common.out;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut baseline = None;
    for &row in &rows {
        let basis = attribution_basis(&method, &model, &bank, heads.as_ref(), &data.features()[row], &baselines)?;
        basis.write_csv(&sample_file(dir, row), data.feature_names())?;
        baseline = basis.baseline.clone();
    }
    let index = BasisIndex {
        method: method.kind(),
        baseline,
        rows,
    };
    write_file(&dir.join(BASIS_INDEX), &index.to_text())?;
    man.output(dir);
    println!(
        "wrote {} matrices of {}x{} to {}",
        index.rows.len(),
        data.dim(),
        bank.num_experts(),
        dir.display()
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs, man: &mut RunManifest) -> Result<()> {
    let data = load_data(&a.data, man)?;
    let model = load_model(&a.model, man)?;
    let bank = load_bank(&a.bank, man)?;
    let heads = load_heads(a.heads.as_deref(), man)?;
    let seed = a.common.seed;
    let d = data.dim();
    let top = bank.num_experts() - 1;
    let top_ref = bank.offset() + bank.breakpoints()[top];
    let query_str = a.query.clone().unwrap_or_else(|| format!("step:ref={top_ref}"));
    let query = query_str.parse::<QuerySpec>()?.build(&bank)?;
    let slice = match &a.slice {
        Some(s) => parse_slice(s)?,
        None => (top_ref, f64::INFINITY),
    };
    let mode = parse_mode(&a.mode)?;
    let method = a.method.build(seed);

    let preds = model.predict_batch(data.features())?;
    let anchored = |given: &Option<String>| -> Result<BaselineArg> {
        match given {
            Some(s) => s.parse(),
            None => query
                .snap()
                .map(|s| BaselineArg::conditional_at(s.snapped))
                .ok_or_else(|| anyhow!("non-step queries need explicit --query-baseline and --eval-baseline")),
        }
    };
    let naive_baseline = a.naive_baseline.parse::<BaselineArg>()?.resolve(d, &preds, seed);
    let query_baseline = anchored(&a.query_baseline)?.resolve(d, &preds, seed);
    // Occlusion draws must not reuse the explanation draws.
    let eval_baseline = anchored(&a.eval_baseline)?.resolve(d, &preds, seed.wrapping_add(1));
    let cfg = ComparisonConfig {
        slice,
        method,
        query: query.clone(),
        naive_baseline,
        query_baseline,
        eval_baseline,
        n_samples: a.n,
        seed,
        query_mode: mode,
        scored: match a.scored {
            ScoredName::Model => ScoredOutput::Model,
            ScoredName::Query => ScoredOutput::Query,
        },
    };
    man.param("method", method.kind())
        .param("steps", a.method.steps)
        .param("permutations", a.method.permutations)
        .param("eps", a.method.eps)
        .param("query", &query_str)
        .param("slice", format!("{},{}", slice.0, slice.1))
        .param("n", a.n)
        .param("mode", mode_name(mode))
        .param("scored", format!("{:?}", a.scored).to_lowercase())
        .param("naive_baseline", &cfg.naive_baseline)
        .param("query_baseline", &cfg.query_baseline)
        .param("eval_baseline", &cfg.eval_baseline);
    let report = compare_faithfulness(&model, &bank, heads.as_ref(), &data, &cfg)?;

    let dir = &a.common.out;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut text = format!(
        "evaluate method={} n={} seed={seed} slice={},{} mode={} scored={:?}\n",
        method.kind(),
        a.n,
        slice.0,
        slice.1,
        mode_name(mode),
        cfg.scored
    );
    let _ = writeln!(text, "{}", query.to_record());
    let _ = writeln!(text, "naive_baseline={}", cfg.naive_baseline);
    let _ = writeln!(text, "query_baseline={}", cfg.query_baseline);
    let _ = writeln!(text, "eval_baseline={}", cfg.eval_baseline);
    text.push_str(&report.to_record());
    write_file(&dir.join(REPORT_FILE), &text)?;
    println!(
        "evaluated {} samples: mean naive ABC {} mean query ABC {} relative improvement {}",
        report.pairs.len(),
        report.mean_naive,
        report.mean_query,
        report
            .relative_improvement
            .map_or_else(|| "n/a".to_string(), |r| r.to_string())
    );

    // Subtraction sweep over the evaluated samples, zero reference.
    let zero = Baselines::fixed(vec![0.0; d]);
    let mut curves: Vec<Vec<Vec<f64>>> = vec![Vec::new(); bank.num_experts()];
    for p in &report.pairs {
        let x = &data.features()[p.index];
        let naive = explain_model(&method, &model, x, &zero)?;
        let basis = attribution_basis(&method, &model, &bank, heads.as_ref(), x, &zero)?;
        for (k, c) in curves.iter_mut().enumerate() {
            c.push(subtraction_flipping(&model, x, &naive.values, &basis, k)?.outputs);
        }
    }
    if report.pairs.is_empty() {
        warn!("no evaluated samples; subtraction curves skipped");
    } else {
        let means = curves.iter().map(|c| mean_curve(c)).collect::<range_experts::Result<Vec<_>>>()?;
        for (k, m) in means.iter().enumerate() {
            write_file(&dir.join(format!("subtraction_k{k}.csv")), &curve_csv(m))?;
        }
        if a.svg {
            write_file(&dir.join("subtraction.svg"), &sweep_svg(&means))?;
        }
    }
    man.output(dir);
    Ok(())
}

fn sweep_svg(means: &[Vec<f64>]) -> String {
    let labels: Vec<String> = (0..means.len())
        .map(|k| if k == 0 { "naive".to_string() } else { format!("k={k}") })
        .collect();
    let series: Vec<SvgSeries<'_>> = labels
        .iter()
        .zip(means)
        .map(|(label, values)| SvgSeries { label, values })
        .collect();
    curves_svg("subtraction flipping", &series)
}

fn read_curve(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            let v = l.split(',').nth(1).ok_or_else(|| anyhow!("{}: bad row '{l}'", path.display()))?;
            v.parse::<f64>().with_context(|| format!("{}: bad value '{v}'", path.display()))
        })
        .collect()
}

fn report(a: &ReportArgs, man: &mut RunManifest) -> Result<()> {
    let input = &a.input;
    let report_path = input.join(REPORT_FILE);
    man.input(&report_path);
    let text = fs::read_to_string(&report_path).with_context(|| format!("cannot read {}", report_path.display()))?;
    let mut means = Vec::new();
    while input.join(format!("subtraction_k{}.csv", means.len())).exists() {
        let path = input.join(format!("subtraction_k{}.csv", means.len()));
        man.input(&path);
        means.push(read_curve(&path)?);
    }

    let mut out = String::from("# Evaluation summary\n\n");
    for line in text.lines().take_while(|l| !l.starts_with("index,")) {
        let _ = writeln!(out, "    {line}");
    }
    out.push('\n');
    let pairs = text.lines().skip_while(|l| !l.starts_with("index,")).skip(1);
    let (mut wins, mut losses) = (0usize, 0usize);
    for line in pairs.clone().take_while(|l| !l.starts_with('#')) {
        let f: Vec<f64> = parse_list(line)?;
        if f.len() >= 3 {
            if f[2] > f[1] {
                wins += 1;
            } else if f[2] < f[1] {
                losses += 1;
            }
        }
    }
    out.push_str("| statistic | value |\n|---|---|\n");
    for line in pairs.filter_map(|l| l.strip_prefix("# ")) {
        for kv in line.split_whitespace().filter_map(|t| t.split_once('=')) {
            let _ = writeln!(out, "| {} | {} |", kv.0, kv.1);
        }
    }
    let _ = writeln!(out, "| query_better | {wins} |\n| naive_better | {losses} |");
    if !means.is_empty() {
        out.push_str("\n## Subtraction curves (mean output after each flip)\n\n");
        for (k, m) in means.iter().enumerate() {
            let vals: Vec<String> = m.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "- k={k}: {}", vals.join(" "));
        }
    }
    write_file(&a.common.out, &out)?;
    man.output(&a.common.out);
    if a.svg && !means.is_empty() {
        let svg = a.common.out.with_extension("svg");
        write_file(&svg, &sweep_svg(&means))?;
        man.output(&svg);
    }
    print!("{out}");
    Ok(())
}
