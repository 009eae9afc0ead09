use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use log::info;

use hwprune::adversarial::{adv_train, eval_clean, evaluate, AttackConfig, TrainConfig};
use hwprune::dataset::{generate_synthetic, Dataset};
use hwprune::designgen::{
    derive_layer_params, emit_candidate_manifest, emit_template_text, emit_trace_csv, export_weight_blob,
    layer_params_csv,
};
use hwprune::model::{Architecture, ModelDesc, ModelGraph};
use hwprune::perf::{model_cost, CostReport, DataflowMode, HwConstants, Objective, PePolicy};
use hwprune::pruning::{
    fine_tune, matched_checkpoints, pareto_filter, run_pruning, Candidate, Guidance, PruneConfig, PruneRun,
    SaliencyKind, LATENCY_FRACTIONS,
};
use hwprune::quant::{agreement, quant_infer, quantize_model, QuantModel};
use hwprune::sim::{check_run, simulate_model, SimOptions};
use hwprune::{seed, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "hwprune", version, about = "Robustness-aware, hardware-guided channel pruning for small CNNs")]
#[command(args_override_self = true)]
struct Cli {
    /// YAML file supplying default flag values (keys are flag names).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Synthetic dataset utilities.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Adversarial training from a model description.
    Train(TrainArgs),
    /// Clean and robust accuracy.
    Eval(EvalArgs),
    /// Hardware-guided pruning; writes candidates, manifest and trace.
    Prune(PruneArgs),
    /// Adversarial fine-tuning of a pruned candidate.
    Finetune(FinetuneArgs),
    /// Post-training INT8 quantization.
    Quantize(QuantizeArgs),
    /// Analytical latency and resource estimate.
    Estimate(EstimateArgs),
    /// Run one image through the accelerator simulator.
    Simulate(SimulateArgs),
    /// Template parameters, weight blob and instantiation text.
    Generate(GenerateArgs),
    /// Pruning ablations.
    Ablate {
        #[command(subcommand)]
        cmd: AblateCmd,
    },
}

#[derive(Subcommand, Debug)]
enum DatasetCmd {
    Gen(DatasetGenArgs),
}

#[derive(Subcommand, Debug)]
enum AblateCmd {
    /// Hardware-guided priority against saliency-only priority.
    GuidedVsSaliency(GuidedArgs),
    /// One trajectory per saliency function under the same objective.
    Saliency(SaliencyCmpArgs),
}

fn parse_fraction(s: &str) -> std::result::Result<f32, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in {s}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in {s}"))?;
            if b == 0.0 {
                return Err(format!("zero denominator in {s}"));
            }
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("not a number: {s}"))?,
    };
    if !v.is_finite() {
        return Err(format!("not finite: {s}"));
    }
    Ok(v as f32)
}

fn parse_attack(s: &str) -> std::result::Result<usize, String> {
    match s {
        "none" => Ok(0),
        _ => s
            .strip_prefix("pgd")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| format!("expected pgdN or none, got {s}")),
    }
}

#[derive(Args, Debug)]
struct DatasetGenArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    side: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct AttackArgs {
    /// Perturbation budget, e.g. 8/255.
    #[arg(long, value_parser = parse_fraction, default_value = "8/255")]
    eps: f32,
    /// PGD step size, e.g. 2/255.
    #[arg(long, value_parser = parse_fraction, default_value = "2/255")]
    step: f32,
}

impl AttackArgs {
    fn attack(&self, iters: usize, seed: u64) -> AttackConfig {
        AttackConfig {
            epsilon: self.eps,
            step: self.step,
            iters,
            random_start: false,
            seed,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Model description (YAML).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[command(flatten)]
    attack: AttackArgs,
    /// PGD steps per training example; 0 trains on clean images.
    #[arg(long, default_value_t = 10)]
    pgd_steps: usize,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `pgdN` or `none`.
    #[arg(long, value_parser = parse_attack, default_value = "pgd20")]
    attack: usize,
    #[command(flatten)]
    budget: AttackArgs,
}

#[derive(Args, Debug, Clone)]
struct HwArgs {
    #[arg(long, default_value = "streaming")]
    mode: DataflowMode,
    #[arg(long, default_value_t = 8)]
    pe_max: usize,
}

impl HwArgs {
    fn policy(&self) -> Result<PePolicy> {
        PePolicy::new(self.mode, self.pe_max)
    }
}

#[derive(Args, Debug, Clone)]
struct PruneOpts {
    #[arg(long, default_value = "latency")]
    objective: Objective,
    #[arg(long, default_value = "taylor")]
    saliency: SaliencyKind,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[arg(long, default_value_t = 0.8)]
    rho: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps_s: f64,
    #[arg(long, default_value_t = 32)]
    saliency_batch: usize,
    /// Samples (from the front of the data) used for per-step robustness.
    #[arg(long, default_value_t = 128)]
    eval_samples: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pgd_steps: usize,
    #[command(flatten)]
    attack: AttackArgs,
    #[command(flatten)]
    hw: HwArgs,
}

impl PruneOpts {
    fn config(&self, root: u64, consts: HwConstants) -> Result<PruneConfig> {
        let cfg = PruneConfig {
            objective: self.objective,
            saliency: self.saliency,
            tau: self.tau,
            rho: self.rho,
            eps_s: self.eps_s,
            attack: self.attack.attack(self.pgd_steps, seed::derive(root, "attack")),
            saliency_batch: self.saliency_batch,
            eval_samples: self.eval_samples,
            seed: seed::derive(root, "prune"),
            policy: self.hw.policy()?,
            consts,
            guidance: Guidance::Hardware,
            stop_on_tolerance: true,
            max_steps: self.max_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Rank channels by saliency alone instead of gain/saliency.
    #[arg(long)]
    saliency_only: bool,
    #[command(flatten)]
    opts: PruneOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[command(flatten)]
    attack: AttackArgs,
    #[arg(long, default_value_t = 10)]
    pgd_steps: usize,
    /// Base learning rate; fine-tuning runs at a tenth of it.
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Optional test set for INT8/FP32 prediction agreement.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Trained model, quantized model, or YAML description.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    hw: HwArgs,
    /// Print CSV instead of a table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    qmodel: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    image_index: usize,
    #[command(flatten)]
    hw: HwArgs,
    /// Fail unless logits match the integer reference and cycles match the estimate.
    #[arg(long)]
    check: bool,
    /// Print per-fold cycle breakdowns.
    #[arg(long)]
    trace: bool,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    qmodel: PathBuf,
    #[command(flatten)]
    hw: HwArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GuidedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    opts: PruneOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SaliencyCmpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated saliency functions.
    #[arg(long, value_delimiter = ',', default_value = "taylor,random")]
    kinds: Vec<SaliencyKind>,
    #[command(flatten)]
    opts: PruneOpts,
    #[arg(long)]
    out: PathBuf,
}

/// Config-file contents: flag defaults plus optional calibrated constants.
struct FileConfig {
    flags: Vec<String>,
    consts: HwConstants,
}

const NESTED: &[&str] = &["dataset", "ablate"];

fn subcommand_path(args: &[String]) -> Vec<String> {
    let cmd = Cli::command();
    let mut path = Vec::new();
    let mut cur = &cmd;
    for a in args.iter().skip(1) {
        if let Some(sub) = cur.find_subcommand(a) {
            path.push(a.clone());
            cur = sub;
            if !NESTED.contains(&a.as_str()) {
                break;
            }
        } else if !path.is_empty() {
            break;
        }
    }
    path
}

fn flag_names(path: &[String]) -> Vec<String> {
    let cmd = Cli::command();
    let mut cur = &cmd;
    for p in path {
        match cur.find_subcommand(p) {
            Some(c) => cur = c,
            None => break,
        }
    }
    cmd.get_arguments()
        .chain(cur.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect()
}

fn scalar_text(v: &serde_yaml::Value) -> Result<String> {
    Ok(match v {
        serde_yaml::Value::String(s) => s.clone(),
        serde_yaml::Value::Number(n) => n.to_string(),
        serde_yaml::Value::Bool(b) => b.to_string(),
        serde_yaml::Value::Sequence(items) => items.iter().map(scalar_text).collect::<Result<Vec<_>>>()?.join(","),
        _ => return Err(Error::Invalid(format!("config value {v:?} is not a scalar"))),
    })
}

/// Turns the config file into flags for the selected subcommand; keys the
/// subcommand does not accept are skipped, so one file can serve them all.
fn read_config(path: &Path, subcommand: &[String]) -> Result<FileConfig> {
    let text = String::from_utf8(read(path)?).map_err(|_| Error::Invalid("config file is not UTF-8".into()))?;
    let value: serde_yaml::Value = serde_yaml::from_str(&text)?;
    let map = match value {
        serde_yaml::Value::Mapping(m) => m,
        serde_yaml::Value::Null => Default::default(),
        _ => return Err(Error::Invalid("config file must be a mapping".into())),
    };
    let known = flag_names(subcommand);
    let mut flags = Vec::new();
    let mut consts = HwConstants::default();
    for (k, v) in map {
        let key = k.as_str().ok_or_else(|| Error::Invalid("config keys must be strings".into()))?;
        if key == "hw_constants" {
            consts = serde_yaml::from_value(v)?;
            continue;
        }
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err(Error::Invalid("config files cannot nest".into()));
        }
        if !known.contains(&flag) {
            continue;
        }
        match v {
            serde_yaml::Value::Bool(true) => flags.push(format!("--{flag}")),
            serde_yaml::Value::Bool(false) => {}
            other => {
                flags.push(format!("--{flag}"));
                flags.push(scalar_text(&other)?);
            }
        }
    }
    consts.validate()?;
    Ok(FileConfig { flags, consts })
}

/// Splices config-file flags in right after the subcommand so that flags
/// given on the command line, which come later, take precedence.
fn merged_args(raw: Vec<String>) -> Result<(Vec<String>, HwConstants)> {
    let mut config = None;
    let mut rest = Vec::with_capacity(raw.len());
    let mut it = raw.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = it.next();
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok((rest, HwConstants::default()));
    };
    let sub = subcommand_path(&rest);
    let file = read_config(Path::new(&path), &sub)?;
    let mut at = 1;
    let mut matched = 0;
    while at < rest.len() && matched < sub.len() {
        if rest[at] == sub[matched] {
            matched += 1;
        }
        at += 1;
    }
    let mut args = rest[..at].to_vec();
    args.extend(file.flags);
    args.extend_from_slice(&rest[at..]);
    Ok((args, file.consts))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_graph(path: &Path) -> Result<ModelGraph> {
    ModelGraph::from_bytes(&read(path)?)
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::from_bytes(&read(path)?)
}

fn load_qmodel(path: &Path) -> Result<QuantModel> {
    QuantModel::from_bytes(&read(path)?)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Architecture of a trained model, a quantized model or a description.
fn load_arch(path: &Path) -> Result<Architecture> {
    let bytes = read(path)?;
    match bytes.get(..4) {
        Some(b"ARMG") => Ok(ModelGraph::from_bytes(&bytes)?.arch().clone()),
        Some(b"ARMQ") => Ok(QuantModel::from_bytes(&bytes)?.arch),
        _ => {
            let text = String::from_utf8(bytes).map_err(|_| Error::Format {
                what: "model",
                detail: "not a model file or UTF-8 description".into(),
            })?;
            ModelDesc::parse(&text)?.architecture()
        }
    }
}

fn cmd_dataset_gen(a: &DatasetGenArgs, root: u64) -> Result<()> {
    let d = generate_synthetic(a.classes, a.per_class, a.side, root)?;
    d.save(&a.out)?;
    println!("wrote {} images ({} classes, {}x{}) to {}", d.len(), d.classes, d.height, d.width, a.out.display());
    Ok(())
}

fn train_config(epochs: usize, attack: &AttackArgs, pgd_steps: usize, o: &OptimArgs, root: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: o.batch_size,
        learning_rate: o.lr,
        momentum: o.momentum,
        attack: (pgd_steps > 0).then(|| attack.attack(pgd_steps, seed::derive(root, "train-attack"))),
        seed: seed::derive(root, "train"),
    }
}

fn cmd_train(a: &TrainArgs, root: u64) -> Result<()> {
    let text = String::from_utf8(read(&a.model)?).map_err(|_| Error::Format {
        what: "model description",
        detail: "not UTF-8".into(),
    })?;
    let graph = ModelGraph::from_description(&text, seed::derive(root, "init"))?;
    let data = load_data(&a.data)?;
    let cfg = train_config(a.epochs, &a.attack, a.pgd_steps, &a.optim, root);
    cfg.validate()?;
    let (model, metrics) = adv_train(&graph, &data, &cfg)?;
    for m in &metrics {
        println!("epoch {:>3} loss {:.4} acc {:.4}", m.epoch, m.loss, m.accuracy);
    }
    write(&a.out, model.to_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs, root: u64) -> Result<()> {
    let model = load_graph(&a.model)?;
    let data = load_data(&a.data)?;
    let clean = eval_clean(&model, &data)?;
    println!("clean accuracy  {clean:.4}");
    if a.attack > 0 {
        let attack = a.budget.attack(a.attack, seed::derive(root, "attack"));
        attack.validate()?;
        let r = evaluate(&model, &data, Some(&attack))?;
        println!("robust accuracy {:.4} (pgd{}, eps {})", r.accuracy, a.attack, a.budget.eps);
    }
    Ok(())
}

fn candidate_reports(run: &PruneRun, cfg: &PruneConfig) -> Result<Vec<CostReport>> {
    run.candidates
        .candidates
        .iter()
        .map(|c| model_cost(c.model.arch(), &cfg.policy, &cfg.consts))
        .collect()
}

fn cmd_prune(a: &PruneArgs, root: u64, consts: HwConstants) -> Result<()> {
    let model = load_graph(&a.model)?;
    let data = load_data(&a.data)?;
    let mut cfg = a.opts.config(root, consts)?;
    if a.saliency_only {
        cfg.guidance = Guidance::SaliencyOnly;
    }
    let run = run_pruning(&model, &data, &cfg)?;
    fs::create_dir_all(&a.out)?;
    for (i, c) in run.candidates.candidates.iter().enumerate() {
        write(&a.out.join(format!("candidate_{i}.armg")), c.model.to_bytes())?;
    }
    let reports = candidate_reports(&run, &cfg)?;
    write(&a.out.join("manifest.csv"), emit_candidate_manifest(&run.candidates, &reports)?)?;
    write(&a.out.join("trace.csv"), emit_trace_csv(&run.trace))?;
    let pareto = pareto_filter(&run.candidates);
    println!(
        "{} steps, {} candidates ({} Pareto-optimal); baseline robustness {:.4}, {} {}",
        run.trace.len(),
        run.candidates.len(),
        pareto.len(),
        run.base_robustness,
        cfg.objective,
        run.base_cost
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs, root: u64) -> Result<()> {
    let model = load_graph(&a.candidate)?;
    let data = load_data(&a.data)?;
    let cfg = train_config(a.epochs, &a.attack, a.pgd_steps, &a.optim, root);
    cfg.validate()?;
    let cand = Candidate {
        model,
        robustness: 0.0,
        clean_acc: 0.0,
        cost: 0.0,
        step: 0,
        removed: Vec::new(),
    };
    let tuned = fine_tune(&cand, &data, &cfg, a.epochs)?;
    write(&a.out, tuned.model.to_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_quantize(a: &QuantizeArgs) -> Result<()> {
    let model = load_graph(&a.model)?;
    let calib = load_data(&a.calib)?;
    let q = quantize_model(&model, &calib)?;
    write(&a.out, q.to_bytes())?;
    if let Some(p) = &a.data {
        let data = load_data(p)?;
        println!("int8/fp32 agreement {:.4}", agreement(&model, &q, &data)?);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs, consts: HwConstants) -> Result<()> {
    let arch = load_arch(&a.model)?;
    let r = model_cost(&arch, &a.hw.policy()?, &consts)?;
    if a.csv {
        print!("{}", r.to_csv());
    } else {
        print!("{}", r.to_table());
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, consts: HwConstants) -> Result<()> {
    let q = load_qmodel(&a.qmodel)?;
    let data = load_data(&a.data)?;
    let image = data
        .images
        .get(a.image_index)
        .ok_or_else(|| Error::Invalid(format!("image index {} out of range ({} images)", a.image_index, data.len())))?;
    let opts = SimOptions {
        policy: a.hw.policy()?,
        consts,
        ..SimOptions::default()
    };
    let run = simulate_model(&q, image, &opts)?;
    let logits: Vec<String> = run.logits.iter().map(|v| format!("{v:.6}")).collect();
    println!("logits [{}]", logits.join(", "));
    print!("{}", run.report.to_table());
    if a.trace {
        print!("{}", run.report.trace());
    }
    if let Some(p) = &a.csv {
        write(p, run.report.to_csv())?;
    }
    if a.check {
        check_run(&q, image, &run, &opts)?;
        debug_assert_eq!(quant_infer(&q, image)?, run.logits);
        println!("check passed: logits bit-identical, cycles equal the estimate");
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, consts: HwConstants) -> Result<()> {
    let q = load_qmodel(&a.qmodel)?;
    let policy = a.hw.policy()?;
    let records = derive_layer_params(&q, &policy);
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("layer_params.csv"), layer_params_csv(&records))?;
    write(&a.out.join("weights.bin"), export_weight_blob(&q, &records)?)?;
    write(&a.out.join("template.txt"), emit_template_text(&q.name, &records))?;
    write(&a.out.join("estimate.csv"), model_cost(&q.arch, &policy, &consts)?.to_csv())?;
    println!("wrote {} engine records to {}", records.len(), a.out.display());
    Ok(())
}

fn trajectory_config(opts: &PruneOpts, root: u64, consts: HwConstants) -> Result<PruneConfig> {
    Ok(PruneConfig {
        stop_on_tolerance: false,
        ..opts.config(root, consts)?
    })
}

fn cmd_guided(a: &GuidedArgs, root: u64, consts: HwConstants) -> Result<()> {
    let model = load_graph(&a.model)?;
    let data = load_data(&a.data)?;
    let base = trajectory_config(&a.opts, root, consts)?;
    let guided = run_pruning(&model, &data, &base)?;
    let blind = run_pruning(&model, &data, &PruneConfig { guidance: Guidance::SaliencyOnly, ..base.clone() })?;
    let base_cost = guided.base_cost;
    let mut csv = String::from("guidance,step,cost,cost_fraction,robustness\n");
    for (name, run) in [("hardware", &guided), ("saliency-only", &blind)] {
        csv.push_str(&format!("{name},0,{base_cost},1,{:.6}\n", run.base_robustness));
        for s in &run.trace {
            csv.push_str(&format!("{name},{},{},{:.6},{:.6}\n", s.step, s.cost, s.cost / base_cost, s.robustness));
        }
    }
    write(&a.out, csv)?;
    let pairs = matched_checkpoints(&guided.trace, &blind.trace, base_cost, &LATENCY_FRACTIONS, |s| s.cost);
    let wins = pairs.iter().filter(|p| p.robustness_a >= p.robustness_b).count();
    for p in &pairs {
        println!(
            "{} <= {:.1}: hardware {:.4} (step {}), saliency-only {:.4} (step {})",
            base.objective, p.fraction, p.robustness_a, p.step_a, p.robustness_b, p.step_b
        );
    }
    println!("hardware guidance at least as robust at {wins}/{} checkpoints", pairs.len());
    Ok(())
}

fn cmd_saliency(a: &SaliencyCmpArgs, root: u64, consts: HwConstants) -> Result<()> {
    let model = load_graph(&a.model)?;
    let data = load_data(&a.data)?;
    let base = trajectory_config(&a.opts, root, consts)?;
    let mut csv = String::from("saliency,step,cost,cost_fraction,robustness\n");
    for kind in &a.kinds {
        let run = run_pruning(&model, &data, &PruneConfig { saliency: *kind, ..base.clone() })?;
        info!("{kind}: {} steps", run.trace.len());
        csv.push_str(&format!("{kind},0,{},1,{:.6}\n", run.base_cost, run.base_robustness));
        for s in &run.trace {
            csv.push_str(&format!("{kind},{},{},{:.6},{:.6}\n", s.step, s.cost, s.cost / run.base_cost, s.robustness));
        }
    }
    write(&a.out, csv)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run(cli: Cli, consts: HwConstants) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Invalid("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    let root = cli.seed;
    match &cli.cmd {
        Cmd::Dataset { cmd: DatasetCmd::Gen(a) } => cmd_dataset_gen(a, root),
        Cmd::Train(a) => cmd_train(a, root),
        Cmd::Eval(a) => cmd_eval(a, root),
        Cmd::Prune(a) => cmd_prune(a, root, consts),
        Cmd::Finetune(a) => cmd_finetune(a, root),
        Cmd::Quantize(a) => cmd_quantize(a),
        Cmd::Estimate(a) => cmd_estimate(a, consts),
        Cmd::Simulate(a) => cmd_simulate(a, consts),
        Cmd::Generate(a) => cmd_generate(a, consts),
        Cmd::Ablate { cmd: AblateCmd::GuidedVsSaliency(a) } => cmd_guided(a, root, consts),
        Cmd::Ablate { cmd: AblateCmd::Saliency(a) } => cmd_saliency(a, root, consts),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("HWPRUNE_LOG", "warn")).init();
    let (args, consts) = match merged_args(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, consts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
