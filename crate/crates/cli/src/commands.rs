//! Subcommands. Each reads its inputs, delegates to the library and writes
//! its artifacts atomically.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use outtree::doc::Document;
use outtree::likelihood::{fit_ml, test_log_likelihood, EarlyStopping, FitOptions};
use outtree::models::{AnyModel, CovarianceRidge, GaussianModel, KernelModel, MutationModel, TabularModel};
use outtree::sampler::{sample_dataset, substream};
use outtree::semisup::{cross_validate_alpha, greedy_label_inference, GreedyOptions, LabelModel, LabeledDataset};
use outtree::vb::{checkpoint_document, resume_from_document, vb_fit_from, DirichletPrior, VariationalState, VbOptions};
use outtree::OutTree;

use crate::config::{Family, RunConfig};
use crate::error::{CliError, CliResult};
use crate::harness::{
    error_vs_labels, fit_gaussian_multistart, mean_se, semisup_seed, spiral_benchmark, DensityFold, DensityOptions,
    SemisupOptions, SemisupRow,
};
use crate::ingest::{dataset_csv, fmt_f64, ingest_csv, write_atomic, Dataset, Schema};
use crate::plotdata::{self, PlotKind};
use crate::spiral::{gen_spiral, SpiralSpec};

pub const COMMANDS: &[(&str, &str)] = &[
    ("fit", "fit a model by maximum tdid likelihood"),
    ("eval", "score a test set given a training set"),
    ("sample", "draw a dataset and its tree from a model"),
    ("semisup", "infer missing labels"),
    ("vb", "variational Bayes for tabular data"),
    ("gen-spiral", "generate a noisy 3D spiral"),
    ("spiral-bench", "density benchmark against Parzen and mixtures"),
    ("semisup-bench", "synthetic semi-supervised benchmark"),
    ("plotdata", "turn an artifact into a plotting table"),
];

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    match cfg.command.as_str() {
        "fit" => cmd_fit(cfg),
        "eval" => cmd_eval(cfg),
        "sample" => cmd_sample(cfg),
        "semisup" => cmd_semisup(cfg),
        "vb" => cmd_vb(cfg),
        "gen-spiral" => cmd_gen_spiral(cfg),
        "spiral-bench" => cmd_spiral_bench(cfg),
        "semisup-bench" => cmd_semisup_bench(cfg),
        "plotdata" => cmd_plotdata(cfg),
        other => Err(CliError::Config(format!("unknown command {other:?}"))),
    }
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn schema(cfg: &RunConfig, family: Family, sizes: Vec<usize>, with_label: bool) -> CliResult<Schema> {
    let label = cfg.raw("label-column");
    Ok(Schema {
        attributes: None,
        label: (with_label && !label.is_empty()).then(|| label.to_string()),
        missing: cfg.raw("missing").to_string(),
        categorical: family == Family::Tabular,
        alphabet_sizes: sizes,
    })
}

/// Reads `path`, dropping the label column when the header has one.
fn load_attributes(cfg: &RunConfig, path: &Path, family: Family, sizes: Vec<usize>) -> CliResult<Dataset> {
    let mut s = schema(cfg, family, sizes, false)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let label = cfg.raw("label-column");
    let has_label = text.lines().next().is_some_and(|h| h.split(',').any(|c| c.trim() == label));
    if has_label {
        s.label = Some(label.to_string());
    }
    let mut d = crate::ingest::parse_csv(&text, &s)?;
    d.labels = None;
    Ok(d)
}

fn load_model(path: &Path) -> CliResult<AnyModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(AnyModel::from_document(&Document::parse(&text)?)?)
}

fn family_of(model: &AnyModel) -> Family {
    match model {
        AnyModel::Gaussian(_) => Family::Gaussian,
        AnyModel::Tabular(_) => Family::Tabular,
        AnyModel::Kernel(_) => Family::Kernel,
    }
}

fn sizes_of(model: &AnyModel) -> Vec<usize> {
    match model {
        AnyModel::Tabular(m) => m.alphabet_sizes().to_vec(),
        _ => Vec::new(),
    }
}

fn alphabet_sizes(cfg: &RunConfig) -> CliResult<Vec<usize>> {
    cfg.usize_list("alphabet-sizes")
}

/// Fits `family` to `x`; the log text carries the chosen start.
fn fit_family(
    cfg: &RunConfig,
    family: Family,
    x: ArrayView2<f64>,
    sizes: &[usize],
    validation: Option<Array2<f64>>,
) -> CliResult<(AnyModel, String)> {
    let opts = FitOptions {
        max_iters: cfg.usize("max-iters")?,
        grad_tol: cfg.f64("grad-tol")?,
        early_stopping: validation.clone().map(|v| EarlyStopping { validation: v, patience: cfg.usize("patience").unwrap_or(5) }),
        ..FitOptions::default()
    };
    Ok(match family {
        Family::Gaussian => match cfg.raw("init") {
            "multistart" => {
                let fit = fit_gaussian_multistart(x, validation.as_ref().map(|v| v.view()), &opts)?;
                let log = format!("# start={}\n{}", fit.start, fit.report.log_text());
                (AnyModel::Gaussian(fit.report.model), log)
            }
            "iid" => {
                let r = fit_ml(x, &GaussianModel::init_iid(x, CovarianceRidge::Auto)?, &opts)?;
                let log = format!("# start=iid\n{}", r.log_text());
                (AnyModel::Gaussian(r.model), log)
            }
            other => return Err(CliError::Config(format!("unknown init {other:?} (expected iid or multistart)"))),
        },
        Family::Tabular => {
            let r = fit_ml(x, &TabularModel::init_iid(x, sizes)?, &opts)?;
            let log = format!("# start=iid\n{}", r.log_text());
            (AnyModel::Tabular(r.model), log)
        }
        Family::Kernel => {
            let rbf = match cfg.raw("kernel") {
                "rbf" => true,
                "linear" => false,
                other => return Err(CliError::Config(format!("unknown kernel {other:?}"))),
            };
            let init = KernelModel::init_iid(x, rbf)?.with_penalty(cfg.f64("lambda")?);
            let r = fit_ml(x, &init, &opts)?;
            let log = format!("# start=iid\n{}", r.log_text());
            (AnyModel::Kernel(r.model), log)
        }
    })
}

/// Model document at `--output`, iteration log next to it with `.log`.
pub fn cmd_fit(cfg: &RunConfig) -> CliResult<()> {
    let family = cfg.family()?;
    let out = cfg.require_path("output")?;
    let data = load_attributes(cfg, &cfg.require_path("input")?, family, alphabet_sizes(cfg)?)?;
    let validation = match cfg.path("validation") {
        Some(p) => Some(load_attributes(cfg, &p, family, data.alphabet_sizes.clone())?.x),
        None => None,
    };
    let (model, log) = fit_family(cfg, family, data.x.view(), &data.alphabet_sizes, validation)?;
    write_atomic(&out, &model.to_document().render())?;
    write_atomic(&sibling(&out, ".log"), &format!("# config_hash={}\n{log}", cfg.hash()))
}

/// One line: score, ln Z of the union, ln Z of the training set, the
/// tree-count correction and the config hash, tab separated.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<()> {
    let model = load_model(&cfg.require_path("model")?)?;
    let (family, sizes) = (family_of(&model), sizes_of(&model));
    let train = load_attributes(cfg, &cfg.require_path("input")?, family, sizes.clone())?;
    let test = load_attributes(cfg, &cfg.require_path("test")?, family, sizes)?;
    let s = test_log_likelihood(train.x.view(), test.x.view(), &model)?;
    let line = format!(
        "{}\t{}\t{}\t{}\t{}\n",
        fmt_f64(s.score),
        fmt_f64(s.log_z_union),
        fmt_f64(s.log_z_train),
        fmt_f64(s.correction),
        cfg.hash()
    );
    emit(cfg, &line)
}

fn emit(cfg: &RunConfig, text: &str) -> CliResult<()> {
    match cfg.path("output") {
        Some(p) => write_atomic(&p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn column_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

/// CSV with categories written as integers for tabular models.
fn sample_csv(x: ArrayView2<f64>, family: Family) -> String {
    if family != Family::Tabular {
        return dataset_csv(&column_names(x.ncols()), x, None);
    }
    let mut out = column_names(x.ncols()).join(",");
    out.push('\n');
    for r in x.rows() {
        let cells: Vec<String> = r.iter().map(|v| (*v as usize).to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn edges_tsv(tree: &OutTree) -> String {
    let mut out = String::from("parent\tchild\n");
    for c in 0..tree.len() {
        if let Some(p) = tree.parent(c) {
            out.push_str(&format!("{p}\t{c}\n"));
        }
    }
    out
}

fn parse_edges(text: &str, t: usize) -> CliResult<OutTree> {
    let (_, rows) = plotdata::parse_tsv(text)?;
    let mut parent = vec![None; t];
    for r in rows {
        let p: usize = r[0].parse().map_err(|_| CliError::Data(format!("bad parent {:?}", r[0])))?;
        let c: usize = r[1].parse().map_err(|_| CliError::Data(format!("bad child {:?}", r[1])))?;
        if c >= t || p >= t {
            return Err(CliError::Data(format!("edge {p}->{c} outside {t} nodes")));
        }
        parent[c] = Some(p);
    }
    let roots: Vec<usize> = (0..t).filter(|&i| parent[i].is_none()).collect();
    let [root] = roots[..] else {
        return Err(CliError::Data(format!("edge list has {} roots", roots.len())));
    };
    Ok(OutTree::new(root, parent)?)
}

/// Data CSV at `--output`, edge list next to it with `.edges`.
pub fn cmd_sample(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg.require_seed()?;
    let out = cfg.require_path("output")?;
    let model = load_model(&cfg.require_path("model")?)?;
    let draw = sample_dataset(&model, cfg.usize("samples")?, seed)?;
    write_atomic(&out, &sample_csv(draw.data.view(), family_of(&model)))?;
    write_atomic(&sibling(&out, ".edges"), &edges_tsv(&draw.tree))
}

/// Labels CSV: node, label, whether it was observed, and the exact change
/// in ln Z from moving the node to each class (blank for observed nodes).
pub fn cmd_semisup(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg.require_seed()?;
    let out = cfg.require_path("output")?;
    let (model, family) = match cfg.path("model") {
        Some(p) => {
            let m = load_model(&p)?;
            let f = family_of(&m);
            (Some(m), f)
        }
        None => (None, cfg.family()?),
    };
    let sizes = model.as_ref().map(sizes_of).unwrap_or(alphabet_sizes(cfg)?);
    let data = crate::ingest::ingest_csv(&cfg.require_path("input")?, &schema(cfg, family, sizes, true)?)?;
    let y = data.labels.clone().ok_or_else(|| CliError::Data(format!("no label column {:?}", cfg.raw("label-column"))))?;
    let k = y.iter().flatten().map(|c| c + 1).max().unwrap_or(0).max(cfg.usize("classes")?);
    let model = match model {
        Some(m) => m,
        None => fit_family(cfg, family, data.x.view(), &data.alphabet_sizes, None)?.0,
    };
    let labeled = LabeledDataset::new(data.x.clone(), y.clone(), k)?;
    let greedy = GreedyOptions {
        restarts: cfg.usize("label-restarts")?,
        max_sweeps: cfg.usize("max-sweeps")?,
        seed,
        joint_theta_iters: 0,
    };
    let (alpha, cv) = match cfg.opt_f64("alpha")? {
        Some(a) => (a, Vec::new()),
        None => {
            let sel = cross_validate_alpha(&labeled, &model, &cfg.f64_list("alpha-grid")?, cfg.usize("cv-folds")?, &greedy)?;
            (sel.best, sel.accuracies)
        }
    };
    let res = greedy_label_inference(&labeled, &model, &LabelModel::new(alpha, k)?, &greedy)?;
    let mut text = String::from("node,label,observed");
    for c in 0..k {
        text.push_str(&format!(",delta_{c}"));
    }
    text.push('\n');
    for (i, &label) in res.labels.iter().enumerate() {
        text.push_str(&format!("{i},{label},{}", u8::from(y[i].is_some())));
        if y[i].is_some() {
            text.push_str(&",".repeat(k));
        } else {
            for d in res.state.class_deltas(i)? {
                text.push_str(&format!(",{}", fmt_f64(d)));
            }
        }
        text.push('\n');
    }
    write_atomic(&out, &text)?;
    let cv: Vec<String> = cv.iter().map(|a| fmt_f64(*a)).collect();
    write_atomic(
        &sibling(&out, ".log"),
        &format!(
            "alpha\t{}\nlog_partition\t{}\ncv_accuracies\t{}\nconfig_hash\t{}\n",
            fmt_f64(alpha),
            fmt_f64(res.log_partition),
            cv.join(","),
            cfg.hash()
        ),
    )
}

/// Checkpoint at `--output`, ELBO table next to it with `.elbo.tsv`.
pub fn cmd_vb(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.require_path("output")?;
    let opts = VbOptions { max_rounds: cfg.usize("max-rounds")?, tol: cfg.f64("tol")?, ..VbOptions::default() };
    let (prior, start, mut trace, x) = match cfg.path("resume") {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            let doc = Document::parse(&text)?;
            let sizes: Vec<usize> = doc.ints("alphabet_sizes")?.1.iter().map(|&k| k as usize).collect();
            let data = load_attributes(cfg, &cfg.require_path("input")?, Family::Tabular, sizes)?;
            let (prior, state, trace) = resume_from_document(&doc, data.x.view())?;
            (prior, state, trace, data.x)
        }
        None => {
            let data = load_attributes(cfg, &cfg.require_path("input")?, Family::Tabular, alphabet_sizes(cfg)?)?;
            let prior = DirichletPrior::symmetric(&data.alphabet_sizes, cfg.f64("root-count")?, cfg.f64("cond-count")?)?;
            let state = VariationalState::initial(data.x.view(), &prior)?;
            (prior, state, Vec::new(), data.x)
        }
    };
    let mut fit = vb_fit_from(x.view(), &prior, start, &opts)?;
    let skip = usize::from(!trace.is_empty());
    trace.extend_from_slice(&fit.trace[skip..]);
    fit.trace = trace;
    write_atomic(&out, &checkpoint_document(&fit, &prior).render())?;
    write_atomic(&sibling(&out, ".elbo.tsv"), &plotdata::elbo_trace(&fit.trace))
}

fn spiral_spec(cfg: &RunConfig) -> CliResult<SpiralSpec> {
    SpiralSpec::new(cfg.usize("samples")?, cfg.f64("noise")?, cfg.f64("turns")?)
}

pub fn cmd_gen_spiral(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg.require_seed()?;
    let (x, _) = gen_spiral(&spiral_spec(cfg)?, &mut substream(seed, 0));
    let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    write_atomic(&cfg.require_path("output")?, &dataset_csv(&names, x.view(), None))
}

pub fn density_options(cfg: &RunConfig) -> CliResult<DensityOptions> {
    Ok(DensityOptions {
        splits: cfg.splits()?,
        max_iters: cfg.usize("max-iters")?,
        grad_tol: cfg.f64("grad-tol")?,
        patience: cfg.usize("patience")?,
        bandwidth_grid: cfg.f64_list("bandwidth-grid")?,
        k_max: cfg.usize("k-max")?,
        restarts: cfg.usize("restarts")?,
    })
}

pub fn density_table(folds: &[DensityFold], config_hash: &str) -> String {
    let mut out = String::from(
        "fold\tseed\tconfig_hash\ttdid\ttdid_start\ttdid_iters\ttdid_convergence\ttdid_iid_seed\tgmm1\tgmm_selected\tgmm_k\tparzen\tparzen_sigma\n",
    );
    for f in folds {
        out.push_str(&format!(
            "{}\t{}\t{config_hash}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            f.fold,
            f.seed,
            fmt_f64(f.tdid),
            f.tdid_start,
            f.tdid_iters,
            f.tdid_convergence,
            fmt_f64(f.tdid_iid_seed),
            fmt_f64(f.gmm1),
            fmt_f64(f.gmm_selected),
            f.gmm_k,
            fmt_f64(f.parzen),
            fmt_f64(f.parzen_sigma)
        ));
    }
    let cols: [(&str, fn(&DensityFold) -> f64); 4] =
        [("tdid", |f| f.tdid), ("gmm1", |f| f.gmm1), ("gmm_selected", |f| f.gmm_selected), ("parzen", |f| f.parzen)];
    for (name, get) in cols {
        let (m, se) = mean_se(&folds.iter().map(get).collect::<Vec<_>>());
        out.push_str(&format!("# summary\t{name}\tmean={}\tse={}\n", fmt_f64(m), fmt_f64(se)));
    }
    out
}

/// Per-fold test log-likelihoods on a generated spiral, or on `--input`.
pub fn cmd_spiral_bench(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg.require_seed()?;
    let opts = density_options(cfg)?;
    let folds = match cfg.path("input") {
        Some(p) => {
            let d = ingest_csv(&p, &Schema::default())?;
            (0..cfg.usize("folds")?)
                .map(|f| crate::harness::density_fold(d.x.view(), f, seed, &opts))
                .collect::<CliResult<Vec<_>>>()?
        }
        None => spiral_benchmark(&spiral_spec(cfg)?, cfg.usize("folds")?, seed, &opts)?,
    };
    emit(cfg, &density_table(&folds, &cfg.hash()))
}

pub fn semisup_options(cfg: &RunConfig, labeled: f64) -> CliResult<SemisupOptions> {
    Ok(SemisupOptions {
        t: cfg.usize("samples")?,
        k: cfg.usize("classes")?,
        alpha_true: cfg.f64("alpha-true")?,
        labeled,
        raw_dims: cfg.usize("raw-dims")?,
        alpha_grid: cfg.f64_list("alpha-grid")?,
        max_iters: cfg.usize("max-iters")?,
        label_restarts: cfg.usize("label-restarts")?,
        max_sweeps: cfg.usize("max-sweeps")?,
    })
}

const SEMISUP_HEADER: &str = "seed\tlabeled\talpha\ttree_accuracy\tmajority_accuracy\tconfig_hash\n";

pub fn semisup_table(rows: &[SemisupRow], config_hash: &str) -> String {
    let mut out = String::from(SEMISUP_HEADER);
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{config_hash}\n",
            r.seed,
            r.labeled,
            fmt_f64(r.alpha),
            fmt_f64(r.tree_accuracy),
            fmt_f64(r.majority_accuracy)
        ));
    }
    out
}

fn parse_semisup_table(text: &str) -> CliResult<(Vec<SemisupRow>, String)> {
    let (header, rows) = plotdata::parse_tsv(text)?;
    if header.join("\t") + "\n" != SEMISUP_HEADER {
        return Err(CliError::Data("not a semisup-bench table".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| CliError::Data(format!("bad number {s:?}")));
    let mut hash = String::new();
    let parsed = rows
        .iter()
        .map(|r| {
            hash = r[5].clone();
            Ok(SemisupRow {
                seed: r[0].parse().map_err(|_| CliError::Data(format!("bad seed {:?}", r[0])))?,
                labeled: r[1].parse().map_err(|_| CliError::Data(format!("bad count {:?}", r[1])))?,
                alpha: num(&r[2])?,
                tree_accuracy: num(&r[3])?,
                majority_accuracy: num(&r[4])?,
                cv_accuracies: Vec::new(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((parsed, hash))
}

/// Seeds `seed .. seed + seeds`, once per labeled fraction.
pub fn cmd_semisup_bench(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg.require_seed()?;
    let mut rows = Vec::new();
    for labeled in cfg.f64_list("labeled")? {
        let opts = semisup_options(cfg, labeled)?;
        for s in seed..seed + cfg.usize("seeds")? as u64 {
            rows.push(semisup_seed(s, &opts)?);
        }
    }
    emit(cfg, &semisup_table(&rows, &cfg.hash()))
}

pub fn cmd_plotdata(cfg: &RunConfig) -> CliResult<()> {
    let kind = PlotKind::parse(cfg.raw("kind"))?;
    let input = cfg.require_path("input")?;
    let text = std::fs::read_to_string(&input).map_err(|e| CliError::io(&input, e))?;
    let table = match kind {
        PlotKind::Scatter3d => {
            let d = crate::ingest::parse_csv(&text, &Schema::default())?;
            let edges = sibling(&input, ".edges");
            let tree = match std::fs::read_to_string(&edges) {
                Ok(e) => Some(parse_edges(&e, d.len())?),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                Err(e) => return Err(CliError::io(edges, e)),
            };
            plotdata::scatter3d(d.x.view(), tree.as_ref())?
        }
        PlotKind::ErrorVsLabels => {
            let (rows, hash) = parse_semisup_table(&text)?;
            plotdata::error_vs_labels(&error_vs_labels(&rows), &hash)
        }
        PlotKind::ElboTrace => {
            let doc = Document::parse(&text)?;
            plotdata::elbo_trace(doc.floats("elbo_trace")?.1)
        }
    };
    emit(cfg, &table)
}
