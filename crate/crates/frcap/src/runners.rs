//! One function per subcommand: resolve the configured inputs, do the work,
//! write reports under `output_dir`, and print a one-line summary.
//!
//! Every runner is deterministic given the config (and the seed override):
//! datasets, initializations, corruption, and Monte-Carlo draws all flow from
//! seeds in the config, so a report can be reproduced byte for byte.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use frcap_core::autodiff::{batch_loss_and_grad, output_jacobian_contraction};
use frcap_core::capacity::{
    crossentropy_report, flat_norm, fr_norm_crossentropy, fr_norm_fisher, fr_norm_identity,
    norm_comparison_report, path_norm, star_shape_check, CrossEntropyVariant, DataDistribution,
    FlatNormKind,
};
use frcap_core::data::{standard_normal, Dataset, Labels};
use frcap_core::invariance::{cubic_reparam_gap, linear_reparam_gap, overparam_projection_check};
use frcap_core::linalg::Matrix;
use frcap_core::losses::LossKind;
use frcap_core::network::{ActivationKind, Network};
use frcap_core::optimize::{check_large_margin, train, FisherMode, OptimizerKind, TrainConfig};
use frcap_core::rademacher::linear_fr_rademacher;

use crate::config::{Config, CovarianceSpec, DatasetSpec, NetworkSpec, RademacherSpec};
use crate::io;
use crate::synthetic::{corrupt_labels, make_synthetic};
use crate::{CliError, Result};

/// A dataset ready for use, plus whatever side information came with it.
#[derive(Debug, Clone)]
pub struct ResolvedData {
    pub dataset: Dataset,
    /// Population input covariance, when the source defines one.
    pub covariance: Option<Matrix>,
    /// Where the data came from, for report headers.
    pub provenance: String,
}

/// Loads or generates the configured dataset, without label corruption.
pub fn resolve_dataset_raw(config: &Config) -> Result<ResolvedData> {
    match config.require_dataset()? {
        DatasetSpec::Csv { path, label_column, .. } => Ok(ResolvedData {
            dataset: io::load_csv(path, label_column)?,
            covariance: None,
            provenance: format!("csv({})", path.display()),
        }),
        DatasetSpec::Idx { images, labels, limit, .. } => Ok(ResolvedData {
            dataset: io::load_idx(images, labels, *limit)?,
            covariance: None,
            provenance: match limit {
                Some(k) => format!("idx({}; {}; limit={k})", images.display(), labels.display()),
                None => format!("idx({}; {})", images.display(), labels.display()),
            },
        }),
        DatasetSpec::Synthetic { generator, seed, .. } => {
            let data = make_synthetic(generator, seed.or(config.seed).unwrap_or(0))?;
            Ok(ResolvedData {
                dataset: data.dataset,
                covariance: data.covariance,
                provenance: data.provenance,
            })
        }
    }
}

/// Loads or generates the configured dataset and applies `label_noise`.
pub fn resolve_dataset(config: &Config) -> Result<ResolvedData> {
    let resolved = resolve_dataset_raw(config)?;
    let alpha = config.require_dataset()?.label_noise();
    if alpha == 0.0 {
        return Ok(resolved);
    }
    let dataset = corrupt_labels(&resolved.dataset, alpha, corruption_seed(config))?;
    Ok(ResolvedData {
        dataset,
        covariance: resolved.covariance,
        provenance: format!("{}; label_noise={alpha}", resolved.provenance),
    })
}

/// Seed for label corruption, kept on a stream family of its own so it never
/// collides with the generator's draws.
fn corruption_seed(config: &Config) -> u64 {
    const SALT: u64 = 0x6c61_6265_6c73;
    let base = match config.dataset.as_ref() {
        Some(DatasetSpec::Synthetic { seed, .. }) => seed.or(config.seed),
        _ => config.seed,
    };
    base.unwrap_or(0) ^ SALT
}

/// The configured network: loaded from `network_file` when set, freshly
/// initialized from the `network` section otherwise.
pub fn resolve_network(config: &Config, expected_input: Option<usize>) -> Result<Network> {
    let net = if let Some(path) = &config.network_file {
        io::load_network(path)?
    } else if let Some(spec) = &config.network {
        build_network(spec)?
    } else {
        return Err(CliError::Validation(
            "this command needs either a `network` section or `network_file`".into(),
        ));
    };
    if let Some(dim) = expected_input {
        if net.input_dim() != dim {
            return Err(CliError::Validation(format!(
                "network expects {} inputs but the dataset has dimension {dim}",
                net.input_dim()
            )));
        }
    }
    Ok(net)
}

fn build_network(spec: &NetworkSpec) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0));
    Network::random_uniform(&spec.dims, spec.hidden, spec.output, spec.init_scale, &mut rng)
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn out_path(config: &Config, name: &str) -> PathBuf {
    config.output_dir.join(name)
}

fn pretty(value: &serde_json::Value) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Run(e.to_string()))
}

/// Optional value as a CSV cell; `None` stays empty.
fn csv_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Error text flattened into one CSV-safe cell.
fn csv_safe(msg: &str) -> String {
    msg.replace(['\n', ','], ";")
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Scales hidden unit `j` of layer `t+1`: its incoming column by `c`, its
/// outgoing row by `1/c`. Every activation here is positively homogeneous,
/// so the network function — and with it the Fisher-Rao norm — is unchanged,
/// while per-layer flat norms move freely.
pub fn rescale_hidden_neuron(net: &Network, t: usize, j: usize, c: f64) -> Result<Network> {
    if t >= net.depth() {
        return Err(CliError::Validation(format!(
            "layer index {t} out of range; the network has {} hidden layers",
            net.depth()
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(CliError::Validation(format!("scale factor must be positive, got {c}")));
    }
    let mut weights: Vec<Matrix> = net.weights().to_vec();
    if j >= weights[t].cols() {
        return Err(CliError::Validation(format!(
            "unit index {j} out of range for a layer of width {}",
            weights[t].cols()
        )));
    }
    for i in 0..weights[t].rows() {
        let v = weights[t].get(i, j);
        weights[t].set(i, j, v * c);
    }
    for k in 0..weights[t + 1].cols() {
        let v = weights[t + 1].get(j, k);
        weights[t + 1].set(j, k, v / c);
    }
    net.with_weights(weights).map_err(CliError::from)
}

/// `train`: fit the configured network and write history, weights, summary.
pub fn run_train(config: &Config) -> Result<()> {
    let data = resolve_dataset(config)?;
    let train_cfg = config.require_train()?;
    let net = resolve_network(config, Some(data.dataset.input_dim()))?;
    let outcome = train(&net, &data.dataset, train_cfg)?;

    io::write_report(&out_path(config, "history.csv"), &outcome.history.to_csv())?;
    io::save_network(&outcome.net, &out_path(config, "network.json"))?;
    let last = outcome.history.last();
    let summary = json!({
        "provenance": data.provenance,
        "examples": data.dataset.len(),
        "dims": outcome.net.dims(),
        "train": train_cfg,
        "final": last,
        "divergence": outcome.divergence,
        "warnings": outcome.warnings,
    });
    io::write_report(&out_path(config, "summary.json"), &pretty(&summary)?)?;

    if let Some(msg) = &outcome.divergence {
        eprintln!("warning: {msg}");
    }
    match last {
        Some(r) => println!(
            "train: {} examples, epoch {}, loss {:.6e}, grad {:.6e} -> {}",
            data.dataset.len(),
            r.epoch,
            r.train_loss,
            r.grad_norm,
            config.output_dir.display()
        ),
        None => println!("train: no epochs run -> {}", config.output_dir.display()),
    }
    Ok(())
}

/// `norms`: full capacity-measure report for one network on one dataset.
///
/// Scalar-output networks get the comparison table against the flat and path
/// norms; multiclass networks get the cross-entropy variants instead. A
/// violated comparison guarantee is a run failure.
pub fn run_norms(config: &Config) -> Result<()> {
    let data = resolve_dataset(config)?;
    let net = resolve_network(config, Some(data.dataset.input_dim()))?;
    let dataset_id = csv_safe(&data.provenance);
    let report = if net.output_dim() >= 2 {
        crossentropy_report(&net, &data.dataset, &dataset_id)
    } else {
        norm_comparison_report(&net, &data.dataset, &dataset_id)
    }?;

    io::write_report(&out_path(config, "norms.json"), &(report.to_json()? + "\n"))?;
    io::write_report(
        &out_path(config, "norms.csv"),
        &format!("{}\n{}\n", report.csv_header(), report.csv_row()),
    )?;

    let failed: Vec<&str> = report
        .comparisons
        .iter()
        .filter(|c| !c.holds)
        .map(|c| c.family.as_str())
        .collect();
    println!(
        "norms: fr/(L+1) = {:.6e}, {} comparison families -> {}",
        report.fr_identity_natural,
        report.comparisons.len(),
        config.output_dir.display()
    );
    if !failed.is_empty() {
        return Err(CliError::Run(format!(
            "norm comparison guarantee failed for: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

/// Covariance used by a Rademacher run at dimension `p`, resolved once.
fn fixed_covariance(config: &Config, spec: &RademacherSpec) -> Result<Option<Matrix>> {
    match &spec.covariance {
        CovarianceSpec::Identity => Ok(None),
        CovarianceSpec::Matrix(rows) => {
            Matrix::from_rows(rows).map(Some).map_err(|e| CliError::Validation(e.to_string()))
        }
        CovarianceSpec::Dataset => {
            let data = resolve_dataset_raw(config)?;
            data.covariance.map(Some).ok_or_else(|| {
                CliError::Validation(
                    "covariance = \"dataset\" needs a generator that defines one (gaussian_linear)"
                        .into(),
                )
            })
        }
    }
}

fn covariance_at(fixed: &Option<Matrix>, p: usize) -> Result<Matrix> {
    match fixed {
        None => Ok(Matrix::identity(p)),
        Some(m) if m.rows() == p && m.cols() == p => Ok(m.clone()),
        Some(m) => Err(CliError::Validation(format!(
            "covariance is {}×{} but p = {p}",
            m.rows(),
            m.cols()
        ))),
    }
}

/// `rademacher`: Monte-Carlo complexity of the Fisher-Rao ball for linear
/// predictors — one JSON estimate, or a CSV grid when `sweep` is present.
pub fn run_rademacher(config: &Config) -> Result<()> {
    let spec = config.require_rademacher()?;
    let seed = spec.seed.unwrap_or(0);
    let fixed = fixed_covariance(config, spec)?;

    if let Some(sweep) = &spec.sweep {
        let ps = if sweep.p.is_empty() { vec![spec.p] } else { sweep.p.clone() };
        let ns = if sweep.n.is_empty() { vec![spec.n] } else { sweep.n.clone() };
        let gammas = if sweep.gamma.is_empty() { vec![spec.gamma] } else { sweep.gamma.clone() };
        let mut grid = Vec::new();
        for &p in &ps {
            for &n in &ns {
                for &gamma in &gammas {
                    grid.push((p, n, gamma));
                }
            }
        }

        let estimates: Vec<Result<_>> = grid
            .par_iter()
            .enumerate()
            .map(|(idx, &(p, n, gamma))| {
                let cov = covariance_at(&fixed, p)?;
                linear_fr_rademacher(p, n, gamma, &cov, spec.trials, seed.wrapping_add(idx as u64))
                    .map_err(CliError::from)
            })
            .collect();

        let mut csv = String::from("p,n,gamma,mean,se,bound\n");
        let mut failures = Vec::new();
        for (&(p, n, gamma), est) in grid.iter().zip(&estimates) {
            match est {
                Ok(e) => csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    e.p, e.n, e.gamma, e.mean, e.std_error, e.bound
                )),
                Err(err) => failures.push(format!("p={p}, n={n}, gamma={gamma}: {err}")),
            }
        }
        let path = out_path(config, "rademacher_sweep.csv");
        io::write_report(&path, &csv)?;
        if !failures.is_empty() {
            return Err(CliError::Run(format!(
                "rademacher sweep failed at {} of {} points: {}",
                failures.len(),
                grid.len(),
                failures.join("; ")
            )));
        }
        println!("rademacher: {} grid points -> {}", grid.len(), path.display());
    } else {
        let cov = covariance_at(&fixed, spec.p)?;
        let estimate =
            linear_fr_rademacher(spec.p, spec.n, spec.gamma, &cov, spec.trials, seed)?;
        let value =
            serde_json::to_value(&estimate).map_err(|e| CliError::Run(e.to_string()))?;
        io::write_report(&out_path(config, "rademacher.json"), &pretty(&value)?)?;
        println!(
            "rademacher: mean {:.6e} (SE {:.2e}) vs bound {:.6e}, within 3·SE: {}",
            estimate.mean,
            estimate.std_error,
            estimate.bound,
            estimate.within_bound(3.0)
        );
    }
    Ok(())
}

/// Empirical Fisher-Rao norm used to normalize margins: the cross-entropy
/// variant for multiclass networks, the absolute-loss norm otherwise.
fn empirical_fr(net: &Network, dataset: &Dataset) -> Result<f64> {
    if net.output_dim() >= 2 {
        fr_norm_crossentropy(net, dataset, CrossEntropyVariant::Empirical).map_err(CliError::from)
    } else {
        fr_norm_identity(net, LossKind::Absolute, &DataDistribution::Empirical(dataset))
            .map_err(CliError::from)
    }
}

/// Per-example classification margins: `y·f(x)` for scalar outputs with
/// value labels, `f_y − max_{y′≠y} f_{y′}` for class labels.
fn raw_margins(net: &Network, dataset: &Dataset) -> Result<Vec<f64>> {
    let k = net.output_dim();
    let mut margins = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let trace = net.forward(dataset.input(i))?;
        let f = trace.output();
        let margin = match dataset.labels() {
            Labels::Values(v) => {
                if k != 1 {
                    return Err(CliError::Validation(
                        "value labels need a scalar-output network for margins".into(),
                    ));
                }
                v[i] * f[0]
            }
            Labels::Classes { values, .. } => {
                let y = values[i];
                if y >= k {
                    return Err(CliError::Validation(format!(
                        "class {y} out of range for a {k}-output network"
                    )));
                }
                let top_other = f
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != y)
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                f[y] - top_other
            }
        };
        margins.push(margin);
    }
    Ok(margins)
}

/// `margins`: normalized classification margins of a trained network.
///
/// Trains first unless `network_file` points at an existing model. Margins
/// are reported raw and divided by the empirical Fisher-Rao norm and by the
/// spectral flat norm.
pub fn run_margins(config: &Config) -> Result<()> {
    let data = resolve_dataset(config)?;
    let (net, trained, stationarity) = if config.network_file.is_some() {
        (resolve_network(config, Some(data.dataset.input_dim()))?, false, None)
    } else {
        let train_cfg = config.require_train().map_err(|_| {
            CliError::Validation(
                "margins needs either `network_file` (pre-trained) or a `train` section".into(),
            )
        })?;
        let net0 = resolve_network(config, Some(data.dataset.input_dim()))?;
        let outcome = train(&net0, &data.dataset, train_cfg)?;
        if let Some(msg) = &outcome.divergence {
            return Err(CliError::Run(format!("training diverged: {msg}")));
        }
        let report = if matches!(train_cfg.loss, LossKind::Hinge) && net0.output_dim() == 1 {
            Some(check_large_margin(
                &outcome.net,
                &data.dataset,
                train_cfg.epsilon_grad,
                1e-3,
            )?)
        } else {
            None
        };
        (outcome.net, true, report)
    };

    let margins = raw_margins(&net, &data.dataset)?;
    let fr = empirical_fr(&net, &data.dataset)?;
    let spectral = flat_norm(&net, &FlatNormKind::Spectral)?.value;

    let mut csv = String::from("index,raw,fr_normalized,spectral_normalized\n");
    for (i, m) in margins.iter().enumerate() {
        csv.push_str(&format!("{i},{m},{},{}\n", m / fr, m / spectral));
    }
    io::write_report(&out_path(config, "margins.csv"), &csv)?;

    let min_raw = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let summary = json!({
        "provenance": data.provenance,
        "examples": data.dataset.len(),
        "trained": trained,
        "fr_norm": fr,
        "spectral_norm": spectral,
        "min_raw": min_raw,
        "min_fr_normalized": min_raw / fr,
        "min_spectral_normalized": min_raw / spectral,
        "stationarity": stationarity.as_ref().map(|r| json!({
            "grad_norm": r.grad_norm,
            "applicable": r.applicable,
            "min_margin": r.min_margin,
            "verdict": r.verdict,
        })),
    });
    io::write_report(&out_path(config, "margins.json"), &pretty(&summary)?)?;

    println!(
        "margins: min raw {:.6e}, min fr-normalized {:.6e} -> {}",
        min_raw,
        min_raw / fr,
        config.output_dir.display()
    );
    Ok(())
}

/// One grid point of the width sweep, already measured or failed.
struct SweepRow {
    alpha: f64,
    k: usize,
    params: Option<usize>,
    train_loss: Option<f64>,
    test_loss: Option<f64>,
    train_acc: Option<f64>,
    test_acc: Option<f64>,
    gap: Option<f64>,
    fr_emp: Option<f64>,
    fr_emp_natural: Option<f64>,
    fr_model: Option<f64>,
    spectral: Option<f64>,
    path_q1: Option<f64>,
    path_q2: Option<f64>,
    status: String,
}

impl SweepRow {
    const HEADER: &'static str = "alpha,k,params,train_loss,test_loss,train_acc,test_acc,gap,\
                                  fr_emp,fr_emp_natural,fr_model,spectral,path_q1,path_q2,status";

    fn failed(alpha: f64, k: usize, err: &CliError) -> Self {
        SweepRow {
            alpha,
            k,
            params: None,
            train_loss: None,
            test_loss: None,
            train_acc: None,
            test_acc: None,
            gap: None,
            fr_emp: None,
            fr_emp_natural: None,
            fr_model: None,
            spectral: None,
            path_q1: None,
            path_q2: None,
            status: format!("error:{}", csv_safe(&err.to_string())),
        }
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.alpha,
            self.k,
            self.params.map(|p| p.to_string()).unwrap_or_default(),
            csv_num(self.train_loss),
            csv_num(self.test_loss),
            csv_num(self.train_acc),
            csv_num(self.test_acc),
            csv_num(self.gap),
            csv_num(self.fr_emp),
            csv_num(self.fr_emp_natural),
            csv_num(self.fr_model),
            csv_num(self.spectral),
            csv_num(self.path_q1),
            csv_num(self.path_q2),
            self.status
        )
    }
}

/// Fraction of examples the network classifies correctly: sign agreement for
/// scalar outputs on ±1 labels, argmax for class labels, undefined otherwise.
fn accuracy(net: &Network, dataset: &Dataset) -> Result<Option<f64>> {
    let k = net.output_dim();
    match dataset.labels() {
        Labels::Values(v) => {
            if k != 1 || !v.iter().all(|&y| y == 1.0 || y == -1.0) {
                return Ok(None);
            }
            let mut correct = 0usize;
            for i in 0..dataset.len() {
                let f = net.forward(dataset.input(i))?.output()[0];
                if (f >= 0.0) == (v[i] > 0.0) {
                    correct += 1;
                }
            }
            Ok(Some(correct as f64 / dataset.len() as f64))
        }
        Labels::Classes { values, .. } => {
            let mut correct = 0usize;
            for i in 0..dataset.len() {
                let trace = net.forward(dataset.input(i))?;
                let f = trace.output();
                let argmax = f
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite outputs"))
                    .map(|(j, _)| j)
                    .unwrap_or(0);
                if argmax == values[i] {
                    correct += 1;
                }
            }
            Ok(Some(correct as f64 / dataset.len() as f64))
        }
    }
}

struct SweepContext<'a> {
    base: &'a Dataset,
    train_idx: &'a [usize],
    test_idx: &'a [usize],
    cfg: &'a TrainConfig,
    depth: usize,
    out_dim: usize,
    hidden: ActivationKind,
    output: ActivationKind,
    init_scale: f64,
    net_seed: u64,
    noise_seed: u64,
    model_fr_samples: Option<usize>,
}

fn sweep_point(ctx: &SweepContext, ai: usize, alpha: f64, ki: usize, k: usize) -> Result<SweepRow> {
    // The same α uses the same corrupted labels at every width, so columns
    // are comparable across the grid.
    let corrupted = corrupt_labels(ctx.base, alpha, ctx.noise_seed.wrapping_add(ai as u64))?;
    let train_set = corrupted.subset(ctx.train_idx)?;
    let test_set = corrupted.subset(ctx.test_idx)?;

    let mut dims = vec![ctx.base.input_dim()];
    dims.extend(std::iter::repeat(k).take(ctx.depth));
    dims.push(ctx.out_dim);
    let mut rng =
        ChaCha8Rng::seed_from_u64(ctx.net_seed ^ ((ai as u64) << 32) ^ (ki as u64 + 1));
    let net0 = Network::random_uniform(&dims, ctx.hidden, ctx.output, ctx.init_scale, &mut rng)?;
    let params = net0.num_params();

    let outcome = train(&net0, &train_set, ctx.cfg)?;
    if let Some(msg) = &outcome.divergence {
        return Err(CliError::Run(format!("diverged: {msg}")));
    }
    let net = &outcome.net;

    let (test_loss, _) =
        batch_loss_and_grad(net, test_set.inputs(), &test_set.label_vec(), ctx.cfg.loss)?;
    let train_acc = accuracy(net, &train_set)?;
    let test_acc = accuracy(net, &test_set)?;
    let fr_emp = empirical_fr(net, &train_set)?;
    let natural = (net.depth() + 1) as f64;
    let fr_model = match (ctx.out_dim >= 2, ctx.model_fr_samples) {
        // The multiclass model expectation is exact; no sampling needed.
        (true, Some(_)) => {
            Some(fr_norm_crossentropy(net, &train_set, CrossEntropyVariant::Model)?)
        }
        (false, Some(samples)) => Some(fr_norm_identity(
            net,
            ctx.cfg.loss,
            &DataDistribution::ModelSampled {
                dataset: &train_set,
                samples_per_input: samples,
                seed: ctx.net_seed.wrapping_add(0x6d6f_64),
            },
        )?),
        (_, None) => None,
    };

    Ok(SweepRow {
        alpha,
        k,
        params: Some(params),
        train_loss: outcome.history.last().map(|r| r.train_loss),
        test_loss: Some(test_loss),
        train_acc,
        test_acc,
        gap: train_acc.zip(test_acc).map(|(tr, te)| tr - te),
        fr_emp: Some(fr_emp),
        fr_emp_natural: Some(fr_emp / natural),
        fr_model,
        spectral: Some(flat_norm(net, &FlatNormKind::Spectral)?.value),
        path_q1: Some(path_norm(net, 1.0)?),
        path_q2: Some(path_norm(net, 2.0)?),
        status: "ok".into(),
    })
}

/// `sweep`: train a width grid at fixed depth, measuring fit, generalization
/// gap, and capacity norms per point; corruption levels get separate passes.
///
/// The `network` section serves as a template (activations, init scale, seed)
/// — its dims are replaced by the grid. A point that fails is recorded in the
/// status column and the sweep continues. When the corruption levels include
/// both 0 and 1, a contrast table of norm ratios is also written.
pub fn run_sweep(config: &Config) -> Result<()> {
    let sweep = config.require_sweep()?;
    let base_cfg = config.require_train()?;
    if config.require_dataset()?.label_noise() != 0.0 {
        return Err(CliError::Validation(
            "sweep drives corruption through `sweep.alphas`; set dataset.label_noise to 0".into(),
        ));
    }
    let data = resolve_dataset_raw(config)?;
    let n = data.dataset.len();
    if n < 4 {
        return Err(CliError::Validation(format!("sweep needs at least 4 examples, got {n}")));
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(base_cfg.seed);
    indices.shuffle(&mut rng);
    let n_test = ((n as f64 * sweep.holdout_fraction).round() as usize).clamp(1, n - 1);
    let (test_idx, train_idx) = indices.split_at(n_test);

    let out_dim = match base_cfg.loss {
        LossKind::CrossEntropySoftmax(k) => k,
        _ => 1,
    };
    let template = config.network.as_ref();
    let ctx = SweepContext {
        base: &data.dataset,
        train_idx,
        test_idx,
        cfg: base_cfg,
        depth: sweep.depth,
        out_dim,
        hidden: template.map(|t| t.hidden).unwrap_or(ActivationKind::Relu),
        output: template.map(|t| t.output).unwrap_or(ActivationKind::Linear),
        init_scale: template.map(|t| t.init_scale).unwrap_or(1.0),
        net_seed: template.and_then(|t| t.seed).or(config.seed).unwrap_or(0),
        noise_seed: corruption_seed(config),
        model_fr_samples: sweep.model_fr_samples,
    };

    let mut grid = Vec::new();
    for (ai, &alpha) in sweep.alphas.iter().enumerate() {
        for (ki, &k) in sweep.widths.iter().enumerate() {
            grid.push((ai, alpha, ki, k));
        }
    }
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&(ai, alpha, ki, k)| {
            sweep_point(&ctx, ai, alpha, ki, k)
                .unwrap_or_else(|err| SweepRow::failed(alpha, k, &err))
        })
        .collect();

    let mut csv = format!("{}\n", SweepRow::HEADER);
    for row in &rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    io::write_report(&out_path(config, "sweep.csv"), &csv)?;

    let has_clean = sweep.alphas.contains(&0.0);
    let has_random = sweep.alphas.contains(&1.0);
    if has_clean && has_random {
        let mean_of = |alpha: f64, pick: fn(&SweepRow) -> Option<f64>| -> Option<f64> {
            let values: Vec<f64> =
                rows.iter().filter(|r| r.alpha == alpha).filter_map(pick).collect();
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        let measures: [(&str, fn(&SweepRow) -> Option<f64>); 3] = [
            ("fr_emp", |r| r.fr_emp),
            ("fr_model", |r| r.fr_model),
            ("spectral", |r| r.spectral),
        ];
        let mut contrast = String::from("measure,alpha0,alpha1,ratio\n");
        for (name, pick) in measures {
            if let (Some(m0), Some(m1)) = (mean_of(0.0, pick), mean_of(1.0, pick)) {
                contrast.push_str(&format!("{name},{m0},{m1},{}\n", m1 / m0));
            }
        }
        io::write_report(&out_path(config, "contrast.csv"), &contrast)?;
    }

    let ok = rows.iter().filter(|r| r.status == "ok").count();
    println!(
        "sweep: {} points, {} ok, {} failed -> {}",
        rows.len(),
        ok,
        rows.len() - ok,
        config.output_dir.display()
    );
    Ok(())
}

/// `conditioning`: plain gradient descent versus natural gradient from the
/// same start, full batch, recorded side by side.
///
/// For losses with a predictive distribution (squared, cross-entropy) the
/// preconditioner samples labels from the model, so the Fisher stays the
/// model's information matrix instead of collapsing with the residuals near
/// an interpolating optimum. Other losses fall back to the empirical
/// gradient covariance.
pub fn run_conditioning(config: &Config) -> Result<()> {
    let spec = config.conditioning.clone().unwrap_or_default();
    let data = resolve_dataset(config)?;
    let net = resolve_network(config, Some(data.dataset.input_dim()))?;
    let loss = config.train.as_ref().map(|t| t.loss).unwrap_or(LossKind::Squared);
    let record_every = spec.record_every.unwrap_or_else(|| (spec.epochs / 100).max(1));
    let base = TrainConfig {
        optimizer: OptimizerKind::Sgd,
        lr: spec.lr,
        batch_size: data.dataset.len(),
        epochs: spec.epochs,
        seed: spec.seed.unwrap_or(0),
        loss,
        epsilon_grad: config.train.as_ref().map(|t| t.epsilon_grad).unwrap_or(1e-6),
        record_every,
        record_norms: false,
    };
    let fisher = match loss {
        LossKind::Squared | LossKind::CrossEntropySoftmax(_) => FisherMode::ModelSampled {
            samples_per_input: 8,
            // "fish" in ASCII, so the label stream never collides with the
            // shuffling stream seeded directly from `spec.seed`.
            seed: spec.seed.unwrap_or(0) ^ 0x6669_7368,
        },
        _ => FisherMode::Empirical,
    };
    let mut ng = base.clone();
    ng.optimizer = OptimizerKind::NaturalGradient {
        damping: None,
        cg_tol: 1e-10,
        cg_max_iter: 200,
        fisher,
    };

    let mut csv = String::from("optimizer,epoch,train_loss,grad_norm\n");
    let mut finals = Vec::new();
    for (name, cfg) in [("sgd", &base), ("natural_gradient", &ng)] {
        let outcome = train(&net, &data.dataset, cfg)?;
        for r in outcome.history.records() {
            csv.push_str(&format!("{name},{},{},{}\n", r.epoch, r.train_loss, r.grad_norm));
        }
        let last = outcome.history.last();
        finals.push(json!({
            "optimizer": name,
            "final_loss": last.map(|r| r.train_loss),
            "final_grad_norm": last.map(|r| r.grad_norm),
            "epochs": last.map(|r| r.epoch),
            "divergence": outcome.divergence,
        }));
    }
    io::write_report(&out_path(config, "conditioning.csv"), &csv)?;
    io::write_report(
        &out_path(config, "conditioning.json"),
        &pretty(&json!({ "provenance": data.provenance, "runs": finals }))?,
    )?;

    let loss_of = |v: &serde_json::Value| v["final_loss"].as_f64().unwrap_or(f64::NAN);
    println!(
        "conditioning: sgd loss {:.6e} vs natural-gradient loss {:.6e} after ≤ {} epochs -> {}",
        loss_of(&finals[0]),
        loss_of(&finals[1]),
        spec.epochs,
        config.output_dir.display()
    );
    Ok(())
}

type SuiteResult = std::result::Result<String, String>;

fn err_str(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Random network for the verification suites: small dims, mixed rectifiers.
fn random_verify_net(
    rng: &mut ChaCha8Rng,
    scalar: bool,
    relu_only: bool,
    min_hidden_layers: usize,
) -> Network {
    let input = rng.gen_range(1..=4);
    let hidden_layers = rng.gen_range(min_hidden_layers..=min_hidden_layers.max(2));
    let mut dims = vec![input];
    for _ in 0..hidden_layers {
        dims.push(rng.gen_range(1..=6));
    }
    dims.push(if scalar { 1 } else { rng.gen_range(2..=3) });
    let hidden = if relu_only {
        ActivationKind::Relu
    } else {
        match rng.gen_range(0..3) {
            0 => ActivationKind::Relu,
            1 => ActivationKind::LeakyRelu(0.1),
            _ => ActivationKind::Linear,
        }
    };
    Network::random_uniform(&dims, hidden, ActivationKind::Linear, 1.0, rng)
        .expect("generated dims are valid")
}

fn random_values_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Dataset {
    let rows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..dim).map(|_| standard_normal(rng)).collect()).collect();
    let values: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
    Dataset::from_values(Matrix::from_rows(&rows).expect("rectangular"), values)
        .expect("finite values")
}

/// Each intermediate Jacobian, contracted against its own weights, must
/// reproduce the layer output; the total over layers is `(L+1)·f(x)`.
fn verify_contraction(count: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x01);
    for case in 0..count {
        let net = random_verify_net(&mut rng, false, false, 0);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| standard_normal(&mut rng)).collect();
        let trace = net.forward(&x).map_err(err_str)?;
        let (entries, total) = output_jacobian_contraction(&net, &x).map_err(err_str)?;
        for entry in &entries {
            let expected = &trace.activations[entry.s];
            for (l, (&got, &want)) in entry.values.iter().zip(expected).enumerate() {
                if rel_gap(got, want) > 1e-8 {
                    return Err(format!(
                        "case {case}: contraction (t={}, s={}) unit {l}: {got} vs layer output {want}",
                        entry.t, entry.s
                    ));
                }
            }
        }
        let scale = (net.depth() + 1) as f64;
        for (l, (&got, &f)) in total.iter().zip(trace.output()).enumerate() {
            if rel_gap(got, scale * f) > 1e-8 {
                return Err(format!(
                    "case {case}: total contraction unit {l}: {got} vs (L+1)·f = {}",
                    scale * f
                ));
            }
        }
    }
    Ok(format!("{count} networks"))
}

/// The defining expectation and the Fisher quadratic form must agree.
fn verify_route_equality(count: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x02);
    for case in 0..count {
        let (net, dataset, loss) = match case % 4 {
            0 | 1 | 2 => {
                let loss = [LossKind::Absolute, LossKind::Squared, LossKind::Hinge][case % 4];
                let net = random_verify_net(&mut rng, true, false, 0);
                let dataset = if matches!(loss, LossKind::Hinge) {
                    let rows: Vec<Vec<f64>> = (0..10)
                        .map(|_| (0..net.input_dim()).map(|_| standard_normal(&mut rng)).collect())
                        .collect();
                    let values: Vec<f64> =
                        (0..10).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
                    Dataset::from_values(Matrix::from_rows(&rows).unwrap(), values).unwrap()
                } else {
                    random_values_dataset(&mut rng, 10, net.input_dim())
                };
                (net, dataset, loss)
            }
            _ => {
                let net = random_verify_net(&mut rng, false, false, 0);
                let k = net.output_dim();
                let rows: Vec<Vec<f64>> = (0..10)
                    .map(|_| (0..net.input_dim()).map(|_| standard_normal(&mut rng)).collect())
                    .collect();
                let classes: Vec<usize> = (0..10).map(|_| rng.gen_range(0..k)).collect();
                let dataset =
                    Dataset::from_classes(Matrix::from_rows(&rows).unwrap(), classes, k).unwrap();
                (net, dataset, LossKind::CrossEntropySoftmax(k))
            }
        };
        let dist = DataDistribution::Empirical(&dataset);
        let identity = fr_norm_identity(&net, loss, &dist).map_err(err_str)?;
        let fisher = fr_norm_fisher(&net, loss, &dist).map_err(err_str)?;
        if rel_gap(identity, fisher) > 1e-8 {
            return Err(format!(
                "case {case} ({loss:?}): identity route {identity} vs Fisher route {fisher}"
            ));
        }
    }
    Ok(format!("{count} network/loss configurations"))
}

/// Every flat/path-norm comparison row must respect its guarantee.
fn verify_comparisons(count: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x03);
    let mut families = 0;
    for case in 0..count {
        let net = random_verify_net(&mut rng, true, true, 0);
        let dataset = random_values_dataset(&mut rng, 50, net.input_dim());
        let report = norm_comparison_report(&net, &dataset, "verify").map_err(err_str)?;
        families = report.comparisons.len();
        if let Some(bad) = report.comparisons.iter().find(|c| !c.holds) {
            return Err(format!(
                "case {case}: family {} broke its guarantee (slack {})",
                bad.family, bad.slack
            ));
        }
    }
    Ok(format!("{count} networks × {families} families"))
}

/// Scaling the weights by `r` must scale the norm by `r^{L+1}`.
fn verify_star_shape(count: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x04);
    for case in 0..count {
        let net = random_verify_net(&mut rng, true, false, 0);
        let dataset = random_values_dataset(&mut rng, 10, net.input_dim());
        let dist = DataDistribution::Empirical(&dataset);
        for r in [0.5, 2.0, 5.0] {
            let check = star_shape_check(&net, r, &dist).map_err(err_str)?;
            if check.rel_err > 1e-8 {
                return Err(format!(
                    "case {case}, r = {r}: scaled norm {} vs predicted {}",
                    check.scaled_norm, check.predicted
                ));
            }
        }
    }
    Ok(format!("{count} networks × 3 scales"))
}

/// Composed neuron rescalings move the flat norms but not the Fisher-Rao norm.
fn verify_rescaling(count: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05);
    for case in 0..count {
        let net = random_verify_net(&mut rng, true, true, 1);
        let dataset = random_values_dataset(&mut rng, 10, net.input_dim());
        let dist = DataDistribution::Empirical(&dataset);
        let before = fr_norm_identity(&net, LossKind::Absolute, &dist).map_err(err_str)?;
        let mut current = net;
        for _ in 0..10 {
            let t = rng.gen_range(0..current.depth());
            let j = rng.gen_range(0..current.weight(t).cols());
            let c = (2.0_f64).powf(rng.gen_range(-1.5..1.5));
            current = rescale_hidden_neuron(&current, t, j, c).map_err(err_str)?;
        }
        let after = fr_norm_identity(&current, LossKind::Absolute, &dist).map_err(err_str)?;
        if rel_gap(before, after) > 1e-8 {
            return Err(format!(
                "case {case}: rescaling moved the norm from {before} to {after}"
            ));
        }
    }
    Ok(format!("{count} networks × 10 composed rescalings"))
}

/// Natural-gradient flows must be equivariant under re-parametrization, and
/// over-parametrized steps must factor through the rank-`p` projector.
fn verify_invariance() -> SuiteResult {
    let features = Matrix::from_rows(&[
        vec![1.0, 0.3],
        vec![-0.4, 1.1],
        vec![0.7, -0.8],
        vec![0.2, 0.9],
        vec![-1.1, -0.5],
        vec![0.6, 0.4],
    ])
    .expect("rectangular");
    let values = vec![0.8, -0.3, 0.5, -0.9, 0.2, -0.6];
    let theta0 = vec![0.9, -0.7];

    let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.5, 3.0]]).expect("rectangular");
    let linear =
        linear_reparam_gap(&features, &values, &theta0, &a, 1e-2, 300, 1e-12).map_err(err_str)?;
    if linear.max_gap > 1e-8 {
        return Err(format!("linear re-parametrization drifted by {}", linear.max_gap));
    }

    let coarse =
        cubic_reparam_gap(&features, &values, &theta0, 1e-2, 0.5, 1e-12).map_err(err_str)?;
    let fine =
        cubic_reparam_gap(&features, &values, &theta0, 1e-3, 0.5, 1e-12).map_err(err_str)?;
    if fine.final_gap * 8.0 > coarse.final_gap {
        return Err(format!(
            "cubic gap only shrank {:.2}× for a 10× smaller step",
            coarse.final_gap / fine.final_gap
        ));
    }

    let wide_features = Matrix::from_rows(&[
        vec![1.0, 0.2, -0.5],
        vec![-0.3, 1.1, 0.4],
        vec![0.8, -0.6, 1.0],
        vec![0.1, 0.9, -0.2],
        vec![-1.0, -0.4, 0.6],
        vec![0.5, 0.3, -1.1],
        vec![0.4, -1.2, 0.2],
        vec![-0.7, 0.5, 0.9],
    ])
    .expect("rectangular");
    let wide_values = vec![0.6, -0.4, 0.9, -0.2, 0.3, -0.8, 0.1, -0.5];
    let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, -0.7]])
        .expect("rectangular");
    let check =
        overparam_projection_check(&wide_features, &wide_values, &b, &[0.6, -0.4], 0.05, 1e-12)
            .map_err(err_str)?;
    if check.max_eigen_defect() > 1e-6 {
        return Err(format!("projector eigenvalues {:?} left {{0, 1}}", check.eigenvalues));
    }
    if check.relative_mismatch() > 1e-8 {
        return Err(format!(
            "natural-gradient step missed the projected update by {}",
            check.relative_mismatch()
        ));
    }
    if check.gd_relative_mismatch < 1e-3 {
        return Err("plain gradient unexpectedly satisfied the projection identity".into());
    }
    Ok("re-parametrization gap + projection spectrum".into())
}

/// The Monte-Carlo complexity estimate must sit under `γ√(p/N)`.
fn verify_rademacher(seed: u64) -> SuiteResult {
    let estimate =
        linear_fr_rademacher(3, 100, 1.0, &Matrix::identity(3), 2_000, seed).map_err(err_str)?;
    if !estimate.within_bound(3.0) {
        return Err(format!(
            "mean {} exceeded bound {} + 3·SE ({})",
            estimate.mean, estimate.bound, estimate.std_error
        ));
    }
    if !(estimate.mean > 0.0) {
        return Err(format!("degenerate estimate {}", estimate.mean));
    }
    Ok(format!("p=3, N=100, {} trials", estimate.trials))
}

/// `verify`: run every structural property suite and report ok/FAIL lines.
/// Any failed suite is a run failure.
pub fn run_verify(config: &Config) -> Result<()> {
    let spec = config.verify.clone().unwrap_or_default();
    let seed = spec.seed.unwrap_or(0);
    let heavy = spec.nets;
    let light = (spec.nets / 4).max(10);

    let suites: Vec<(&str, SuiteResult)> = vec![
        ("output_contraction", verify_contraction(heavy, seed)),
        ("fr_route_equality", verify_route_equality(heavy, seed)),
        ("norm_comparisons", verify_comparisons(light, seed)),
        ("star_shape", verify_star_shape(light, seed)),
        ("rescaling_invariance", verify_rescaling(light, seed)),
        ("natural_gradient_invariance", verify_invariance()),
        ("rademacher_bound", verify_rademacher(seed)),
    ];

    let mut failures = 0;
    for (name, result) in &suites {
        match result {
            Ok(detail) => println!("ok {name} ({detail})"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failures > 0 {
        Err(CliError::Run(format!("{failures} of {} verification suites failed", suites.len())))
    } else {
        println!("verify: all {} suites passed", suites.len());
        Ok(())
    }
}
